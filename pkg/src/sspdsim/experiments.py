"""Experiment runners: turn a validated config into data files.

Each runner writes its CSV (curves) or JSON-lines (diagnostics) files into
an output directory and returns their names. Files are written to a
temporary name and renamed, so a reader never sees a partial file.
"""

from __future__ import annotations

import contextlib
import csv
import json
import math
import os
import tempfile
from pathlib import Path

import numpy as np

from . import detector as dm
from . import montecarlo as mc
from . import optics
from . import oracles
from . import photon_stats as ps
from .config import ExperimentConfig


@contextlib.contextmanager
def atomic_path(path: Path):
    """Yield a temporary path next to ``path``; rename onto it on success."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    os.close(fd)
    try:
        yield Path(tmp)
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(OSError):
            os.unlink(tmp)
        raise


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path: Path, header, rows) -> None:
    with atomic_path(path) as tmp, open(tmp, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_cell(v) for v in r])


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else repr(v)
    return v


def write_jsonl(path: Path, records) -> None:
    with atomic_path(path) as tmp, open(tmp, "w") as fh:
        for r in records:
            fh.write(json.dumps(_jsonable(r), sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# config -> core objects


def detector_params(cfg: ExperimentConfig) -> dm.DetectorParams:
    xs, ys = cfg["detector.efficiency_table_uA"], cfg["detector.efficiency_table_values"]
    try:
        if xs or ys:
            eff = dm.TabulatedEfficiency(tuple(xs), tuple(ys))
        else:
            eff = dm.SigmoidEfficiency(cfg["detector.nu_max"], cfg["detector.nu_center_frac"],
                                       cfg["detector.nu_width_frac"])
        return dm.DetectorParams(
            I_c_uA=cfg["detector.I_c_uA"],
            tau_ns=cfg["detector.tau_ns"],
            dead_time_ns=cfg["detector.dead_time_ns"],
            efficiency=eff,
            jitter_sigma_ns=cfg["detector.jitter_fwhm_ns"] * dm.FWHM_TO_SIGMA,
            dark_rate_cps=cfg["detector.dark_rate_cps"],
        )
    except ValueError as err:
        raise cfg.error("detector", str(err)) from None


def _positive(cfg, *keys):
    for k in keys:
        if not cfg[k] > 0:
            raise cfg.error(k, "must be > 0")


def _count(cfg, key, minimum=1):
    if cfg[key] < minimum:
        raise cfg.error(key, f"must be >= {minimum}")


def _bias_fracs(cfg, key):
    fr = cfg[key]
    if not fr:
        raise cfg.error(key, "needs at least one bias fraction")
    for f in fr:
        if not 0.0 < f < 1.0:
            raise cfg.error(key, f"bias fraction {f} must lie in (0, 1)")
    return fr


# ---------------------------------------------------------------------------
# runners


def run_tmm_spectrum(cfg: ExperimentConfig, out: Path) -> list[str]:
    mats = cfg["stack.layer_materials"]
    thick = cfg["stack.layer_thicknesses_nm"]
    fills = cfg["stack.layer_fill_factors"]
    if not len(mats) == len(thick) == len(fills):
        raise cfg.error("stack.layer_materials",
                        "layer_materials, layer_thicknesses_nm and layer_fill_factors differ in length")
    _count(cfg, "sweep.wavelength_count")

    def material(key, name):
        try:
            return optics.load_material(name)
        except (OSError, ValueError) as err:
            raise cfg.error(key, str(err)) from None

    try:
        layers = [optics.Layer(t, material("stack.layer_materials", m), f, name=m)
                  for m, t, f in zip(mats, thick, fills)]
        stack = optics.LayerStack(material("stack.ambient", cfg["stack.ambient"]), tuple(layers),
                                  material("stack.substrate", cfg["stack.substrate"]))
    except ValueError as err:
        if hasattr(err, "key"):
            raise
        raise cfg.error("stack", str(err)) from None
    wl = np.linspace(cfg["sweep.wavelength_start_nm"], cfg["sweep.wavelength_stop_nm"],
                     cfg["sweep.wavelength_count"])
    resp = optics.absorption_spectrum(stack, wl)
    header = ["wavelength_nm", "R", "T"] + [f"A_{i}_{m}" for i, m in enumerate(mats)] + ["A_total"]
    rows = [[r.wavelength_nm, r.R, r.T, *r.absorption_per_layer, sum(r.absorption_per_layer)]
            for r in resp]
    write_csv(out / "spectrum.csv", header, rows)
    return ["spectrum.csv"]


def _regime(cfg, frac, params):
    kind = cfg["bias.regime"]
    I = frac * params.I_c_uA
    if kind == "current":
        return dm.CurrentStabilized(I)
    if kind == "voltage":
        return dm.VoltageStabilized(I)
    raise cfg.error("bias.regime", f"unknown regime {kind!r}; valid: current, voltage")


def _N_grid(cfg):
    _positive(cfg, "sweep.N_in_start_cps", "sweep.N_in_stop_cps")
    _count(cfg, "sweep.N_in_count")
    return np.logspace(math.log10(cfg["sweep.N_in_start_cps"]),
                       math.log10(cfg["sweep.N_in_stop_cps"]), cfg["sweep.N_in_count"])


def run_count_rate(cfg: ExperimentConfig, out: Path) -> list[str]:
    params = detector_params(cfg)
    mode = cfg["count_rate.mode"]
    fracs = _bias_fracs(cfg, "bias.fracs")
    if mode == "sweep":
        return _count_rate_sweep(cfg, out, params, fracs)
    if mode == "max-vs-bias":
        return _max_vs_bias(cfg, out, params, fracs)
    if mode == "recovery":
        return _recovery(cfg, out, params, fracs)
    raise cfg.error("count_rate.mode", f"unknown mode {mode!r}; valid: sweep, max-vs-bias, recovery")


def _count_rate_sweep(cfg, out, params, fracs):
    grid = _N_grid(cfg)
    rows = []
    for f in fracs:
        regime = _regime(cfg, f, params)
        for N in grid:
            op = dm.operating_point(regime, float(N), params)
            rows.append([float(N), f, op.N_out_cps, op.I_w_uA, op.mean_current_uA, op.latched,
                         len(op.roots_uA)])
    write_csv(out / "count_rate.csv", ["N_in_cps", "bias_frac", "N_out_cps", "I_w_uA",
                                       "mean_current_uA", "latched", "n_roots"], rows)
    files = ["count_rate.csv"]
    if cfg["voltage_reference.enabled"]:
        if cfg["bias.regime"] != "current":
            raise cfg.error("voltage_reference.enabled",
                            "the voltage reference is defined for bias.regime = current")
        _positive(cfg, "voltage_reference.N_out_cps")
        vrows = []
        for f in fracs:
            regime = dm.CurrentStabilized(f * params.I_c_uA)
            N_ref = dm.input_rate_for_output(cfg["voltage_reference.N_out_cps"], regime, params)
            I_w = dm.operating_point(regime, N_ref, params).I_w_uA
            volt = dm.VoltageStabilized(I_w)
            for N in grid:
                op = dm.operating_point(volt, float(N), params)
                vrows.append([float(N), f, I_w, op.N_out_cps, op.mean_current_uA])
        write_csv(out / "voltage_reference.csv",
                  ["N_in_cps", "bias_frac", "I_w_uA", "N_out_cps", "mean_current_uA"], vrows)
        files.append("voltage_reference.csv")
    return files


def _max_vs_bias(cfg, out, params, fracs, refine_steps=10, local_points=5):
    """Largest output rate over the input-rate sweep, per bias.

    The output can peak inside the sweep (where the high-current branch
    reaches I_c) or just below the latching input rate, so after the coarse
    grid both spots are refined: a denser log grid around the best coarse
    point and a bisection of the latching edge.
    """
    grid = _N_grid(cfg)
    rows = []
    for f in fracs:
        regime = _regime(cfg, f, params)
        seen = []  # (N_in, N_out) of non-latched evaluations
        latch_N = float("nan")
        for N in grid:
            op = dm.operating_point(regime, float(N), params)
            if op.latched:
                latch_N = float(N)
                break
            seen.append((float(N), op.N_out_cps))
        if seen:
            k = max(range(len(seen)), key=lambda i: seen[i][1])
            a = seen[k - 1][0] if k > 0 else seen[k][0]
            b = seen[k + 1][0] if k + 1 < len(seen) else (latch_N if math.isfinite(latch_N)
                                                          else seen[k][0])
            if b > a:
                for N in np.logspace(math.log10(a), math.log10(b), local_points + 2)[1:-1]:
                    op = dm.operating_point(regime, float(N), params)
                    if not op.latched:
                        seen.append((float(N), op.N_out_cps))
        if seen and math.isfinite(latch_N):
            # bisect the latching edge in log N_in
            lo, hi = math.log(max(N for N, _ in seen if N < latch_N)), math.log(latch_N)
            for _ in range(refine_steps):
                mid = 0.5 * (lo + hi)
                op = dm.operating_point(regime, math.exp(mid), params)
                if op.latched:
                    hi = mid
                else:
                    lo = mid
                    seen.append((math.exp(mid), op.N_out_cps))
            latch_N = math.exp(hi)
        best_N, best = max(seen, key=lambda x: x[1]) if seen else (float("nan"), 0.0)
        rows.append([f, float(params.nu(f * params.I_c_uA)), best, best_N, latch_N])
    write_csv(out / "max_rate.csv",
              ["bias_frac", "qe", "max_N_out_cps", "N_in_at_max_cps", "latch_N_in_cps"], rows)
    return ["max_rate.csv"]


def _recovery(cfg, out, params, fracs):
    _positive(cfg, "recovery.N_out_cps", "recovery.t_stop_ns")
    _count(cfg, "recovery.t_count", 2)
    t = np.linspace(0.0, cfg["recovery.t_stop_ns"], cfg["recovery.t_count"])
    rows, points = [], []
    for f in fracs:
        regime = _regime(cfg, f, params)
        N = dm.input_rate_for_output(cfg["recovery.N_out_cps"], regime, params)
        op = dm.operating_point(regime, N, params)
        prob = dm.next_photon_probability(t, op.I_w_uA, params)
        cur = dm.current_after_fire(op.I_w_uA, t, params.tau_ns)
        rows += [[f, a, b, c] for a, b, c in zip(t, prob, cur)]
        points.append([f, N, op.N_out_cps, op.I_w_uA, op.mean_current_uA])
    write_csv(out / "recovery.csv", ["bias_frac", "t_ns", "probability", "current_uA"], rows)
    write_csv(out / "operating_point.csv",
              ["bias_frac", "N_in_cps", "N_out_cps", "I_w_uA", "mean_current_uA"], points)
    return ["recovery.csv", "operating_point.csv"]


def _scene(cfg) -> ps.Scene:
    _positive(cfg, "scene.reference_qe", "scene.excitation_rate_per_ns")
    for k in ("scene.signal_cps", "scene.background_cps"):
        if cfg[k] < 0:
            raise cfg.error(k, "must be >= 0")
    return ps.Scene(cfg["scene.signal_cps"], cfg["scene.background_cps"],
                    cfg["scene.reference_qe"], cfg["scene.excitation_rate_per_ns"])


def run_g2_model(cfg: ExperimentConfig, out: Path) -> list[str]:
    scene = _scene(cfg)
    _positive(cfg, "emitter.lifetime_ns", "curve.half_width_ns", "curve.step_ns")
    try:
        sc = ps.DetectorScenario(cfg["scenario.name"], cfg["scenario.qe"], cfg["scenario.dark_cps"],
                                 cfg["scenario.jitter_fwhm_ns"])
    except ValueError as err:
        raise cfg.error("scenario", str(err)) from None
    grid = ps.symmetric_grid(cfg["curve.half_width_ns"], cfg["curve.step_ns"])
    curve = ps.g2_model_curve(cfg["emitter.lifetime_ns"], sc, scene, grid)
    with atomic_path(out / "g2_curve.csv") as tmp:
        curve.to_csv(tmp)
    return ["g2_curve.csv"]


def _scenarios(cfg) -> list[ps.DetectorScenario]:
    keys = ("scenarios.names", "scenarios.qe", "scenarios.dark_cps", "scenarios.jitter_fwhm_ns")
    cols = [cfg[k] for k in keys]
    if not cols[0]:
        raise cfg.error("scenarios.names", "needs at least one scenario")
    if len({len(c) for c in cols}) != 1:
        raise cfg.error("scenarios.names", "scenario lists must all have the same length")
    try:
        return [ps.DetectorScenario(*row) for row in zip(*cols)]
    except ValueError as err:
        raise cfg.error("scenarios", str(err)) from None


def run_g2_zero_sweep(cfg: ExperimentConfig, out: Path) -> list[str]:
    scene = _scene(cfg)
    scenarios = _scenarios(cfg)
    qes = cfg["sweep.qe_values"]
    if qes:
        _positive(cfg, "sweep.qe_lifetime_ns")
        if any(not 0 < q <= 1 for q in qes):
            raise cfg.error("sweep.qe_values", "QE values must lie in (0, 1]")
        rows = []
        for sc in scenarios:
            for q in qes:
                s = ps.DetectorScenario(sc.name, q, sc.dark_cps, sc.jitter_fwhm_ns)
                rows += ps.g2_zero_sweep([cfg["sweep.qe_lifetime_ns"]], [s], scene)
        name = "g2_zero_vs_qe.csv"
    else:
        _positive(cfg, "sweep.lifetime_start_ns", "sweep.lifetime_stop_ns")
        _count(cfg, "sweep.lifetime_count")
        a, b, n = (cfg["sweep.lifetime_start_ns"], cfg["sweep.lifetime_stop_ns"],
                   cfg["sweep.lifetime_count"])
        spacing = cfg["sweep.lifetime_spacing"]
        if spacing == "log":
            lts = np.logspace(math.log10(a), math.log10(b), n)
        elif spacing == "linear":
            lts = np.linspace(a, b, n)
        else:
            raise cfg.error("sweep.lifetime_spacing", f"unknown spacing {spacing!r}; valid: log, linear")
        rows = ps.g2_zero_sweep(lts, scenarios, scene)
        name = "g2_zero_vs_lifetime.csv"
    with atomic_path(out / name) as tmp:
        ps.write_sweep_csv(rows, tmp)
    return [name]


def run_hbt_sim(cfg: ExperimentConfig, out: Path) -> list[str]:
    params = detector_params(cfg)
    _positive(cfg, "emitter.lifetime_ns", "emitter.pump_ratio", "sim.duration_ns",
              "histogram.bin_width_ns", "histogram.window_ns")
    if not 0 < cfg["emitter.radiative_yield"] <= 1:
        raise cfg.error("emitter.radiative_yield", "must lie in (0, 1]")
    if not 0 < cfg["bias.frac"] < 1:
        raise cfg.error("bias.frac", "must lie in (0, 1)")
    scn = oracles.HBTScenario(cfg["emitter.lifetime_ns"], cfg["emitter.pump_ratio"],
                              cfg["emitter.radiative_yield"], cfg["sim.duration_ns"],
                              cfg["bias.frac"], cfg["histogram.bin_width_ns"],
                              cfg["histogram.window_ns"])
    hist, model, _ = oracles.run_hbt(scn, params, cfg.seed)
    with atomic_path(out / "hbt_histogram.csv") as tmp:
        hist.to_csv(tmp)
    sigma = np.sqrt(model * hist.normalization) / hist.normalization
    z = (hist.g2_estimate - model) / sigma
    e = hist.bin_edges_ns
    write_csv(out / "hbt_model.csv", ["bin_start_ns", "bin_end_ns", "g2_model", "z_score"],
              zip(e[:-1], e[1:], model, z))
    return ["hbt_histogram.csv", "hbt_model.csv"]


def run_lifetime_sim(cfg: ExperimentConfig, out: Path) -> list[str]:
    params = detector_params(cfg)
    _positive(cfg, "emitter.lifetime_ns", "pulses.sync_period_ns", "histogram.bin_width_ns")
    _count(cfg, "pulses.count")
    scn = oracles.TCSPCScenario(cfg["emitter.lifetime_ns"], cfg["pulses.sync_period_ns"],
                                cfg["pulses.count"], cfg["pulses.excitation_prob"],
                                cfg["pulses.collection_eff"], cfg["bias.frac"],
                                cfg["histogram.bin_width_ns"], cfg["fit.start_ns"],
                                cfg["fit.stop_ns"])
    hist, tau_fit = oracles.run_tcspc(scn, params, cfg.seed)
    with atomic_path(out / "tcspc_histogram.csv") as tmp:
        hist.to_csv(tmp)
    write_csv(out / "lifetime_fit.csv", ["tau_true_ns", "tau_fit_ns", "counts"],
              [[scn.tau_decay_ns, tau_fit, int(hist.counts.sum())]])
    return ["tcspc_histogram.csv", "lifetime_fit.csv"]


def check_records(checks) -> list[dict]:
    return [{"name": c.name, "metric": c.metric, "analytic": c.analytic,
             "monte_carlo": c.monte_carlo, "score": c.score, "tolerance": c.tolerance,
             "passed": c.passed, "extra": c.extra} for c in checks]


def run_oracle_check(cfg: ExperimentConfig, out: Path) -> list[str]:
    params = detector_params(cfg)
    checks = oracles.run_all(params, fast=cfg["oracle.fast"], seed=cfg.seed)
    write_jsonl(out / "oracle_checks.jsonl", check_records(checks))
    return ["oracle_checks.jsonl"]


RUNNERS = {
    "tmm-spectrum": run_tmm_spectrum,
    "count-rate": run_count_rate,
    "g2-model": run_g2_model,
    "g2-zero-sweep": run_g2_zero_sweep,
    "hbt-sim": run_hbt_sim,
    "lifetime-sim": run_lifetime_sim,
    "oracle-check": run_oracle_check,
}
