"""Analytic-versus-Monte-Carlo equivalence checks.

Each check runs the analytic model and an independent simulation of the same
scenario and compares them at a stated tolerance. Seeds are fixed inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import detector as dm
from . import montecarlo as mc
from . import photon_stats as ps


@dataclass
class Check:
    name: str
    analytic: float
    monte_carlo: float
    tolerance: float
    metric: str  # "rel" (relative difference) or "z" (standard scores)
    score: float
    passed: bool
    extra: dict = field(default_factory=dict)


def _rel_check(name, analytic, simulated, tol, **extra) -> Check:
    rel = simulated / analytic - 1.0
    return Check(name, float(analytic), float(simulated), tol, "rel", float(rel),
                 bool(abs(rel) <= tol), extra)


# ---------------------------------------------------------------------------
# count rate and mean current


def count_rate_points(params: dm.DetectorParams, fracs=(0.62, 0.8), per_frac: int = 10):
    """(I_w, N_in) pairs whose output spans ~1 kcps up to deep saturation."""
    pts = []
    for f in fracs:
        I_w = f * params.I_c_uA
        nu = float(params.nu(I_w))
        lo = 1e3 / nu
        for N in np.logspace(math.log10(lo), 13.0, per_frac):
            pts.append((I_w, float(N)))
    return pts


def check_count_rates(params: dm.DetectorParams, detections: int = 10**6, seed: int = 1,
                      tol: float = 0.02, points=None) -> list[Check]:
    """Analytic output rate and mean current vs simulated renewal estimates."""
    p = params.with_(dark_rate_cps=0.0, jitter_sigma_ns=0.0)
    out = []
    for k, (I_w, N) in enumerate(points or count_rate_points(p)):
        dist = dm.firing_distribution(I_w, N, p)
        rate = dm.count_rate(dist, 0.0)
        ibar = dm.mean_current(I_w, dist, p.tau_ns)
        run = mc.simulate_detector(None, p, dm.VoltageStabilized(I_w), seed, rate_cps=N,
                                   duration_ns=math.inf, max_detections=detections,
                                   label=f"count-rate/{k}")
        out.append(_rel_check(f"count_rate[I_w={I_w:.4g}uA,N_in={N:.4g}cps]", rate,
                              run.renewal_rate_cps, tol, I_w_uA=I_w, N_in_cps=N,
                              detections=run.photon_detections))
        out.append(_rel_check(f"mean_current[I_w={I_w:.4g}uA,N_in={N:.4g}cps]", ibar,
                              run.renewal_mean_current_uA, tol, I_w_uA=I_w, N_in_cps=N))
    return out


def check_high_rate_current(params: dm.DetectorParams, bias_frac: float = 0.62,
                            target_cps: float = 123e6, detections: int = 10**6, seed: int = 2,
                            tol: float = 0.02, trace_samples: int = 10**6):
    """At the current-stabilized point with the given output rate: mean current
    from the model vs the simulated time average and vs the fitted trace level."""
    p = params.with_(dark_rate_cps=0.0, jitter_sigma_ns=0.0)
    regime = dm.CurrentStabilized(bias_frac * p.I_c_uA)
    N = dm.input_rate_for_output(target_cps, regime, p)
    op = dm.operating_point(regime, N, p)
    run = mc.simulate_detector(None, p, dm.VoltageStabilized(op.I_w_uA), seed, rate_cps=N,
                               duration_ns=math.inf, max_detections=detections,
                               trace_dt_ns=0.0501, trace_samples=trace_samples,
                               label="high-rate")
    fit = mc.effective_current_fit(run.trace)
    checks = [
        _rel_check("high_rate/count_rate", op.N_out_cps, run.renewal_rate_cps, tol,
                   N_in_cps=N, I_w_uA=op.I_w_uA),
        _rel_check("high_rate/mean_current", op.mean_current_uA, run.renewal_mean_current_uA, tol),
        _rel_check("high_rate/fitted_mean_level", op.mean_current_uA, fit.mean_level_uA, tol,
                   U_offset=fit.U_offset, U0_amplitude=fit.U0_amplitude, tau_fit_ns=fit.tau_fit_ns),
    ]
    return checks, op, run, fit


# ---------------------------------------------------------------------------
# photon statistics


@dataclass
class HBTScenario:
    tau_decay_ns: float = 3.0
    pump_ratio: float = 0.1  # R / gamma
    radiative_yield: float = 0.1
    duration_ns: float = 25e9
    bias_frac: float = 0.9
    bin_width_ns: float = 1.0
    window_ns: float = 30.0


def hbt_model_bins(scn: HBTScenario, params: dm.DetectorParams, edges: np.ndarray,
                   rates: ps.ChannelRates) -> np.ndarray:
    gamma = 1.0 / scn.tau_decay_ns
    em = ps.EmitterParams(scn.pump_ratio * gamma, gamma, scn.radiative_yield)
    jitter = ps.JitterModel.combine(params.jitter_sigma_ns, params.jitter_sigma_ns)
    step = jitter.sigma_ns / 4 if jitter.sigma_ns > 0 else scn.bin_width_ns / 50
    step = min(step, scn.bin_width_ns / 50)
    tau = ps.symmetric_grid(scn.window_ns + 8 * jitter.sigma_ns + step, step)
    curve = ps.g2_forward_background(ps.g2_ideal_curve(tau, em), rates)
    curve = ps.jitter_convolve(curve, jitter)
    return mc.hbt_analytic_bins(edges, curve.tau_ns, curve.values)


def run_hbt(scn: HBTScenario, params: dm.DetectorParams, seed: int):
    gamma = 1.0 / scn.tau_decay_ns
    em = ps.EmitterParams(scn.pump_ratio * gamma, gamma, scn.radiative_yield)
    photons = mc.simulate_emitter(em, scn.duration_ns, seed, "hbt/emitter")
    a, b = mc.split_stream(photons, 0.5, seed, "hbt/beamsplitter")
    regime = dm.VoltageStabilized(scn.bias_frac * params.I_c_uA)
    d1 = mc.simulate_detector(a, params, regime, seed, label="hbt/det1").detections
    d2 = mc.simulate_detector(b, params, regime, seed, label="hbt/det2").detections
    hist = mc.hbt_correlate(d1, d2, scn.bin_width_ns, scn.window_ns)
    qe = float(params.nu(scn.bias_frac * params.I_c_uA))
    s = 0.5 * em.photon_rate_cps * qe
    rates = ps.ChannelRates(s, params.dark_rate_cps, s, params.dark_rate_cps)
    model = hbt_model_bins(scn, params, hist.bin_edges_ns, rates)
    return hist, model, qe


def check_hbt(params: dm.DetectorParams, scn: HBTScenario = HBTScenario(), seed: int = 3,
              z_max: float = 3.0):
    hist, model, qe = run_hbt(scn, params, seed)
    sigma = np.sqrt(model * hist.normalization) / hist.normalization
    z = (hist.g2_estimate - model) / sigma
    coincidences = int(hist.counts.sum())
    worst = int(np.argmax(np.abs(z)))
    chk = Check("hbt/g2_per_bin", float(model[worst]), float(hist.g2_estimate[worst]), z_max, "z",
                float(np.max(np.abs(z))), bool(np.all(np.abs(z) <= z_max)),
                {"coincidences": coincidences, "bins": len(z), "qe": qe,
                 "worst_bin_center_ns": float(hist.centers_ns[worst])})
    return chk, hist, model, z


@dataclass
class TCSPCScenario:
    tau_decay_ns: float = 12.0
    sync_period_ns: float = 200.0
    n_pulses: int = 2 * 10**7
    excitation_prob: float = 0.5
    collection_eff: float = 0.1
    bias_frac: float = 0.9
    bin_width_ns: float = 0.5
    fit_start_ns: float = 2.0
    fit_stop_ns: float = 60.0


def run_tcspc(scn: TCSPCScenario, params: dm.DetectorParams, seed: int):
    photons = mc.simulate_pulsed_emitter(scn.sync_period_ns, scn.n_pulses, scn.tau_decay_ns,
                                         scn.excitation_prob, scn.collection_eff, seed,
                                         "tcspc/emitter")
    regime = dm.VoltageStabilized(scn.bias_frac * params.I_c_uA)
    det = mc.simulate_detector(photons, params, regime, seed, label="tcspc/det").detections
    hist = mc.tcspc_histogram(scn.sync_period_ns, det, scn.bin_width_ns)
    start = scn.fit_start_ns + 6 * params.jitter_sigma_ns
    tau_fit = mc.fit_decay_tail(hist, start, scn.fit_stop_ns)
    return hist, tau_fit


def check_tcspc(params: dm.DetectorParams, scn: TCSPCScenario = TCSPCScenario(), seed: int = 4,
                tol: float = 0.05):
    hist, tau_fit = run_tcspc(scn, params, seed)
    chk = _rel_check("tcspc/lifetime", scn.tau_decay_ns, tau_fit, tol, counts=int(hist.counts.sum()))
    return chk, hist


def check_thinning(rate_cps: float = 1e7, nu0: float = 0.3, duration_ns: float = 1e9,
                   window_ns: float = 1e4, seed: int = 5, z_max: float = 3.0) -> Check:
    """Constant efficiency, no dead time: detections are Poisson at nu0 * rate."""
    eff = dm.TabulatedEfficiency((0.0, 1.0), (nu0, nu0))
    p = dm.DetectorParams(I_c_uA=2.0, tau_ns=1.0, dead_time_ns=0.0, efficiency=eff,
                          jitter_sigma_ns=0.0, dark_rate_cps=0.0)
    photons = mc.simulate_poisson(rate_cps, duration_ns, seed, "thinning/photons")
    run = mc.simulate_detector(photons, p, dm.VoltageStabilized(1.0), seed, label="thinning/det")
    counts, _ = np.histogram(run.detections.times_ns, bins=np.arange(0.0, duration_ns + window_ns / 2, window_ns))
    k = len(counts)
    dispersion = counts.var(ddof=1) / counts.mean()
    z = (dispersion - 1.0) / math.sqrt(2.0 / (k - 1))
    return Check("thinning/index_of_dispersion", 1.0, float(dispersion), z_max, "z", float(z),
                 bool(abs(z) <= z_max),
                 {"rate_ratio": run.detections.rate_cps / (nu0 * rate_cps), "windows": k})


def run_all(params: dm.DetectorParams | None = None, fast: bool = False, seed: int = 1) -> list[Check]:
    """The full equivalence suite; ``fast`` shrinks sample sizes for smoke runs."""
    params = params or dm.DetectorParams()
    checks = []
    if fast:
        pts = count_rate_points(params, per_frac=3)
        checks += check_count_rates(params, detections=20000, seed=seed, tol=0.05, points=pts)
        hr, *_ = check_high_rate_current(params, detections=50000, seed=seed + 1, tol=0.05,
                                         trace_samples=200000)
        checks += hr
        checks.append(check_hbt(params, HBTScenario(duration_ns=2e9), seed=seed + 2, z_max=5.0)[0])
        checks.append(check_tcspc(params, TCSPCScenario(n_pulses=10**6), seed=seed + 3, tol=0.1)[0])
        checks.append(check_thinning(duration_ns=1e8, seed=seed + 4, z_max=5.0))
    else:
        checks += check_count_rates(params, seed=seed)
        hr, *_ = check_high_rate_current(params, seed=seed + 1)
        checks += hr
        checks.append(check_hbt(params, seed=seed + 2)[0])
        checks.append(check_tcspc(params, seed=seed + 3)[0])
        checks.append(check_thinning(seed=seed + 4))
    return checks
