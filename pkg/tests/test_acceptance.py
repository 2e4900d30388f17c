"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

A criterion passes only when both its numerical check and its runtime budget
hold. Run alone with ``pytest tests/test_acceptance.py -v``.
"""

import csv
import filecmp
import math
import os
import subprocess
import sys
import textwrap
import time
from pathlib import Path

import numpy as np
import pytest

from sspdsim import cli
from sspdsim import detector as dm
from sspdsim import oracles
from sspdsim import photon_stats as ps
from sspdsim.optics import (
    VACUUM,
    DispersionTable,
    Layer,
    LayerStack,
    absorption_spectrum,
    default_stack,
    load_material,
)


def report(capsys, number, ok, detail, elapsed, budget):
    ok_time = elapsed < budget
    status = "PASS" if ok and ok_time else "FAIL"
    line = (f"{status} criterion {number:>2}: {detail} "
            f"[{elapsed:.2f} s, budget {budget:g} s{'' if ok_time else ', OVER BUDGET'}]")
    with capsys.disabled():
        print("\n" + line)
    return ok and ok_time


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------------------


def random_stack(rng, lossless):
    tables = [load_material(m) for m in ("NbN", "SiO2", "Si")]
    layers = []
    for _ in range(rng.integers(1, 6)):
        d = float(rng.uniform(0.0, 400.0))
        if lossless:
            mat = DispersionTable.constant(float(rng.uniform(1.0, 4.0)))
        elif rng.random() < 0.5:
            mat = tables[rng.integers(3)]
        else:
            mat = DispersionTable.constant(float(rng.uniform(1.0, 5.0)), float(rng.uniform(0.0, 4.0)))
        layers.append(Layer(d, mat, float(rng.uniform(0.05, 1.0))))
    sub = DispersionTable.constant(float(rng.uniform(1.0, 4.0))) if lossless else tables[2]
    return LayerStack(VACUUM, tuple(layers), sub)


def test_criterion_01_conservation(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    wl = np.linspace(500.0, 1300.0, 81)
    worst = worst_lossless = 0.0
    for _ in range(100):
        for r in absorption_spectrum(random_stack(rng, False), wl):
            worst = max(worst, abs(r.total - 1.0))
    for _ in range(100):
        for r in absorption_spectrum(random_stack(rng, True), wl):
            worst_lossless = max(worst_lossless, max(abs(a) for a in r.absorption_per_layer))
    ok = worst <= 1e-10 and worst_lossless < 1e-12
    assert report(capsys, 1, ok, f"max |R+T+sum A - 1| = {worst:.2e} (<= 1e-10), "
                  f"lossless max |A| = {worst_lossless:.2e} (< 1e-12)",
                  time.perf_counter() - t0, 5)


def test_criterion_02_absorption_shape(capsys):
    t0 = time.perf_counter()
    wl = np.arange(500.0, 1300.0 + 0.5, 1.0)
    A = np.array([r.absorption_per_layer[0] for r in absorption_spectrum(default_stack(), wl)])
    k = int(np.argmax(A))
    peak = wl[k]
    falls = bool(np.all(np.diff(A[:k + 1]) >= 0)) and A[0] < A[k]
    ok = 650.0 <= peak <= 750.0 and falls
    assert report(capsys, 2, ok, f"NbN absorption peak at {peak:.0f} nm (window 650-750), "
                  f"A(500 nm) = {A[0]:.3f} vs A(peak) = {A[k]:.3f}, monotone fall to 500 nm: {falls}",
                  time.perf_counter() - t0, 1)


def test_criterion_03_count_rate_oracle(capsys, params):
    t0 = time.perf_counter()
    checks = oracles.check_count_rates(params, detections=10**6, tol=0.02)
    rate = [c for c in checks if c.name.startswith("count_rate")]
    worst = max(abs(c.score) for c in rate)
    enough = min(c.extra["detections"] for c in rate) >= 10**6
    outs = [c.analytic for c in rate]
    ok = len(rate) >= 20 and all(c.passed for c in rate) and enough
    assert report(capsys, 3, ok, f"{len(rate)} points, N_out {min(outs):.3g}-{max(outs):.3g} cps, "
                  f"max |MC/analytic - 1| = {worst:.4f} (<= 0.02), >= 1e6 detections each: {enough}",
                  time.perf_counter() - t0, 60)


def test_criterion_04_saturation_and_linearity(capsys, params):
    t0 = time.perf_counter()
    limit = 1.0 / (params.dead_time_ns * dm.NS)
    sat, lin_worst = [], 0.0
    for f in (0.62, 0.8, 0.9):
        reg = dm.VoltageStabilized(f * params.I_c_uA)
        sat.append(dm.operating_point(reg, 1e15, params).N_out_cps)
        nu = float(params.nu(f * params.I_c_uA))
        for N in np.logspace(3, 10, 141):
            out = dm.operating_point(reg, float(N), params).N_out_cps
            if out > 150e6:
                break
            lin_worst = max(lin_worst, abs(out / (nu * N) - 1.0))
    band = all(280e6 <= s <= limit for s in sat)
    ok = band and lin_worst <= 0.05
    assert report(capsys, 4, ok, f"saturated N_out {min(sat) / 1e6:.1f}-{max(sat) / 1e6:.1f} MHz "
                  f"(band 280-{limit / 1e6:.2f}): {band}; max linearity deviation up to 150 Mcps "
                  f"= {lin_worst:.3f} (<= 0.05)", time.perf_counter() - t0, 30)


def test_criterion_05_step_and_latching(capsys, params, tmp_path):
    t0 = time.perf_counter()
    reg = dm.CurrentStabilized(0.62 * params.I_c_uA)
    grid = np.logspace(7, 10, 41)
    ops = [dm.operating_point(reg, float(N), params) for N in grid]
    # a log-slope above 1 cannot come from any fixed-bias response; call slope > 2 a jump
    step = None
    for i in range(len(grid) - 1):
        a, b = ops[i], ops[i + 1]
        if a.latched or b.latched:
            continue
        slope = math.log(b.N_out_cps / a.N_out_cps) / math.log(grid[i + 1] / grid[i])
        if slope > 2 and b.I_w_uA > a.I_w_uA:
            step = (grid[i], a, b, slope)
            break
    cfg = cli.build_config(
        "experiment = count-rate\ncount_rate.mode = max-vs-bias\n"
        "bias.fracs = [0.35, 0.4, 0.45, 0.5, 0.55, 0.6, 0.62]\n"
        "sweep.N_in_start_cps = 1e6\nsweep.N_in_stop_cps = 1e13\nsweep.N_in_count = 15\n")
    cli.execute(cfg, tmp_path)
    rows = {float(r["bias_frac"]): r for r in read_rows(tmp_path / "max_rate.csv")}
    ref = float(rows[0.62]["max_N_out_cps"])
    lower = [(f, float(r["max_N_out_cps"])) for f, r in rows.items()
             if f < 0.62 and math.isfinite(float(r["latch_N_in_cps"]))]
    good = [f for f, m in lower if m < ref]
    ok = step is not None and bool(good)
    step_txt = (f"jump at N_in {step[0]:.3g} cps, slope {step[3]:.1f}, I_w "
                f"{step[1].I_w_uA:.2f}->{step[2].I_w_uA:.2f} uA" if step else "no jump")
    lower_txt = ", ".join(f"{f:g}:{m / 1e6:.0f}" for f, m in sorted(lower))
    assert report(capsys, 5, ok, f"{step_txt}; peak at 0.62 = {ref / 1e6:.0f} MHz, latching lower "
                  f"biases (frac:peak MHz) {lower_txt}; latching with lower peak at reduced bias: "
                  f"{bool(good)}", time.perf_counter() - t0, 30)


def test_criterion_06_recovery(capsys, params):
    t0 = time.perf_counter()
    reg = dm.CurrentStabilized(0.62 * params.I_c_uA)
    N = dm.input_rate_for_output(123e6, reg, params)
    op = dm.operating_point(reg, N, params)
    t = np.concatenate([np.linspace(0.0, 2.999, 300), [10.0]])
    p = dm.next_photon_probability(t, op.I_w_uA, params)
    ok = bool(np.all(p[:-1] == 0.0)) and p[-1] >= 0.95
    assert report(capsys, 6, ok, f"at 123 MHz (I_w = {op.I_w_uA:.2f} uA): max p(t<3 ns) = "
                  f"{p[:-1].max():.1e}, p(10 ns) = {p[-1]:.4f} (>= 0.95)", time.perf_counter() - t0, 1)


def test_criterion_07_round_trip(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(1000):
        snr = 10 ** rng.uniform(-1, 4, size=2)
        S = 10 ** rng.uniform(2, 7, size=2)
        r = ps.ChannelRates(S[0], S[0] / snr[0], S[1], S[1] / snr[1])
        n = int(rng.integers(1, 200))
        curve = ps.G2Curve(np.arange(n, dtype=float), rng.uniform(0.0, 3.0, n))
        back = ps.g2_compensate_background(ps.g2_forward_background(curve, r), r)
        worst = max(worst, float(np.max(np.abs(back.values - curve.values))))
    ok = worst <= 1e-12
    assert report(capsys, 7, ok, f"1000 draws, SNR 0.1-1e4: max |compensate(forward(g)) - g| = "
                  f"{worst:.1e} (<= 1e-12)", time.perf_counter() - t0, 5)


def test_criterion_08_fig6_point(capsys):
    t0 = time.perf_counter()
    rates = ps.ChannelRates.balanced(80e3, 37e3)
    curve = ps.G2Curve(np.array([0.0]), np.array([0.0]))
    meas = ps.g2_forward_background(curve, rates).values[0]
    back = ps.g2_compensate_background(ps.G2Curve([0.0], [meas]), rates).values[0]
    ok = abs(meas - 0.5325) <= 1e-4 and abs(back) <= 1e-12
    assert report(capsys, 8, ok, f"forward g2(0) = {meas:.6f} (0.5325 +- 1e-4), "
                  f"compensated = {back:.1e}", time.perf_counter() - t0, 1)


def test_criterion_09_hbt(capsys, params):
    t0 = time.perf_counter()
    chk, hist, model, z = oracles.check_hbt(params, seed=3)
    n = chk.extra["coincidences"]
    ok = chk.passed and n >= 10**5
    assert report(capsys, 9, ok, f"{n} coincidences over {len(z)} bins, max |z| = {chk.score:.2f} "
                  f"(<= 3) at {chk.extra['worst_bin_center_ns']:+.1f} ns, "
                  f"{int(np.sum(np.abs(z) > 3))} bins beyond 3 sigma", time.perf_counter() - t0, 120)


def test_criterion_10_sweep_ordering(capsys, tmp_path):
    t0 = time.perf_counter()
    for name in ("fig2e", "fig6a", "fig6b"):
        assert cli.main(["presets", "run", name, "--out", str(tmp_path / name)]) == 0

    def table(path):
        out = {}
        for r in read_rows(path):
            out.setdefault(r["scenario"], []).append((float(r["lifetime_ns"]), float(r["qe"]),
                                                      float(r["g2_zero"])))
        return out

    dark = {"fig2e": ("APD_conventional", ["APD_ideal", "SSPD", "SSPD_high_QE"]),
            "fig6a": ("APD_measured", ["SSPD_dark"])}
    above = True
    for name, (apd, others) in dark.items():
        tab = table(tmp_path / name / "g2_zero_vs_lifetime.csv")
        hi = np.array([g for _, _, g in tab[apd]])
        for o in others:
            above &= bool(np.all(hi > np.array([g for _, _, g in tab[o]])))
    qe = table(tmp_path / "fig6b" / "g2_zero_vs_qe.csv")
    mono = all(np.all(np.diff([g for _, _, g in sorted(rows, key=lambda x: x[1])]) <= 0)
               for rows in qe.values())
    ok = above and mono
    assert report(capsys, 10, ok, f"1500 cps APD strictly above 0.1 cps scenarios at every "
                  f"lifetime: {above}; g2(0) non-increasing in QE: {mono}",
                  time.perf_counter() - t0, 10)


def test_criterion_11_tcspc(capsys, params):
    t0 = time.perf_counter()
    chk, hist = oracles.check_tcspc(params, seed=4)
    n = chk.extra["counts"]
    ok = chk.passed and n >= 10**5
    assert report(capsys, 11, ok, f"fitted lifetime {chk.monte_carlo:.3f} ns vs 12 ns "
                  f"({chk.score:+.2%}, <= 5%) from {n} counts", time.perf_counter() - t0, 30)


RUN_ALL = textwrap.dedent("""
    import sys, time
    from sspdsim import cli
    out = sys.argv[1]
    t0 = time.perf_counter()
    codes = [cli.main(["presets", "run", n, "--out", f"{out}/{n}"]) for n in cli.preset_names()]
    codes.append(cli.main(["check-oracles", "--fast", "--out", f"{out}/oracles-fast"]))
    print("CODES", codes)
    print("WALL", time.perf_counter() - t0)
""")


def test_criterion_12_determinism(capsys, tmp_path):
    walls, codes = [], []
    for d in ("run1", "run2"):
        res = subprocess.run([sys.executable, "-c", RUN_ALL, str(tmp_path / d)],
                             capture_output=True, text=True, env=os.environ.copy())
        assert res.returncode == 0, res.stderr
        lines = dict(line.split(" ", 1) for line in res.stdout.splitlines()
                     if line.startswith(("CODES", "WALL")))
        walls.append(float(lines["WALL"]))
        codes.append(lines["CODES"])
    diffs, compared = [], 0
    for f in sorted((tmp_path / "run1").rglob("*")):
        if f.is_dir() or f.name == "manifest.jsonl":
            continue
        other = tmp_path / "run2" / f.relative_to(tmp_path / "run1")
        compared += 1
        if not other.exists() or not filecmp.cmp(f, other, shallow=False):
            diffs.append(str(f.relative_to(tmp_path / "run1")))
    n1 = sum(1 for f in (tmp_path / "run1").rglob("*") if f.is_file())
    n2 = sum(1 for f in (tmp_path / "run2").rglob("*") if f.is_file())
    ok = not diffs and n1 == n2 and compared > 0
    assert report(capsys, 12, ok, f"{compared} output files compared, {len(diffs)} differ "
                  f"{diffs[:3] if diffs else ''}; exit codes {codes[0]}",
                  max(walls), 60)
