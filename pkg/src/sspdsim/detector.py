"""Renewal model of SSPD counting with current recovery and bias feedback.

After every detection the bias current recovers as I(t) = I_w (1 - exp(-t/tau))
and the detector is blind for a hard dead time. Under Poisson illumination of
rate N_in the inter-detection interval is a renewal time with hazard
N_in * nu(I(t)), which gives the count rate and the mean current through the
nanowire. A current-stabilized supply adjusts I_w until the mean current
equals the set point, which can have several solutions or none (latching).

Units: currents in uA, times in ns, rates in counts per second.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Union

import numpy as np
from scipy.optimize import brentq

NS = 1e-9  # seconds per ns

FWHM_TO_SIGMA = 1.0 / (2.0 * math.sqrt(2.0 * math.log(2.0)))


class DetectorModelError(Exception):
    """Base class for detector-model failures."""


class NeverFiresError(DetectorModelError):
    """Efficiency is zero along the whole recovery, so no detection can occur."""


class NumericError(DetectorModelError):
    """Quadrature or root finding did not reach the requested accuracy."""

    def __init__(self, message, bracket=None):
        super().__init__(message)
        self.bracket = bracket


# ---------------------------------------------------------------------------
# efficiency curves


@dataclass(frozen=True)
class SigmoidEfficiency:
    """nu(I) = nu_max / (1 + exp(-(I/I_c - center_frac)/width_frac))."""

    nu_max: float = 0.20
    center_frac: float = 0.70
    width_frac: float = 0.03

    def __post_init__(self):
        if not 0.0 < self.nu_max <= 1.0:
            raise ValueError("nu_max must be in (0, 1]")
        if not 0.0 < self.center_frac < 1.0:
            raise ValueError("center_frac must be in (0, 1)")
        if self.width_frac <= 0:
            raise ValueError("width_frac must be > 0")
        # counting must be switched off at zero current
        if 1.0 / (1.0 + math.exp(min(self.center_frac / self.width_frac, 700.0))) >= 1e-6:
            raise ValueError(
                "sigmoid is not negligible at zero current; need center_frac/width_frac > ln(1e6)"
            )

    def __call__(self, current_uA, I_c_uA: float):
        x = (np.asarray(current_uA, dtype=float) / I_c_uA - self.center_frac) / self.width_frac
        # logistic via tanh avoids overflow warnings for very negative x
        return self.nu_max * 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass(frozen=True)
class TabulatedEfficiency:
    """Efficiency samples vs absolute current, linearly interpolated.

    Below the first sample the curve ramps linearly from 0 at zero current;
    above the last sample it is held constant.
    """

    current_uA: tuple[float, ...]
    efficiency: tuple[float, ...]

    def __post_init__(self):
        c = np.asarray(self.current_uA, dtype=float)
        e = np.asarray(self.efficiency, dtype=float)
        if len(c) < 2 or len(c) != len(e):
            raise ValueError("tabulated efficiency needs >= 2 (current, efficiency) pairs")
        if np.any(np.diff(c) <= 0) or c[0] < 0:
            raise ValueError("currents must be >= 0 and strictly increasing")
        if np.any(e < 0) or np.any(e > 1):
            raise ValueError("efficiency values must lie in [0, 1]")
        if np.any(np.diff(e) < 0):
            raise ValueError("efficiency must be non-decreasing in current")
        object.__setattr__(self, "current_uA", tuple(float(x) for x in c))
        object.__setattr__(self, "efficiency", tuple(float(x) for x in e))

    @property
    def nu_max(self) -> float:
        return self.efficiency[-1]

    def __call__(self, current_uA, I_c_uA: float):
        c = self.current_uA
        e = self.efficiency
        if c[0] > 0:
            c, e = (0.0,) + c, (0.0,) + e
        return np.interp(np.asarray(current_uA, dtype=float), c, e)


EfficiencyCurve = Union[SigmoidEfficiency, TabulatedEfficiency]


@dataclass(frozen=True)
class DetectorParams:
    I_c_uA: float = 29.0
    tau_ns: float = 2.33
    dead_time_ns: float = 3.0
    efficiency: EfficiencyCurve = field(default_factory=SigmoidEfficiency)
    jitter_sigma_ns: float = 0.062 * FWHM_TO_SIGMA
    dark_rate_cps: float = 0.1

    def __post_init__(self):
        if self.I_c_uA <= 0:
            raise ValueError("I_c_uA must be > 0")
        if self.tau_ns <= 0:
            raise ValueError("tau_ns must be > 0")
        if self.dead_time_ns < 0:
            raise ValueError("dead_time_ns must be >= 0")
        if self.jitter_sigma_ns < 0:
            raise ValueError("jitter_sigma_ns must be >= 0")
        if self.dark_rate_cps < 0:
            raise ValueError("dark_rate_cps must be >= 0")

    def nu(self, current_uA):
        return self.efficiency(current_uA, self.I_c_uA)

    def with_(self, **kw) -> "DetectorParams":
        return replace(self, **kw)


@dataclass(frozen=True)
class CurrentStabilized:
    I_bar0_uA: float


@dataclass(frozen=True)
class VoltageStabilized:
    I_w_uA: float


BiasRegime = Union[CurrentStabilized, VoltageStabilized]


def check_regime(regime: BiasRegime, params: DetectorParams) -> None:
    value = regime.I_bar0_uA if isinstance(regime, CurrentStabilized) else regime.I_w_uA
    if not 0.0 < value < params.I_c_uA:
        raise ValueError(f"bias current {value} uA must lie in (0, I_c = {params.I_c_uA} uA)")


# ---------------------------------------------------------------------------
# recovery and firing statistics


def current_after_fire(I_w_uA, t_ns, tau_ns: float):
    """Bias current a time t after a detection, I_w (1 - exp(-t/tau))."""
    t = np.asarray(t_ns, dtype=float)
    if tau_ns <= 0:
        raise ValueError("tau_ns must be > 0")
    if np.any(t < 0):
        raise ValueError("time since firing must be >= 0")
    out = I_w_uA * -np.expm1(-t / tau_ns)
    return float(out) if out.ndim == 0 else out


def average_current(T_ns, I_w_uA: float, tau_ns: float):
    """Time average of the recovering current over one interval of length T."""
    T = np.asarray(T_ns, dtype=float)
    x = T / tau_ns
    with np.errstate(divide="ignore", invalid="ignore"):
        frac = np.where(x > 1e-8, 1.0 + np.expm1(-x) / np.where(x > 0, x, 1.0), 0.5 * x)
    out = I_w_uA * frac
    return float(out) if out.ndim == 0 else out


# time after the dead time at which the recovery is treated as complete
RECOVERY_SPAN_TAU = 40.0
# survival below exp(-CUT_HAZARD) is treated as exactly zero
CUT_HAZARD = 80.0


def _cumulative_simpson(f, dx):
    """Cumulative integral along the last axis of uniformly sampled f.

    Each interval uses the three-point rule dx/12 (5 f0 + 8 f1 - f2),
    mirrored for the last interval. Rows may have different spacings.
    """
    n = f.shape[-1]
    dx = np.asarray(dx, dtype=float)
    if dx.ndim:
        dx = dx[..., None]
    seg = np.empty(f.shape[:-1] + (n - 1,))
    if n == 2:
        seg[...] = 0.5 * (f[..., :1] + f[..., 1:])
    else:
        seg[..., :-1] = (5.0 * f[..., :-2] + 8.0 * f[..., 1:-1] - f[..., 2:]) / 12.0
        seg[..., -1] = (-f[..., -3] + 8.0 * f[..., -2] + 5.0 * f[..., -1]) / 12.0
    out = np.zeros(f.shape)
    np.cumsum(seg * dx, axis=-1, out=out[..., 1:])
    return out


def _simpson(f, dx):
    """Composite Simpson along the last axis (odd number of samples)."""
    dx = np.asarray(dx, dtype=float)
    s = f[..., 0] + f[..., -1] + 4.0 * f[..., 1:-1:2].sum(-1) + 2.0 * f[..., 2:-1:2].sum(-1)
    return s * dx / 3.0


def _renewal_grid(I_w, N_in_cps, params: DetectorParams, points_per_scale: int):
    """Uniform per-row grids on [dead, t_end] for a batch of working currents.

    Returns (t, dx, h, t_end_is_recovered) where t has shape (rows, n).
    """
    I_w = np.atleast_1d(np.asarray(I_w, dtype=float))
    tau, dead = params.tau_ns, params.dead_time_ns
    rate = N_in_cps * NS  # photons per ns
    span = RECOVERY_SPAN_TAU * tau

    # coarse pass to find where the survival becomes negligible
    m = int(RECOVERY_SPAN_TAU * 16) + 1
    s = np.linspace(0.0, span, m)
    hc = rate * params.nu(I_w[:, None] * -np.expm1(-(dead + s[None, :]) / tau))
    Hc = np.concatenate([np.zeros((len(I_w), 1)),
                         np.cumsum(0.5 * (hc[:, 1:] + hc[:, :-1]) * (s[1] - s[0]), axis=1)], axis=1)
    over = Hc > CUT_HAZARD
    recovered = ~over[:, -1]
    first = np.where(recovered, m - 1, np.argmax(over, axis=1))
    # one extra coarse step of margin beyond the crossing
    idx = np.minimum(first + 1, m - 1)
    length = s[idx]
    length = np.where(length > 0, length, s[1])

    h_end = rate * params.nu(I_w * -np.expm1(-(dead + length) / tau))
    scale = np.minimum(tau, 1.0 / np.maximum(h_end, 1e-300))
    n = int(np.max(np.ceil(points_per_scale * length / scale)))
    n = max(n, 64)
    n += n % 2 == 0  # odd count for Simpson
    n = min(n, 2_000_001)
    u = np.linspace(0.0, 1.0, n)
    dx = length / (n - 1)
    t = dead + length[:, None] * u[None, :]
    h = rate * params.nu(I_w[:, None] * -np.expm1(-t / tau))
    return t, dx, h, recovered


def _renewal_moments(I_w, N_in_cps, params: DetectorParams, points_per_scale: int = 32):
    """Mean interval and integral of I*S for a batch of working currents.

    Returns (mean_interval_ns, int_IS) with int_IS = integral of I(t) S(t) dt
    where S is the survival function. Mean current is int_IS / mean_interval.
    """
    I_w = np.atleast_1d(np.asarray(I_w, dtype=float))
    tau, dead = params.tau_ns, params.dead_time_ns
    t, dx, h, recovered = _renewal_grid(I_w, N_in_cps, params, points_per_scale)
    H = _cumulative_simpson(h, dx)
    S = np.exp(-H)
    cur = I_w[:, None] * -np.expm1(-t / tau)

    m = dead + _simpson(S, dx)
    q = I_w * (dead - tau * -np.expm1(-dead / tau)) + _simpson(cur * S, dx)
    # analytic tail after full recovery: constant hazard h_end, current I_w
    h_end = h[:, -1]
    with np.errstate(divide="ignore", invalid="ignore"):
        tail = np.where(recovered, S[:, -1] / h_end, 0.0)
    if np.any(recovered & (h_end <= 0)):
        raise NeverFiresError("efficiency is zero at the working current; the detector never fires")
    m = m + tail
    q = q + I_w * tail
    return m, q


@dataclass
class FiringDistribution:
    """Distribution of the time between consecutive detections.

    Samples cover [0, t_max]; beyond the last sample the hazard is constant
    (``tail_rate_per_ns``) so survival decays exponentially.
    """

    time_grid_ns: np.ndarray
    p_reg: np.ndarray
    survival: np.ndarray
    mean_interval_ns: float
    I_w_uA: float = float("nan")
    tail_rate_per_ns: float = 0.0
    mean_current_uA: float | None = None
    kind: str = "renewal"

    @classmethod
    def periodic(cls, period_ns: float) -> "FiringDistribution":
        """Degenerate distribution: the detector fires exactly every period."""
        if period_ns <= 0:
            raise ValueError("period must be > 0")
        t = np.array([0.0, period_ns])
        return cls(t, np.zeros(2), np.array([1.0, 0.0]), float(period_ns), kind="periodic")

    def total_probability(self) -> float:
        """Integral of p_reg over the sampled grid plus the analytic tail."""
        t, p = self.time_grid_ns, self.p_reg
        return float(np.trapezoid(p, t) + self.survival[-1])

    def density(self, t_ns):
        """p_reg at arbitrary times (linear interpolation, analytic tail)."""
        t = np.asarray(t_ns, dtype=float)
        inside = np.interp(t, self.time_grid_ns, self.p_reg)
        beyond = t > self.time_grid_ns[-1]
        if self.tail_rate_per_ns > 0:
            tail = self.p_reg[-1] * np.exp(-self.tail_rate_per_ns * (t - self.time_grid_ns[-1]))
        else:
            tail = 0.0
        return np.where(beyond, tail, inside)


def firing_distribution(I_w_uA: float, N_in_cps: float, params: DetectorParams,
                        t_max_ns: float | None = None, rtol: float = 1e-7,
                        max_refinements: int = 8) -> FiringDistribution:
    """Firing-interval distribution for Poisson illumination at fixed I_w.

    Survival is S(t) = exp(-N_in * integral of nu(I(s)) ds) with nu forced to
    zero inside the dead time. The grid is refined by doubling until the mean
    interval changes by less than ``rtol`` relative. ``t_max_ns`` extends the
    returned samples (the tail is exponential once recovery is complete).
    """
    if N_in_cps <= 0:
        raise ValueError("N_in_cps must be > 0")
    if I_w_uA <= 0 or float(params.nu(I_w_uA)) <= 0.0:
        raise NeverFiresError(f"efficiency is zero at I_w = {I_w_uA} uA; the detector never fires")

    k = 16
    prev = None
    for _ in range(max_refinements):
        m, q = _renewal_moments([I_w_uA], N_in_cps, params, k)
        m, q = float(m[0]), float(q[0])
        if prev is not None and abs(m - prev) <= rtol * m:
            break
        prev = m
        k *= 2
    else:
        raise NumericError(f"mean interval did not converge to rtol={rtol} (last {m} ns)")

    t, dx, h, recovered = _renewal_grid([I_w_uA], N_in_cps, params, k)
    t, h = t[0], h[0]
    S = np.exp(-_cumulative_simpson(h, dx[0]))
    dead = params.dead_time_ns
    if dead > 0:
        # density jumps at the dead time; keep a zero sample just before it
        t_full = np.concatenate([[0.0, dead], t])
        S_full = np.concatenate([[1.0, 1.0], S])
        p_full = np.concatenate([[0.0, 0.0], h * S])
    else:
        t_full, S_full, p_full = t, S, h * S
    tail = float(h[-1]) if recovered[0] else 0.0
    if not recovered[0]:
        S_full[-1] = 0.0
        p_full[-1] = 0.0

    if t_max_ns is not None and t_max_ns > t_full[-1] and tail > 0:
        extra = np.linspace(t_full[-1], t_max_ns, max(2, int((t_max_ns - t_full[-1]) * tail * 8) + 2))[1:]
        S_extra = S_full[-1] * np.exp(-tail * (extra - t_full[-1]))
        t_full = np.concatenate([t_full, extra])
        S_full = np.concatenate([S_full, S_extra])
        p_full = np.concatenate([p_full, tail * S_extra])

    return FiringDistribution(t_full, p_full, S_full, m, I_w_uA=float(I_w_uA),
                              tail_rate_per_ns=tail, mean_current_uA=q / m)


def count_rate(dist: FiringDistribution | None, dark_rate_cps: float = 0.0) -> float:
    """Output count rate: reciprocal mean interval plus dark counts.

    ``dist`` may be None for zero illumination.
    """
    if dist is None:
        return float(dark_rate_cps)
    if dist.mean_interval_ns <= 0:
        raise ValueError("mean interval must be > 0")
    return 1.0 / (dist.mean_interval_ns * NS) + dark_rate_cps


def mean_current(I_w_uA: float, dist: FiringDistribution | None, tau_ns: float) -> float:
    """Long-run time average of the nanowire current.

    Equals the interval-length weighted average of the per-interval mean
    current I_avg(T). Zero illumination (``dist`` None) gives I_w.
    """
    if dist is None:
        return float(I_w_uA)
    if dist.kind == "periodic":
        return average_current(dist.mean_interval_ns, I_w_uA, tau_ns)
    if dist.mean_current_uA is not None and dist.I_w_uA == I_w_uA:
        return float(dist.mean_current_uA)
    # generic path: integrate I(t) S(t) on the stored samples
    t, S = dist.time_grid_ns, dist.survival
    cur = I_w_uA * -np.expm1(-t / tau_ns)
    q = np.trapezoid(cur * S, t)
    if dist.tail_rate_per_ns > 0:
        q += I_w_uA * S[-1] / dist.tail_rate_per_ns
    return float(q / dist.mean_interval_ns)


def mean_current_batch(I_w_uA, N_in_cps: float, params: DetectorParams, points_per_scale: int = 32):
    """Vectorized (mean_current, count_rate_without_dark) over working currents."""
    I_w = np.atleast_1d(np.asarray(I_w_uA, dtype=float))
    m, q = _renewal_moments(I_w, N_in_cps, params, points_per_scale)
    return q / m, 1.0 / (m * NS)


# ---------------------------------------------------------------------------
# bias-circuit operating point


LATCH_EPS = 1e-3
SCAN_STEP = 1e-3


@dataclass
class OperatingPoint:
    I_w_uA: float
    N_out_cps: float
    latched: bool
    roots_uA: tuple[float, ...] = ()
    mean_current_uA: float = float("nan")

    @property
    def multiple_roots(self) -> bool:
        return len(self.roots_uA) > 1


@lru_cache(maxsize=4096)
def _scan(N_in_cps: float, params: DetectorParams, k0: int = 1):
    """Mean current on the lattice I_c * SCAN_STEP * k for k = k0 .. 1/SCAN_STEP."""
    grid = params.I_c_uA * SCAN_STEP * np.arange(k0, int(round(1 / SCAN_STEP)) + 1)
    if k0 == 1:
        grid[0] = params.I_c_uA * LATCH_EPS
    # a coarser quadrature is enough to bracket roots; Brent refines them
    ibar, _ = mean_current_batch(grid, N_in_cps, params, points_per_scale=16)
    grid.setflags(write=False)
    ibar.setflags(write=False)
    return grid, ibar


def _mean_current_at(I_w: float, N_in_cps: float, params: DetectorParams) -> float:
    # one quadrature pass at the default density is accurate to ~1e-5 uA
    ibar, _ = mean_current_batch(I_w, N_in_cps, params)
    return float(ibar[0])


def _bisect(f, lo, hi, flo, fhi, xtol, max_iter=200):
    """Root of f inside a sign-change bracket.

    Brent's method: bisection steps guard inverse-quadratic ones, so the
    bracket always shrinks and the result is within xtol of a sign change.
    """
    if flo == 0.0:
        return lo
    if fhi == 0.0:
        return hi
    try:
        return brentq(f, lo, hi, xtol=xtol, rtol=4 * np.finfo(float).eps, maxiter=max_iter)
    except (RuntimeError, ValueError) as err:
        raise NumericError(f"root refinement failed: {err}", bracket=(lo, hi, flo, fhi)) from None


def solve_current_stabilized(I_bar0_uA: float, N_in_cps: float, params: DetectorParams):
    """All roots of mean_current(I_w) = I_bar0 on (eps*I_c, I_c), ascending."""
    # the mean current never exceeds I_w, so roots lie above I_bar0
    k0 = max(1, int(math.floor(I_bar0_uA / (params.I_c_uA * SCAN_STEP))))
    grid, ibar = _scan(float(N_in_cps), params, k0)
    f = ibar - I_bar0_uA
    roots = []
    xtol = 1e-10 * params.I_c_uA
    g = lambda x: _mean_current_at(x, N_in_cps, params) - I_bar0_uA
    for i in np.nonzero(np.signbit(f[:-1]) != np.signbit(f[1:]))[0]:
        lo, hi = grid[i], grid[i + 1]
        flo, fhi = g(lo), g(hi)
        if np.signbit(flo) == np.signbit(fhi):
            # scan and refined evaluation disagree at the bracket ends; refine locally
            xs = np.linspace(lo, hi, 17)
            fs = np.array([g(x) for x in xs])
            j = np.nonzero(np.signbit(fs[:-1]) != np.signbit(fs[1:]))[0]
            if len(j) == 0:
                continue
            lo, hi, flo, fhi = xs[j[0]], xs[j[0] + 1], fs[j[0]], fs[j[0] + 1]
        roots.append(_bisect(g, lo, hi, flo, fhi, xtol))
    return roots


def operating_point(regime: BiasRegime, N_in_cps: float, params: DetectorParams) -> OperatingPoint:
    """Working current and output count rate for a bias regime.

    Current-stabilized: solve mean_current(I_w) = I_bar0 and keep the largest
    root. With no root in (eps*I_c, I_c) the detector is latched, counts only
    dark counts, and I_w is reported as nan.
    """
    check_regime(regime, params)
    if N_in_cps < 0:
        raise ValueError("N_in_cps must be >= 0")

    if isinstance(regime, VoltageStabilized):
        I_w = regime.I_w_uA
        if N_in_cps == 0:
            return OperatingPoint(I_w, params.dark_rate_cps, False, (I_w,), I_w)
        dist = firing_distribution(I_w, N_in_cps, params)
        return OperatingPoint(I_w, count_rate(dist, params.dark_rate_cps), False, (I_w,),
                              mean_current(I_w, dist, params.tau_ns))

    target = regime.I_bar0_uA
    if N_in_cps == 0:
        return OperatingPoint(target, params.dark_rate_cps, False, (target,), target)
    roots = solve_current_stabilized(target, N_in_cps, params)
    if not roots:
        return OperatingPoint(float("nan"), params.dark_rate_cps, True, ())
    I_w = roots[-1]
    dist = firing_distribution(I_w, N_in_cps, params)
    return OperatingPoint(I_w, count_rate(dist, params.dark_rate_cps), False, tuple(roots),
                          mean_current(I_w, dist, params.tau_ns))


def next_photon_probability(t_ns, I_w_uA: float, params: DetectorParams):
    """Detection probability of a photon arriving t after a fire, relative to full recovery."""
    t = np.asarray(t_ns, dtype=float)
    if np.any(t < 0):
        raise ValueError("t must be >= 0")
    nu_w = float(params.nu(I_w_uA))
    if nu_w <= 0:
        raise NeverFiresError(f"efficiency is zero at I_w = {I_w_uA} uA; normalization undefined")
    ratio = params.nu(I_w_uA * -np.expm1(-t / params.tau_ns)) / nu_w
    out = np.where(t < params.dead_time_ns, 0.0, ratio)
    return float(out) if out.ndim == 0 else out


def input_rate_for_output(target_cps: float, regime: BiasRegime, params: DetectorParams,
                          N_lo: float = 1e3, N_hi: float = 1e14, rtol: float = 1e-7) -> float:
    """Input photon rate at which the (non-latched) output rate equals ``target_cps``.

    Scans a log grid for the first crossing, then solves in log N_in with Brent's method.
    """
    grid = np.logspace(math.log10(N_lo), math.log10(N_hi), 61)

    def excess(log_N):
        op = operating_point(regime, math.exp(log_N), params)
        # a latched point lies beyond the reachable branch; count it as above target
        return 1.0 if op.latched else op.N_out_cps / target_cps - 1.0

    prev_N = None
    for N in grid:
        op = operating_point(regime, float(N), params)
        if op.latched:
            break
        if op.N_out_cps >= target_cps:
            if prev_N is None:
                raise ValueError(f"output rate already exceeds {target_cps} cps at N_in = {N_lo}")
            lo, hi = math.log(prev_N), math.log(float(N))
            return math.exp(brentq(excess, lo, hi, xtol=rtol, rtol=4 * np.finfo(float).eps))
        prev_N = float(N)
    raise ValueError(f"output rate {target_cps} cps is not reached before latching or N_in = {N_hi}")
