"""Second-order correlation g2(tau) of an incoherently pumped two-level emitter.

Covers the ideal antibunching curve, the effect of uncorrelated background and
dark counts on the measured correlation (and its inversion), Gaussian timing
jitter, and g2(0) sweeps over emitter lifetime and detector scenarios.
Rates are in counts per second, times in ns.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .detector import FWHM_TO_SIGMA


# jitter sigma, relative to the dip width 1/(R + gamma), treated as zero
NEGLIGIBLE_JITTER = 1e-5


class PhotonStatsError(Exception):
    pass


class NormalizationError(PhotonStatsError):
    """Correlation normalization is undefined (zero total rate)."""


class NoSignalError(PhotonStatsError):
    """Background compensation needs a positive signal rate on both channels."""


class ResolutionError(PhotonStatsError):
    """Grid too coarse to resolve the jitter kernel."""


@dataclass(frozen=True)
class EmitterParams:
    excitation_rate_R: float  # per ns
    decay_rate_gamma: float  # per ns
    radiative_yield: float = 1.0

    def __post_init__(self):
        if self.excitation_rate_R < 0:
            raise ValueError("excitation_rate_R must be >= 0")
        if self.decay_rate_gamma <= 0:
            raise ValueError("decay_rate_gamma must be > 0")
        if not 0.0 < self.radiative_yield <= 1.0:
            raise ValueError("radiative_yield must be in (0, 1]")

    @classmethod
    def from_lifetimes(cls, tau_exc_ns: float, tau_decay_ns: float, radiative_yield: float = 1.0):
        R = 0.0 if math.isinf(tau_exc_ns) else 1.0 / tau_exc_ns
        return cls(R, 1.0 / tau_decay_ns, radiative_yield)

    @property
    def total_rate(self) -> float:
        return self.excitation_rate_R + self.decay_rate_gamma

    @property
    def steady_state_population(self) -> float:
        return self.excitation_rate_R / self.total_rate

    @property
    def photon_rate_cps(self) -> float:
        """Mean emitted photon rate R*gamma/(R+gamma) times the radiative yield."""
        return self.decay_rate_gamma * self.steady_state_population * self.radiative_yield * 1e9


@dataclass(frozen=True)
class ChannelRates:
    S1: float
    N1: float
    S2: float
    N2: float

    def __post_init__(self):
        for name in ("S1", "N1", "S2", "N2"):
            v = getattr(self, name)
            if not v >= 0 or math.isinf(v):
                raise ValueError(f"{name} must be a finite rate >= 0")

    @property
    def I1(self) -> float:
        return self.S1 + self.N1

    @property
    def I2(self) -> float:
        return self.S2 + self.N2

    @classmethod
    def from_totals(cls, I1: float, N1: float, I2: float, N2: float) -> "ChannelRates":
        return cls(I1 - N1, N1, I2 - N2, N2)

    @classmethod
    def balanced(cls, signal_cps: float, noise_cps: float) -> "ChannelRates":
        """Even 50/50 split of total signal and noise over the two detectors."""
        return cls(signal_cps / 2, noise_cps / 2, signal_cps / 2, noise_cps / 2)

    def signal_fraction_product(self) -> float:
        """rho = S1 S2 / (I1 I2), the weight of the true correlation in the measured one."""
        if self.I1 <= 0 or self.I2 <= 0:
            raise NormalizationError("total rate is zero on a channel; g2 normalization undefined")
        return (self.S1 / self.I1) * (self.S2 / self.I2)


@dataclass
class G2Curve:
    tau_ns: np.ndarray
    values: np.ndarray
    jitter_sigma_ns: float = 0.0
    rates: ChannelRates | None = None

    def __post_init__(self):
        self.tau_ns = np.asarray(self.tau_ns, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.tau_ns.shape != self.values.shape or self.tau_ns.ndim != 1:
            raise ValueError("tau grid and values must be 1-D arrays of equal length")
        if len(self.tau_ns) > 1 and np.any(np.diff(self.tau_ns) <= 0):
            raise ValueError("tau grid must be strictly increasing")

    def at(self, tau_ns: float) -> float:
        return float(np.interp(tau_ns, self.tau_ns, self.values))

    def with_values(self, values, **kw) -> "G2Curve":
        return replace(self, values=np.asarray(values, dtype=float), **kw)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["tau_ns", "g2"])
            for t, g in zip(self.tau_ns, self.values):
                w.writerow([repr(float(t)), repr(float(g))])

    @classmethod
    def from_csv(cls, path) -> "G2Curve":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or rows[0] != ["tau_ns", "g2"]:
            raise ValueError(f"{path}: expected header 'tau_ns,g2'")
        data = np.array(rows[1:], dtype=float).reshape(-1, 2)
        return cls(data[:, 0], data[:, 1])


@dataclass(frozen=True)
class JitterModel:
    sigma_ns: float = 0.0

    def __post_init__(self):
        if self.sigma_ns < 0:
            raise ValueError("sigma_ns must be >= 0")

    @classmethod
    def from_fwhm(cls, fwhm_ns: float, detectors: int = 2) -> "JitterModel":
        """Start-stop jitter of ``detectors`` identical detectors with given FWHM each."""
        return cls(math.sqrt(detectors) * fwhm_ns * FWHM_TO_SIGMA)

    @classmethod
    def combine(cls, sigma1_ns: float, sigma2_ns: float) -> "JitterModel":
        return cls(math.hypot(sigma1_ns, sigma2_ns))


def symmetric_grid(half_width_ns: float, step_ns: float) -> np.ndarray:
    n = int(math.ceil(half_width_ns / step_ns))
    return step_ns * np.arange(-n, n + 1, dtype=float)


# ---------------------------------------------------------------------------
# analytic pieces


def excited_population(t_ns, emitter: EmitterParams):
    """Excited-state population a time t after an emission (n_e(0) = 0)."""
    t = np.asarray(t_ns, dtype=float)
    if np.any(t < 0):
        raise ValueError("t must be >= 0")
    out = emitter.steady_state_population * -np.expm1(-t * emitter.total_rate)
    return float(out) if out.ndim == 0 else out


def g2_ideal(tau_ns, emitter: EmitterParams):
    """g2(tau) = 1 - exp(-|tau| (R + gamma))."""
    tau = np.abs(np.asarray(tau_ns, dtype=float))
    out = -np.expm1(-tau * emitter.total_rate)
    return float(out) if out.ndim == 0 else out


def g2_ideal_curve(tau_ns, emitter: EmitterParams) -> G2Curve:
    tau = np.asarray(tau_ns, dtype=float)
    return G2Curve(tau, g2_ideal(tau, emitter))


def g2_forward_background(g2_true: G2Curve, rates: ChannelRates) -> G2Curve:
    """Measured correlation with independent noise on both channels.

    Written as 1 + (g2 - 1) * S1 S2 / (I1 I2), which is algebraically the
    ratio (g2 S1 S2 + N1 N2 + N1 S2 + N2 S1) / (I1 I2) but loses no precision
    when g2 is close to 1.
    """
    rho = rates.signal_fraction_product()
    vals = 1.0 + (g2_true.values - 1.0) * rho
    return g2_true.with_values(vals, rates=rates)


def g2_compensate_background(g2_measured: G2Curve, rates: ChannelRates) -> G2Curve:
    """Recover the true correlation from a measured one, given mean signal and noise."""
    if not (rates.S1 > 0 and rates.S2 > 0):
        raise NoSignalError("signal rate S_i = I_i - N_i must be > 0 on both channels")
    rho = rates.signal_fraction_product()
    vals = 1.0 + (g2_measured.values - 1.0) / rho
    return g2_measured.with_values(vals, rates=rates)


def gaussian_kernel(sigma_ns: float, step_ns: float) -> np.ndarray:
    half = int(math.ceil(6.0 * sigma_ns / step_ns))
    x = step_ns * np.arange(-half, half + 1)
    k = np.exp(-0.5 * (x / sigma_ns) ** 2)
    return k / k.sum()


def jitter_convolve(curve: G2Curve, jitter: JitterModel) -> G2Curve:
    """Convolve with a Gaussian of width sigma (truncated at 6 sigma, unit mass).

    The grid must be uniform with spacing <= sigma/4. Values beyond the grid
    ends are taken equal to the end values.
    """
    sigma = jitter.sigma_ns
    if sigma == 0:
        return curve.with_values(curve.values.copy())
    tau = curve.tau_ns
    if len(tau) < 2:
        raise ResolutionError("need at least 2 grid points to convolve")
    step = tau[1] - tau[0]
    if not np.allclose(np.diff(tau), step, rtol=1e-9, atol=1e-12):
        raise ResolutionError("jitter convolution needs a uniform tau grid")
    if step > sigma / 4 * (1 + 1e-9):
        raise ResolutionError(
            f"grid spacing {step} ns is too coarse for sigma {sigma} ns; need <= {sigma / 4} ns"
        )
    k = gaussian_kernel(sigma, step)
    half = len(k) // 2
    padded = np.pad(curve.values, half, mode="edge")
    out = np.convolve(padded, k, mode="valid")
    return curve.with_values(out, jitter_sigma_ns=sigma)


# ---------------------------------------------------------------------------
# g2(0) sweeps


@dataclass(frozen=True)
class DetectorScenario:
    name: str
    qe: float
    dark_cps: float
    jitter_fwhm_ns: float

    def __post_init__(self):
        if not 0.0 <= self.qe <= 1.0:
            raise ValueError(f"scenario {self.name!r}: qe must be in [0, 1]")
        if self.dark_cps < 0 or self.jitter_fwhm_ns < 0:
            raise ValueError(f"scenario {self.name!r}: dark rate and jitter must be >= 0")

    @property
    def jitter(self) -> JitterModel:
        return JitterModel.from_fwhm(self.jitter_fwhm_ns, detectors=2)


@dataclass(frozen=True)
class Scene:
    """Light reaching the detectors, quoted at a reference detector QE."""

    signal_cps: float = 80e3
    background_cps: float = 800.0
    reference_qe: float = 1.0
    # fixed excitation rate in the sweeps: R/gamma = 0.1 at 3 ns lifetime
    excitation_rate_R: float = 0.1 / 3.0

    @property
    def snr(self) -> float:
        return self.signal_cps / self.background_cps if self.background_cps else math.inf

    def channel_rates(self, scenario: DetectorScenario) -> ChannelRates:
        scale = scenario.qe / self.reference_qe
        s = scale * self.signal_cps / 2
        n = scale * self.background_cps / 2 + scenario.dark_cps
        return ChannelRates(s, n, s, n)


@dataclass
class SweepRow:
    lifetime_ns: float
    scenario: str
    qe: float
    g2_zero: float


def g2_model_curve(lifetime_ns: float, scenario: DetectorScenario, scene: Scene,
                   tau_grid_ns: np.ndarray | None = None) -> G2Curve:
    """Full forward model: ideal emitter, background and dark counts, jitter."""
    emitter = EmitterParams(scene.excitation_rate_R, 1.0 / lifetime_ns)
    jitter = scenario.jitter
    width = 1.0 / emitter.total_rate
    # below this the dip smoothing is < 1e-5 in g2 and the grid would be unbounded
    if jitter.sigma_ns < NEGLIGIBLE_JITTER * width:
        jitter = JitterModel(0.0)
    if tau_grid_ns is None:
        step = min(width / 20.0, jitter.sigma_ns / 4.0) if jitter.sigma_ns > 0 else width / 20.0
        tau_grid_ns = symmetric_grid(12.0 * width + 8.0 * jitter.sigma_ns, step)
    rates = scene.channel_rates(scenario)
    curve = g2_ideal_curve(tau_grid_ns, emitter)
    if rates.I1 > 0:
        if rates.S1 == 0:
            curve = curve.with_values(np.ones_like(curve.values), rates=rates)
        else:
            curve = g2_forward_background(curve, rates)
    return jitter_convolve(curve, jitter)


def g2_zero_sweep(lifetimes_ns: Sequence[float], scenarios: Sequence[DetectorScenario],
                  scene: Scene) -> list[SweepRow]:
    """g2(0) for every (lifetime, scenario); rows ordered lifetime-major."""
    if len(scenarios) == 0:
        raise ValueError("no detector scenarios given")
    rows = []
    for lt in lifetimes_ns:
        if lt <= 0:
            raise ValueError("lifetimes must be > 0")
        for sc in scenarios:
            curve = g2_model_curve(lt, sc, scene)
            rows.append(SweepRow(float(lt), sc.name, sc.qe, curve.at(0.0)))
    return rows


def write_sweep_csv(rows: Sequence[SweepRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["lifetime_ns", "scenario", "qe", "g2_zero"])
        for r in rows:
            w.writerow([repr(r.lifetime_ns), r.scenario, repr(r.qe), repr(r.g2_zero)])
