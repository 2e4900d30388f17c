"""Event-driven Monte Carlo of emitters, photon sources and SSPD readout.

Used as a brute-force oracle for the analytic detector and photon-statistics
models: photon streams are pushed through dead time, current recovery,
current-dependent efficiency, dark counts and jitter, and the detections are
histogrammed the same way a TCSPC correlator would.

Every random stream is drawn from a Philox counter-based generator keyed by
(seed, label), so a run is reproducible from those two values alone.
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from . import _kernels as K
from .detector import (
    NS,
    BiasRegime,
    CurrentStabilized,
    DetectorParams,
    SigmoidEfficiency,
    check_regime,
)
from .photon_stats import EmitterParams

_BLOCK = 1 << 18


def rng_for(seed: int, label: str) -> np.random.Generator:
    """Philox generator keyed by a hash of (seed, label)."""
    if seed < 0:
        raise ValueError("seed must be a non-negative integer")
    digest = hashlib.sha256(f"{int(seed)}/{label}".encode()).digest()
    key = int.from_bytes(digest[:16], "little")
    return np.random.Generator(np.random.Philox(key=key))


# ---------------------------------------------------------------------------
# data carriers


@dataclass
class TimestampStream:
    times_ns: np.ndarray
    duration_ns: float
    seed: int = 0
    label: str = ""

    def __post_init__(self):
        self.times_ns = np.asarray(self.times_ns, dtype=float)
        if self.duration_ns < 0:
            raise ValueError("duration must be >= 0")

    def __len__(self):
        return len(self.times_ns)

    @property
    def rate_cps(self) -> float:
        return len(self.times_ns) / (self.duration_ns * NS) if self.duration_ns > 0 else 0.0

    def validate(self) -> None:
        t = self.times_ns
        if len(t) and (t[0] < 0 or t[-1] > self.duration_ns):
            raise ValueError("timestamps outside [0, duration]")
        if np.any(np.diff(t) <= 0):
            raise ValueError("timestamps are not strictly increasing")

    def write(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(f"# duration_ns = {self.duration_ns!r}\n")
            fh.write(f"# seed = {int(self.seed)}\n")
            fh.write(f"# label = {self.label}\n")
            for t in self.times_ns:
                fh.write(f"{float(t)!r}\n")

    @classmethod
    def read(cls, path) -> "TimestampStream":
        meta = {}
        vals = []
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                if line.startswith("#"):
                    key, _, value = line[1:].partition("=")
                    meta[key.strip()] = value.strip()
                else:
                    vals.append(float(line))
        if "duration_ns" not in meta:
            raise ValueError(f"{path}: missing '# duration_ns = ...' header")
        return cls(np.array(vals), float(meta["duration_ns"]), int(meta.get("seed", 0)),
                   meta.get("label", ""))


@dataclass
class CorrelationHistogram:
    bin_edges_ns: np.ndarray
    counts: np.ndarray
    normalization: float
    valid: bool = True

    @property
    def g2_estimate(self) -> np.ndarray:
        return self.counts / self.normalization

    @property
    def g2_sigma(self) -> np.ndarray:
        """Poisson standard error per bin, from the counts (at least one count)."""
        return np.sqrt(np.maximum(self.counts, 1)) / self.normalization

    @property
    def centers_ns(self) -> np.ndarray:
        e = self.bin_edges_ns
        return 0.5 * (e[1:] + e[:-1])

    def merge(self, other: "CorrelationHistogram") -> "CorrelationHistogram":
        if not np.array_equal(self.bin_edges_ns, other.bin_edges_ns):
            raise ValueError("cannot merge histograms with different bins")
        return CorrelationHistogram(self.bin_edges_ns, self.counts + other.counts,
                                    self.normalization + other.normalization,
                                    self.valid and other.valid)

    def to_csv(self, path) -> None:
        write_histogram_csv(path, self.bin_edges_ns, self.counts, self.g2_estimate)


@dataclass
class DecayHistogram:
    bin_edges_ns: np.ndarray
    counts: np.ndarray
    sync_period_ns: float

    @property
    def centers_ns(self) -> np.ndarray:
        e = self.bin_edges_ns
        return 0.5 * (e[1:] + e[:-1])

    def to_csv(self, path) -> None:
        total = self.counts.sum()
        norm = self.counts / total if total else np.zeros(len(self.counts))
        write_histogram_csv(path, self.bin_edges_ns, self.counts, norm)


def write_histogram_csv(path, edges, counts, estimate) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_start_ns", "bin_end_ns", "counts", "g2_estimate"])
        for a, b, c, g in zip(edges[:-1], edges[1:], counts, estimate):
            w.writerow([repr(float(a)), repr(float(b)), int(c), repr(float(g))])


@dataclass
class CurrentFit:
    U_offset: float
    U0_amplitude: float
    tau_fit_ns: float
    degenerate: bool = False
    residual_norm: float = 0.0
    mean_level_uA: float = float("nan")


@dataclass
class CurrentTrace:
    sample_times_ns: np.ndarray
    current_uA: np.ndarray
    time_since_fire_ns: np.ndarray | None = None
    I_w_uA: float = float("nan")
    fitted: CurrentFit | None = None

    def __post_init__(self):
        self.sample_times_ns = np.asarray(self.sample_times_ns, dtype=float)
        self.current_uA = np.asarray(self.current_uA, dtype=float)
        if self.time_since_fire_ns is None:
            self.time_since_fire_ns = self.sample_times_ns - self.sample_times_ns[0] \
                if len(self.sample_times_ns) else self.sample_times_ns.copy()
        self.time_since_fire_ns = np.asarray(self.time_since_fire_ns, dtype=float)


@dataclass
class DetectorRun:
    detections: TimestampStream
    trace: CurrentTrace
    photon_detections: int
    dark_detections: int
    first_fire_ns: float
    last_fire_ns: float
    current_integral_uA_ns: float  # between first and last photon-triggered fire
    time_average_current_uA: float
    final_I_w_uA: float
    latched: bool
    feedback_tau_ns: float | None = None

    @property
    def renewal_rate_cps(self) -> float:
        """(n - 1) / (t_last - t_first) over photon-triggered fires."""
        n = self.photon_detections
        if n < 2:
            return 0.0
        return (n - 1) / ((self.last_fire_ns - self.first_fire_ns) * NS)

    @property
    def renewal_mean_current_uA(self) -> float:
        span = self.last_fire_ns - self.first_fire_ns
        return self.current_integral_uA_ns / span if span > 0 else float("nan")


# ---------------------------------------------------------------------------
# sources


def simulate_poisson(rate_cps: float, duration_ns: float, seed: int, label: str = "poisson") -> TimestampStream:
    """Homogeneous Poisson stream on [0, duration]."""
    if rate_cps < 0:
        raise ValueError("rate must be >= 0")
    if duration_ns <= 0:
        raise ValueError("duration must be > 0")
    if rate_cps == 0:
        return TimestampStream(np.empty(0), duration_ns, seed, label)
    rng = rng_for(seed, label)
    scale = 1.0 / (rate_cps * NS)
    chunks = []
    t = 0.0
    n_chunk = int(min(max(rate_cps * duration_ns * NS * 1.05 + 100, 16), 1 << 22))
    while True:
        c = t + np.cumsum(rng.standard_exponential(n_chunk) * scale)
        if c[-1] > duration_ns:
            chunks.append(c[c <= duration_ns])
            break
        chunks.append(c)
        t = c[-1]
    return TimestampStream(np.concatenate(chunks), duration_ns, seed, label)


def simulate_emitter(emitter: EmitterParams, duration_ns: float, seed: int,
                     label: str = "emitter") -> TimestampStream:
    """Photons of a two-state Markov chain (g -> e at rate R, e -> g at rate gamma).

    Each decay gives a photon with probability ``radiative_yield``. Between
    two kept photons the chain completes a geometric number k of cycles, so
    the gap is Gamma(k, 1/R) + Gamma(k, 1/gamma); this is exact and avoids
    stepping through discarded decays. The chain starts in its steady state.
    """
    if duration_ns <= 0:
        raise ValueError("duration must be > 0")
    R, g, y = emitter.excitation_rate_R, emitter.decay_rate_gamma, emitter.radiative_yield
    if R == 0:
        return TimestampStream(np.empty(0), duration_ns, seed, label)
    rng = rng_for(seed, label)
    start_excited = rng.random() < emitter.steady_state_population
    rate_ns = emitter.photon_rate_cps * NS
    n_chunk = int(min(max(rate_ns * duration_ns * 1.05 + 100, 16), 1 << 22))
    chunks = []
    t = 0.0
    first = True
    while True:
        k = rng.geometric(y, n_chunk) if y < 1.0 else np.ones(n_chunk, dtype=np.int64)
        shape_R = k.astype(float)
        if first and start_excited:
            shape_R[0] -= 1.0
        first = False
        gap = rng.standard_gamma(shape_R) / R + rng.standard_gamma(k.astype(float)) / g
        c = t + np.cumsum(gap)
        if c[-1] > duration_ns:
            chunks.append(c[c <= duration_ns])
            break
        chunks.append(c)
        t = c[-1]
    return TimestampStream(np.concatenate(chunks), duration_ns, seed, label)


def simulate_pulsed_emitter(sync_period_ns: float, n_pulses: int, decay_ns: float,
                            excitation_prob: float, collection_eff: float, seed: int,
                            label: str = "pulsed") -> TimestampStream:
    """Two-level emitter excited at t = k * sync_period with probability p.

    An excited emitter decays after an exponential delay; the photon is kept
    with probability ``collection_eff``. Re-excitation while still excited is
    ignored, which is accurate for sync periods much longer than the decay.
    """
    if not 0 < excitation_prob <= 1 or not 0 < collection_eff <= 1:
        raise ValueError("probabilities must be in (0, 1]")
    rng = rng_for(seed, label)
    pulses = np.arange(n_pulses, dtype=float) * sync_period_ns
    keep = rng.random(n_pulses) < excitation_prob * collection_eff
    delays = rng.standard_exponential(n_pulses) * decay_ns
    t = np.sort((pulses + delays)[keep])
    duration = n_pulses * sync_period_ns
    t = t[t <= duration]
    # two photons can never coincide exactly for continuous delays, but guard anyway
    t = np.unique(t)
    return TimestampStream(t, duration, seed, label)


def merge_streams(*streams: TimestampStream, label: str = "merged") -> TimestampStream:
    """Superposition of independent streams on a common duration."""
    if not streams:
        raise ValueError("nothing to merge")
    dur = max(s.duration_ns for s in streams)
    t = np.sort(np.concatenate([s.times_ns for s in streams]), kind="stable")
    return TimestampStream(t, dur, streams[0].seed, label)


def split_stream(stream: TimestampStream, fraction: float, seed: int,
                 label: str = "beamsplitter") -> tuple[TimestampStream, TimestampStream]:
    """Route each photon to output 1 with probability ``fraction``, else output 2."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must be in [0, 1]")
    rng = rng_for(seed, label)
    to1 = rng.random(len(stream)) < fraction
    a = TimestampStream(stream.times_ns[to1], stream.duration_ns, seed, label + "/1")
    b = TimestampStream(stream.times_ns[~to1], stream.duration_ns, seed, label + "/2")
    return a, b


# ---------------------------------------------------------------------------
# detector


@dataclass(frozen=True)
class FeedbackSettings:
    """Current-stabilized supply: windowed moving average with time constant tau."""

    tau_ns: float = 1000.0
    window_ns: float = 10.0

    @property
    def alpha(self) -> float:
        return -math.expm1(-self.window_ns / self.tau_ns)


def _efficiency_arrays(params: DetectorParams):
    eff = params.efficiency
    if isinstance(eff, SigmoidEfficiency):
        p = np.array([eff.nu_max, eff.center_frac, eff.width_frac, params.I_c_uA])
        return 0, p, np.zeros(1), np.zeros(1)
    xs = np.array(eff.current_uA)
    ys = np.array(eff.efficiency)
    if xs[0] > 0:
        xs = np.concatenate([[0.0], xs])
        ys = np.concatenate([[0.0], ys])
    return 1, np.zeros(4), xs, ys


def _run_walker(photons, rate_cps, params, regime, duration_ns, max_det, seed, label,
                feedback, trace_dt_ns, trace_samples, initial_I_w):
    check_regime(regime, params)
    kind, p, xs, ys = _efficiency_arrays(params)
    stabilized = isinstance(regime, CurrentStabilized)
    target = regime.I_bar0_uA if stabilized else 0.0
    I_w0 = initial_I_w if initial_I_w is not None else (
        regime.I_bar0_uA if stabilized else regime.I_w_uA)

    fs = np.zeros(K.N_FSTATE)
    ist = np.zeros(K.N_ISTATE, dtype=np.int64)
    fs[K.F_TF] = K.NEVER
    fs[K.F_IW] = I_w0
    fs[K.F_EMA] = I_w0
    fs[K.F_NEXT_WIN] = feedback.window_ns if stabilized else math.inf
    fs[K.F_NEXT_SAMPLE] = 0.0 if trace_samples > 0 else math.inf
    fs[K.F_INT_FIRST] = 0.0
    trace_t = np.zeros(trace_samples)
    trace_I = np.zeros(trace_samples)
    trace_since = np.zeros(trace_samples)

    rng = rng_for(seed, label)
    use_gen = photons is None
    if use_gen:
        exps = rng.standard_exponential(_BLOCK)
        unifs = rng.random(_BLOCK)
        photons = np.zeros(0)
        rate_ns = rate_cps * NS
    else:
        exps = np.zeros(0)
        unifs = rng.random(len(photons))
        rate_ns = 0.0
    cap = int(max_det) + 1 if max_det > 0 else 1 << 16
    out = np.empty(cap)

    common = (params.tau_ns, params.dead_time_ns, params.I_c_uA, kind, p, xs, ys, stabilized,
              target, feedback.window_ns, feedback.alpha, trace_dt_ns, trace_t, trace_I, trace_since)
    while True:
        if use_gen:
            code = K.poisson_detector(rate_ns, exps, unifs, fs, ist, out, duration_ns, max_det,
                                      *common)
        else:
            code = K.walk_detector(photons, unifs, fs, ist, out, duration_ns, max_det, *common)
        if code == K.DONE:
            break
        if code == K.NEED_SPACE:
            out = np.concatenate([out, np.empty(len(out))])
        else:
            exps = np.concatenate([exps[ist[K.I_EXP]:], rng.standard_exponential(_BLOCK)])
            unifs = np.concatenate([unifs[ist[K.I_UNIF]:], rng.random(_BLOCK)])
            ist[K.I_EXP] = 0
            ist[K.I_UNIF] = 0
    n = int(ist[K.I_NDET])
    fires = out[:n].copy()
    trace = CurrentTrace(trace_t[:ist[K.I_NTRACE]], trace_I[:ist[K.I_NTRACE]],
                         trace_since[:ist[K.I_NTRACE]], I_w_uA=float(fs[K.F_IW]))
    return fires, fs, ist, trace


def simulate_detector(photons: TimestampStream | None, params: DetectorParams,
                      regime: BiasRegime, seed: int, *, rate_cps: float | None = None,
                      duration_ns: float | None = None, max_detections: int = 0,
                      feedback: FeedbackSettings = FeedbackSettings(),
                      trace_dt_ns: float = 0.05, trace_samples: int = 0,
                      initial_I_w_uA: float | None = None, label: str = "detector") -> DetectorRun:
    """Pass photons through the SSPD model.

    Either give an explicit photon stream, or ``rate_cps`` for Poisson light
    generated on the fly (only the photons that can matter are drawn). A photon
    arriving a time s after the last fire is detected with probability
    nu(I_w (1 - exp(-s/tau))), and never within the dead time. Dark counts are
    an independent Poisson stream; Gaussian jitter is applied to the reported
    timestamps only. ``max_detections`` stops the walk early.
    """
    if photons is None:
        if rate_cps is None or duration_ns is None:
            raise ValueError("give either a photon stream or rate_cps and duration_ns")
        if rate_cps <= 0:
            raise ValueError("rate_cps must be > 0")
        duration = float(duration_ns)
        fires, fs, ist, trace = _run_walker(None, rate_cps, params, regime, duration,
                                            max_detections, seed, label + "/photons",
                                            feedback, trace_dt_ns, trace_samples, initial_I_w_uA)
    else:
        duration = float(photons.duration_ns if duration_ns is None else duration_ns)
        fires, fs, ist, trace = _run_walker(photons.times_ns, 0.0, params, regime, duration,
                                            max_detections, seed, label + "/photons",
                                            feedback, trace_dt_ns, trace_samples, initial_I_w_uA)

    t_stop = float(fs[K.F_T_STOP]) if fs[K.F_T_STOP] > 0 else duration
    n = len(fires)
    integral = float(fs[K.F_INT_LAST] - fs[K.F_INT_FIRST]) if n > 1 else 0.0
    if max_detections > 0 and n >= max_detections:
        duration = t_stop

    dark = simulate_poisson(params.dark_rate_cps, duration, seed, label + "/dark") \
        if params.dark_rate_cps > 0 else TimestampStream(np.empty(0), duration)
    times = np.concatenate([fires, dark.times_ns])
    if params.jitter_sigma_ns > 0 and len(times):
        jr = rng_for(seed, label + "/jitter")
        z = np.clip(jr.standard_normal(len(times)), -6.0, 6.0)
        times = times + params.jitter_sigma_ns * z
    times = np.sort(times)
    times = times[(times >= 0) & (times <= duration)]
    # exact ties have probability zero but would break strict ordering
    if len(times) > 1 and np.any(np.diff(times) <= 0):
        times = np.unique(times)

    stabilized = isinstance(regime, CurrentStabilized)
    return DetectorRun(
        detections=TimestampStream(times, duration, seed, label),
        trace=trace,
        photon_detections=n,
        dark_detections=len(dark),
        first_fire_ns=float(fires[0]) if n else float("nan"),
        last_fire_ns=float(fires[-1]) if n else float("nan"),
        current_integral_uA_ns=integral,
        time_average_current_uA=float(fs[K.F_TOTAL] / t_stop) if t_stop > 0 else float("nan"),
        final_I_w_uA=float(fs[K.F_IW]),
        latched=bool(ist[K.I_LATCHED]),
        feedback_tau_ns=feedback.tau_ns if stabilized else None,
    )


# ---------------------------------------------------------------------------
# correlation and lifetime histograms


def hbt_correlate(stream1: TimestampStream, stream2: TimestampStream, bin_width_ns: float,
                  window_ns: float, *, autocorrelation: bool = False, first_stop: bool = False,
                  declared_rates_cps: tuple[float, float] | None = None) -> CorrelationHistogram:
    """Histogram of delays t2 - t1 within +-window, normalized to uncorrelated light.

    All pairs are counted by default. ``autocorrelation`` correlates a stream
    with itself and drops each photon's pairing with itself. ``first_stop``
    keeps only the first stop after each start, like legacy start-stop
    hardware. Normalization is rate1 * rate2 * bin_width * duration.
    """
    if bin_width_ns <= 0:
        raise ValueError("bin width must be > 0")
    if window_ns < bin_width_ns:
        raise ValueError("window must be >= bin width")
    nb = int(round(2 * window_ns / bin_width_ns))
    edges = -window_ns + bin_width_ns * np.arange(nb + 1)
    counts = np.zeros(nb, dtype=np.int64)
    duration = max(stream1.duration_ns, stream2.duration_ns)
    valid = len(stream1) > 0 and len(stream2) > 0
    if valid:
        K.pair_delays_hist(stream1.times_ns, stream2.times_ns, -window_ns, bin_width_ns, nb,
                           window_ns, autocorrelation, first_stop, counts)
        r1, r2 = stream1.rate_cps, stream2.rate_cps
    elif declared_rates_cps is not None:
        r1, r2 = declared_rates_cps
    else:
        r1 = r2 = 0.0
    norm = r1 * NS * r2 * NS * bin_width_ns * duration
    if not norm > 0:
        norm = 1.0
        valid = False
    return CorrelationHistogram(edges, counts, norm, valid)


def tcspc_histogram(sync_period_ns: float, detections: TimestampStream, bin_width_ns: float,
                    sync_offset_ns: float = 0.0) -> DecayHistogram:
    """Delays of detections after the preceding sync pulse, binned over one period."""
    if sync_period_ns <= 0 or bin_width_ns <= 0:
        raise ValueError("sync period and bin width must be > 0")
    d = np.mod(detections.times_ns - sync_offset_ns, sync_period_ns)
    nb = int(math.floor(sync_period_ns / bin_width_ns + 1e-9))
    edges = bin_width_ns * np.arange(nb + 1)
    counts, _ = np.histogram(d, bins=edges)
    return DecayHistogram(edges, counts.astype(np.int64), sync_period_ns)


def fit_decay_tail(hist: DecayHistogram, start_ns: float, stop_ns: float | None = None,
                   min_counts: int = 20) -> float:
    """Lifetime from a weighted straight-line fit to log(counts) on the tail."""
    c = hist.centers_ns
    stop = hist.sync_period_ns if stop_ns is None else stop_ns
    sel = (c >= start_ns) & (c <= stop) & (hist.counts >= min_counts)
    if sel.sum() < 3:
        raise ValueError("not enough populated bins in the tail window")
    x, y = c[sel], hist.counts[sel].astype(float)
    # var(log N) ~ 1/N, so weight each point by sqrt(N) in the residual
    slope, _ = np.polyfit(x, np.log(y), 1, w=np.sqrt(y))
    if slope >= 0:
        raise ValueError("tail does not decay")
    return -1.0 / slope


# ---------------------------------------------------------------------------
# effective current


# time-since-fire reported for samples taken before the first detection
NEVER_FIRED_NS = 1e299


class FitError(RuntimeError):
    def __init__(self, message, residual_norm=float("nan")):
        super().__init__(message)
        self.residual_norm = residual_norm


def _recovery_model(t, U, U0, tau):
    return U + U0 * np.exp(-t / tau)


def effective_current_fit(trace: CurrentTrace) -> CurrentFit:
    """Least-squares fit of U + U0 exp(-t/tau) against time since the last fire.

    Samples from many recovery segments are folded onto one time axis. A trace
    with no resolvable exponential (flat) is flagged degenerate with U0 = 0.
    ``mean_level_uA`` is the fitted model averaged over the sample times.
    """
    t = trace.time_since_fire_ns
    y = trace.current_uA
    if len(t) < 10:
        raise FitError("need at least 10 samples")
    spread = float(np.ptp(y))
    scale = max(float(np.max(np.abs(y))), 1e-300)
    if spread <= 1e-9 * scale:
        U = float(np.mean(y))
        return CurrentFit(U, 0.0, float("nan"), degenerate=True, residual_norm=0.0, mean_level_uA=U)

    # variable projection: for fixed tau the model is linear in (U, U0), so
    # scan log(tau) over the sampled span and refine the best cell
    span_t = t[t < NEVER_FIRED_NS]
    if len(span_t) < 3 or np.ptp(span_t) <= 0:
        raise FitError("samples do not cover a range of times since the last fire")
    steps = np.diff(np.unique(span_t))
    lo, hi = float(np.min(steps)) / 4, float(np.ptp(span_t)) * 4

    def linear(log_tau):
        with np.errstate(over="ignore"):
            decay = np.exp(-t / math.exp(log_tau))
        basis = np.column_stack([np.ones_like(t), decay])
        coef, *_ = np.linalg.lstsq(basis, y, rcond=None)
        return coef, float(np.sum((basis @ coef - y) ** 2))

    grid = np.linspace(math.log(lo), math.log(hi), 121)
    costs = np.array([linear(g)[1] for g in grid])
    k = int(np.argmin(costs))
    a, b = grid[max(k - 1, 0)], grid[min(k + 1, len(grid) - 1)]
    opt = minimize_scalar(lambda g: linear(g)[1], bounds=(a, b), method="bounded",
                          options={"xatol": 1e-12})
    log_tau = float(opt.x) if opt.fun <= costs[k] else float(grid[k])
    (U, U0), cost = linear(log_tau)
    U, U0, tau = float(U), float(U0), math.exp(log_tau)
    res = math.sqrt(cost)
    if not (math.isfinite(U) and math.isfinite(U0)):
        raise FitError("fit produced non-finite parameters", res)
    # an amplitude lost in the noise, or a time constant pinned at the scan
    # edge, means the exponential is not resolved by the samples
    at_edge = log_tau <= grid[0] + 1e-6 or log_tau >= grid[-1] - 1e-6
    degenerate = abs(U0) <= 1e-9 * scale or at_edge or float(np.max(span_t)) < 2 * tau
    mean_level = float(np.mean(_recovery_model(t, U, U0, tau)))
    return CurrentFit(U, U0, tau, degenerate, res, mean_level)


# ---------------------------------------------------------------------------
# helpers for oracle comparisons


def hbt_analytic_bins(edges_ns: np.ndarray, curve_tau: np.ndarray, curve_vals: np.ndarray) -> np.ndarray:
    """Average of a model curve over each histogram bin (trapezoid on the curve grid)."""
    out = np.empty(len(edges_ns) - 1)
    for i, (a, b) in enumerate(zip(edges_ns[:-1], edges_ns[1:])):
        sel = (curve_tau > a) & (curve_tau < b)
        x = np.concatenate([[a], curve_tau[sel], [b]])
        y = np.interp(x, curve_tau, curve_vals)
        out[i] = np.trapezoid(y, x) / (b - a)
    return out
