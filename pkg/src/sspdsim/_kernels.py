"""Compiled inner loops for the Monte Carlo detector and emitter simulations.

Random numbers are generated outside (counter-based numpy generators) and
passed in as buffers, so results depend only on the seed and the stream
label. Kernels keep their progress in small state arrays and return early
when a buffer runs dry, which lets the caller refill and resume.
"""

import math

import numpy as np
from numba import njit

# return codes
DONE = 0
NEED_RANDOMS = 1
NEED_SPACE = 2

# float state slots
F_T = 0  # time of the last photon (or candidate) handled
F_TF = 1  # time of the last fire
F_TINT = 2  # current integrated up to this time
F_IW = 3  # working current
F_EMA = 4  # feedback moving average of the current
F_ACC = 5  # current integral inside the open feedback window
F_TOTAL = 6  # current integral since t = 0
F_NEXT_WIN = 7
F_NEXT_SAMPLE = 8
F_INT_FIRST = 9  # current integral at the first detection
F_T_STOP = 10
F_INT_LAST = 11  # current integral at the latest detection
N_FSTATE = 12

# int state slots
I_PHOTON = 0
I_EXP = 1
I_UNIF = 2
I_NDET = 3
I_NTRACE = 4
I_LATCHED = 5
N_ISTATE = 6

NEVER = -1e300


@njit(cache=True)
def nu_eval(current, kind, p, xs, ys):
    if kind == 0:
        x = (current / p[3] - p[1]) / p[2]
        return p[0] * 0.5 * (1.0 + math.tanh(0.5 * x))
    n = xs.shape[0]
    if current <= xs[0]:
        return ys[0]
    if current >= xs[n - 1]:
        return ys[n - 1]
    lo, hi = 0, n - 1
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if xs[mid] <= current:
            lo = mid
        else:
            hi = mid
    w = (current - xs[lo]) / (xs[hi] - xs[lo])
    return ys[lo] + w * (ys[hi] - ys[lo])


@njit(cache=True)
def _integral(a, b, t_f, I_w, tau):
    # integral of I_w (1 - exp(-(t - t_f)/tau)) over [a, b]
    if b <= a:
        return 0.0
    return I_w * ((b - a) - tau * (math.exp(-(a - t_f) / tau) - math.exp(-(b - t_f) / tau)))


@njit(cache=True)
def _advance(t, fs, ist, tau, I_c, feedback, target, window, alpha, trace_dt,
             trace_t, trace_I, trace_since):
    """Handle feedback windows and trace samples up to time t."""
    while True:
        nw = fs[F_NEXT_WIN]
        nsmp = fs[F_NEXT_SAMPLE]
        if ist[I_NTRACE] >= trace_t.shape[0]:
            nsmp = math.inf
        if nw > t and nsmp > t:
            return
        I_w = 0.0 if ist[I_LATCHED] else fs[F_IW]
        if nsmp <= nw:
            k = ist[I_NTRACE]
            since = nsmp - fs[F_TF]
            trace_t[k] = nsmp
            trace_since[k] = since
            trace_I[k] = I_w * -math.expm1(-since / tau)
            ist[I_NTRACE] = k + 1
            fs[F_NEXT_SAMPLE] = nsmp + trace_dt
        else:
            part = _integral(fs[F_TINT], nw, fs[F_TF], I_w, tau)
            fs[F_ACC] += part
            fs[F_TOTAL] += part
            fs[F_TINT] = nw
            mean_w = fs[F_ACC] / window
            fs[F_EMA] += alpha * (mean_w - fs[F_EMA])
            if feedback and not ist[I_LATCHED] and fs[F_EMA] > 0:
                fs[F_IW] = fs[F_IW] * (target / fs[F_EMA]) ** alpha
                if fs[F_IW] >= I_c:
                    ist[I_LATCHED] = 1
            fs[F_ACC] = 0.0
            fs[F_NEXT_WIN] = nw + window


@njit(cache=True)
def _finish(t_end, fs, ist, tau, I_c, feedback, target, window, alpha, trace_dt,
            trace_t, trace_I, trace_since):
    _advance(t_end, fs, ist, tau, I_c, feedback, target, window, alpha, trace_dt,
             trace_t, trace_I, trace_since)
    I_w = 0.0 if ist[I_LATCHED] else fs[F_IW]
    part = _integral(fs[F_TINT], t_end, fs[F_TF], I_w, tau)
    fs[F_ACC] += part
    fs[F_TOTAL] += part
    fs[F_TINT] = t_end
    fs[F_T_STOP] = t_end


@njit(cache=True)
def _fire(t, fs, ist, out, tau):
    part = _integral(fs[F_TINT], t, fs[F_TF], fs[F_IW], tau)
    fs[F_ACC] += part
    fs[F_TOTAL] += part
    fs[F_TINT] = t
    fs[F_TF] = t
    k = ist[I_NDET]
    out[k] = t
    if k == 0:
        fs[F_INT_FIRST] = fs[F_TOTAL]
    fs[F_INT_LAST] = fs[F_TOTAL]
    ist[I_NDET] = k + 1
    return k + 1


@njit(cache=True)
def walk_detector(photons, unifs, fs, ist, out, t_end, max_det, tau, dead, I_c,
                  kind, p, xs, ys, feedback, target, window, alpha, trace_dt,
                  trace_t, trace_I, trace_since):
    """Walk an explicit photon stream through the detector, one uniform per photon.

    A photon arriving s after the last fire is detected with probability
    nu(I_w (1 - exp(-s/tau))), or never if s is inside the dead time.
    """
    n_ph = photons.shape[0]
    while True:
        if ist[I_NDET] >= out.shape[0]:
            return NEED_SPACE
        i = ist[I_PHOTON]
        if i >= n_ph or photons[i] > t_end:
            _finish(t_end, fs, ist, tau, I_c, feedback, target, window, alpha,
                    trace_dt, trace_t, trace_I, trace_since)
            return DONE
        t = photons[i]
        ist[I_PHOTON] = i + 1
        _advance(t, fs, ist, tau, I_c, feedback, target, window, alpha, trace_dt,
                 trace_t, trace_I, trace_since)
        if ist[I_LATCHED]:
            # a latched wire stays resistive; nothing more is detected
            _finish(t, fs, ist, tau, I_c, feedback, target, window, alpha,
                    trace_dt, trace_t, trace_I, trace_since)
            return DONE
        since = t - fs[F_TF]
        if since < dead:
            continue
        current = fs[F_IW] * -math.expm1(-since / tau)
        if unifs[i] < nu_eval(current, kind, p, xs, ys):
            n = _fire(t, fs, ist, out, tau)
            if max_det > 0 and n >= max_det:
                fs[F_T_STOP] = t
                return DONE


@njit(cache=True)
def poisson_detector(rate_per_ns, exps, unifs, fs, ist, out, t_end, max_det, tau, dead,
                     I_c, kind, p, xs, ys, feedback, target, window, alpha, trace_dt,
                     trace_t, trace_I, trace_since):
    """Detector under Poisson light of constant rate, by exact thinning.

    The firing intensity rate * nu(I(s)) grows with the time s since the last
    fire (nu is non-decreasing in current). Time is cut into segments, each
    bounded by the intensity at its end; candidates are drawn at that bound
    and accepted with probability intensity/bound (Lewis-Shedler). Segments
    also end at feedback-window boundaries so I_w is constant inside one.
    Nothing happens inside the dead time, so the search starts after it.
    F_T holds the time up to which the search has progressed.
    """
    n_exp = exps.shape[0]
    n_unif = unifs.shape[0]
    recovered_after = dead + 40.0 * tau
    while True:
        if ist[I_NDET] >= out.shape[0]:
            return NEED_SPACE
        if ist[I_EXP] + 1 > n_exp or ist[I_UNIF] + 1 > n_unif:
            return NEED_RANDOMS
        t0 = fs[F_T]
        if t0 - fs[F_TF] < dead:
            t0 = fs[F_TF] + dead
        if t0 >= t_end:
            _finish(t_end, fs, ist, tau, I_c, feedback, target, window, alpha,
                    trace_dt, trace_t, trace_I, trace_since)
            return DONE
        _advance(t0, fs, ist, tau, I_c, feedback, target, window, alpha, trace_dt,
                 trace_t, trace_I, trace_since)
        if ist[I_LATCHED]:
            _finish(t0, fs, ist, tau, I_c, feedback, target, window, alpha,
                    trace_dt, trace_t, trace_I, trace_since)
            return DONE
        I_w = fs[F_IW]
        nu_full = nu_eval(I_w, kind, p, xs, ys)
        if nu_full <= 0.0:
            # the detector can never fire again at this working current
            fs[F_T] = fs[F_NEXT_WIN] if fs[F_NEXT_WIN] < t_end else t_end
            continue
        since0 = t0 - fs[F_TF]
        if since0 >= recovered_after:
            seg_end = math.inf
        else:
            seg = max(0.125 * tau, 1.0 / (rate_per_ns * nu_full))
            seg_end = t0 + seg
            if seg_end - fs[F_TF] > recovered_after:
                seg_end = fs[F_TF] + recovered_after
            if seg_end <= t0:
                # rounding left no room before full recovery
                seg_end = math.inf
        if fs[F_NEXT_WIN] < seg_end:
            seg_end = fs[F_NEXT_WIN]
        if seg_end == math.inf:
            bound = nu_full
        else:
            bound = nu_eval(I_w * -math.expm1(-(seg_end - fs[F_TF]) / tau), kind, p, xs, ys)
        lam = rate_per_ns * bound
        if lam <= 0.0:
            fs[F_T] = seg_end
            continue
        t = t0 + exps[ist[I_EXP]] / lam
        ist[I_EXP] += 1
        if t > seg_end:
            fs[F_T] = seg_end
            continue
        if t > t_end:
            fs[F_T] = t_end
            continue
        fs[F_T] = t
        _advance(t, fs, ist, tau, I_c, feedback, target, window, alpha, trace_dt,
                 trace_t, trace_I, trace_since)
        u = unifs[ist[I_UNIF]]
        ist[I_UNIF] += 1
        current = I_w * -math.expm1(-(t - fs[F_TF]) / tau)
        if u * bound < nu_eval(current, kind, p, xs, ys):
            n = _fire(t, fs, ist, out, tau)
            if max_det > 0 and n >= max_det:
                fs[F_T_STOP] = t
                return DONE


@njit(cache=True)
def pair_delays_hist(t1, t2, edges_lo, width, nbins, window, exclude_self, first_stop, counts):
    """Histogram t2 - t1 over [-window, window) into uniform bins.

    ``exclude_self`` drops pairs with identical index (autocorrelation);
    ``first_stop`` keeps only the first stop after each start (positive lags).
    """
    n2 = t2.shape[0]
    j0 = 0
    for i in range(t1.shape[0]):
        a = t1[i]
        while j0 < n2 and t2[j0] < a - window:
            j0 += 1
        j = j0
        while j < n2:
            d = t2[j] - a
            if d >= window:
                break
            if exclude_self and j == i:
                j += 1
                continue
            if first_stop and d < 0:
                j += 1
                continue
            b = int(math.floor((d - edges_lo) / width))
            if 0 <= b < nbins:
                counts[b] += 1
            if first_stop and d >= 0:
                break
            j += 1
