"""Acoustic voice-quality measurements.

Pitch and harmonicity come from boundary-corrected normalized
autocorrelation over 40 ms frames; cycle-level perturbation (jitter,
shimmer) from a peak-to-peak walk with sub-sample refinement. The jitter
and shimmer measures assume sustained phonation; on running speech the
inter-peak walk crosses silent gaps and the numbers lose meaning.

Conventions:
* a frame is voiced when its autocorrelation peak reaches 0.45;
* a clip is voiced when more than 20% of frames are voiced;
* jitter and shimmer are mean absolute consecutive differences in percent
  of the mean period / peak amplitude;
* HNR is 10*log10(r / (1 - r)) from the refined peak correlation r,
  averaged over voiced frames.
"""

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from voicekit import kernels
from voicekit.errors import (ClipTooShort, InvalidRange, LengthMismatch,
                             Unvoiced)

FRAME_MS = 40.0
HOP_MS = 10.0
DEFAULT_FMIN_HZ = 60.0
DEFAULT_FMAX_HZ = 500.0
VOICING_THRESHOLD = 0.45
MIN_VOICED_FRACTION = 0.2

_SNR_CAP_DB = 120.0


@dataclass(frozen=True)
class AcousticMeasurement:
    """Bundle of per-clip measurements; perturbation fields are None when
    the clip is unvoiced or has too few usable cycles."""

    f0_hz: Optional[float]
    jitter_pct: Optional[float]
    shimmer_pct: Optional[float]
    hnr_db: Optional[float]
    voiced_fraction: float


def _check_range(fmin, fmax, sample_rate_hz):
    if not (20.0 <= fmin < fmax <= sample_rate_hz / 2):
        raise InvalidRange(
            f"need 20 <= fmin < fmax <= rate/2, got [{fmin}, {fmax}] "
            f"at {sample_rate_hz} Hz")


def _pitch_frames(clip, fmin, fmax):
    """Per-frame f0 candidates and refined peak correlations.

    Returns (f0, peak_r, voiced): arrays over frames, f0 is NaN where
    unvoiced. peak_r is the cosine-refined autocorrelation peak used for
    harmonicity; without refinement the integer-lag peak of a pure tone
    undershoots 1 by enough to cost tens of dB of HNR headroom.
    """
    _check_range(fmin, fmax, clip.sample_rate_hz)
    fs = clip.sample_rate_hz
    win = int(round(FRAME_MS * 1e-3 * fs))
    hop = int(round(HOP_MS * 1e-3 * fs))
    min_lag = max(2, int(math.floor(fs / fmax)))
    max_lag = int(math.ceil(fs / fmin))
    width = win + max_lag
    x = clip.samples
    if x.size < width:
        raise ClipTooShort(
            f"clip {clip.clip_id!r}: need {width} samples for pitch "
            f"analysis down to {fmin} Hz, have {x.size}")
    frames = np.lib.stride_tricks.sliding_window_view(x, width)[::hop]
    frames = frames - frames.mean(axis=1, keepdims=True)
    r = kernels.autocorr_frames(np.ascontiguousarray(frames),
                                win, min_lag, max_lag)
    n_frames, n_lags = r.shape
    f0 = np.full(n_frames, np.nan)
    peak_r = np.zeros(n_frames)
    voiced = np.zeros(n_frames, dtype=bool)
    for i in range(n_frames):
        row = r[i]
        j = int(np.argmax(row))
        pk = row[j]
        if pk < VOICING_THRESHOLD:
            continue
        # octave guard: a perfectly periodic frame peaks equally at the true
        # lag and its multiples, so among near-tied local maxima take the
        # shortest lag instead of whichever argmax hit first
        for cand in range(n_lags):
            if row[cand] < pk - 0.01:
                continue
            if ((cand == 0 or row[cand] >= row[cand - 1])
                    and (cand == n_lags - 1 or row[cand] >= row[cand + 1])):
                j = cand
                pk = row[cand]
                break
        voiced[i] = True
        delta = 0.0
        refined = pk
        if 0 < j < n_lags - 1:
            r1, r2, r3 = row[j - 1], row[j], row[j + 1]
            denom = r1 - 2.0 * r2 + r3
            if denom < 0.0:
                delta = float(np.clip(0.5 * (r1 - r3) / denom, -0.5, 0.5))
            refined = _refined_peak(r1, r2, r3, delta)
        peak_r[i] = min(refined, 1.0 - 1e-9)
        lag = min_lag + j + delta
        f0[i] = float(np.clip(fs / lag, fmin, fmax))
    return f0, peak_r, voiced


def _refined_peak(r1, r2, r3, delta):
    """Peak amplitude from three samples around an autocorrelation maximum.

    Fits A*cos(w*d + phi), which is exact for a sinusoid whose true peak
    falls between integer lags; falls back to the parabola value when the
    cosine fit is ill-conditioned.
    """
    if r2 > 0.0:
        cosw = (r1 + r3) / (2.0 * r2)
        if -1.0 < cosw < 1.0:
            w = math.acos(cosw)
            sinw = math.sin(w)
            if sinw > 1e-12:
                phi = math.atan2(r1 - r3, 2.0 * r2 * sinw)
                cphi = math.cos(phi)
                if cphi > 1e-6:
                    a = r2 / cphi
                    if a >= r2:
                        return a
    # parabola through the three points, evaluated at its vertex
    return r2 - 0.25 * (r1 - r3) * delta


def estimate_f0(clip, fmin=DEFAULT_FMIN_HZ, fmax=DEFAULT_FMAX_HZ):
    """Median f0 over voiced frames, or None when mostly unvoiced."""
    f0, _, voiced = _pitch_frames(clip, fmin, fmax)
    if voiced.size == 0 or voiced.mean() <= MIN_VOICED_FRACTION:
        return None
    return float(np.median(f0[voiced]))


def voiced_fraction(clip, fmin=DEFAULT_FMIN_HZ, fmax=DEFAULT_FMAX_HZ):
    _, _, voiced = _pitch_frames(clip, fmin, fmax)
    return float(voiced.mean()) if voiced.size else 0.0


def _peak_track(clip, fmin, fmax):
    """Walk glottal-cycle peaks; returns (periods, amplitudes) in samples.

    Peak positions and heights are refined with a parabolic fit so period
    and amplitude perturbations below one sample stay measurable.
    """
    f0 = estimate_f0(clip, fmin, fmax)
    if f0 is None:
        raise Unvoiced(f"clip {clip.clip_id!r} has no stable voicing")
    fs = clip.sample_rate_hz
    period = fs / f0
    x = clip.samples
    # track whichever polarity carries the dominant excursion
    s = x if abs(x.max()) >= abs(x.min()) else -x
    n = s.size

    def refine(q):
        if 0 < q < n - 1:
            y1, y2, y3 = s[q - 1], s[q], s[q + 1]
            denom = y1 - 2.0 * y2 + y3
            if denom < 0.0:
                d = float(np.clip(0.5 * (y1 - y3) / denom, -0.5, 0.5))
                return q + d, y2 - 0.25 * (y1 - y3) * d
        return float(q), float(s[q])

    first = int(np.argmax(s[:max(2, int(round(1.5 * period)))]))
    pos, amp = refine(first)
    prev_int = first
    positions = [pos]
    amps = [amp]
    while True:
        lo = prev_int + int(round(0.5 * period))
        hi = prev_int + int(round(1.5 * period))
        if hi > n:
            break
        q = lo + int(np.argmax(s[lo:hi]))
        pos, amp = refine(q)
        positions.append(pos)
        amps.append(amp)
        prev_int = q
    periods = np.diff(positions)
    if periods.size < 3:
        raise Unvoiced(
            f"clip {clip.clip_id!r}: only {periods.size} cycles tracked")
    return periods, np.asarray(amps[1:], dtype=np.float64)


def measure_jitter(clip, fmin=DEFAULT_FMIN_HZ, fmax=DEFAULT_FMAX_HZ):
    """Cycle-to-cycle period perturbation in percent of the mean period."""
    periods, _ = _peak_track(clip, fmin, fmax)
    return float(100.0 * np.mean(np.abs(np.diff(periods))) / np.mean(periods))


def measure_shimmer(clip, fmin=DEFAULT_FMIN_HZ, fmax=DEFAULT_FMAX_HZ):
    """Cycle-to-cycle amplitude perturbation in percent of the mean peak."""
    _, amps = _peak_track(clip, fmin, fmax)
    mean_amp = float(np.mean(amps))
    if mean_amp <= 0.0:
        raise Unvoiced(f"clip {clip.clip_id!r}: non-positive peak amplitudes")
    return float(100.0 * np.mean(np.abs(np.diff(amps))) / mean_amp)


def measure_hnr(clip, fmin=DEFAULT_FMIN_HZ, fmax=DEFAULT_FMAX_HZ):
    """Mean harmonics-to-noise ratio in dB over voiced frames."""
    _, peak_r, voiced = _pitch_frames(clip, fmin, fmax)
    if voiced.size == 0 or voiced.mean() <= MIN_VOICED_FRACTION:
        raise Unvoiced(f"clip {clip.clip_id!r} has no stable voicing")
    r = np.clip(peak_r[voiced], 1e-9, 1.0 - 1e-9)
    return float(np.mean(10.0 * np.log10(r / (1.0 - r))))


def measure_snr(clean, noisy):
    """SNR in dB of noisy against the clean reference, capped at +-120.

    The noise estimate is the residual noisy - clean, so both clips must
    share length and sample rate.
    """
    if clean.sample_rate_hz != noisy.sample_rate_hz:
        raise LengthMismatch(
            f"sample rates differ: {clean.sample_rate_hz} vs "
            f"{noisy.sample_rate_hz}")
    if clean.n_samples != noisy.n_samples:
        raise LengthMismatch(
            f"lengths differ: {clean.n_samples} vs {noisy.n_samples}")
    residual = noisy.samples - clean.samples
    p_noise = float(np.mean(residual ** 2))
    p_clean = float(np.mean(clean.samples ** 2))
    if p_noise == 0.0:
        return _SNR_CAP_DB
    if p_clean == 0.0:
        return -_SNR_CAP_DB
    return float(np.clip(10.0 * np.log10(p_clean / p_noise),
                         -_SNR_CAP_DB, _SNR_CAP_DB))


def analyze(clip, fmin=DEFAULT_FMIN_HZ, fmax=DEFAULT_FMAX_HZ):
    """All measurements at once; perturbation fields None when unavailable."""
    f0, peak_r, voiced = _pitch_frames(clip, fmin, fmax)
    vf = float(voiced.mean()) if voiced.size else 0.0
    if voiced.size == 0 or vf <= MIN_VOICED_FRACTION:
        return AcousticMeasurement(None, None, None, None, vf)
    med_f0 = float(np.median(f0[voiced]))
    r = np.clip(peak_r[voiced], 1e-9, 1.0 - 1e-9)
    hnr = float(np.mean(10.0 * np.log10(r / (1.0 - r))))
    try:
        periods, amps = _peak_track(clip, fmin, fmax)
        jitter = float(100.0 * np.mean(np.abs(np.diff(periods)))
                       / np.mean(periods))
        mean_amp = float(np.mean(amps))
        shimmer = (float(100.0 * np.mean(np.abs(np.diff(amps))) / mean_amp)
                   if mean_amp > 0 else None)
    except Unvoiced:
        jitter = None
        shimmer = None
    return AcousticMeasurement(med_f0, jitter, shimmer, hnr, vf)
