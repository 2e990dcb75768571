"""Pure numpy/scipy implementations of the DSP kernels.

Mirrors voicekit.kernels._native function-for-function. Each function here is
the reference the compiled backend is tested against; orchestration (filter
design, framing, overlap-add bookkeeping) lives in the calling modules so the
two backends only ever disagree by floating-point noise.
"""

import numpy as np
import scipy.signal

BACKEND_NAME = "python"

_fft_tables = {}


def polyphase_resample(x_padded, taps, up, down, n_out):
    """Resample via a polyphase filter bank.

    x_padded is the input with the filter's left/right support already
    zero-padded on, taps has one row per phase, and output sample n draws
    phase (n*down) % up starting at input index (n*down) // up.
    """
    x_padded = np.asarray(x_padded, dtype=np.float64)
    taps = np.asarray(taps, dtype=np.float64)
    n_taps = taps.shape[1]
    y = np.empty(n_out, dtype=np.float64)
    chunk = 1 << 16
    offsets = np.arange(n_taps, dtype=np.int64)
    for start in range(0, n_out, chunk):
        stop = min(start + chunk, n_out)
        pos = np.arange(start, stop, dtype=np.int64) * down
        i0 = pos // up
        phase = pos % up
        gathered = x_padded[i0[:, None] + offsets[None, :]]
        y[start:stop] = np.einsum("ij,ij->i", gathered, taps[phase])
    return y


def sos_filter(x, sos):
    """Cascade of second-order sections, direct form II transposed."""
    return scipy.signal.sosfilt(np.asarray(sos, dtype=np.float64),
                                np.asarray(x, dtype=np.float64))


def _tables(nfft):
    cached = _fft_tables.get(nfft)
    if cached is not None:
        return cached
    rev = np.zeros(nfft, dtype=np.int64)
    bits = nfft.bit_length() - 1
    for i in range(nfft):
        r = 0
        v = i
        for _ in range(bits):
            r = (r << 1) | (v & 1)
            v >>= 1
        rev[i] = r
    k = np.arange(nfft // 2)
    wre = np.cos(-2.0 * np.pi * k / nfft)
    wim = np.sin(-2.0 * np.pi * k / nfft)
    _fft_tables[nfft] = (rev, wre, wim)
    return rev, wre, wim


def fft_power(frames):
    """Power spectrum (|X|^2, bins 0..nfft/2) of real frames, batch form.

    Iterative radix-2 decimation in time; frame length must be a power of
    two. Vectorized over the batch axis, one stage at a time.
    """
    frames = np.asarray(frames, dtype=np.float64)
    n_frames, nfft = frames.shape
    if nfft & (nfft - 1) or nfft < 2:
        raise ValueError(f"frame length {nfft} is not a power of two")
    rev, wre, wim = _tables(nfft)
    re = frames[:, rev].copy()
    im = np.zeros_like(re)
    size = 2
    while size <= nfft:
        half = size // 2
        stride = nfft // size
        wr = wre[::stride][:half]
        wi = wim[::stride][:half]
        re3 = re.reshape(n_frames, -1, size)
        im3 = im.reshape(n_frames, -1, size)
        a_re = re3[:, :, :half]
        a_im = im3[:, :, :half]
        t_re = re3[:, :, half:] * wr - im3[:, :, half:] * wi
        t_im = re3[:, :, half:] * wi + im3[:, :, half:] * wr
        re3[:, :, half:] = a_re - t_re
        im3[:, :, half:] = a_im - t_im
        re3[:, :, :half] = a_re + t_re
        im3[:, :, :half] = a_im + t_im
        size *= 2
    keep = nfft // 2 + 1
    return re[:, :keep] ** 2 + im[:, :keep] ** 2


def autocorr_frames(frames, win, min_lag, max_lag):
    """Normalized autocorrelation of extended frames.

    Each row must hold win + max_lag samples. For lag k the value is
    sum(x[i] * x[i+k]) / sqrt(e0 * ek) with e0, ek the energies of the two
    windows, which keeps a perfectly periodic signal at exactly 1 even at
    frame edges.
    """
    frames = np.asarray(frames, dtype=np.float64)
    n_frames, width = frames.shape
    if width < win + max_lag:
        raise ValueError("frames narrower than win + max_lag")
    n_lags = max_lag - min_lag + 1
    head = frames[:, :win]
    e0 = np.einsum("ij,ij->i", head, head)
    # prefix sums of squares give every lagged window energy in O(1)
    csq = np.concatenate(
        [np.zeros((n_frames, 1)), np.cumsum(frames * frames, axis=1)], axis=1)
    out = np.empty((n_frames, n_lags), dtype=np.float64)
    for j, lag in enumerate(range(min_lag, max_lag + 1)):
        seg = frames[:, lag:lag + win]
        num = np.einsum("ij,ij->i", head, seg)
        ek = csq[:, lag + win] - csq[:, lag]
        out[:, j] = num / np.sqrt(e0 * ek + 1e-300)
    return out


def best_xcorr_lag(template, x, center, radius):
    """Offset in [-radius, radius] maximizing normalized cross-correlation.

    Scores template against x[center+off : center+off+len(template)] using
    num / sqrt(candidate energy); caller guarantees the candidate windows
    stay inside x. First maximum wins on ties.
    """
    template = np.asarray(template, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    w = template.shape[0]
    lo = center - radius
    hi = center + radius
    seg = x[lo:hi + w]
    nums = np.correlate(seg, template, mode="valid")
    csq = np.concatenate([[0.0], np.cumsum(seg * seg)])
    energies = csq[w:] - csq[:-w]
    scores = nums / np.sqrt(energies + 1e-12)
    return int(np.argmax(scores)) - radius
