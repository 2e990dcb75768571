# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled DSP kernels: the hot inner loops behind resampling, filtering,
spectral analysis, pitch autocorrelation and waveform alignment.

Function-for-function twin of voicekit.kernels.fallback; keep signatures and
semantics in lockstep with that module.
"""

from libc.math cimport cos, sin, sqrt

import numpy as np

BACKEND_NAME = "native"

_fft_tables = {}


def polyphase_resample(double[::1] x_padded, double[:, ::1] taps,
                       Py_ssize_t up, Py_ssize_t down, Py_ssize_t n_out):
    out = np.empty(n_out, dtype=np.float64)
    cdef double[::1] y = out
    cdef Py_ssize_t n, k, i0, phase, n_taps = taps.shape[1]
    cdef long long pos
    cdef double acc
    with nogil:
        for n in range(n_out):
            pos = (<long long> n) * down
            i0 = <Py_ssize_t> (pos // up)
            phase = <Py_ssize_t> (pos % up)
            acc = 0.0
            for k in range(n_taps):
                acc += taps[phase, k] * x_padded[i0 + k]
            y[n] = acc
    return out


def sos_filter(double[::1] x, double[:, ::1] sos):
    cdef Py_ssize_t n = x.shape[0], n_sections = sos.shape[0], i, s
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] y = out
    cdef double b0, b1, b2, a1, a2, z1, z2, xi, yi
    with nogil:
        for i in range(n):
            y[i] = x[i]
        for s in range(n_sections):
            b0 = sos[s, 0]; b1 = sos[s, 1]; b2 = sos[s, 2]
            a1 = sos[s, 4]; a2 = sos[s, 5]
            z1 = 0.0; z2 = 0.0
            for i in range(n):
                xi = y[i]
                yi = b0 * xi + z1
                z1 = b1 * xi - a1 * yi + z2
                z2 = b2 * xi - a2 * yi
                y[i] = yi
    return out


def _tables(Py_ssize_t nfft):
    cached = _fft_tables.get(nfft)
    if cached is not None:
        return cached
    rev = np.zeros(nfft, dtype=np.int64)
    bits = int(nfft).bit_length() - 1
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


def fft_power(double[:, ::1] frames):
    cdef Py_ssize_t n_frames = frames.shape[0], nfft = frames.shape[1]
    if nfft & (nfft - 1) or nfft < 2:
        raise ValueError(f"frame length {nfft} is not a power of two")
    rev_arr, wre_arr, wim_arr = _tables(nfft)
    cdef long long[::1] rev = rev_arr
    cdef double[::1] wre = wre_arr
    cdef double[::1] wim = wim_arr
    cdef Py_ssize_t keep = nfft // 2 + 1
    out = np.empty((n_frames, keep), dtype=np.float64)
    cdef double[:, ::1] pw = out
    re_buf = np.empty(nfft, dtype=np.float64)
    im_buf = np.empty(nfft, dtype=np.float64)
    cdef double[::1] re = re_buf
    cdef double[::1] im = im_buf
    cdef Py_ssize_t f, i, j, size, half, stride, start, a, b, tw
    cdef double wr, wi, tr, ti
    with nogil:
        for f in range(n_frames):
            for i in range(nfft):
                re[i] = frames[f, rev[i]]
                im[i] = 0.0
            size = 2
            while size <= nfft:
                half = size >> 1
                stride = nfft // size
                start = 0
                while start < nfft:
                    for j in range(half):
                        tw = j * stride
                        wr = wre[tw]; wi = wim[tw]
                        a = start + j
                        b = a + half
                        tr = re[b] * wr - im[b] * wi
                        ti = re[b] * wi + im[b] * wr
                        re[b] = re[a] - tr
                        im[b] = im[a] - ti
                        re[a] += tr
                        im[a] += ti
                    start += size
                size <<= 1
            for i in range(keep):
                pw[f, i] = re[i] * re[i] + im[i] * im[i]
    return out


def autocorr_frames(double[:, ::1] frames, Py_ssize_t win,
                    Py_ssize_t min_lag, Py_ssize_t max_lag):
    cdef Py_ssize_t n_frames = frames.shape[0], width = frames.shape[1]
    if width < win + max_lag:
        raise ValueError("frames narrower than win + max_lag")
    cdef Py_ssize_t n_lags = max_lag - min_lag + 1
    out = np.empty((n_frames, n_lags), dtype=np.float64)
    cdef double[:, ::1] r = out
    cdef Py_ssize_t f, i, lag, j
    cdef double e0, ek, num
    with nogil:
        for f in range(n_frames):
            e0 = 0.0
            for i in range(win):
                e0 += frames[f, i] * frames[f, i]
            ek = 0.0
            for i in range(min_lag, min_lag + win):
                ek += frames[f, i] * frames[f, i]
            for j in range(n_lags):
                lag = min_lag + j
                if j > 0:
                    # slide the lagged window energy by one sample
                    ek += frames[f, lag + win - 1] * frames[f, lag + win - 1]
                    ek -= frames[f, lag - 1] * frames[f, lag - 1]
                num = 0.0
                for i in range(win):
                    num += frames[f, i] * frames[f, i + lag]
                r[f, j] = num / sqrt(e0 * ek + 1e-300)
    return out


def best_xcorr_lag(double[::1] template, double[::1] x,
                   Py_ssize_t center, Py_ssize_t radius):
    cdef Py_ssize_t w = template.shape[0]
    cdef Py_ssize_t off, i, s, best_off = -radius
    cdef double num, energy, score, best = -1e300
    with nogil:
        energy = 0.0
        s = center - radius
        for i in range(w):
            energy += x[s + i] * x[s + i]
        for off in range(-radius, radius + 1):
            s = center + off
            if off > -radius:
                energy += x[s + w - 1] * x[s + w - 1]
                energy -= x[s - 1] * x[s - 1]
            num = 0.0
            for i in range(w):
                num += template[i] * x[s + i]
            score = num / sqrt(energy + 1e-12)
            if score > best:
                best = score
                best_off = off
    return best_off
