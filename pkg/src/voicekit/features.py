"""Spectral features: log-mel energies, MFCCs, pooled clip vectors.

The chain is pre-emphasis, Hann-windowed frames, zero-padded power FFT,
triangular mel filterbank (HTK mel scale), log compression, and for MFCC an
orthonormal DCT-II keeping the first n_coeffs coefficients. Feature matrices
are stored as float32; pooled statistics are computed from the float32 data
so a cache round-trip yields bit-identical pooled vectors.
"""

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from voicekit import kernels
from voicekit.errors import (ClipTooShort, InvalidConfig, IoFailure,
                             MalformedHeader, NegativeFrequency,
                             NonFiniteFeatures, TooFewFrames)
from voicekit.util import canonical_json, sha256_hex

_MAGIC = b"VKFC"
_VERSION = 1
_HEADER = struct.Struct("<4sIIIIdd8s64s")


@dataclass(frozen=True)
class FrameSpec:
    win_ms: float = 25.0
    hop_ms: float = 10.0

    def __post_init__(self):
        if not self.win_ms >= self.hop_ms > 0:
            raise InvalidConfig(
                f"need win_ms >= hop_ms > 0, got ({self.win_ms}, "
                f"{self.hop_ms})")

    def sizes(self, sample_rate_hz):
        win = int(round(self.win_ms * 1e-3 * sample_rate_hz))
        hop = int(round(self.hop_ms * 1e-3 * sample_rate_hz))
        return win, hop


@dataclass(frozen=True)
class MfccConfig:
    n_mels: int = 64
    n_coeffs: int = 40
    fmin_hz: float = 0.0
    fmax_hz: Optional[float] = None  # None means Nyquist
    preemphasis: float = 0.97
    log_floor: float = 1e-10

    def __post_init__(self):
        if self.n_mels < 2:
            raise InvalidConfig(f"n_mels {self.n_mels} < 2")
        if not 1 <= self.n_coeffs <= self.n_mels:
            raise InvalidConfig(
                f"n_coeffs {self.n_coeffs} outside [1, {self.n_mels}]")
        if self.fmin_hz < 0:
            raise NegativeFrequency(f"fmin_hz {self.fmin_hz} < 0")
        if self.fmax_hz is not None and self.fmax_hz <= self.fmin_hz:
            raise InvalidConfig("fmax_hz must exceed fmin_hz")
        if not 0.0 <= self.preemphasis < 1.0:
            raise InvalidConfig(
                f"preemphasis {self.preemphasis} outside [0, 1)")
        if self.log_floor <= 0.0:
            raise InvalidConfig("log_floor must be positive")


@dataclass(frozen=True)
class FeatureMatrix:
    """Frames-by-coefficients float32 grid plus its provenance tag."""

    data: np.ndarray
    kind: str  # "logmel" | "mfcc"
    sample_rate_hz: int
    win_ms: float
    hop_ms: float
    config_hash: str

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float32)
        if arr.ndim != 2:
            raise InvalidConfig(f"feature data must be 2-d, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise NonFiniteFeatures("feature matrix has non-finite entries")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def n_frames(self):
        return self.data.shape[0]

    @property
    def n_cols(self):
        return self.data.shape[1]


def hz_to_mel(f):
    arr = np.asarray(f, dtype=np.float64)
    if np.any(arr < 0):
        raise NegativeFrequency(f"negative frequency in {f!r}")
    out = 2595.0 * np.log10(1.0 + arr / 700.0)
    return float(out) if np.isscalar(f) else out


def mel_to_hz(m):
    arr = np.asarray(m, dtype=np.float64)
    out = 700.0 * (10.0 ** (arr / 2595.0) - 1.0)
    return float(out) if np.isscalar(m) else out


def config_hash(kind, frame, cfg, sample_rate_hz):
    """Stable digest of everything that shapes the feature values."""
    payload = {
        "kind": kind,
        "win_ms": frame.win_ms,
        "hop_ms": frame.hop_ms,
        "sample_rate_hz": sample_rate_hz,
        "n_mels": cfg.n_mels,
        "n_coeffs": cfg.n_coeffs,
        "fmin_hz": cfg.fmin_hz,
        "fmax_hz": cfg.fmax_hz,
        "preemphasis": cfg.preemphasis,
        "log_floor": cfg.log_floor,
    }
    return sha256_hex(canonical_json(payload))


def mel_filterbank(cfg, n_fft_bins, sample_rate_hz, nfft):
    """(n_mels, n_fft_bins) triangular weights on the HTK mel scale."""
    fmax = cfg.fmax_hz if cfg.fmax_hz is not None else sample_rate_hz / 2
    if fmax > sample_rate_hz / 2:
        raise InvalidConfig(
            f"fmax_hz {fmax} above Nyquist {sample_rate_hz / 2}")
    edges_mel = np.linspace(hz_to_mel(cfg.fmin_hz), hz_to_mel(fmax),
                            cfg.n_mels + 2)
    edges_hz = mel_to_hz(edges_mel)
    bin_hz = np.arange(n_fft_bins) * (sample_rate_hz / nfft)
    fb = np.zeros((cfg.n_mels, n_fft_bins))
    for m in range(cfg.n_mels):
        lo, center, hi = edges_hz[m], edges_hz[m + 1], edges_hz[m + 2]
        up = (bin_hz - lo) / max(center - lo, 1e-9)
        down = (hi - bin_hz) / max(hi - center, 1e-9)
        fb[m] = np.maximum(0.0, np.minimum(up, down))
    return fb


def _next_pow2(n):
    p = 1
    while p < n:
        p <<= 1
    return p


_fb_cache = {}
_dct_cache = {}


def _frame_power(clip, frame, cfg):
    fs = clip.sample_rate_hz
    win, hop = frame.sizes(fs)
    x = clip.samples
    if x.size < win:
        raise ClipTooShort(
            f"clip {clip.clip_id!r}: {x.size} samples < window {win}")
    if cfg.preemphasis > 0.0:
        y = np.empty_like(x)
        y[0] = x[0]
        y[1:] = x[1:] - cfg.preemphasis * x[:-1]
    else:
        y = x
    frames = np.lib.stride_tricks.sliding_window_view(y, win)[::hop]
    window = np.hanning(win)
    nfft = _next_pow2(win)
    padded = np.zeros((frames.shape[0], nfft))
    padded[:, :win] = frames * window
    power = kernels.fft_power(np.ascontiguousarray(padded))
    return power, nfft


def log_mel(clip, frame=FrameSpec(), cfg=MfccConfig()):
    """Log mel-band energies, one row per frame."""
    power, nfft = _frame_power(clip, frame, cfg)
    key = ("fb", cfg, clip.sample_rate_hz, nfft)
    fb = _fb_cache.get(key)
    if fb is None:
        fb = mel_filterbank(cfg, power.shape[1], clip.sample_rate_hz, nfft)
        _fb_cache[key] = fb
    logmel = np.log(power @ fb.T + cfg.log_floor)
    return FeatureMatrix(
        data=logmel.astype(np.float32), kind="logmel",
        sample_rate_hz=clip.sample_rate_hz, win_ms=frame.win_ms,
        hop_ms=frame.hop_ms,
        config_hash=config_hash("logmel", frame, cfg, clip.sample_rate_hz))


def _dct_matrix(n_coeffs, n_mels):
    key = (n_coeffs, n_mels)
    mat = _dct_cache.get(key)
    if mat is None:
        m = np.arange(n_mels)
        mat = np.cos(np.pi * np.arange(n_coeffs)[:, None]
                     * (2 * m[None, :] + 1) / (2 * n_mels))
        mat *= np.sqrt(2.0 / n_mels)
        mat[0] *= np.sqrt(0.5)  # orthonormal DCT-II scaling
        _dct_cache[key] = mat
    return mat


def mfcc(clip, frame=FrameSpec(), cfg=MfccConfig()):
    """MFCC matrix: orthonormal DCT-II of the log-mel rows."""
    power, nfft = _frame_power(clip, frame, cfg)
    key = ("fb", cfg, clip.sample_rate_hz, nfft)
    fb = _fb_cache.get(key)
    if fb is None:
        fb = mel_filterbank(cfg, power.shape[1], clip.sample_rate_hz, nfft)
        _fb_cache[key] = fb
    logmel = np.log(power @ fb.T + cfg.log_floor)
    coeffs = logmel @ _dct_matrix(cfg.n_coeffs, cfg.n_mels).T
    return FeatureMatrix(
        data=coeffs.astype(np.float32), kind="mfcc",
        sample_rate_hz=clip.sample_rate_hz, win_ms=frame.win_ms,
        hop_ms=frame.hop_ms,
        config_hash=config_hash("mfcc", frame, cfg, clip.sample_rate_hz))


def pool_stats(matrix):
    """Per-coefficient mean and population std, concatenated (2 * n_cols,).

    Computed in float64 from the float32 matrix, so pooling a cached matrix
    reproduces the fresh result exactly.
    """
    if matrix.n_frames < 2:
        raise TooFewFrames(
            f"need at least 2 frames to pool, have {matrix.n_frames}")
    data = matrix.data.astype(np.float64)
    return np.concatenate([data.mean(axis=0), data.std(axis=0, ddof=0)])


# -- binary cache --------------------------------------------------------------

def write_cache(matrix, path):
    """Serialize a FeatureMatrix to the versioned binary cache format."""
    kind_bytes = matrix.kind.encode("ascii").ljust(8, b"\x00")
    header = _HEADER.pack(
        _MAGIC, _VERSION, matrix.n_frames, matrix.n_cols,
        matrix.sample_rate_hz, matrix.win_ms, matrix.hop_ms, kind_bytes,
        matrix.config_hash.encode("ascii"))
    payload = np.ascontiguousarray(matrix.data, dtype="<f4").tobytes()
    try:
        Path(path).write_bytes(header + payload)
    except OSError as exc:
        raise IoFailure(f"cannot write cache {path}: {exc}") from exc


def read_cache(path):
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read cache {path}: {exc}") from exc
    if len(blob) < _HEADER.size:
        raise MalformedHeader(f"cache {path} truncated")
    magic, version, n_frames, n_cols, rate, win_ms, hop_ms, kind_b, hash_b = (
        _HEADER.unpack_from(blob, 0))
    if magic != _MAGIC:
        raise MalformedHeader(f"cache {path}: bad magic {magic!r}")
    if version != _VERSION:
        raise MalformedHeader(f"cache {path}: version {version} unsupported")
    expected = n_frames * n_cols * 4
    payload = blob[_HEADER.size:]
    if len(payload) != expected:
        raise MalformedHeader(
            f"cache {path}: payload {len(payload)} bytes, want {expected}")
    data = np.frombuffer(payload, dtype="<f4").reshape(n_frames, n_cols)
    return FeatureMatrix(
        data=data, kind=kind_b.rstrip(b"\x00").decode("ascii"),
        sample_rate_hz=rate, win_ms=win_ms, hop_ms=hop_ms,
        config_hash=hash_b.decode("ascii"))
