"""Audio containers, WAV file I/O and sample-rate conversion.

Clips are immutable: every operation returns a new AudioClip. Samples are
float64 in [-1, 1]; producers clip out-of-range values and record the clipped
fraction on the result so downstream code can notice distortion.

WAV support is deliberately narrow: RIFF/WAVE with 16-bit PCM or 32-bit float
samples, mono or stereo (stereo is averaged to mono on load). Files are
written as 16-bit PCM mono.
"""

import math
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from voicekit import kernels
from voicekit.errors import (EmptyAudio, IoFailure, MalformedHeader,
                             UnsupportedEncoding, UnsupportedRate)

SUPPORTED_RATES = (8000, 16000, 22050, 44100, 48000)

# Polyphase anti-alias filter: 64 taps per phase, Kaiser window.
_TAPS_PER_PHASE = 64
_KAISER_BETA = 8.6
_CUTOFF_SCALE = 0.9

_filter_cache = {}


class ClippingWarning(UserWarning):
    """More than 1% of samples were hard-clipped by an operation."""


@dataclass(frozen=True)
class AudioClip:
    """Immutable mono audio buffer.

    clip_fraction records the share of samples the producing operation had
    to hard-clip into [-1, 1] (0.0 for clean signals).
    """

    clip_id: str
    samples: np.ndarray
    sample_rate_hz: int
    clip_fraction: float = field(default=0.0)

    def __post_init__(self):
        arr = np.asarray(self.samples, dtype=np.float64)
        if arr.ndim != 1:
            raise ValueError(f"samples must be 1-d, got shape {arr.shape}")
        if arr.size == 0:
            raise EmptyAudio(f"clip {self.clip_id!r} has no samples")
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"clip {self.clip_id!r} has non-finite samples")
        if np.max(np.abs(arr)) > 1.0 + 1e-12:
            raise ValueError(
                f"clip {self.clip_id!r} has samples outside [-1, 1]; "
                "clip them first (see make_clip)")
        if arr.flags.writeable:
            np.clip(arr, -1.0, 1.0, out=arr)
            arr.flags.writeable = False
        object.__setattr__(self, "samples", arr)
        if self.sample_rate_hz not in SUPPORTED_RATES:
            raise UnsupportedRate(
                f"sample rate {self.sample_rate_hz} not in {SUPPORTED_RATES}")

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate_hz

    @property
    def n_samples(self) -> int:
        return self.samples.size


def make_clip(clip_id, samples, sample_rate_hz):
    """Build an AudioClip from raw samples, clipping into [-1, 1].

    Emits ClippingWarning when more than 1% of samples needed clipping.
    """
    arr = np.array(samples, dtype=np.float64)
    if arr.size and not np.all(np.isfinite(arr)):
        raise ValueError(f"clip {clip_id!r} has non-finite samples")
    clipped = np.abs(arr) > 1.0
    frac = float(clipped.mean()) if arr.size else 0.0
    np.clip(arr, -1.0, 1.0, out=arr)
    if frac > 0.01:
        warnings.warn(
            f"clip {clip_id!r}: {100 * frac:.1f}% of samples clipped",
            ClippingWarning, stacklevel=2)
    return AudioClip(clip_id, arr, sample_rate_hz, clip_fraction=frac)


# -- WAV parsing --------------------------------------------------------------

def _parse_chunks(data):
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise MalformedHeader("not a RIFF/WAVE file")
    chunks = {}
    pos = 12
    while pos + 8 <= len(data):
        cid = data[pos:pos + 4]
        size = struct.unpack_from("<I", data, pos + 4)[0]
        body = data[pos + 8:pos + 8 + size]
        if len(body) < size:
            raise MalformedHeader(
                f"chunk {cid!r} claims {size} bytes, file has {len(body)}")
        if cid not in chunks:  # first occurrence wins
            chunks[cid] = body
        pos += 8 + size + (size & 1)  # chunks are word-aligned
    return chunks


def _parse_fmt(body):
    if len(body) < 16:
        raise MalformedHeader("fmt chunk shorter than 16 bytes")
    audio_format, n_channels, rate, _, _, bits = struct.unpack_from(
        "<HHIIHH", body, 0)
    if n_channels not in (1, 2):
        raise UnsupportedEncoding(f"{n_channels} channels (want mono/stereo)")
    if audio_format == 1 and bits == 16:
        kind = "pcm16"
    elif audio_format == 3 and bits == 32:
        kind = "float32"
    else:
        raise UnsupportedEncoding(
            f"format tag {audio_format} with {bits} bits per sample")
    return kind, n_channels, rate


def load_wav(path, clip_id=None):
    """Read a WAV file into an AudioClip (stereo averaged to mono)."""
    path = Path(path)
    if clip_id is None:
        clip_id = path.stem
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    chunks = _parse_chunks(data)
    if b"fmt " not in chunks:
        raise MalformedHeader("missing fmt chunk")
    if b"data" not in chunks:
        raise MalformedHeader("missing data chunk")
    kind, n_channels, rate = _parse_fmt(chunks[b"fmt "])
    if rate not in SUPPORTED_RATES:
        raise UnsupportedRate(f"sample rate {rate} not in {SUPPORTED_RATES}")
    payload = chunks[b"data"]
    bytes_per_sample = 2 if kind == "pcm16" else 4
    frame_bytes = bytes_per_sample * n_channels
    if len(payload) % frame_bytes:
        raise MalformedHeader("data chunk size not a multiple of frame size")
    if not payload:
        raise EmptyAudio(f"{path} holds zero audio frames")
    if kind == "pcm16":
        raw = np.frombuffer(payload, dtype="<i2").astype(np.float64) / 32768.0
    else:
        raw = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    if n_channels == 2:
        raw = raw.reshape(-1, 2).mean(axis=1)
    return make_clip(clip_id, raw, rate)


def save_wav(clip, path):
    """Write an AudioClip as 16-bit PCM mono WAV."""
    q = np.clip(np.rint(clip.samples * 32768.0), -32768, 32767).astype("<i2")
    payload = q.tobytes()
    header = b"".join([
        b"RIFF", struct.pack("<I", 36 + len(payload)), b"WAVE",
        b"fmt ", struct.pack("<IHHIIHH", 16, 1, 1, clip.sample_rate_hz,
                             clip.sample_rate_hz * 2, 2, 16),
        b"data", struct.pack("<I", len(payload)),
    ])
    try:
        Path(path).write_bytes(header + payload)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def wav_duration(path):
    """Duration in seconds from the WAV header, without decoding samples."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    chunks = _parse_chunks(data)
    if b"fmt " not in chunks or b"data" not in chunks:
        raise MalformedHeader("missing fmt or data chunk")
    kind, n_channels, rate = _parse_fmt(chunks[b"fmt "])
    bytes_per_sample = 2 if kind == "pcm16" else 4
    n_frames = len(chunks[b"data"]) // (bytes_per_sample * n_channels)
    return n_frames / rate


# -- resampling ---------------------------------------------------------------

def _filter_table(up, down):
    """Polyphase tap table for the rational ratio up/down.

    Row p holds the windowed-sinc interpolation filter for fractional offset
    p/up, lowpassed at 0.9x the narrower Nyquist. Rows are normalized to unit
    DC gain so constant signals pass through exactly.
    """
    key = (up, down)
    cached = _filter_cache.get(key)
    if cached is not None:
        return cached
    half = _TAPS_PER_PHASE // 2
    fc = _CUTOFF_SCALE * min(1.0, up / down)
    m = np.arange(_TAPS_PER_PHASE) - (half - 1)
    taps = np.empty((up, _TAPS_PER_PHASE), dtype=np.float64)
    for phase in range(up):
        t = m - phase / up
        inside = np.abs(t) <= half
        w = np.zeros_like(t, dtype=np.float64)
        w[inside] = (np.i0(_KAISER_BETA * np.sqrt(1.0 - (t[inside] / half) ** 2))
                     / np.i0(_KAISER_BETA))
        h = fc * np.sinc(fc * t) * w
        taps[phase] = h / h.sum()
    _filter_cache[key] = taps
    return taps


def resample_samples(x, up, down):
    """Resample raw samples by the rational factor up/down."""
    x = np.asarray(x, dtype=np.float64)
    g = math.gcd(up, down)
    up //= g
    down //= g
    if up == down:
        return x.copy()
    taps = _filter_table(up, down)
    half = _TAPS_PER_PHASE // 2
    n_out = (x.size * up + down // 2) // down
    i0_max = ((n_out - 1) * down) // up
    pad_right = max(0, i0_max + _TAPS_PER_PHASE - (half - 1) - x.size)
    x_padded = np.concatenate([
        np.zeros(half - 1), x, np.zeros(pad_right)])
    return kernels.polyphase_resample(
        np.ascontiguousarray(x_padded), taps, up, down, n_out)


def resample(clip, target_rate_hz):
    """Convert a clip to another supported sample rate."""
    if target_rate_hz not in SUPPORTED_RATES:
        raise UnsupportedRate(
            f"sample rate {target_rate_hz} not in {SUPPORTED_RATES}")
    if target_rate_hz == clip.sample_rate_hz:
        return clip
    y = resample_samples(clip.samples, target_rate_hz, clip.sample_rate_hz)
    return make_clip(clip.clip_id, y, target_rate_hz)
