"""Waveform augmentation: pitch shift, time stretch, noise injection.

Pitch shifting resamples by the semitone factor (rational approximation)
and then time-stretches back to the original length with WSOLA, so duration
is preserved while f0 and formants scale together. Time stretching is plain
WSOLA: fixed output hop, analysis frames picked by normalized
cross-correlation around the position the stretch ratio demands.

Policies drive batch augmentation. Selection is two-staged: apply_prob first
gates whether a variant is augmented at all, then each operation joins
independently with the same probability (at least one, at most
max_combined_ops). Operations always apply in the order pitch shift, time
stretch, noise. Everything is deterministic in (seed, clip_id, variant).
"""

import dataclasses
import json
import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Optional

import numpy as np

from voicekit import kernels
from voicekit.audio import load_wav, make_clip, resample, resample_samples
from voicekit.corpus import ClipRecord
from voicekit.errors import (InvalidConfig, IoFailure, MissingNoiseFile,
                             OutOfRange)
from voicekit.util import stable_seed

_WSOLA_WIN_S = 0.030
_WSOLA_SEARCH_S = 0.010
_OP_ORDER = ("pitch_shift", "time_stretch", "add_noise")


@dataclass(frozen=True)
class AugmentPolicy:
    """Per-recording-type augmentation schedule."""

    apply_prob: float
    pitch_range_semitones: tuple
    stretch_range: tuple
    snr_range_db: tuple
    max_combined_ops: int
    n_variants_per_clip: int
    noise_kind: str = "white"
    noise_path: Optional[str] = None

    def __post_init__(self):
        if not 0.0 <= self.apply_prob <= 1.0:
            raise InvalidConfig(f"apply_prob {self.apply_prob} outside [0, 1]")
        checks = (
            ("pitch_range_semitones", self.pitch_range_semitones, -12.0, 12.0),
            ("stretch_range", self.stretch_range, 0.5, 2.0),
            ("snr_range_db", self.snr_range_db, -5.0, 60.0),
        )
        for name, rng_pair, lo_b, hi_b in checks:
            lo, hi = rng_pair
            if not (lo_b <= lo <= hi <= hi_b):
                raise InvalidConfig(
                    f"{name}=({lo}, {hi}) outside [{lo_b}, {hi_b}] "
                    "or inverted")
            object.__setattr__(self, name, (float(lo), float(hi)))
        if not 1 <= self.max_combined_ops <= len(_OP_ORDER):
            raise InvalidConfig(
                f"max_combined_ops {self.max_combined_ops} outside "
                f"[1, {len(_OP_ORDER)}]")
        if self.n_variants_per_clip < 1:
            raise InvalidConfig("n_variants_per_clip must be >= 1")
        if self.noise_kind not in ("white", "ambient_file"):
            raise InvalidConfig(f"noise_kind {self.noise_kind!r} invalid")


DEFAULT_POLICIES = {
    # sentences tolerate wider warps and harsher noise than vowels
    "sentence": AugmentPolicy(
        apply_prob=0.8, pitch_range_semitones=(-4.0, 4.0),
        stretch_range=(0.8, 1.25), snr_range_db=(5.0, 20.0),
        max_combined_ops=3, n_variants_per_clip=2),
    "vowel": AugmentPolicy(
        apply_prob=0.5, pitch_range_semitones=(-2.0, 2.0),
        stretch_range=(0.9, 1.1), snr_range_db=(15.0, 30.0),
        max_combined_ops=2, n_variants_per_clip=1),
}


def policy_from_dict(obj):
    try:
        return AugmentPolicy(
            apply_prob=float(obj["apply_prob"]),
            pitch_range_semitones=tuple(obj["pitch_range_semitones"]),
            stretch_range=tuple(obj["stretch_range"]),
            snr_range_db=tuple(obj["snr_range_db"]),
            max_combined_ops=int(obj["max_combined_ops"]),
            n_variants_per_clip=int(obj["n_variants_per_clip"]),
            noise_kind=obj.get("noise_kind", "white"),
            noise_path=obj.get("noise_path"))
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidConfig(f"bad policy object: {exc}") from exc


def load_policies(path):
    """Read a {recording_type: policy} JSON file."""
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidConfig(f"cannot read policies {path}: {exc}") from exc
    if not isinstance(obj, dict):
        raise InvalidConfig("policy file must hold an object")
    policies = {}
    for rtype, entry in obj.items():
        if rtype not in ("sentence", "vowel"):
            raise InvalidConfig(f"unknown recording type {rtype!r}")
        policies[rtype] = policy_from_dict(entry)
    return policies


# -- primitive operations ------------------------------------------------------

def _wsola(x, fs, factor):
    """Stretch x by factor with waveform-similarity overlap-add."""
    n = x.size
    win = int(round(_WSOLA_WIN_S * fs)) & ~1
    hop = win // 2
    radius = int(round(_WSOLA_SEARCH_S * fs))
    target = int(round(n * factor))
    if n < 2 * win or target < win:
        # too short for alignment; fall back to plain resampling
        frac = Fraction(factor).limit_denominator(1000)
        y = resample_samples(x, frac.numerator, frac.denominator)
        return y[:target] if y.size >= target else np.concatenate(
            [y, np.zeros(target - y.size)])
    window = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(win) / win)
    xe = np.ascontiguousarray(np.concatenate([x, np.zeros(win)]))
    out = np.zeros(target + win)
    wsum = np.zeros(target + win)
    max_src = n - win
    prev_src = 0
    for k in range((target + hop - 1) // hop):
        opos = k * hop
        nominal = min(int(round(opos / factor)), max_src)
        if k == 0:
            src = nominal
        else:
            tpl_start = prev_src + hop
            rad = min(radius, nominal, max_src - nominal)
            if tpl_start > max_src or rad <= 0:
                src = nominal
            else:
                template = xe[tpl_start:tpl_start + win]
                off = kernels.best_xcorr_lag(
                    np.ascontiguousarray(template), xe, nominal, rad)
                src = nominal + off
        out[opos:opos + win] += window * xe[src:src + win]
        wsum[opos:opos + win] += window
        prev_src = src
    y = out[:target]
    w = wsum[:target]
    return np.where(w > 1e-8, y / np.maximum(w, 1e-8), 0.0)


def time_stretch(clip, factor):
    """Change duration by factor while preserving pitch."""
    if not 0.5 <= factor <= 2.0:
        raise OutOfRange(f"stretch factor {factor} outside [0.5, 2]")
    if factor == 1.0:
        return clip
    y = _wsola(clip.samples, clip.sample_rate_hz, factor)
    return make_clip(clip.clip_id, y, clip.sample_rate_hz)


def pitch_shift(clip, semitones, seed=0):
    """Shift pitch (and formants) by semitones while preserving duration.

    The seed parameter is accepted for signature parity with the other
    operations; the algorithm itself is deterministic.
    """
    del seed
    if not -12.0 <= semitones <= 12.0:
        raise OutOfRange(f"semitones {semitones} outside [-12, 12]")
    if semitones == 0.0:
        return clip
    factor = 2.0 ** (semitones / 12.0)
    ratio = Fraction(1.0 / factor).limit_denominator(1000)
    x = clip.samples
    y = resample_samples(x, ratio.numerator, ratio.denominator)
    restore = x.size / y.size
    y = _wsola(y, clip.sample_rate_hz, restore)
    return make_clip(clip.clip_id, y, clip.sample_rate_hz)


def add_noise(clip, snr_db, kind="white", seed=0, noise_path=None):
    """Mix in noise at an exact SNR (before any clipping into [-1, 1])."""
    if not -5.0 <= snr_db <= 60.0:
        raise OutOfRange(f"snr {snr_db} dB outside [-5, 60]")
    rng = np.random.default_rng(seed)
    n = clip.n_samples
    if kind == "white":
        noise = rng.standard_normal(n)
    elif kind == "ambient_file":
        if noise_path is None:
            raise MissingNoiseFile("ambient noise requested without a file")
        try:
            src = load_wav(noise_path)
        except IoFailure as exc:
            raise MissingNoiseFile(str(exc)) from exc
        src = resample(src, clip.sample_rate_hz)
        buf = src.samples
        if buf.size < n:
            buf = np.tile(buf, math.ceil(n / buf.size))
        start = int(rng.integers(0, buf.size - n + 1))
        noise = buf[start:start + n].astype(np.float64)
    else:
        raise InvalidConfig(f"noise kind {kind!r} invalid")
    p_sig = float(np.mean(clip.samples ** 2))
    if p_sig == 0.0:
        raise OutOfRange("clip is silent; SNR is undefined")
    p_noise = float(np.mean(noise ** 2))
    if p_noise == 0.0:
        raise MissingNoiseFile("noise source has zero power")
    noise = noise * math.sqrt(p_sig / (10.0 ** (snr_db / 10.0)) / p_noise)
    return make_clip(clip.clip_id, clip.samples + noise,
                     clip.sample_rate_hz)


# -- policy application --------------------------------------------------------

def _select_ops(rng, policy):
    """Stage one gates the variant, stage two picks the operation subset."""
    if rng.random() >= policy.apply_prob:
        return []
    flags = rng.random(len(_OP_ORDER)) < policy.apply_prob
    selected = list(np.flatnonzero(flags))
    if not selected:
        selected = [int(rng.integers(0, len(_OP_ORDER)))]
    if len(selected) > policy.max_combined_ops:
        keep = rng.choice(len(selected), size=policy.max_combined_ops,
                          replace=False)
        selected = [selected[i] for i in sorted(keep)]
    return [_OP_ORDER[i] for i in selected]


def apply_policy(clip, record, policy, seed=0, render=True):
    """Produce the policy's variants of one clip.

    Returns [(AudioClip, ClipRecord), ...] ordered by variant index. Variant
    records point back at the parent through provenance.parent_clip_id and
    list the applied operations with their parameters. render=False draws
    the exact same operations and parameters but skips the signal
    processing, pairing each record with None; callers use it when the
    variant's features are already cached.
    """
    if record.origin not in ("real", "synthetic"):
        raise ValueError(
            f"cannot augment {record.origin!r} record {record.clip_id!r}")
    out = []
    for v in range(policy.n_variants_per_clip):
        rng = np.random.default_rng(
            stable_seed(seed, record.clip_id, "variant", v))
        ops = _select_ops(rng, policy)
        variant = clip if render else None
        ops_meta = []
        for op in ops:
            if op == "pitch_shift":
                semitones = float(rng.uniform(*policy.pitch_range_semitones))
                if render:
                    variant = pitch_shift(variant, semitones)
                ops_meta.append({"op": op, "semitones": semitones})
            elif op == "time_stretch":
                factor = float(rng.uniform(*policy.stretch_range))
                if render:
                    variant = time_stretch(variant, factor)
                ops_meta.append({"op": op, "factor": factor})
            else:
                snr = float(rng.uniform(*policy.snr_range_db))
                if render:
                    variant = add_noise(
                        variant, snr, kind=policy.noise_kind,
                        seed=stable_seed(seed, record.clip_id, "noise", v),
                        noise_path=policy.noise_path)
                ops_meta.append({"op": op, "snr_db": snr,
                                 "kind": policy.noise_kind})
        new_id = f"{record.clip_id}.aug{v}"
        stem = str(Path(record.path).with_suffix(""))
        new_record = ClipRecord(
            clip_id=new_id, path=f"{stem}.aug{v}.wav",
            dataset_id=record.dataset_id, speaker_id=record.speaker_id,
            session_id=record.session_id,
            recording_type=record.recording_type, label=record.label,
            origin="augmented", language=record.language,
            vowel_label=record.vowel_label,
            pathology_class=record.pathology_class,
            provenance={"parent_clip_id": record.clip_id, "ops": ops_meta})
        out.append((dataclasses.replace(variant, clip_id=new_id)
                    if render else None, new_record))
    return out
