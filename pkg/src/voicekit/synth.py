"""Parametric voice synthesis for corpus balancing.

Source-filter model: a flow-derivative glottal pulse train (full sine cycle
over the first 60% of each period, zero in the closed phase) drives a cascade
of three unit-peak-gain resonators. Aspiration noise is the same cascade fed
with white noise, modulated pulse-synchronously by the breathiness setting and
scaled to the requested harmonics-to-noise ratio. Output is peak-normalized
to 0.9.

Perturbation calibration: requested jitter/shimmer are mean absolute
consecutive differences in percent. Per-period multipliers are (1 + sigma*z)
with z standard normal clipped to +-3 and sigma = requested / (100 * 2/sqrt(pi)),
since E|z - z'| = 2/sqrt(pi) for an iid pair. Tremor is a slow sinusoidal
modulation applied to both period and amplitude. Pulses are placed at
fractional sample positions, so sub-sample period perturbations survive into
the rendered waveform.
"""

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from voicekit import acoustics, kernels
from voicekit.audio import make_clip
from voicekit.corpus import ClipRecord, VOWELS
from voicekit.errors import (AllUnvoiced, InvalidConfig, InvalidDuration,
                             InvalidSyllableCount)
from voicekit.util import stable_seed

# (center_hz, bandwidth_hz) triples for sustained vowels
FORMANT_TABLE = {
    "a": ((800.0, 80.0), (1200.0, 90.0), (2500.0, 120.0)),
    "e": ((400.0, 80.0), (2000.0, 90.0), (2600.0, 120.0)),
    "i": ((300.0, 80.0), (2300.0, 90.0), (3000.0, 120.0)),
    "o": ((450.0, 80.0), (800.0, 90.0), (2600.0, 120.0)),
    "u": ((325.0, 80.0), (700.0, 90.0), (2530.0, 120.0)),
}

OPEN_QUOTIENT = 0.6
PEAK_LEVEL = 0.9
# E|z - z'| for an iid standard normal pair; converts a requested mean
# absolute consecutive difference into a per-period sigma.
_MEAN_ABS_PAIR = 2.0 / math.sqrt(math.pi)

_PROFILE_BOUNDS = {
    "f0_hz": (60.0, 400.0),
    "jitter_pct": (0.0, 10.0),
    "shimmer_pct": (0.0, 15.0),
    "hnr_db": (-5.0, 40.0),
    "tremor_rate_hz": (0.0, 12.0),
    "tremor_depth_pct": (0.0, 20.0),
    "breathiness": (0.0, 1.0),
}

# order in which sample_profile consumes random draws; part of the
# determinism contract, do not reorder
_PROFILE_FIELDS = ("f0_hz", "jitter_pct", "shimmer_pct", "hnr_db",
                   "tremor_rate_hz", "tremor_depth_pct", "breathiness")


@dataclass(frozen=True)
class VoiceProfile:
    """One concrete voice: the knobs a single synthesis run uses.

    formants is None to use the per-vowel table, or an explicit triple of
    (center_hz, bandwidth_hz) pairs applied to every vowel.
    """

    f0_hz: float
    jitter_pct: float
    shimmer_pct: float
    hnr_db: float
    tremor_rate_hz: float
    tremor_depth_pct: float
    breathiness: float
    formants: Optional[tuple] = None

    def __post_init__(self):
        for name, (lo, hi) in _PROFILE_BOUNDS.items():
            v = getattr(self, name)
            if not (lo <= v <= hi):
                raise InvalidConfig(
                    f"profile {name}={v} outside [{lo}, {hi}]")
        if self.formants is not None:
            fmts = tuple((float(c), float(b)) for c, b in self.formants)
            if len(fmts) != 3:
                raise InvalidConfig("formants must hold three (center, "
                                    "bandwidth) pairs")
            centers = [c for c, _ in fmts]
            if sorted(centers) != centers or len(set(centers)) != 3:
                raise InvalidConfig("formant centers must strictly increase")
            if any(c <= 0 or b <= 0 for c, b in fmts):
                raise InvalidConfig("formant centers and bandwidths must be "
                                    "positive")
            object.__setattr__(self, "formants", fmts)


@dataclass(frozen=True)
class ClassPreset:
    """Uniform sampling ranges for one voice class."""

    class_name: str
    label: str
    f0_hz: tuple
    jitter_pct: tuple
    shimmer_pct: tuple
    hnr_db: tuple
    tremor_rate_hz: tuple
    tremor_depth_pct: tuple
    breathiness: tuple
    conditioned_on: tuple = field(default=())

    def __post_init__(self):
        if self.label not in ("healthy", "pathological"):
            raise InvalidConfig(f"preset label {self.label!r} invalid")
        for name in _PROFILE_FIELDS:
            lo, hi = getattr(self, name)
            blo, bhi = _PROFILE_BOUNDS[name]
            if not (blo <= lo <= hi <= bhi):
                raise InvalidConfig(
                    f"preset {self.class_name!r} range {name}=({lo}, {hi}) "
                    f"outside [{blo}, {bhi}] or inverted")
            object.__setattr__(self, name, (float(lo), float(hi)))
        object.__setattr__(self, "conditioned_on",
                           tuple(self.conditioned_on))


DEFAULT_PRESETS = {
    "healthy": ClassPreset(
        "healthy", "healthy", f0_hz=(110.0, 220.0), jitter_pct=(0.2, 0.6),
        shimmer_pct=(1.0, 3.0), hnr_db=(20.0, 30.0),
        tremor_rate_hz=(3.0, 6.0), tremor_depth_pct=(0.0, 2.0),
        breathiness=(0.0, 0.2)),
    "hyperfunctional": ClassPreset(
        "hyperfunctional", "pathological", f0_hz=(120.0, 240.0),
        jitter_pct=(2.0, 5.0), shimmer_pct=(4.0, 8.0), hnr_db=(8.0, 15.0),
        tremor_rate_hz=(3.0, 6.0), tremor_depth_pct=(0.0, 3.0),
        breathiness=(0.1, 0.4)),
    "breathy": ClassPreset(
        "breathy", "pathological", f0_hz=(100.0, 200.0),
        jitter_pct=(0.8, 2.0), shimmer_pct=(3.0, 6.0), hnr_db=(0.0, 8.0),
        tremor_rate_hz=(3.0, 6.0), tremor_depth_pct=(0.0, 3.0),
        breathiness=(0.5, 0.9)),
    "tremor_like": ClassPreset(
        "tremor_like", "pathological", f0_hz=(100.0, 200.0),
        jitter_pct=(0.5, 1.5), shimmer_pct=(2.0, 5.0), hnr_db=(15.0, 25.0),
        tremor_rate_hz=(4.0, 8.0), tremor_depth_pct=(8.0, 18.0),
        breathiness=(0.1, 0.3)),
}


def sample_profile(preset, seed):
    """Draw one profile uniformly from a preset's ranges, deterministically.

    Draws happen in _PROFILE_FIELDS order from a generator seeded with seed,
    so (preset, seed) fully determines the result.
    """
    rng = np.random.default_rng(seed)
    values = {}
    for name in _PROFILE_FIELDS:
        lo, hi = getattr(preset, name)
        values[name] = float(rng.uniform(lo, hi)) if hi > lo else lo
    return VoiceProfile(formants=None, **values)


def load_presets(path):
    """Read a {class_name: ranges...} JSON preset file."""
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidConfig(f"cannot read presets {path}: {exc}") from exc
    if not isinstance(obj, dict):
        raise InvalidConfig("preset file must hold an object")
    presets = {}
    for name, spec_dict in obj.items():
        if not isinstance(spec_dict, dict):
            raise InvalidConfig(f"preset {name!r} must be an object")
        try:
            kwargs = {"class_name": name, "label": spec_dict["label"]}
            for fname in _PROFILE_FIELDS:
                lo, hi = spec_dict[fname]
                kwargs[fname] = (float(lo), float(hi))
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidConfig(f"preset {name!r}: {exc}") from exc
        kwargs["conditioned_on"] = tuple(spec_dict.get("conditioned_on", ()))
        presets[name] = ClassPreset(**kwargs)
    return presets


def save_presets(presets, path):
    obj = {}
    for name, p in sorted(presets.items()):
        entry = {"label": p.label}
        for fname in _PROFILE_FIELDS:
            entry[fname] = list(getattr(p, fname))
        if p.conditioned_on:
            entry["conditioned_on"] = list(p.conditioned_on)
        obj[name] = entry
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")


# -- rendering ----------------------------------------------------------------

def _design_sos(formants, fs):
    """Second-order sections for a cascade of resonators, unit gain at each
    center frequency."""
    rows = []
    for center, bw in formants:
        if not (0.0 < center < fs / 2):
            raise InvalidConfig(
                f"formant center {center} Hz outside (0, {fs / 2})")
        r = math.exp(-math.pi * bw / fs)
        theta = 2.0 * math.pi * center / fs
        a1 = -2.0 * r * math.cos(theta)
        a2 = r * r
        b0 = abs(1.0 + a1 * complex(math.cos(-theta), math.sin(-theta))
                 + a2 * complex(math.cos(-2 * theta), math.sin(-2 * theta)))
        rows.append([b0, 0.0, 0.0, 1.0, a1, a2])
    return np.ascontiguousarray(rows, dtype=np.float64)


def _pulse_train(n, fs, f0_hz, sigma_jit, sigma_shim, tremor_rate_hz,
                 tremor_depth, tremor_phase, rng):
    """Glottal flow-derivative excitation plus the open-phase gate.

    Period starts live at fractional sample positions; each period's first
    OPEN_QUOTIENT carries one full sine cycle scaled by the per-period
    amplitude, the rest is closed (zero).
    """
    e = np.zeros(n)
    gate = np.zeros(n)
    t = 0.0
    omega = 2.0 * math.pi * tremor_rate_hz / fs
    while t < n:
        g = 1.0 + tremor_depth * math.sin(omega * t + tremor_phase)
        zj = min(3.0, max(-3.0, rng.standard_normal()))
        zs = min(3.0, max(-3.0, rng.standard_normal()))
        period = fs / (f0_hz * max(0.1, g)) * (1.0 + sigma_jit * zj)
        amp = max(0.05, 1.0 + sigma_shim * zs) * max(0.1, g)
        open_len = OPEN_QUOTIENT * period
        k0 = math.ceil(t)
        k1 = min(math.ceil(t + open_len) - 1, n - 1)
        if k1 >= k0:
            k = np.arange(k0, k1 + 1)
            e[k0:k1 + 1] = amp * np.sin(2.0 * math.pi * (k - t) / open_len)
            gate[k0:k1 + 1] = 1.0
        t += period
    return e, gate


def _render_segment(n, fs, f0_hz, profile, formants, rng, tremor_phase):
    """One voiced segment at the given f0: harmonic part, noise part."""
    sos = _design_sos(formants, fs)
    e, gate = _pulse_train(
        n, fs, f0_hz,
        profile.jitter_pct / 100.0 / _MEAN_ABS_PAIR,
        profile.shimmer_pct / 100.0 / _MEAN_ABS_PAIR,
        profile.tremor_rate_hz, profile.tremor_depth_pct / 100.0,
        tremor_phase, rng)
    voiced = kernels.sos_filter(np.ascontiguousarray(e), sos)
    noise = kernels.sos_filter(
        np.ascontiguousarray(rng.standard_normal(n)), sos)
    b = profile.breathiness
    if b > 0.0:
        noise = noise * ((1.0 - b) + b * gate)
    p_voiced = float(np.mean(voiced ** 2))
    p_noise = float(np.mean(noise ** 2))
    target = p_voiced * 10.0 ** (-profile.hnr_db / 10.0)
    if p_noise > 0.0:
        noise = noise * math.sqrt(target / p_noise)
    return voiced, noise


def synthesize_vowel(profile, vowel, duration_s, sample_rate_hz=16000,
                     seed=0, clip_id=None):
    """Render a sustained vowel from a profile; deterministic in seed."""
    if not 0.5 <= duration_s <= 10.0:
        raise InvalidDuration(
            f"duration {duration_s}s outside [0.5, 10]")
    if vowel not in FORMANT_TABLE:
        raise InvalidConfig(f"unknown vowel {vowel!r}; use one of {VOWELS}")
    fs = sample_rate_hz
    n = int(round(duration_s * fs))
    rng = np.random.default_rng(seed)
    tremor_phase = float(rng.uniform(0.0, 2.0 * math.pi))
    formants = profile.formants or FORMANT_TABLE[vowel]
    voiced, noise = _render_segment(
        n, fs, profile.f0_hz, profile, formants, rng, tremor_phase)
    y = voiced + noise
    y *= PEAK_LEVEL / np.max(np.abs(y))
    return make_clip(clip_id or f"vowel-{vowel}", y, fs)


def synthesize_pseudo_sentence(profile, n_syllables, sample_rate_hz=16000,
                               seed=0, clip_id=None):
    """Render a vowel-string pseudo-sentence.

    Each syllable is a short sustained vowel (120-250 ms) followed by a
    silent gap (30-80 ms); syllable f0 declines linearly from 1.1x to
    0.85x the profile f0 across the sentence.
    """
    if not 3 <= n_syllables <= 40:
        raise InvalidSyllableCount(
            f"n_syllables {n_syllables} outside [3, 40]")
    fs = sample_rate_hz
    rng = np.random.default_rng(seed)
    tremor_phase = float(rng.uniform(0.0, 2.0 * math.pi))
    fade = int(round(0.003 * fs))
    ramp = 0.5 - 0.5 * np.cos(np.pi * np.arange(fade) / fade)
    pieces = []
    for i in range(n_syllables):
        vowel = VOWELS[int(rng.integers(0, len(VOWELS)))]
        dur = float(rng.uniform(0.12, 0.25))
        gap = float(rng.uniform(0.03, 0.08))
        scale = 1.1 + (0.85 - 1.1) * (i / (n_syllables - 1))
        formants = profile.formants or FORMANT_TABLE[vowel]
        n_syl = int(round(dur * fs))
        voiced, noise = _render_segment(
            n_syl, fs, profile.f0_hz * scale, profile, formants, rng,
            tremor_phase)
        seg = voiced + noise
        if n_syl > 2 * fade:  # soften onsets to avoid clicks
            seg[:fade] *= ramp
            seg[-fade:] *= ramp[::-1]
        pieces.append(seg)
        pieces.append(np.zeros(int(round(gap * fs))))
    y = np.concatenate(pieces)
    y *= PEAK_LEVEL / np.max(np.abs(y))
    return make_clip(clip_id or "pseudo-sentence", y, fs)


# -- conditioning -------------------------------------------------------------

def condition_from_reference(clips, fmin=acoustics.DEFAULT_FMIN_HZ,
                             fmax=acoustics.DEFAULT_FMAX_HZ):
    """Build a profile from the median measurements of reference clips.

    Unvoiced clips are skipped; none voiced raises AllUnvoiced. Measured
    values clamp into the valid profile ranges.
    """
    f0s, jits, shims, hnrs = [], [], [], []
    for clip in clips:
        m = acoustics.analyze(clip, fmin, fmax)
        if m.f0_hz is None:
            continue
        f0s.append(m.f0_hz)
        if m.jitter_pct is not None:
            jits.append(m.jitter_pct)
        if m.shimmer_pct is not None:
            shims.append(m.shimmer_pct)
        if m.hnr_db is not None:
            hnrs.append(m.hnr_db)
    if not f0s:
        raise AllUnvoiced("no reference clip yielded a voicing estimate")

    def med(values, default):
        return float(np.median(values)) if values else default

    def clamp(name, v):
        lo, hi = _PROFILE_BOUNDS[name]
        return min(hi, max(lo, v))

    return VoiceProfile(
        f0_hz=clamp("f0_hz", med(f0s, 150.0)),
        jitter_pct=clamp("jitter_pct", med(jits, 0.5)),
        shimmer_pct=clamp("shimmer_pct", med(shims, 2.0)),
        hnr_db=clamp("hnr_db", med(hnrs, 20.0)),
        tremor_rate_hz=4.0, tremor_depth_pct=0.0, breathiness=0.0,
        formants=None)


_SPREAD_FLOOR = {
    "f0_hz": 5.0, "jitter_pct": 0.1, "shimmer_pct": 0.3, "hnr_db": 1.0,
    "tremor_rate_hz": 0.5, "tremor_depth_pct": 0.5, "breathiness": 0.05,
}


def preset_from_profile(class_name, label, profile, rel_spread=0.1,
                        conditioned_on=()):
    """Wrap a single profile into a narrow sampling preset."""
    kwargs = {"class_name": class_name, "label": label,
              "conditioned_on": tuple(conditioned_on)}
    for name in _PROFILE_FIELDS:
        v = getattr(profile, name)
        delta = max(rel_spread * abs(v), _SPREAD_FLOOR[name])
        lo, hi = _PROFILE_BOUNDS[name]
        kwargs[name] = (max(lo, v - delta), min(hi, v + delta))
    return ClassPreset(**kwargs)


# -- balancing plans ----------------------------------------------------------

@dataclass(frozen=True)
class SynthesisPlan:
    """How many synthetic clips each (recording_type, class) needs."""

    key: str  # "label" | "pathology_class"
    counts: dict  # (recording_type, class_value) -> count needed

    def total(self):
        return sum(self.counts.values())


def plan_balancing(records, key="label"):
    """Plan synthetic counts that level every class up to the largest one.

    key selects the grouping field. With key="pathology_class" records
    lacking the field (healthy and unlabeled ones) do not participate.
    Targets are computed per recording type over the classes observed
    anywhere in the records.
    """
    if key not in ("label", "pathology_class"):
        raise InvalidConfig(f"balance key {key!r} invalid")

    def class_of(rec):
        return rec.label if key == "label" else rec.pathology_class

    classes = sorted({class_of(r) for r in records
                      if class_of(r) is not None})
    counts = {}
    for rtype in ("sentence", "vowel"):
        rows = [r for r in records if r.recording_type == rtype]
        if not rows:
            continue
        have = {c: 0 for c in classes}
        for r in rows:
            c = class_of(r)
            if c is not None:
                have[c] += 1
        if not have:
            continue
        target = max(have.values())
        for c in classes:
            counts[(rtype, c)] = target - have[c]
    return SynthesisPlan(key=key, counts=counts)


def execute_plan(plan, presets=None, sample_rate_hz=16000, seed=0,
                 dataset_id="synthetic", language="und"):
    """Generate the clips a plan calls for.

    Returns [(AudioClip, ClipRecord), ...]. Clip ids embed the seed, so a
    re-run with the same seed reproduces the same ids and the same audio
    bytes. Each synthetic clip gets its own speaker and session.
    """
    presets = dict(DEFAULT_PRESETS if presets is None else presets)
    out = []
    for (rtype, class_value), count in sorted(plan.counts.items()):
        if count <= 0:
            continue
        if plan.key == "pathology_class":
            if class_value not in presets:
                raise InvalidConfig(
                    f"no preset for pathology class {class_value!r}")
            candidates = [presets[class_value]]
        else:
            candidates = sorted(
                (p for p in presets.values() if p.label == class_value),
                key=lambda p: p.class_name)
            if not candidates:
                raise InvalidConfig(
                    f"no preset carries label {class_value!r}")
        for i in range(count):
            preset = candidates[i % len(candidates)]
            clip_id = f"syn-{class_value}-{rtype}-{seed}-{i:04d}"
            meta_rng = np.random.default_rng(
                stable_seed(seed, "meta", clip_id))
            profile = sample_profile(
                preset, stable_seed(seed, "profile", clip_id))
            audio_seed = stable_seed(seed, "audio", clip_id)
            if rtype == "vowel":
                vowel = VOWELS[int(meta_rng.integers(0, len(VOWELS)))]
                duration = float(meta_rng.uniform(1.5, 2.5))
                clip = synthesize_vowel(
                    profile, vowel, duration, sample_rate_hz,
                    seed=audio_seed, clip_id=clip_id)
                vowel_label = vowel
            else:
                n_syll = int(meta_rng.integers(8, 13))
                clip = synthesize_pseudo_sentence(
                    profile, n_syll, sample_rate_hz,
                    seed=audio_seed, clip_id=clip_id)
                vowel_label = None
            label = preset.label
            provenance = {"preset": preset.class_name}
            if preset.conditioned_on:
                provenance["conditioned_on"] = list(preset.conditioned_on)
            record = ClipRecord(
                clip_id=clip_id, path=f"{clip_id}.wav",
                dataset_id=dataset_id, speaker_id=f"{clip_id}-spk",
                session_id=f"{clip_id}-ses", recording_type=rtype,
                label=label, origin="synthetic", language=language,
                vowel_label=vowel_label,
                pathology_class=(preset.class_name
                                 if label == "pathological" else None),
                provenance=provenance)
            out.append((clip, record))
    return out
