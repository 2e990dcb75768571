"""Shared corpus builders for the test suite.

Everything here synthesizes audio with the package's own generator, writes
real wav files plus a JSONL manifest, and returns paths. Corpora are small
by default; the desk corpus used by the end-to-end tests is 60 speakers.
"""

from pathlib import Path

from voicekit import synth
from voicekit.audio import save_wav
from voicekit.corpus import ClipRecord, serialize_manifest
from voicekit.util import stable_seed

PATH_CLASSES = ("hyperfunctional", "breathy", "tremor_like")
VOWELS = ("a", "i", "u")


def make_record(**kw):
    base = dict(clip_id="c0", path="c0.wav", dataset_id="test",
                speaker_id="s0", session_id="s1", recording_type="vowel",
                label="healthy", origin="real", language="it")
    base.update(kw)
    return ClipRecord(**base)


def _speaker_rows(root, speaker, preset, seed, session="s1", fs=16000,
                  vowel_s=2.0, n_syllables=8, vowels=VOWELS):
    profile = synth.sample_profile(preset, seed=seed)
    label = preset.label
    pclass = preset.class_name if label == "pathological" else None
    rows = []

    cid = f"{speaker}-sent"
    clip = synth.synthesize_pseudo_sentence(
        profile, n_syllables, fs, seed=stable_seed(seed, "sent"),
        clip_id=cid)
    save_wav(clip, root / f"{cid}.wav")
    rows.append(ClipRecord(
        clip_id=cid, path=f"{cid}.wav", dataset_id="desk",
        speaker_id=speaker, session_id=session, recording_type="sentence",
        label=label, origin="real", language="it",
        pathology_class=pclass))

    for v in vowels:
        cid = f"{speaker}-vow-{v}"
        clip = synth.synthesize_vowel(
            profile, v, vowel_s, fs, seed=stable_seed(seed, "vow", v),
            clip_id=cid)
        save_wav(clip, root / f"{cid}.wav")
        rows.append(ClipRecord(
            clip_id=cid, path=f"{cid}.wav", dataset_id="desk",
            speaker_id=speaker, session_id=session, recording_type="vowel",
            label=label, origin="real", language="it", vowel_label=v,
            pathology_class=pclass))
    return rows


def write_manifest(records, path):
    path = Path(path)
    path.write_text(serialize_manifest(records), encoding="utf-8")
    return path


def build_corpus(root, n_healthy, n_path, seed=100, vowel_s=2.0,
                 n_syllables=8, vowels=VOWELS):
    """Synthesize a speaker-per-row corpus under root; returns manifest path.

    Healthy speakers are h00, h01, ...; pathological speakers p00, p01, ...
    cycle through the three pathological presets. One session per speaker,
    one pseudo-sentence plus len(vowels) sustained vowels each.
    """
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    records = []
    for i in range(n_healthy):
        records.extend(_speaker_rows(
            root, f"h{i:02d}", synth.DEFAULT_PRESETS["healthy"],
            seed=stable_seed(seed, "h", i), vowel_s=vowel_s,
            n_syllables=n_syllables, vowels=vowels))
    for i in range(n_path):
        preset = synth.DEFAULT_PRESETS[PATH_CLASSES[i % len(PATH_CLASSES)]]
        records.extend(_speaker_rows(
            root, f"p{i:02d}", preset, seed=stable_seed(seed, "p", i),
            vowel_s=vowel_s, n_syllables=n_syllables, vowels=vowels))
    return write_manifest(records, root / "manifest.jsonl"), records


def build_desk_corpus(root, seed=200):
    """The 60-speaker evaluation corpus: 30 healthy, 30 pathological."""
    return build_corpus(root, 30, 30, seed=seed)


def add_synthetic_rows(root, records, n_per_class=8, seed=500, fs=16000,
                       classes=("healthy", "hyperfunctional")):
    """Append standalone synthetic rows (no conditioning parent)."""
    root = Path(root)
    out = list(records)
    for cls in classes:
        preset = synth.DEFAULT_PRESETS[cls]
        for j in range(n_per_class):
            prof = synth.sample_profile(preset, seed=stable_seed(seed, cls, j))
            for rtype in ("sentence", "vowel"):
                cid = f"syn-{cls}-{rtype}-{j:02d}"
                if rtype == "sentence":
                    clip = synth.synthesize_pseudo_sentence(
                        prof, 8, fs, seed=stable_seed(seed, cid),
                        clip_id=cid)
                else:
                    clip = synth.synthesize_vowel(
                        prof, "a", 2.0, fs, seed=stable_seed(seed, cid),
                        clip_id=cid)
                save_wav(clip, root / f"{cid}.wav")
                out.append(ClipRecord(
                    clip_id=cid, path=f"{cid}.wav", dataset_id="synthetic",
                    speaker_id=f"synth-{cls}-{j:02d}", session_id="s1",
                    recording_type=rtype, label=preset.label,
                    origin="synthetic", language="und",
                    vowel_label="a" if rtype == "vowel" else None,
                    pathology_class=(cls if preset.label == "pathological"
                                     else None),
                    provenance={"preset": cls}))
    return write_manifest(out, root / "manifest.jsonl"), out
