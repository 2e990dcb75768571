import numpy as np
import pytest

from voicekit import synth
from voicekit.acoustics import estimate_f0
from voicekit.errors import InvalidConfig, InvalidDuration, InvalidSyllableCount

from helpers import make_record


def _profile(**kw):
    base = dict(f0_hz=190.0, jitter_pct=0.5, shimmer_pct=3.0, hnr_db=22.0,
                tremor_rate_hz=0.0, tremor_depth_pct=0.0, breathiness=0.05,
                formants=None)
    base.update(kw)
    return synth.VoiceProfile(**base)


def test_vowel_is_deterministic():
    a = synth.synthesize_vowel(_profile(), "a", 1.0, 16000, seed=5)
    b = synth.synthesize_vowel(_profile(), "a", 1.0, 16000, seed=5)
    c = synth.synthesize_vowel(_profile(), "a", 1.0, 16000, seed=6)
    assert np.array_equal(a.samples, b.samples)
    assert not np.array_equal(a.samples, c.samples)


def test_vowel_duration_and_pitch():
    clip = synth.synthesize_vowel(_profile(f0_hz=170.0), "i", 1.5, 16000,
                                  seed=2)
    assert clip.sample_rate_hz == 16000
    assert abs(clip.duration_s - 1.5) < 0.02
    f0 = estimate_f0(clip)
    assert f0 is not None
    assert abs(f0 - 170.0) / 170.0 < 0.03


def test_vowels_differ_spectrally():
    a = synth.synthesize_vowel(_profile(), "a", 1.0, 16000, seed=1)
    i = synth.synthesize_vowel(_profile(), "i", 1.0, 16000, seed=1)
    assert not np.array_equal(a.samples, i.samples)


def test_sentence_has_pauses_and_voicing():
    clip = synth.synthesize_pseudo_sentence(_profile(), 8, 16000, seed=3)
    assert clip.duration_s > 1.0
    # energy profile must alternate: some frames near-silent, some loud
    frames = clip.samples[:clip.n_samples // 160 * 160].reshape(-1, 160)
    rms = np.sqrt((frames ** 2).mean(axis=1))
    assert rms.min() < 0.01
    assert rms.max() > 0.05


def test_bad_arguments():
    with pytest.raises(InvalidDuration):
        synth.synthesize_vowel(_profile(), "a", 0.0, 16000, seed=1)
    with pytest.raises(InvalidSyllableCount):
        synth.synthesize_pseudo_sentence(_profile(), 0, 16000, seed=1)
    with pytest.raises(Exception):
        synth.synthesize_vowel(_profile(), "q", 1.0, 16000, seed=1)


def test_sample_profile_spread():
    preset = synth.DEFAULT_PRESETS["healthy"]
    p1 = synth.sample_profile(preset, seed=1)
    p2 = synth.sample_profile(preset, seed=2)
    assert p1.f0_hz != p2.f0_hz
    assert synth.sample_profile(preset, seed=1) == p1


def test_plan_balancing_levels_classes():
    recs = ([make_record(clip_id=f"h{i}", speaker_id=f"h{i}")
             for i in range(6)]
            + [make_record(clip_id=f"p{i}", speaker_id=f"p{i}",
                           label="pathological",
                           pathology_class="breathy") for i in range(2)])
    plan = plan = synth.plan_balancing(recs, key="label")
    assert plan.counts[("vowel", "pathological")] == 4
    assert plan.counts.get(("vowel", "healthy"), 0) == 0
    assert plan.total() == 4


def test_plan_balancing_pathology_key_skips_unlabeled():
    recs = ([make_record(clip_id=f"h{i}", speaker_id=f"h{i}")
             for i in range(5)]
            + [make_record(clip_id="p0", speaker_id="p0",
                           label="pathological",
                           pathology_class="breathy"),
               make_record(clip_id="p1", speaker_id="p1",
                           label="pathological",
                           pathology_class="tremor_like"),
               make_record(clip_id="p2", speaker_id="p2",
                           label="pathological",
                           pathology_class="tremor_like")])
    plan = synth.plan_balancing(recs, key="pathology_class")
    # healthy rows carry no pathology_class: they are not a class here
    assert plan.counts[("vowel", "breathy")] == 1
    assert plan.counts.get(("vowel", "tremor_like"), 0) == 0
    with pytest.raises(InvalidConfig):
        synth.plan_balancing(recs, key="speaker_id")


def test_execute_plan_outputs_labeled_records():
    recs = ([make_record(clip_id=f"h{i}", speaker_id=f"h{i}")
             for i in range(3)]
            + [make_record(clip_id="p0", speaker_id="p0",
                           label="pathological",
                           pathology_class="breathy")])
    plan = synth.plan_balancing(recs, key="label")
    out = synth.execute_plan(plan, sample_rate_hz=16000, seed=9)
    assert len(out) == plan.total() == 2
    for clip, rec in out:
        assert rec.origin == "synthetic"
        assert rec.label == "pathological"
        assert rec.recording_type == "vowel"
        assert clip.sample_rate_hz == 16000
        assert clip.clip_id == rec.clip_id
    # deterministic under the same seed
    again = synth.execute_plan(plan, sample_rate_hz=16000, seed=9)
    assert all(np.array_equal(a[0].samples, b[0].samples)
               for a, b in zip(out, again))


def test_presets_roundtrip(tmp_path):
    path = tmp_path / "presets.json"
    synth.save_presets(synth.DEFAULT_PRESETS, path)
    back = synth.load_presets(path)
    assert set(back) == set(synth.DEFAULT_PRESETS)
    for name, preset in back.items():
        assert preset == synth.DEFAULT_PRESETS[name]


def test_condition_from_reference(tiny_corpus):
    from voicekit.audio import load_wav
    clips = []
    for rec in tiny_corpus["records"][:4]:
        if rec.recording_type == "vowel":
            clips.append(load_wav(tiny_corpus["root"] / rec.path,
                                  clip_id=rec.clip_id))
    profile = synth.condition_from_reference(clips)
    assert 60.0 < profile.f0_hz < 500.0
    assert profile.jitter_pct >= 0.0
    preset = synth.preset_from_profile("custom", "pathological", profile)
    assert preset.class_name == "custom"
    lo, hi = preset.f0_hz
    assert lo <= profile.f0_hz <= hi
