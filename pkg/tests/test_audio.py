import numpy as np
import pytest

from voicekit.audio import (AudioClip, ClippingWarning, load_wav, make_clip,
                            resample, save_wav, wav_duration)
from voicekit.errors import (EmptyAudio, MalformedHeader, UnsupportedRate)


def _tone(freq, fs, seconds=1.0, amp=0.5):
    t = np.arange(int(seconds * fs)) / fs
    return amp * np.sin(2 * np.pi * freq * t)


def test_make_clip_basic():
    clip = make_clip("x", _tone(220, 16000), 16000)
    assert clip.clip_id == "x"
    assert clip.sample_rate_hz == 16000
    assert clip.samples.dtype == np.float64
    assert not clip.samples.flags.writeable


def test_make_clip_rejects_empty_and_bad_rate():
    with pytest.raises(EmptyAudio):
        make_clip("x", np.array([]), 16000)
    with pytest.raises(UnsupportedRate):
        AudioClip("x", np.zeros(10) + 0.1, 12345)
    with pytest.raises(ValueError):
        make_clip("x", np.array([0.1, np.nan]), 16000)


def test_make_clip_warns_on_heavy_clipping():
    x = _tone(220, 16000, amp=2.0)
    with pytest.warns(ClippingWarning):
        clip = make_clip("hot", x, 16000)
    assert float(np.max(np.abs(clip.samples))) <= 1.0


def test_wav_roundtrip_pcm16(tmp_path):
    x = _tone(220, 16000)
    clip = make_clip("rt", x, 16000)
    path = tmp_path / "rt.wav"
    save_wav(clip, path)
    back = load_wav(path, clip_id="rt")
    assert back.sample_rate_hz == 16000
    assert back.samples.size == x.size
    # 16-bit quantization error only
    assert np.max(np.abs(back.samples - clip.samples)) <= 1.0 / 32767
    assert wav_duration(path) == pytest.approx(1.0, abs=1e-6)


def test_save_then_load_is_stable(tmp_path):
    clip = make_clip("s", _tone(150, 16000), 16000)
    p1 = tmp_path / "a.wav"
    p2 = tmp_path / "b.wav"
    save_wav(clip, p1)
    once = load_wav(p1)
    save_wav(once, p2)
    twice = load_wav(p2)
    assert np.array_equal(once.samples, twice.samples)


def test_load_rejects_junk(tmp_path):
    path = tmp_path / "junk.wav"
    path.write_bytes(b"this is not audio at all, not even close")
    with pytest.raises(MalformedHeader):
        load_wav(path)


def test_resample_preserves_tone(tmp_path):
    fs_in, fs_out, freq = 16000, 22050, 220.0
    clip = make_clip("r", _tone(freq, fs_in, seconds=2.0), fs_in)
    out = resample(clip, fs_out)
    assert out.sample_rate_hz == fs_out
    assert abs(out.samples.size / fs_out - 2.0) < 0.01
    # dominant FFT bin must stay at the tone frequency
    spec = np.abs(np.fft.rfft(out.samples * np.hanning(out.samples.size)))
    peak_hz = np.argmax(spec) * fs_out / out.samples.size
    assert abs(peak_hz - freq) < 2.0


def test_resample_identity():
    clip = make_clip("same", _tone(220, 16000), 16000)
    assert resample(clip, 16000) is clip
    with pytest.raises(UnsupportedRate):
        resample(clip, 12345)


def test_clip_samples_immutable(tone):
    with pytest.raises(ValueError):
        tone.samples[0] = 1.0
