import numpy as np
import pytest

from voicekit import features as ft
from voicekit.audio import make_clip
from voicekit.errors import ClipTooShort, TooFewFrames


def _clip(seconds=1.0, fs=16000, seed=0):
    rng = np.random.default_rng(seed)
    t = np.arange(int(seconds * fs)) / fs
    x = 0.4 * np.sin(2 * np.pi * 220 * t) + 0.02 * rng.standard_normal(t.size)
    return make_clip("feat", np.clip(x, -1, 1), fs)


def test_mel_scale_roundtrip():
    f = np.array([0.0, 100.0, 1000.0, 4000.0, 8000.0])
    assert np.allclose(ft.mel_to_hz(ft.hz_to_mel(f)), f, atol=1e-9)


def test_mel_filterbank_covers_band():
    cfg = ft.MfccConfig()
    nfft = 512
    fb = ft.mel_filterbank(cfg, nfft // 2 + 1, 16000, nfft)
    assert fb.shape == (64, 257)
    # interior bins are covered by at least one triangle
    coverage = fb.sum(axis=0)
    assert np.all(coverage[5:-5] > 0.0)
    # each filter is normalized to unit peak or unit area, hence bounded
    assert fb.min() >= 0.0


def test_log_mel_and_mfcc_shapes():
    clip = _clip()
    lm = ft.log_mel(clip)
    mf = ft.mfcc(clip)
    n_frames = lm.data.shape[0]
    assert lm.data.shape == (n_frames, 64)
    assert mf.data.shape == (n_frames, 40)
    assert lm.kind == "logmel"
    assert mf.kind == "mfcc"
    assert mf.data.dtype == np.float32
    # 25 ms window, 10 ms hop over 1 s: close to 98 frames
    assert 90 <= n_frames <= 100


def test_features_deterministic():
    a = ft.mfcc(_clip(seed=1))
    b = ft.mfcc(_clip(seed=1))
    assert np.array_equal(a.data, b.data)


def test_too_short_clip_raises():
    clip = make_clip("tiny", np.full(100, 0.1), 16000)
    with pytest.raises(ClipTooShort):
        ft.mfcc(clip)
    # one window's worth yields a single frame: enough for mfcc but
    # not for mean/std pooling
    one = make_clip("one", np.full(400, 0.1), 16000)
    with pytest.raises(TooFewFrames):
        ft.pool_stats(ft.mfcc(one))


def test_pool_stats_mean_and_std():
    m = ft.mfcc(_clip())
    pooled = ft.pool_stats(m)
    assert pooled.shape == (80,)
    assert pooled.dtype == np.float64
    data = m.data.astype(np.float64)
    assert np.allclose(pooled[:40], data.mean(axis=0), atol=1e-6)
    assert np.allclose(pooled[40:], data.std(axis=0), atol=1e-6)


def test_config_hash_sensitivity():
    frame = ft.FrameSpec()
    cfg = ft.MfccConfig()
    h = ft.config_hash("mfcc", frame, cfg, 16000)
    assert h == ft.config_hash("mfcc", frame, cfg, 16000)
    assert h != ft.config_hash("logmel", frame, cfg, 16000)
    assert h != ft.config_hash("mfcc", frame, cfg, 22050)
    assert h != ft.config_hash("mfcc", ft.FrameSpec(win_ms=32.0), cfg, 16000)
    assert h != ft.config_hash("mfcc", frame,
                               ft.MfccConfig(n_coeffs=13), 16000)


def test_cache_roundtrip(tmp_path):
    m = ft.mfcc(_clip())
    path = tmp_path / "feat.vkfc"
    ft.write_cache(m, path)
    back = ft.read_cache(path)
    assert back.kind == m.kind
    assert back.sample_rate_hz == m.sample_rate_hz
    assert back.win_ms == m.win_ms
    assert back.hop_ms == m.hop_ms
    assert back.config_hash == m.config_hash
    assert np.array_equal(back.data, m.data)


def test_cache_rejects_junk(tmp_path):
    path = tmp_path / "bad.vkfc"
    path.write_bytes(b"VKFCgarbagegarbagegarbage")
    with pytest.raises(Exception):
        ft.read_cache(path)
