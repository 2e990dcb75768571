import json

import numpy as np
import pytest

from voicekit import experts as ex
from voicekit.errors import (DegenerateLabels, DimensionMismatch,
                             IncompatibleFeatureConfig, InconsistentClassNames,
                             InvalidConfig, MalformedHeader, NonFiniteFeatures,
                             NotNormalized, SchemaViolation, TrainingDiverged,
                             UnnormalizedBeyondTolerance)


def _blobs(n_per=30, d=8, sep=6.0, seed=0, classes=("healthy",
                                                    "pathological")):
    rng = np.random.default_rng(seed)
    X, y = [], []
    for i, cls in enumerate(classes):
        center = np.zeros(d)
        center[i % d] = sep
        X.append(center + rng.standard_normal((n_per, d)))
        y.extend([cls] * n_per)
    return np.vstack(X), y


def _cfg(**kw):
    base = dict(epochs=60, seed=0, hidden_units=16)
    base.update(kw)
    return ex.TrainConfig(**base)


def test_training_converges_on_blobs():
    X, y = _blobs()
    model = ex.train_expert(X, y, _cfg())
    probs = ex.predict_many(model, X)
    pred = [model.class_names[i] for i in probs.argmax(axis=1)]
    assert np.mean([p == t for p, t in zip(pred, y)]) == 1.0
    assert model.train_meta["final_loss"] < model.train_meta["initial_loss"]


def test_training_is_bit_reproducible():
    X, y = _blobs(seed=3)
    m1 = ex.train_expert(X, y, _cfg(seed=9))
    m2 = ex.train_expert(X, y, _cfg(seed=9))
    for attr in ("mean", "std", "w1", "b1", "w2", "b2"):
        assert np.array_equal(getattr(m1, attr), getattr(m2, attr))
    assert m1.train_meta == m2.train_meta


def test_class_names_sorted_by_default():
    X, y = _blobs(classes=("zeta", "alpha"))
    model = ex.train_expert(X, y, _cfg())
    assert model.class_names == ("alpha", "zeta")


def test_degenerate_labels():
    X, y = _blobs()
    with pytest.raises(DegenerateLabels):
        ex.train_expert(X, ["healthy"] * len(y), _cfg())
    with pytest.raises(DegenerateLabels):
        # a class with a single example cannot be learned honestly
        ex.train_expert(X[:31], ["healthy"] * 30 + ["pathological"], _cfg())
    with pytest.raises(DegenerateLabels):
        ex.train_expert(X, y, _cfg(), class_names=("healthy", "other"))


def test_non_finite_features_rejected():
    X, y = _blobs()
    X = X.copy()
    X[3, 2] = np.nan
    with pytest.raises(NonFiniteFeatures):
        ex.train_expert(X, y, _cfg())


def test_invalid_config():
    with pytest.raises(InvalidConfig):
        ex.TrainConfig(learning_rate=-1.0)
    with pytest.raises(InvalidConfig):
        ex.TrainConfig(epochs=0)
    with pytest.raises(InvalidConfig):
        ex.TrainConfig(hidden_units=0)


def test_predict_shapes_and_normalization():
    X, y = _blobs()
    model = ex.train_expert(X, y, _cfg())
    probs = ex.predict_many(model, X[:5])
    assert probs.shape == (5, 2)
    assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-12)
    with pytest.raises(DimensionMismatch):
        ex.predict_many(model, X[:5, :4])
    pred = ex.predict(model, X[0], clip_id="c1")
    assert pred.clip_id == "c1"
    assert pred.top_class() in model.class_names


def test_prediction_validation():
    with pytest.raises(NotNormalized):
        ex.Prediction("c", "e", ("a", "b"), np.array([0.5, 0.6]))
    with pytest.raises(NotNormalized):
        ex.Prediction("c", "e", ("a", "b"), np.array([-0.2, 1.2]))
    # drift within 1e-6 is renormalized exactly
    p = ex.Prediction("c", "e", ("a", "b"),
                      np.array([0.5000001, 0.5000001]))
    assert p.probs.sum() == 1.0
    assert not p.probs.flags.writeable


def test_save_load_roundtrip_bit_exact(tmp_path):
    X, y = _blobs()
    model = ex.train_expert(X, y, _cfg(), expert_id="vowel-det",
                            feature_config_hash="abc123")
    path = tmp_path / "m.vkem"
    ex.save_model(model, path)
    back = ex.load_model(path)
    assert back.expert_id == model.expert_id
    assert back.class_names == model.class_names
    assert back.feature_config_hash == "abc123"
    assert back.provenance_tag == model.provenance_tag
    assert back.train_meta == model.train_meta
    for attr in ("mean", "std", "w1", "b1", "w2", "b2"):
        a, b = getattr(model, attr), getattr(back, attr)
        assert a.dtype == b.dtype == np.float64
        assert np.array_equal(a, b)


def test_load_model_rejects_junk(tmp_path):
    path = tmp_path / "junk.vkem"
    path.write_bytes(b"not a model file")
    with pytest.raises(MalformedHeader):
        ex.load_model(path)


def test_warm_start_copies_trunk():
    X, y = _blobs()
    detector = ex.train_expert(X, y, _cfg(), expert_id="det")
    classes = ("breathy", "hyperfunctional", "tremor_like")
    warm = ex.warm_start_classifier(detector, classes, _cfg(),
                                    expert_id="cls")
    assert warm.class_names == classes
    for attr in ("mean", "std", "w1", "b1"):
        assert np.array_equal(getattr(warm, attr), getattr(detector, attr))
    assert warm.w2.shape == (detector.w1.shape[1], 3)
    assert np.all(warm.b2 == 0.0)
    assert warm.provenance_tag.endswith("+warmstart:detection")
    # hidden activations identical by construction
    h1 = ex.hidden_activations(detector, X[:4])
    h2 = ex.hidden_activations(warm, X[:4])
    assert np.array_equal(h1, h2)
    with pytest.raises(DegenerateLabels):
        ex.warm_start_classifier(detector, ("only",), _cfg())


def test_warm_start_training_keeps_standardization():
    X, y = _blobs(seed=5)
    detector = ex.train_expert(X, y, _cfg())
    Xc, yc = _blobs(seed=6, classes=("breathy", "tremor_like"))
    warm = ex.warm_start_classifier(detector, ("breathy", "tremor_like"),
                                    _cfg())
    final = ex.train_expert(Xc, yc, _cfg(), init_model=warm,
                            class_names=("breathy", "tremor_like"))
    # the trunk standardization comes from the init model, not from Xc
    assert np.array_equal(final.mean, detector.mean)
    assert np.array_equal(final.std, detector.std)


def test_incompatible_feature_hash():
    X, y = _blobs()
    a = ex.train_expert(X, y, _cfg(), feature_config_hash="aaa")
    with pytest.raises(IncompatibleFeatureConfig):
        ex.train_expert(X, y, _cfg(), feature_config_hash="bbb",
                        init_model=a)


def test_training_diverges_on_huge_lr():
    X, y = _blobs()
    with pytest.raises(TrainingDiverged):
        ex.train_expert(X, y, _cfg(learning_rate=1e6, epochs=10))


def test_gradient_check_on_trained_model():
    X, y = _blobs(n_per=20)
    model = ex.train_expert(X, y, _cfg(epochs=10))
    err = ex.gradient_check(model, X, y, seed=1)
    assert err < 1e-4


def test_predictions_file_roundtrip(tmp_path):
    X, y = _blobs()
    model = ex.train_expert(X, y, _cfg(), expert_id="e1")
    preds = [ex.predict(model, X[i], clip_id=f"c{i}") for i in range(4)]
    path = tmp_path / "preds.jsonl"
    ex.write_predictions(preds, path)
    back = ex.load_external_predictions(path)
    assert [p.clip_id for p in back] == [p.clip_id for p in preds]
    for a, b in zip(preds, back):
        assert np.allclose(a.probs, b.probs, atol=1e-15)
        assert a.class_names == b.class_names


def _pred_line(**kw):
    base = {"clip_id": "c1", "expert_id": "e1", "recording_type": "vowel",
            "provenance": "builtin", "class_names": ["a", "b"],
            "probs": [0.4, 0.6]}
    base.update(kw)
    return json.dumps(base)


def test_external_predictions_schema_errors(tmp_path):
    path = tmp_path / "p.jsonl"

    def load(*lines):
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return ex.load_external_predictions(path)

    with pytest.raises(SchemaViolation, match="line 1"):
        load(_pred_line(recording_type="chant"))
    with pytest.raises(SchemaViolation):
        load(_pred_line(probs=[0.4, 0.6, 0.0]))
    with pytest.raises(SchemaViolation):
        load(_pred_line(probs=[-0.1, 1.1]))
    with pytest.raises(SchemaViolation):
        load('{"clip_id": "c1"}')
    with pytest.raises(SchemaViolation):
        load(_pred_line(extra_key=1))
    with pytest.raises(UnnormalizedBeyondTolerance, match="line 2"):
        load(_pred_line(), _pred_line(clip_id="c2", probs=[0.7, 0.4]))
    with pytest.raises(InconsistentClassNames):
        load(_pred_line(),
             _pred_line(clip_id="c2", class_names=["b", "a"]))
    # mild drift is renormalized
    got = load(_pred_line(probs=[0.4001, 0.6]))
    assert got[0].probs.sum() == 1.0
