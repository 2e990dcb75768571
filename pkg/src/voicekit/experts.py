"""Per-recording-type expert classifiers.

An expert is a single-hidden-layer softmax MLP over pooled feature vectors,
trained full-batch with momentum gradient descent and L2 weight decay.
Inputs are z-scored with statistics frozen from the training fold and stored
inside the model, so prediction needs no side information.

Warm starting copies the trained hidden layer (and the standardization
statistics that define its input space) into a fresh model with a new output
head; training then proceeds normally. External predictions produced by any
other system enter through a JSONL adapter that enforces normalization and a
consistent, order-sensitive class list.
"""

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from voicekit.errors import (DegenerateLabels, DimensionMismatch,
                             IncompatibleFeatureConfig,
                             InconsistentClassNames, InvalidConfig, IoFailure,
                             MalformedHeader, NonFiniteFeatures,
                             NotNormalized, SchemaViolation, TrainingDiverged,
                             UnnormalizedBeyondTolerance)

_MODEL_MAGIC = b"VKEM"
_MODEL_VERSION = 1

_EXTERNAL_KEYS = ("clip_id", "expert_id", "recording_type", "provenance",
                  "class_names", "probs")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.05
    momentum: float = 0.9
    epochs: int = 200
    l2: float = 1e-4
    hidden_units: int = 64
    init_scale: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise InvalidConfig("learning_rate must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise InvalidConfig("momentum must be in [0, 1)")
        if self.epochs < 1:
            raise InvalidConfig("epochs must be >= 1")
        if self.l2 < 0:
            raise InvalidConfig("l2 must be >= 0")
        if self.hidden_units < 1:
            raise InvalidConfig("hidden_units must be >= 1")
        if self.init_scale <= 0:
            raise InvalidConfig("init_scale must be positive")


@dataclass(frozen=True)
class Prediction:
    """One probability vector over class_names for one clip."""

    clip_id: str
    expert_id: str
    class_names: tuple
    probs: np.ndarray
    recording_type: str = ""
    provenance: str = ""

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        names = tuple(self.class_names)
        if probs.ndim != 1 or probs.size != len(names):
            raise DimensionMismatch(
                f"{probs.size} probs for {len(names)} classes")
        if np.any(probs < -1e-12):
            raise NotNormalized(f"negative probability in {probs}")
        total = float(probs.sum())
        if abs(total - 1.0) > 1e-6:
            raise NotNormalized(f"probabilities sum to {total}")
        probs = np.clip(probs, 0.0, None) / probs.sum()
        probs.flags.writeable = False
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "class_names", names)

    def top_class(self):
        return self.class_names[int(np.argmax(self.probs))]


@dataclass(frozen=True)
class ExpertModel:
    expert_id: str
    recording_type: str
    class_names: tuple
    feature_config_hash: str
    provenance_tag: str
    mean: np.ndarray
    std: np.ndarray
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    train_meta: dict = field(default_factory=dict)

    @property
    def n_inputs(self):
        return self.w1.shape[0]

    @property
    def n_hidden(self):
        return self.w1.shape[1]


def _softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def hidden_activations(model, X):
    """ReLU hidden layer outputs for standardized inputs."""
    X = np.asarray(X, dtype=np.float64)
    z = (X - model.mean) / model.std
    return np.maximum(0.0, z @ model.w1 + model.b1)


def _loss_and_grads(params, X_std, onehot, l2):
    w1, b1, w2, b2 = params
    n = X_std.shape[0]
    a1 = X_std @ w1 + b1
    h = np.maximum(0.0, a1)
    logits = h @ w2 + b2
    probs = _softmax(logits)
    eps = 1e-300
    ce = -np.mean(np.log(np.sum(probs * onehot, axis=1) + eps))
    loss = ce + 0.5 * l2 * (float(np.sum(w1 * w1)) + float(np.sum(w2 * w2)))
    dlogits = (probs - onehot) / n
    gw2 = h.T @ dlogits + l2 * w2
    gb2 = dlogits.sum(axis=0)
    dh = dlogits @ w2.T
    da1 = dh * (a1 > 0)
    gw1 = X_std.T @ da1 + l2 * w1
    gb1 = da1.sum(axis=0)
    return loss, (gw1, gb1, gw2, gb2)


def _validate_training_data(X, labels, class_names):
    if not np.all(np.isfinite(X)):
        raise NonFiniteFeatures("training features contain NaN/inf")
    if len(labels) != X.shape[0]:
        raise DimensionMismatch(
            f"{len(labels)} labels for {X.shape[0]} feature rows")
    counts = {}
    for lab in labels:
        counts[lab] = counts.get(lab, 0) + 1
    unknown = set(counts) - set(class_names)
    if unknown:
        raise DegenerateLabels(
            f"labels {sorted(unknown)} not in class_names {class_names}")
    if len(class_names) < 2:
        raise DegenerateLabels("need at least two classes")
    thin = [c for c in class_names if counts.get(c, 0) < 2]
    if thin:
        raise DegenerateLabels(
            f"classes {thin} have fewer than 2 training examples")


def train_expert(features_matrix, labels, cfg=TrainConfig(),
                 recording_type="sentence", expert_id=None, class_names=None,
                 feature_config_hash="", provenance_tag="builtin",
                 init_model=None):
    """Train an expert on pooled feature rows.

    class_names defaults to the sorted distinct labels. With init_model the
    hidden layer, standardization statistics and (when the class list
    matches) the output head start from that model instead of random
    initialization; statistics are NOT recomputed, keeping the hidden
    representation aligned with the donor model.
    """
    X = np.asarray(features_matrix, dtype=np.float64)
    if X.ndim != 2:
        raise DimensionMismatch(f"features must be 2-d, got {X.shape}")
    names = tuple(class_names) if class_names else tuple(sorted(set(labels)))
    _validate_training_data(X, labels, names)
    n, d = X.shape
    k = len(names)
    if expert_id is None:
        expert_id = f"{recording_type}-expert"

    if init_model is not None:
        if init_model.n_inputs != d:
            raise DimensionMismatch(
                f"init model expects {init_model.n_inputs} inputs, data "
                f"has {d}")
        if (init_model.feature_config_hash and feature_config_hash
                and init_model.feature_config_hash != feature_config_hash):
            raise IncompatibleFeatureConfig(
                "init model was trained under a different feature config")
        mean = init_model.mean.copy()
        std = init_model.std.copy()
        w1 = init_model.w1.copy()
        b1 = init_model.b1.copy()
        if init_model.class_names == names:
            w2 = init_model.w2.copy()
            b2 = init_model.b2.copy()
        else:
            rng = np.random.default_rng(cfg.seed)
            a2 = cfg.init_scale * np.sqrt(6.0 / cfg.hidden_units)
            w2 = rng.uniform(-a2, a2, size=(w1.shape[1], k))
            b2 = np.zeros(k)
        if not feature_config_hash:
            feature_config_hash = init_model.feature_config_hash
    else:
        mean = X.mean(axis=0)
        std = X.std(axis=0, ddof=0)
        std = np.where(std < 1e-8, 1.0, std)
        rng = np.random.default_rng(cfg.seed)
        a1 = cfg.init_scale * np.sqrt(6.0 / d)
        a2 = cfg.init_scale * np.sqrt(6.0 / cfg.hidden_units)
        w1 = rng.uniform(-a1, a1, size=(d, cfg.hidden_units))
        b1 = np.zeros(cfg.hidden_units)
        w2 = rng.uniform(-a2, a2, size=(cfg.hidden_units, k))
        b2 = np.zeros(k)

    X_std = (X - mean) / std
    index = {c: i for i, c in enumerate(names)}
    onehot = np.zeros((n, k))
    onehot[np.arange(n), [index[lab] for lab in labels]] = 1.0

    params = [w1, b1, w2, b2]
    velocity = [np.zeros_like(p) for p in params]
    initial_loss = None
    loss = None
    for _ in range(cfg.epochs):
        loss, grads = _loss_and_grads(params, X_std, onehot, cfg.l2)
        if not np.isfinite(loss):
            raise TrainingDiverged(f"loss became {loss}")
        if initial_loss is None:
            initial_loss = loss
        for p, v, g in zip(params, velocity, grads):
            v *= cfg.momentum
            v -= cfg.learning_rate * g
            p += v
    final_loss, _ = _loss_and_grads(params, X_std, onehot, cfg.l2)
    if not np.isfinite(final_loss):
        raise TrainingDiverged(f"loss became {final_loss}")
    if final_loss >= initial_loss:
        raise TrainingDiverged(
            f"loss failed to improve: {initial_loss:.6f} -> "
            f"{final_loss:.6f}")
    return ExpertModel(
        expert_id=expert_id, recording_type=recording_type,
        class_names=names, feature_config_hash=feature_config_hash,
        provenance_tag=provenance_tag, mean=mean, std=std,
        w1=params[0], b1=params[1], w2=params[2], b2=params[3],
        train_meta={"initial_loss": float(initial_loss),
                    "final_loss": float(final_loss),
                    "epochs": cfg.epochs, "n_examples": n})


def predict_many(model, X):
    """Probability matrix (n, n_classes) for feature rows."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.n_inputs:
        raise DimensionMismatch(
            f"features shape {X.shape} does not match model input "
            f"{model.n_inputs}")
    h = hidden_activations(model, X)
    return _softmax(h @ model.w2 + model.b2)


def predict(model, feature_vec, clip_id=""):
    vec = np.asarray(feature_vec, dtype=np.float64)
    if vec.ndim != 1 or vec.size != model.n_inputs:
        raise DimensionMismatch(
            f"vector of {vec.size} values for model input {model.n_inputs}")
    probs = predict_many(model, vec[None, :])[0]
    return Prediction(
        clip_id=clip_id, expert_id=model.expert_id,
        class_names=model.class_names, probs=probs,
        recording_type=model.recording_type,
        provenance=model.provenance_tag)


def warm_start_classifier(detector, class_names, cfg=TrainConfig(),
                          expert_id=None):
    """New model reusing a detector's hidden layer for a different task.

    The returned model keeps the donor's standardization and hidden weights
    bit-for-bit (hidden activations match the donor exactly) and gets a
    freshly initialized output head over class_names.
    """
    names = tuple(class_names)
    if len(names) < 2:
        raise DegenerateLabels("need at least two classes to warm start")
    rng = np.random.default_rng(cfg.seed)
    a2 = cfg.init_scale * np.sqrt(6.0 / detector.n_hidden)
    w2 = rng.uniform(-a2, a2, size=(detector.n_hidden, len(names)))
    return ExpertModel(
        expert_id=expert_id or f"{detector.expert_id}+warm",
        recording_type=detector.recording_type, class_names=names,
        feature_config_hash=detector.feature_config_hash,
        provenance_tag=detector.provenance_tag + "+warmstart:detection",
        mean=detector.mean.copy(), std=detector.std.copy(),
        w1=detector.w1.copy(), b1=detector.b1.copy(), w2=w2,
        b2=np.zeros(len(names)),
        train_meta={"warm_started_from": detector.expert_id})


def gradient_check(model, features_matrix, labels, epsilon=1e-5,
                   max_coords_per_group=200, seed=0):
    """Max relative error between analytic and central-difference gradients.

    Matrices larger than max_coords_per_group are subsampled coordinate-wise
    with a seeded generator; bias vectors are always fully checked.
    """
    X = np.asarray(features_matrix, dtype=np.float64)
    X_std = (X - model.mean) / model.std
    index = {c: i for i, c in enumerate(model.class_names)}
    onehot = np.zeros((X.shape[0], len(model.class_names)))
    onehot[np.arange(X.shape[0]), [index[lab] for lab in labels]] = 1.0
    l2 = 1e-4
    params = [model.w1.copy(), model.b1.copy(), model.w2.copy(),
              model.b2.copy()]
    _, grads = _loss_and_grads(params, X_std, onehot, l2)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for p, g in zip(params, grads):
        flat_p = p.reshape(-1)
        flat_g = g.reshape(-1)
        if flat_p.size > max_coords_per_group:
            coords = rng.choice(flat_p.size, size=max_coords_per_group,
                                replace=False)
        else:
            coords = np.arange(flat_p.size)
        for c in coords:
            orig = flat_p[c]
            flat_p[c] = orig + epsilon
            lo_plus, _ = _loss_and_grads(params, X_std, onehot, l2)
            flat_p[c] = orig - epsilon
            lo_minus, _ = _loss_and_grads(params, X_std, onehot, l2)
            flat_p[c] = orig
            numeric = (lo_plus - lo_minus) / (2.0 * epsilon)
            denom = max(abs(numeric), abs(flat_g[c]), 1e-8)
            worst = max(worst, abs(numeric - flat_g[c]) / denom)
    return worst


# -- model serialization --------------------------------------------------------

def save_model(model, path):
    header = {
        "expert_id": model.expert_id,
        "recording_type": model.recording_type,
        "class_names": list(model.class_names),
        "feature_config_hash": model.feature_config_hash,
        "provenance_tag": model.provenance_tag,
        "d": int(model.n_inputs),
        "h": int(model.n_hidden),
        "k": len(model.class_names),
        "train_meta": model.train_meta,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    arrays = [model.mean, model.std, model.w1, model.b1, model.w2, model.b2]
    payload = b"".join(
        np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrays)
    data = (_MODEL_MAGIC + struct.pack("<II", _MODEL_VERSION, len(blob))
            + blob + payload)
    try:
        Path(path).write_bytes(data)
    except OSError as exc:
        raise IoFailure(f"cannot write model {path}: {exc}") from exc


def load_model(path):
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read model {path}: {exc}") from exc
    if len(data) < 12 or data[:4] != _MODEL_MAGIC:
        raise MalformedHeader(f"{path} is not an expert model file")
    version, header_len = struct.unpack_from("<II", data, 4)
    if version != _MODEL_VERSION:
        raise MalformedHeader(f"model version {version} unsupported")
    try:
        header = json.loads(data[12:12 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedHeader(f"model header corrupt: {exc}") from exc
    d, h, k = header["d"], header["h"], header["k"]
    shapes = [(d,), (d,), (d, h), (h,), (h, k), (k,)]
    need = sum(int(np.prod(s)) for s in shapes) * 8
    payload = data[12 + header_len:]
    if len(payload) != need:
        raise MalformedHeader(
            f"model payload {len(payload)} bytes, want {need}")
    arrays = []
    offset = 0
    for shape in shapes:
        count = int(np.prod(shape))
        arrays.append(np.frombuffer(
            payload, dtype="<f8", count=count,
            offset=offset).reshape(shape).copy())
        offset += count * 8
    mean, std, w1, b1, w2, b2 = arrays
    return ExpertModel(
        expert_id=header["expert_id"],
        recording_type=header["recording_type"],
        class_names=tuple(header["class_names"]),
        feature_config_hash=header["feature_config_hash"],
        provenance_tag=header["provenance_tag"],
        mean=mean, std=std, w1=w1, b1=b1, w2=w2, b2=b2,
        train_meta=header.get("train_meta", {}))


# -- external predictions --------------------------------------------------------

def load_external_predictions(path):
    """Parse a JSONL prediction file from any external system.

    Every row must carry exactly the documented keys; probabilities must sum
    to 1 within 1e-3 (then they are renormalized exactly) and the class name
    list must be identical, in order, on every row.
    """
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot read predictions {path}: {exc}") from exc
    predictions = []
    reference_names = None
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise SchemaViolation(f"line {line_no}: invalid JSON: {exc}",
                                  line=line_no) from exc
        if not isinstance(obj, dict):
            raise SchemaViolation(f"line {line_no}: row is not an object",
                                  line=line_no)
        missing = [k for k in _EXTERNAL_KEYS if k not in obj]
        if missing:
            raise SchemaViolation(
                f"line {line_no}: missing keys {missing}",
                line=line_no, field=missing[0])
        unknown = set(obj) - set(_EXTERNAL_KEYS)
        if unknown:
            raise SchemaViolation(
                f"line {line_no}: unknown keys {sorted(unknown)}",
                line=line_no, field=sorted(unknown)[0])
        for key in ("clip_id", "expert_id", "recording_type", "provenance"):
            if not isinstance(obj[key], str) or not obj[key]:
                raise SchemaViolation(
                    f"line {line_no}: {key!r} must be a non-empty string",
                    line=line_no, field=key)
        if obj["recording_type"] not in ("sentence", "vowel"):
            raise SchemaViolation(
                f"line {line_no}: recording_type "
                f"{obj['recording_type']!r} invalid",
                line=line_no, field="recording_type")
        names = obj["class_names"]
        probs = obj["probs"]
        if (not isinstance(names, list) or len(names) < 2
                or not all(isinstance(c, str) for c in names)):
            raise SchemaViolation(
                f"line {line_no}: class_names must list >= 2 strings",
                line=line_no, field="class_names")
        if (not isinstance(probs, list) or len(probs) != len(names)
                or not all(isinstance(p, (int, float)) for p in probs)):
            raise SchemaViolation(
                f"line {line_no}: probs must be {len(names)} numbers",
                line=line_no, field="probs")
        if any(p < 0 for p in probs):
            raise SchemaViolation(
                f"line {line_no}: negative probability", line=line_no,
                field="probs")
        total = float(sum(probs))
        if not 0.999 <= total <= 1.001:
            raise UnnormalizedBeyondTolerance(
                f"line {line_no}: probs sum to {total:.6f}, outside "
                "[0.999, 1.001]")
        if reference_names is None:
            reference_names = list(names)
        elif names != reference_names:
            raise InconsistentClassNames(
                f"line {line_no}: class_names {names} != "
                f"{reference_names} (order matters)")
        predictions.append(Prediction(
            clip_id=obj["clip_id"], expert_id=obj["expert_id"],
            class_names=tuple(names),
            probs=np.asarray(probs, dtype=np.float64) / total,
            recording_type=obj["recording_type"],
            provenance=obj["provenance"]))
    return predictions


def write_predictions(predictions, path):
    """Serialize predictions to the external JSONL schema."""
    lines = []
    for p in predictions:
        lines.append(json.dumps({
            "clip_id": p.clip_id,
            "expert_id": p.expert_id,
            "recording_type": p.recording_type or "sentence",
            "provenance": p.provenance or "builtin",
            "class_names": list(p.class_names),
            "probs": [float(x) for x in p.probs],
        }, sort_keys=True))
    Path(path).write_text("".join(line + "\n" for line in lines),
                          encoding="utf-8")
