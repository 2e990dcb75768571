"""Speaker-disjoint cross-validated evaluation.

Folds are dealt over real speakers, stratified by label, and every derived
clip (augmented variant, synthetic clip conditioned on a real speaker) lives
in its parent speaker's fold. Training data for a fold is everything outside
it; test data is the fold's real clips, scored one decision per session.
A separate leakage guard re-derives each training clip's set of influencing
real speakers through provenance links and fails hard on any intersection
with the test fold, so a tampered manifest cannot silently leak identity.

The module also carries the metric primitives (accuracy, macro F1, rank AUC),
the ablation runner, the synthetic-to-real cross-domain comparison and the
report renderers.
"""

import dataclasses
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from voicekit import augment as augment_mod
from voicekit import moe as moe_mod
from voicekit import synth as synth_mod
from voicekit.audio import load_wav
from voicekit.corpus import resolve_audio_path
from voicekit.errors import (DegenerateLabels, EmptyClassSet, EmptyPartition,
                             EmptyReport, InconsistentClassNames,
                             InfeasibleLevel, InvalidConfig, IoFailure,
                             LeakageDetected, LengthMismatch,
                             MissingExternalPredictions, SingleClassOnly,
                             TooFewSpeakers, UnknownClipId)
from voicekit.experts import (TrainConfig, load_external_predictions, predict,
                              train_expert, warm_start_classifier)
from voicekit.features import FrameSpec, MfccConfig, config_hash, mfcc, pool_stats
from voicekit.util import canonical_json, sha256_hex, stable_seed

ABLATION_LEVELS = ("base", "data_pp", "tts", "moe", "moe_star", "all")
POSITIVE_LABEL = "pathological"
DETECTION_CLASSES = ("healthy", "pathological")


# -- folds --------------------------------------------------------------------

@dataclass(frozen=True)
class FoldAssignment:
    k: int
    seed: int
    assignment: dict          # speaker_id -> fold index
    fingerprint: str

    def fold_speakers(self, fold):
        return {s for s, f in self.assignment.items() if f == fold}


def make_speaker_folds(records, k=10, seed=0, origin="real"):
    """Deal speakers of one origin round-robin into k folds per label stratum.

    Speakers are sorted, shuffled with a seed-derived generator, then dealt
    in order, so per-label fold sizes differ by at most one and the same
    (records, k, seed) always yields the same assignment.
    """
    if k < 2:
        raise InvalidConfig(f"k must be >= 2, got {k}")
    label_of = {}
    for r in records:
        if r.origin != origin:
            continue
        label_of.setdefault(r.speaker_id, r.label)
    strata = {}
    for spk, lab in label_of.items():
        strata.setdefault(lab, []).append(spk)
    if not strata:
        raise TooFewSpeakers(f"no {origin} speakers in manifest")
    rng = np.random.default_rng(stable_seed(seed, "folds"))
    assignment = {}
    for lab in sorted(strata):
        speakers = sorted(strata[lab])
        if len(speakers) < k:
            raise TooFewSpeakers(
                f"label {lab!r} has {len(speakers)} speakers, need >= {k}")
        order = rng.permutation(len(speakers))
        for i, idx in enumerate(order):
            assignment[speakers[int(idx)]] = i % k
    assignment = dict(sorted(assignment.items()))
    fingerprint = sha256_hex(canonical_json(
        {"k": k, "seed": seed, "assignment": assignment}).encode())
    return FoldAssignment(k=k, seed=seed, assignment=assignment,
                          fingerprint=fingerprint)


# -- metrics --------------------------------------------------------------------

def accuracy(predicted, true):
    if len(predicted) != len(true):
        raise LengthMismatch(
            f"{len(predicted)} predictions vs {len(true)} labels")
    if not true:
        raise LengthMismatch("empty label sequences")
    hits = sum(1 for p, t in zip(predicted, true) if p == t)
    return hits / len(true)


def macro_f1(predicted, true, class_names=None):
    """Unweighted mean per-class F1.

    Classes absent from both the truth and the predictions are skipped; a
    class with true instances but no correct predictions contributes 0.
    """
    if len(predicted) != len(true):
        raise LengthMismatch(
            f"{len(predicted)} predictions vs {len(true)} labels")
    if not true:
        raise LengthMismatch("empty label sequences")
    classes = tuple(class_names) if class_names is not None else tuple(
        sorted(set(true) | set(predicted)))
    if not classes:
        raise EmptyClassSet("no classes to score")
    uncovered = (set(true) | set(predicted)) - set(classes)
    if uncovered:
        raise EmptyClassSet(
            f"labels {sorted(uncovered)} missing from class set {classes}")
    scores = []
    for c in classes:
        tp = sum(1 for p, t in zip(predicted, true) if p == c and t == c)
        fp = sum(1 for p, t in zip(predicted, true) if p == c and t != c)
        fn = sum(1 for p, t in zip(predicted, true) if p != c and t == c)
        if tp + fp + fn == 0:
            continue
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        scores.append(2 * prec * rec / (prec + rec) if prec + rec else 0.0)
    if not scores:
        raise EmptyClassSet("every class empty in both truth and predictions")
    return float(np.mean(scores))


def auc_binary(scores, true, positive=POSITIVE_LABEL):
    """Rank-based AUC: P(score_pos > score_neg) with ties counted half.

    Computed from average ranks, which equals the exhaustive pair count and
    the trapezoidal ROC area exactly.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 1 or scores.size != len(true):
        raise LengthMismatch(
            f"{scores.size} scores vs {len(true)} labels")
    pos = np.array([t == positive for t in true])
    n_pos = int(pos.sum())
    n_neg = int(pos.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise SingleClassOnly(
            f"need both classes, got {n_pos} positive / {n_neg} negative")
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(scores.size, dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < scores.size:
        j = i
        while j + 1 < scores.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    rank_sum = float(ranks[pos].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


# -- pipeline config --------------------------------------------------------------------

_EXPERT_SPECS = ("sentence", "vowel", "all")


@dataclass(frozen=True)
class PipelineConfig:
    task: str = "detection"
    experts: tuple = ("sentence", "vowel")
    moe: bool = True
    priority: tuple = moe_mod.DEFAULT_PRIORITY
    augment: bool = False
    synth_balance: bool = False
    warm_start: bool = False
    external_predictions: tuple = ()
    frame: FrameSpec = field(default_factory=FrameSpec)
    mfcc: MfccConfig = field(default_factory=MfccConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    augment_policies: dict = None     # recording_type -> AugmentPolicy
    synth_presets: tuple = None       # ClassPreset sequence

    def __post_init__(self):
        if self.task not in ("detection", "classification"):
            raise InvalidConfig(f"unknown task {self.task!r}")
        experts = tuple(self.experts)
        if not experts:
            raise InvalidConfig("at least one expert source required")
        bad = [e for e in experts if e not in _EXPERT_SPECS]
        if bad:
            raise InvalidConfig(f"unknown expert sources {bad}")
        if len(set(experts)) != len(experts):
            raise InvalidConfig("duplicate expert sources")
        if "all" in experts and len(experts) > 1:
            raise InvalidConfig(
                "the pooled 'all' expert cannot be combined with others")
        n_sources = len(experts) + len(self.external_predictions)
        if not self.moe and n_sources > 1:
            raise InvalidConfig(
                "multiple expert sources require moe=True")
        if self.warm_start and self.task != "classification":
            raise InvalidConfig(
                "warm_start applies to the classification task only")
        object.__setattr__(self, "experts", experts)
        object.__setattr__(self, "priority", tuple(self.priority))
        object.__setattr__(self, "external_predictions",
                           tuple(str(p) for p in self.external_predictions))

    def to_dict(self):
        d = {
            "task": self.task,
            "experts": list(self.experts),
            "moe": self.moe,
            "priority": list(self.priority),
            "augment": self.augment,
            "synth_balance": self.synth_balance,
            "warm_start": self.warm_start,
            "external_predictions": list(self.external_predictions),
            "frame": dataclasses.asdict(self.frame),
            "mfcc": dataclasses.asdict(self.mfcc),
            "train": dataclasses.asdict(self.train),
            "augment_policies": None if self.augment_policies is None else {
                k: dataclasses.asdict(v)
                for k, v in sorted(self.augment_policies.items())},
            "synth_presets": None if self.synth_presets is None else [
                dataclasses.asdict(p) for p in self.synth_presets],
        }
        return d


def config_fingerprint(config):
    return sha256_hex(canonical_json(config.to_dict()).encode())


# -- corpus preparation --------------------------------------------------------------------

@dataclass
class PreparedClip:
    record: object
    features: np.ndarray
    feature_hash: str


class _CachedClip:
    """Stand-in for audio whose pooled features are already cached."""

    __slots__ = ("sample_rate_hz",)

    def __init__(self, sample_rate_hz):
        self.sample_rate_hz = sample_rate_hz


def _pmap(fn, items, jobs):
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _pooled(clip, config):
    m = mfcc(clip, config.frame, config.mfcc)
    return pool_stats(m), config_hash("mfcc", config.frame, config.mfcc,
                                      clip.sample_rate_hz)


def prepare_corpus(records, config, seed=0, audio_root=".", jobs=1,
                   cache_dir=None):
    """Load, optionally expand, and featurize a manifest.

    Expansion adds (a) synthetic clips leveling class counts when
    synth_balance is on and (b) augmented variants of every real and
    synthetic clip when augment is on. All expansion is derived from the
    run seed, so two calls agree clip for clip. With cache_dir, pooled
    vectors are persisted and reused across runs, keyed by clip id and
    feature configuration.
    """
    records = list(records)
    if cache_dir is not None:
        cache_dir = Path(cache_dir)
        cache_dir.mkdir(parents=True, exist_ok=True)

    def load_one(rec):
        path = resolve_audio_path(rec, audio_root)
        try:
            clip = load_wav(path, clip_id=rec.clip_id)
        except OSError as exc:
            raise IoFailure(f"cannot read {path}: {exc}") from exc
        return clip

    base_clips = _pmap(load_one, records, jobs)
    pairs = list(zip(base_clips, records))

    if config.synth_balance:
        key = "label" if config.task == "detection" else "pathology_class"
        plan = synth_mod.plan_balancing(
            [r for r in records if r.origin == "real"], key=key)
        if plan.total() > 0:
            rates = [c.sample_rate_hz for c in base_clips]
            fs = max(set(rates), key=rates.count) if rates else 16000
            presets = None
            if config.synth_presets is not None:
                presets = {p.class_name: p for p in config.synth_presets}
            pairs.extend(synth_mod.execute_plan(
                plan, presets=presets, sample_rate_hz=fs,
                seed=stable_seed(seed, "synth")))

    if config.augment:
        policies = (augment_mod.DEFAULT_POLICIES
                    if config.augment_policies is None
                    else config.augment_policies)

        def expand(pair):
            clip, rec = pair
            if rec.origin not in ("real", "synthetic"):
                return []
            policy = policies.get(rec.recording_type)
            if policy is None:
                return []
            aug_seed = stable_seed(seed, "augment")
            if cache_dir is not None:
                fhash = config_hash("mfcc", config.frame, config.mfcc,
                                    clip.sample_rate_hz)
                safe = rec.clip_id.replace("/", "_").replace("\\", "_")
                hits = all(
                    (cache_dir / f"{safe}.aug{v}.{fhash[:12]}.npy").exists()
                    for v in range(policy.n_variants_per_clip))
                if hits:
                    marker = _CachedClip(clip.sample_rate_hz)
                    dry = augment_mod.apply_policy(
                        None, rec, policy, seed=aug_seed, render=False)
                    return [(marker, r) for _, r in dry]
            return augment_mod.apply_policy(clip, rec, policy,
                                            seed=aug_seed)

        for chunk in _pmap(expand, list(pairs), jobs):
            pairs.extend(chunk)

    def featurize(pair):
        clip, rec = pair
        fhash = config_hash("mfcc", config.frame, config.mfcc,
                            clip.sample_rate_hz)
        if cache_dir is not None:
            safe = rec.clip_id.replace("/", "_").replace("\\", "_")
            cached = cache_dir / f"{safe}.{fhash[:12]}.npy"
            if cached.exists():
                return PreparedClip(record=rec, features=np.load(cached),
                                    feature_hash=fhash)
        if isinstance(clip, _CachedClip):
            raise IoFailure(
                f"feature cache entry vanished for clip '{rec.clip_id}'")
        feats, _ = _pooled(clip, config)
        if cache_dir is not None:
            tmp = cached.with_suffix(".tmp.npy")
            np.save(tmp, feats)
            tmp.replace(cached)
        return PreparedClip(record=rec, features=feats, feature_hash=fhash)

    return _pmap(featurize, pairs, jobs)


# -- provenance resolution --------------------------------------------------------------------

def _effective_speakers(record, by_id, memo):
    """Real speakers whose data or parameters influenced this clip."""
    cached = memo.get(record.clip_id)
    if cached is not None:
        return cached
    out = set()
    if record.origin == "real":
        out.add(record.speaker_id)
    elif record.origin == "augmented":
        out.add(record.speaker_id)
        pid = (record.provenance or {}).get("parent_clip_id")
        if pid:
            parent = by_id.get(pid)
            if parent is None:
                raise UnknownClipId(
                    f"augmented clip {record.clip_id!r} references missing "
                    f"parent {pid!r}")
            out |= _effective_speakers(parent, by_id, memo)
    else:
        out |= set((record.provenance or {}).get("conditioned_on", ()))
    result = frozenset(out)
    memo[record.clip_id] = result
    return result


def _home_folds(record, assignment):
    """Folds this clip belongs to, from its declared identity only."""
    homes = set()
    if record.speaker_id in assignment:
        homes.add(assignment[record.speaker_id])
    if record.origin == "synthetic":
        for s in (record.provenance or {}).get("conditioned_on", ()):
            if s in assignment:
                homes.add(assignment[s])
    return homes


def _root_origin(record, by_id):
    seen = set()
    while record.origin == "augmented":
        if record.clip_id in seen:
            raise UnknownClipId(
                f"provenance cycle at {record.clip_id!r}")
        seen.add(record.clip_id)
        pid = (record.provenance or {}).get("parent_clip_id")
        parent = by_id.get(pid) if pid else None
        if parent is None:
            raise UnknownClipId(
                f"augmented clip {record.clip_id!r} references missing "
                f"parent {pid!r}")
        record = parent
    return record.origin


# -- reports --------------------------------------------------------------------

@dataclass(frozen=True)
class MetricsReport:
    task: str
    row_name: str
    k: int
    seed: int
    per_fold: tuple
    aggregate: dict
    config_fingerprint: str
    fold_fingerprint: str

    def to_dict(self):
        return {
            "task": self.task,
            "row": self.row_name,
            "k": self.k,
            "seed": self.seed,
            "per_fold": [dict(f) for f in self.per_fold],
            "aggregate": {m: dict(v) for m, v in self.aggregate.items()},
            "config_fingerprint": self.config_fingerprint,
            "fold_fingerprint": self.fold_fingerprint,
        }


def _aggregate(per_fold, metrics):
    out = {}
    for m in metrics:
        vals = [f[m] for f in per_fold]
        mean = float(np.mean(vals))
        std = float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0
        out[m] = {"mean": mean, "std": std}
    return out


# -- core fold loop --------------------------------------------------------------------

def _rtype_matches(spec, recording_type):
    return spec == "all" or spec == recording_type


def _session_truth(records, task):
    truth = {}
    for r in records:
        lab = r.label if task == "detection" else r.pathology_class
        truth.setdefault((r.speaker_id, r.session_id), lab)
    return truth


def _load_external(config, eligible_clip_ids):
    """External prediction sources keyed by expert id, with coverage check."""
    sources = {}
    for path in config.external_predictions:
        preds = load_external_predictions(path)
        if not preds:
            raise MissingExternalPredictions(f"{path} is empty")
        expert_id = preds[0].expert_id
        by_clip = {}
        for p in preds:
            by_clip.setdefault(p.clip_id, []).append(p)
        missing = set(eligible_clip_ids) - set(by_clip)
        if missing:
            raise MissingExternalPredictions(
                f"{path} lacks predictions for "
                f"{len(missing)} clips (e.g. {sorted(missing)[:3]})")
        if expert_id in sources:
            raise InvalidConfig(
                f"duplicate external expert id {expert_id!r}")
        sources[expert_id] = by_clip
    return sources


def _positive_score(decision):
    try:
        idx = decision.class_names.index(POSITIVE_LABEL)
    except ValueError:
        raise InconsistentClassNames(
            f"decision classes {decision.class_names} lack "
            f"{POSITIVE_LABEL!r}") from None
    return float(decision.probs[idx])


def evaluate_folds(records, config, k=10, seed=0, audio_root=".", jobs=1,
                   folds=None, train_root_origin=None, test_origin="real",
                   prepared=None, cache_dir=None):
    """Run the cross-validation loop and score every report row.

    Returns a dict with the fold assignment, one MetricsReport per row
    (each single expert source, then "moe" when several sources combine),
    and per-fold artifacts (clip predictions and session decisions).
    """
    records = list(records)
    if folds is None:
        folds = make_speaker_folds(records, k=k, seed=seed,
                                   origin=test_origin)
    if prepared is None:
        prepared = prepare_corpus(records, config, seed=seed,
                                  audio_root=audio_root, jobs=jobs,
                                  cache_dir=cache_dir)
    by_id = {p.record.clip_id: p.record for p in prepared}
    memo = {}
    task = config.task

    if task == "detection":
        class_names = DETECTION_CLASSES
    else:
        class_names = tuple(sorted(
            {p.record.pathology_class for p in prepared
             if p.record.pathology_class}))
        if len(class_names) < 2:
            raise DegenerateLabels(
                f"classification needs >= 2 pathology classes, "
                f"got {class_names}")

    def task_label(rec):
        return rec.label if task == "detection" else rec.pathology_class

    test_eligible = [
        p.record for p in prepared
        if p.record.origin == test_origin
        and p.record.speaker_id in folds.assignment
        and task_label(p.record) is not None]
    external = _load_external(config, [r.clip_id for r in test_eligible])

    source_names = list(config.experts) + [
        f"external:{e}" for e in sorted(external)]
    with_moe = config.moe and len(source_names) > 1
    row_names = list(source_names) + (["moe"] if with_moe else [])

    truth = _session_truth(test_eligible, task)
    cfg_fp = config_fingerprint(config)
    feats_by_clip = {p.record.clip_id: p.features for p in prepared}

    per_row_folds = {r: [] for r in row_names}
    artifacts = []
    for f in range(folds.k):
        test_speakers = folds.fold_speakers(f)
        test_records = [r for r in test_eligible
                        if folds.assignment[r.speaker_id] == f]

        # detect_pool holds every leak-eligible training row; train_pool
        # narrows to rows carrying the task's label. For detection the two
        # coincide; for classification the wider pool feeds warm-start
        # pre-training, which must also never see test speakers.
        train_pool = []
        detect_pool = []
        for p in prepared:
            if f in _home_folds(p.record, folds.assignment):
                continue
            if (train_root_origin is not None
                    and _root_origin(p.record, by_id) != train_root_origin):
                continue
            detect_pool.append(p)
            if task_label(p.record) is not None:
                train_pool.append(p)

        guard_pool = detect_pool if config.warm_start else train_pool
        for p in guard_pool:
            leak = _effective_speakers(p.record, by_id, memo) & test_speakers
            if leak:
                raise LeakageDetected(
                    f"fold {f}: training clip {p.record.clip_id!r} is "
                    f"derived from test speakers {sorted(leak)}")

        models = {}
        for spec in config.experts:
            rows = [p for p in train_pool
                    if _rtype_matches(spec, p.record.recording_type)]
            X = np.stack([p.features for p in rows])
            hashes = {p.feature_hash for p in rows}
            fhash = hashes.pop() if len(hashes) == 1 else ""
            labels = [task_label(p.record) for p in rows]
            if config.warm_start:
                det_rows = [p for p in detect_pool
                            if _rtype_matches(spec, p.record.recording_type)]
                X_det = np.stack([p.features for p in det_rows])
                det_hashes = {p.feature_hash for p in det_rows}
                det_fhash = det_hashes.pop() if len(det_hashes) == 1 else ""
                detector = train_expert(
                    X_det, [p.record.label for p in det_rows], config.train,
                    recording_type=spec, expert_id=f"{spec}-detector",
                    class_names=DETECTION_CLASSES,
                    feature_config_hash=det_fhash)
                seeded = warm_start_classifier(
                    detector, class_names, config.train, expert_id=spec)
                models[spec] = train_expert(
                    X, labels, config.train, recording_type=spec,
                    expert_id=spec, class_names=class_names,
                    feature_config_hash=fhash, init_model=seeded,
                    provenance_tag=seeded.provenance_tag)
            else:
                models[spec] = train_expert(
                    X, labels, config.train, recording_type=spec,
                    expert_id=spec, class_names=class_names,
                    feature_config_hash=fhash)

        preds_by_source = {}
        for spec in config.experts:
            preds_by_source[spec] = [
                predict(models[spec], feats_by_clip[r.clip_id],
                        clip_id=r.clip_id)
                for r in test_records
                if _rtype_matches(spec, r.recording_type)]
        for ext_id, by_clip in external.items():
            preds_by_source[f"external:{ext_id}"] = [
                p for r in test_records for p in by_clip[r.clip_id]]

        groups = moe_mod.group_by_session(test_records, preds_by_source)
        fold_decisions = {}
        for row in row_names:
            wanted = source_names if row == "moe" else [row]
            decisions = []
            for g in groups:
                sub = {e: ps for e, ps in g.predictions.items()
                       if e in wanted and ps}
                if not sub:
                    continue
                decisions.append(moe_mod.select_prediction(
                    moe_mod.SessionGroup(g.session_id, g.speaker_id, sub),
                    priority=config.priority))
            fold_decisions[row] = decisions

            y_true = [truth[(d.speaker_id, d.session_id)] for d in decisions]
            y_pred = [d.top_class() for d in decisions]
            entry = {
                "fold": f,
                "n_sessions": len(decisions),
                "accuracy": accuracy(y_pred, y_true),
                "macro_f1": macro_f1(y_pred, y_true,
                                     class_names=class_names),
            }
            if task == "detection":
                entry["auc"] = auc_binary(
                    [_positive_score(d) for d in decisions], y_true)
            per_row_folds[row].append(entry)
        artifacts.append({
            "fold": f,
            "test_clip_ids": [r.clip_id for r in test_records],
            "predictions": preds_by_source,
            "decisions": fold_decisions,
            "models": models,
        })

    metrics = ["accuracy", "macro_f1"] + (
        ["auc"] if task == "detection" else [])
    rows = {}
    for row in row_names:
        rows[row] = MetricsReport(
            task=task, row_name=row, k=folds.k, seed=seed,
            per_fold=tuple(per_row_folds[row]),
            aggregate=_aggregate(per_row_folds[row], metrics),
            config_fingerprint=cfg_fp,
            fold_fingerprint=folds.fingerprint)
    return {"folds": folds, "rows": rows, "row_names": row_names,
            "artifacts": artifacts, "class_names": class_names,
            "prepared": prepared}


def run_cv(records, config, k=10, seed=0, audio_root=".", jobs=1,
           cache_dir=None):
    """The config's headline cross-validation row."""
    result = evaluate_folds(records, config, k=k, seed=seed,
                            audio_root=audio_root, jobs=jobs,
                            cache_dir=cache_dir)
    names = result["row_names"]
    headline = "moe" if "moe" in names else names[0]
    return result["rows"][headline]


def score_sessions(records, predictions_by_expert, task="detection",
                   priority=moe_mod.DEFAULT_PRIORITY):
    """Session metrics for ready-made predictions, no folds involved."""
    decisions = moe_mod.combine_corpus(records, predictions_by_expert,
                                       priority=priority)
    truth = _session_truth(records, task)
    y_true = [truth[(d.speaker_id, d.session_id)] for d in decisions]
    y_pred = [d.top_class() for d in decisions]
    out = {
        "n_sessions": len(decisions),
        "accuracy": accuracy(y_pred, y_true),
        "macro_f1": macro_f1(y_pred, y_true),
    }
    if task == "detection":
        out["auc"] = auc_binary(
            [_positive_score(d) for d in decisions], y_true)
    return out, decisions


# -- ablation --------------------------------------------------------------------

def _ablation_config(level, base, external):
    common = dict(
        task="detection", warm_start=False, priority=base.priority,
        frame=base.frame, mfcc=base.mfcc, train=base.train,
        augment_policies=base.augment_policies,
        synth_presets=base.synth_presets)
    if level == "base":
        return PipelineConfig(experts=("sentence",), moe=False,
                              augment=False, synth_balance=False, **common)
    if level == "data_pp":
        return PipelineConfig(experts=("sentence",), moe=False,
                              augment=True, synth_balance=False, **common)
    if level == "tts":
        return PipelineConfig(experts=("sentence",), moe=False,
                              augment=True, synth_balance=True, **common)
    if level == "moe":
        return PipelineConfig(experts=("sentence", "vowel"), moe=True,
                              augment=True, synth_balance=True, **common)
    if level == "moe_star":
        return PipelineConfig(experts=("sentence", "vowel"), moe=True,
                              augment=True, synth_balance=True,
                              external_predictions=external, **common)
    if level == "all":
        return PipelineConfig(experts=("all",), moe=False,
                              augment=True, synth_balance=True, **common)
    raise InfeasibleLevel(f"unknown ablation level {level!r}")


def _check_moe_star_feasible(external):
    if not external:
        raise InfeasibleLevel(
            "level moe_star needs external prediction files")
    tags = []
    for path in external:
        preds = load_external_predictions(path)
        if not preds:
            raise InfeasibleLevel(f"{path} is empty")
        tags.append(preds[0].provenance)
    if len(set(tags)) != len(tags) or "builtin" in tags:
        raise InfeasibleLevel(
            f"external provenance tags must be distinct from each other "
            f"and from the built-in experts, got {tags}")


def run_ablation(records, levels, k=10, seed=0, base_config=None,
                 audio_root=".", jobs=1, cache_dir=None):
    """One comparable cross-validation row per ablation level.

    All levels share the fold assignment derived from (records, k, seed).
    The headline AUC of "all" exceeding "moe" is reported as a warning,
    not a failure.
    """
    base = base_config if base_config is not None else PipelineConfig()
    if base.task != "detection":
        raise InfeasibleLevel(
            f"ablation is defined for detection, not {base.task!r}")
    levels = list(levels)
    if not levels:
        raise InfeasibleLevel("no ablation levels requested")
    unknown = [lv for lv in levels if lv not in ABLATION_LEVELS]
    if unknown:
        raise InfeasibleLevel(f"unknown ablation levels {unknown}")
    if len(set(levels)) != len(levels):
        raise InfeasibleLevel(f"duplicate ablation levels in {levels}")
    if "moe_star" in levels:
        _check_moe_star_feasible(base.external_predictions)

    folds = make_speaker_folds(records, k=k, seed=seed)
    reports = {}
    for level in levels:
        cfg = _ablation_config(level, base, base.external_predictions)
        result = evaluate_folds(records, cfg, k=k, seed=seed,
                                audio_root=audio_root, jobs=jobs,
                                folds=folds, cache_dir=cache_dir)
        names = result["row_names"]
        headline = "moe" if "moe" in names else names[0]
        report = result["rows"][headline]
        assert report.fold_fingerprint == folds.fingerprint
        reports[level] = report

    warnings = []
    if "all" in reports and "moe" in reports:
        auc_all = reports["all"].aggregate["auc"]["mean"]
        auc_moe = reports["moe"].aggregate["auc"]["mean"]
        if auc_all > auc_moe:
            warnings.append(
                f"pooled single model beat the per-type combination "
                f"(AUC {auc_all:.3f} > {auc_moe:.3f}); expected the "
                f"combination to win")
    return {"task": "detection", "k": k, "seed": seed,
            "fold_fingerprint": folds.fingerprint,
            "levels": {lv: reports[lv] for lv in levels},
            "level_order": levels, "warnings": warnings}


# -- cross-domain --------------------------------------------------------------------

def run_cross_domain(records, config, k=10, seed=0, train_origin="synthetic",
                     test_origin="real", audio_root=".", jobs=1,
                     cache_dir=None):
    """Train on one origin partition, test on another, report deltas.

    Folds are dealt over the test partition's speakers. A paired baseline
    trained on the test-origin partition under the same folds supplies the
    bracketed per-metric deltas (cross-domain minus baseline).
    """
    records = list(records)
    n_train = sum(1 for r in records if r.origin == train_origin)
    n_test = sum(1 for r in records if r.origin == test_origin)
    if n_train == 0:
        raise EmptyPartition(f"no {train_origin!r} records to train on")
    if n_test == 0:
        raise EmptyPartition(f"no {test_origin!r} records to test on")

    folds = make_speaker_folds(records, k=k, seed=seed, origin=test_origin)
    main = evaluate_folds(records, config, k=k, seed=seed,
                          audio_root=audio_root, jobs=jobs, folds=folds,
                          train_root_origin=train_origin,
                          test_origin=test_origin, cache_dir=cache_dir)
    baseline = evaluate_folds(records, config, k=k, seed=seed,
                              audio_root=audio_root, jobs=jobs, folds=folds,
                              train_root_origin=test_origin,
                              test_origin=test_origin,
                              prepared=main["prepared"])
    deltas = {}
    for row, report in main["rows"].items():
        base_row = baseline["rows"].get(row)
        if base_row is None:
            continue
        deltas[row] = {
            m: report.aggregate[m]["mean"] - base_row.aggregate[m]["mean"]
            for m in report.aggregate}
    return {"task": config.task, "k": k, "seed": seed,
            "fold_fingerprint": folds.fingerprint,
            "train_origin": train_origin, "test_origin": test_origin,
            "rows": main["rows"], "row_names": main["row_names"],
            "baseline_rows": baseline["rows"], "deltas": deltas}


# -- rendering --------------------------------------------------------------------

_METRIC_TITLES = (("accuracy", "Accuracy"), ("macro_f1", "F1 Macro"),
                  ("auc", "AUC"))


def _fmt3(x):
    s = f"{abs(x):.3f}"
    return s[1:] if s.startswith("0.") else s


def _cell(agg_entry, delta=None):
    mean = agg_entry["mean"]
    text = f"{mean:.3f} ±{_fmt3(agg_entry['std'])}"
    if delta is not None:
        sign = "-" if delta < 0 else "+"
        text += f" ({sign}{_fmt3(abs(delta))})"
    return text


def _rows_table(reports, row_order, deltas=None):
    metrics = [m for m, _ in _METRIC_TITLES
               if any(m in reports[r].aggregate for r in row_order)]
    header = "| row | " + " | ".join(
        t for m, t in _METRIC_TITLES if m in metrics) + " |"
    sep = "|" + "---|" * (len(metrics) + 1)
    lines = [header, sep]
    for row in row_order:
        rep = reports[row]
        cells = []
        for m in metrics:
            d = deltas.get(row, {}).get(m) if deltas else None
            cells.append(_cell(rep.aggregate[m], d))
        lines.append(f"| {row} | " + " | ".join(cells) + " |")
    return lines


def render_json(report):
    def default(obj):
        if isinstance(obj, MetricsReport):
            return obj.to_dict()
        raise TypeError(f"cannot serialize {type(obj)!r}")
    return json.dumps(report, sort_keys=True, indent=2, default=default)


def render_markdown(report):
    lines = [f"# voicekit report", ""]
    meta = [f"- task: {report.get('task')}",
            f"- folds: k={report.get('k')} seed={report.get('seed')}",
            f"- fold fingerprint: `{report.get('fold_fingerprint', '')[:16]}`"]
    lines.extend(meta)
    lines.append("")
    if report.get("rows"):
        lines.append("## Cross-validated metrics (mean ±std over folds)")
        lines.append("")
        lines.extend(_rows_table(report["rows"],
                                 report.get("row_names",
                                            sorted(report["rows"]))))
        lines.append("")
    abl = report.get("ablation")
    if abl:
        lines.append("## Ablation")
        lines.append("")
        lines.extend(_rows_table(abl["levels"], abl["level_order"]))
        lines.append("")
        for w in abl.get("warnings", []):
            lines.append(f"**Warning:** {w}")
            lines.append("")
    cd = report.get("cross_domain")
    if cd:
        lines.append(f"## Cross-domain: train={cd['train_origin']}, "
                     f"test={cd['test_origin']} (delta vs "
                     f"{cd['test_origin']}-trained in brackets)")
        lines.append("")
        lines.extend(_rows_table(cd["rows"], cd["row_names"],
                                 deltas=cd["deltas"]))
        lines.append("")
    for w in report.get("warnings", []):
        lines.append(f"**Warning:** {w}")
        lines.append("")
    return "\n".join(lines).rstrip() + "\n"


def _jsonable(report):
    """Recursively turn MetricsReport values into plain dicts."""
    if isinstance(report, MetricsReport):
        return report.to_dict()
    if isinstance(report, dict):
        return {k: _jsonable(v) for k, v in report.items()}
    if isinstance(report, (list, tuple)):
        return [_jsonable(v) for v in report]
    return report


def emit_report(report, path, fmt="json"):
    """Write a report file; JSON round-trips losslessly."""
    if not (report.get("rows") or report.get("ablation")
            or report.get("cross_domain")):
        raise EmptyReport("report has no rows, ablation or cross-domain data")
    if fmt == "json":
        text = json.dumps(_jsonable(report), sort_keys=True, indent=2)
    elif fmt == "markdown":
        text = render_markdown(report)
    else:
        raise InvalidConfig(f"unknown report format {fmt!r}")
    try:
        Path(path).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot write report {path}: {exc}") from exc
    return text
