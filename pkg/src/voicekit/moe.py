"""Session-level combination of expert predictions.

Clips from one recording session are scored by every available expert. Each
expert's clip-level probability vectors are averaged within the session, the
Shannon entropy (nats) of each averaged vector is computed, and the session
adopts the prediction of the least uncertain expert. Near-exact entropy ties
fall back to a fixed priority order so results stay deterministic.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from voicekit.errors import (EmptyGroup, InconsistentClassNames, NotNormalized,
                             UnknownClipId)
from voicekit.experts import Prediction

DEFAULT_PRIORITY = ("sentence", "vowel")
_TIE_EPS = 1e-12


def entropy(probs):
    """Shannon entropy in nats of a probability vector.

    Zero entries contribute zero. Vectors with negative mass or a total off
    1 by more than 1e-6 are rejected.
    """
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise NotNormalized(f"expected a 1-d probability vector, got {p.shape}")
    if np.any(p < -1e-12):
        raise NotNormalized("negative probability mass")
    total = float(p.sum())
    if abs(total - 1.0) > 1e-6:
        raise NotNormalized(f"probabilities sum to {total}")
    p = np.clip(p, 0.0, None)
    nz = p[p > 0.0]
    return float(-np.sum(nz * np.log(nz))) + 0.0


@dataclass(frozen=True)
class SessionGroup:
    """All predictions for one (speaker, session), keyed by expert id."""

    session_id: str
    speaker_id: str
    predictions: dict  # expert_id -> list[Prediction]

    def __post_init__(self):
        if not self.predictions or all(
                not v for v in self.predictions.values()):
            raise EmptyGroup(
                f"session {self.session_id!r} has no predictions")


@dataclass(frozen=True)
class MoeDecision:
    session_id: str
    speaker_id: str
    chosen_expert_id: str
    entropies: dict           # expert_id -> float, all candidates
    class_names: tuple
    probs: np.ndarray         # session probability vector of the winner
    tie_broken: bool = False
    expert_probs: dict = field(default_factory=dict)

    def top_class(self):
        return self.class_names[int(np.argmax(self.probs))]


def aggregate_within_expert(predictions):
    """Mean of an expert's clip probabilities, renormalized exactly.

    All predictions must share one class list (order-sensitive).
    """
    if not predictions:
        raise EmptyGroup("no predictions to aggregate")
    names = predictions[0].class_names
    for p in predictions[1:]:
        if p.class_names != names:
            raise InconsistentClassNames(
                f"{p.class_names} != {names} within one expert group")
    mean = np.mean([p.probs for p in predictions], axis=0)
    return names, mean / mean.sum()


def select_prediction(group, priority=DEFAULT_PRIORITY):
    """Pick the least-entropy expert for one session.

    Experts whose aggregated entropies differ by less than 1e-12 are ranked
    by the priority tuple (experts absent from it come last, in name order);
    the decision is flagged tie_broken in that case.
    """
    candidates = {}
    names_by_expert = {}
    for expert_id, preds in group.predictions.items():
        if not preds:
            continue
        names, mean = aggregate_within_expert(preds)
        candidates[expert_id] = mean
        names_by_expert[expert_id] = names
    if not candidates:
        raise EmptyGroup(f"session {group.session_id!r} has no predictions")
    entropies = {e: entropy(p) for e, p in candidates.items()}

    def rank(expert_id):
        try:
            return (0, priority.index(expert_id))
        except ValueError:
            return (1, expert_id)

    ordered = sorted(candidates, key=lambda e: (entropies[e],) + rank(e))
    best = ordered[0]
    tie = any(abs(entropies[e] - entropies[best]) < _TIE_EPS
              for e in ordered[1:])
    return MoeDecision(
        session_id=group.session_id, speaker_id=group.speaker_id,
        chosen_expert_id=best, entropies=entropies,
        class_names=names_by_expert[best], probs=candidates[best],
        tie_broken=tie,
        expert_probs={e: candidates[e] for e in candidates})


def group_by_session(records, predictions_by_expert):
    """Arrange clip predictions into SessionGroups.

    records supply the clip -> (speaker, session) mapping; any prediction
    for a clip_id absent from records is an error. Groups come back sorted
    by (speaker_id, session_id).
    """
    meta = {r.clip_id: (r.speaker_id, r.session_id) for r in records}
    buckets = {}
    for expert_id, preds in predictions_by_expert.items():
        for p in preds:
            if p.clip_id not in meta:
                raise UnknownClipId(
                    f"prediction for unknown clip {p.clip_id!r}")
            key = meta[p.clip_id]
            buckets.setdefault(key, {}).setdefault(expert_id, []).append(p)
    groups = []
    for (speaker_id, session_id) in sorted(buckets):
        groups.append(SessionGroup(
            session_id=session_id, speaker_id=speaker_id,
            predictions=buckets[(speaker_id, session_id)]))
    return groups


def combine_corpus(records, predictions_by_expert, priority=DEFAULT_PRIORITY):
    """Session decisions for a whole corpus, sorted by (speaker, session)."""
    return [select_prediction(g, priority)
            for g in group_by_session(records, predictions_by_expert)]


def write_decisions(decisions, path):
    lines = []
    for d in decisions:
        lines.append(json.dumps({
            "session_id": d.session_id,
            "speaker_id": d.speaker_id,
            "chosen_expert": d.chosen_expert_id,
            "entropies": {k: float(v) for k, v in sorted(d.entropies.items())},
            "class_names": list(d.class_names),
            "probs": [float(x) for x in d.probs],
            "tie_broken": d.tie_broken,
        }, sort_keys=True))
    Path(path).write_text("".join(line + "\n" for line in lines),
                          encoding="utf-8")
