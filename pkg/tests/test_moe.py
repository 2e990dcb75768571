import json
import math

import numpy as np
import pytest

from voicekit import moe
from voicekit.errors import (EmptyGroup, InconsistentClassNames,
                             NotNormalized, UnknownClipId)
from voicekit.experts import Prediction

from helpers import make_record


def _pred(clip_id, probs, expert_id="sentence", classes=("a", "b")):
    return Prediction(clip_id, expert_id, tuple(classes),
                      np.asarray(probs, dtype=np.float64))


def test_entropy_basics():
    assert moe.entropy(np.array([1.0, 0.0])) == 0.0
    for k in (2, 5, 16):
        u = np.full(k, 1.0 / k)
        assert abs(moe.entropy(u) - math.log(k)) < 1e-12
    # order invariance up to float summation noise
    p = np.array([0.7, 0.2, 0.1])
    assert abs(moe.entropy(p) - moe.entropy(p[::-1].copy())) < 1e-15


def test_entropy_validation():
    with pytest.raises(NotNormalized):
        moe.entropy(np.array([0.5, 0.6]))
    with pytest.raises(NotNormalized):
        moe.entropy(np.array([-0.1, 1.1]))
    with pytest.raises(NotNormalized):
        moe.entropy(np.array([[0.5, 0.5]]))
    with pytest.raises(NotNormalized):
        moe.entropy(np.array([]))


def test_aggregate_within_expert_means_probs():
    preds = [_pred("c1", [0.9, 0.1]), _pred("c2", [0.5, 0.5]),
             _pred("c3", [0.7, 0.3])]
    names, agg = moe.aggregate_within_expert(preds)
    assert names == ("a", "b")
    assert np.allclose(agg, [0.7, 0.3], atol=1e-15)
    assert agg.sum() == 1.0
    with pytest.raises(EmptyGroup):
        moe.aggregate_within_expert([])
    with pytest.raises(InconsistentClassNames):
        moe.aggregate_within_expert(
            [_pred("c1", [0.9, 0.1]),
             _pred("c2", [0.5, 0.5], classes=("b", "a"))])


def test_select_prediction_picks_lowest_entropy():
    group = moe.SessionGroup("s1", "spk", {
        "sentence": [_pred("c1", [0.5, 0.5])],
        "vowel": [_pred("c2", [0.95, 0.05], expert_id="vowel")],
    })
    decision = moe.select_prediction(group)
    assert decision.chosen_expert_id == "vowel"
    assert not decision.tie_broken
    assert decision.entropies["vowel"] < decision.entropies["sentence"]
    assert np.allclose(decision.probs, [0.95, 0.05])
    assert decision.top_class() == "a"
    assert set(decision.expert_probs) == {"sentence", "vowel"}


def test_select_prediction_tie_breaks_by_priority():
    group = moe.SessionGroup("s1", "spk", {
        "sentence": [_pred("c1", [0.8, 0.2])],
        "vowel": [_pred("c2", [0.2, 0.8], expert_id="vowel")],
    })
    decision = moe.select_prediction(group)
    assert decision.tie_broken
    assert decision.chosen_expert_id == "sentence"
    flipped = moe.select_prediction(group, priority=("vowel", "sentence"))
    assert flipped.chosen_expert_id == "vowel"
    # experts outside the priority list rank after listed ones, by name
    group2 = moe.SessionGroup("s1", "spk", {
        "zeta": [_pred("c1", [0.8, 0.2], expert_id="zeta")],
        "alpha": [_pred("c2", [0.2, 0.8], expert_id="alpha")],
    })
    decision2 = moe.select_prediction(group2, priority=())
    assert decision2.chosen_expert_id == "alpha"


def test_session_group_requires_predictions():
    with pytest.raises(EmptyGroup):
        moe.SessionGroup("s1", "spk", {})
    with pytest.raises(EmptyGroup):
        moe.SessionGroup("s1", "spk", {"sentence": []})


def test_group_by_session_buckets_by_speaker_and_session():
    records = [
        make_record(clip_id="a1", speaker_id="sp1", session_id="s1"),
        make_record(clip_id="a2", speaker_id="sp1", session_id="s1",
                    recording_type="sentence"),
        make_record(clip_id="b1", speaker_id="sp2", session_id="s1"),
    ]
    preds = {
        "vowel": [_pred("a1", [0.6, 0.4], expert_id="vowel"),
                  _pred("b1", [0.1, 0.9], expert_id="vowel")],
        "sentence": [_pred("a2", [0.7, 0.3])],
    }
    groups = moe.group_by_session(records, preds)
    assert [(g.speaker_id, g.session_id) for g in groups] == [
        ("sp1", "s1"), ("sp2", "s1")]
    assert set(groups[0].predictions) == {"vowel", "sentence"}
    assert set(groups[1].predictions) == {"vowel"}


def test_group_by_session_rejects_unknown_clip():
    records = [make_record(clip_id="a1")]
    with pytest.raises(UnknownClipId):
        moe.group_by_session(records,
                             {"vowel": [_pred("ghost", [0.5, 0.5])]})


def test_combine_corpus_one_decision_per_session():
    records = [
        make_record(clip_id="a1", speaker_id="sp1"),
        make_record(clip_id="b1", speaker_id="sp2"),
        make_record(clip_id="b2", speaker_id="sp2"),
    ]
    preds = {"vowel": [_pred("a1", [0.9, 0.1], expert_id="vowel"),
                       _pred("b1", [0.3, 0.7], expert_id="vowel"),
                       _pred("b2", [0.2, 0.8], expert_id="vowel")]}
    decisions = moe.combine_corpus(records, preds)
    assert len(decisions) == 2
    by_spk = {d.speaker_id: d for d in decisions}
    assert np.allclose(by_spk["sp2"].probs, [0.25, 0.75])


def test_write_decisions_jsonl(tmp_path):
    group = moe.SessionGroup("s1", "spk", {
        "sentence": [_pred("c1", [0.8, 0.2])]})
    decision = moe.select_prediction(group)
    path = tmp_path / "dec.jsonl"
    moe.write_decisions([decision], path)
    rows = [json.loads(line) for line in
            path.read_text(encoding="utf-8").splitlines()]
    assert len(rows) == 1
    row = rows[0]
    assert row["session_id"] == "s1"
    assert row["chosen_expert"] == "sentence"
    assert row["class_names"] == ["a", "b"]
    assert row["probs"] == [0.8, 0.2]
    assert row["tie_broken"] is False
