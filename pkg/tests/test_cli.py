import json

import pytest

from voicekit import cli
from voicekit.corpus import parse_manifest

import helpers
from helpers import make_record, write_manifest


def run_cli(argv, capsys):
    code = cli.main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_validate_clean_manifest(tiny_corpus, capsys):
    code, out, err = run_cli(
        ["validate", "--manifest", str(tiny_corpus["manifest"]),
         "--check-files"], capsys)
    assert code == 0
    payload = json.loads(out)
    assert payload["records"] == len(tiny_corpus["records"])
    assert payload["diagnostics"] == 0


def test_validate_reports_problems(tmp_path, capsys):
    man = tmp_path / "bad.jsonl"
    man.write_text('{"clip_id": "x"}\n', encoding="utf-8")
    code, out, err = run_cli(["validate", "--manifest", str(man)], capsys)
    assert code == 1
    assert json.loads(out)["diagnostics"] == 1
    assert err.strip()  # diagnostics echoed on stderr


def test_validate_missing_manifest(tmp_path, capsys):
    code, out, err = run_cli(
        ["validate", "--manifest", str(tmp_path / "none.jsonl")], capsys)
    assert code == 1
    assert "io_failure" in err


def test_argparse_error_maps_to_exit_1(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["run", "--manifest", "x.jsonl"])  # --seed missing
    assert exc.value.code == 1


def test_stats(tiny_corpus, capsys):
    code, out, _ = run_cli(
        ["stats", "--manifest", str(tiny_corpus["manifest"])], capsys)
    assert code == 0
    stats = json.loads(out)
    assert stats["n_records"] == 16
    assert stats["n_healthy_speakers"] == 4


def test_concat_merges_and_rejects_duplicates(tmp_path, capsys):
    m1 = write_manifest([make_record(clip_id="a", speaker_id="s1")],
                        tmp_path / "m1.jsonl")
    m2 = write_manifest([make_record(clip_id="b", speaker_id="s2")],
                        tmp_path / "m2.jsonl")
    out_path = tmp_path / "merged.jsonl"
    code, _, _ = run_cli(
        ["concat", str(m1), str(m2), "--out", str(out_path)], capsys)
    assert code == 0
    assert len(parse_manifest(out_path)) == 2
    dup = write_manifest([make_record(clip_id="a", speaker_id="s3")],
                         tmp_path / "dup.jsonl")
    code, _, err = run_cli(
        ["concat", str(m1), str(dup), "--out", str(out_path)], capsys)
    assert code == 1


def test_concat_rebases_paths_across_directories(tmp_path, capsys):
    root = tmp_path / "c"
    manifest, _ = helpers.build_corpus(root, 2, 1, seed=36, vowel_s=1.0,
                                       n_syllables=4, vowels=("a",))
    syn_dir = tmp_path / "synthed"
    code, _, _ = run_cli(
        ["synth", "--manifest", str(manifest), "--out", str(syn_dir),
         "--seed", "4"], capsys)
    assert code == 0
    merged = tmp_path / "merged" / "full.jsonl"
    merged.parent.mkdir()
    code, _, _ = run_cli(
        ["concat", str(manifest), str(syn_dir / "synthetic.jsonl"),
         "--out", str(merged)], capsys)
    assert code == 0
    # every clip must resolve against the merged manifest's own directory
    code, out, _ = run_cli(
        ["validate", "--manifest", str(merged), "--check-files"], capsys)
    assert code == 0
    assert json.loads(out)["diagnostics"] == 0


def test_synth_writes_balancing_clips(tmp_path, capsys):
    root = tmp_path / "c"
    manifest, _ = helpers.build_corpus(root, 3, 1, seed=31, vowel_s=1.0,
                                       n_syllables=4, vowels=("a",))
    out_dir = tmp_path / "synout"
    code, out, _ = run_cli(
        ["synth", "--manifest", str(manifest), "--out", str(out_dir),
         "--seed", "5"], capsys)
    assert code == 0
    counts = json.loads(out)
    delta = out_dir / "synthetic.jsonl"
    assert delta.exists()
    rows = parse_manifest(delta)
    assert len(rows) == 4  # 2 sentence + 2 vowel deficits
    for rec in rows:
        assert rec.origin == "synthetic"
        assert rec.label == "pathological"
        assert (out_dir / rec.path).exists()


def test_augment_writes_variants(tmp_path, capsys):
    root = tmp_path / "c"
    manifest, records = helpers.build_corpus(root, 1, 1, seed=32,
                                             vowel_s=1.0, n_syllables=4,
                                             vowels=("a",))
    out_dir = tmp_path / "augout"
    code, out, _ = run_cli(
        ["augment", "--manifest", str(manifest), "--out", str(out_dir),
         "--seed", "6"], capsys)
    assert code == 0
    rows = parse_manifest(out_dir / "augmented.jsonl")
    # sentence policy yields 2 variants, vowel 1, per parent clip
    assert len(rows) == 2 * 2 + 2 * 1
    for rec in rows:
        assert rec.origin == "augmented"
        assert (out_dir / rec.path).exists()


def test_featurize_and_model_workflow(tmp_path, capsys):
    root = tmp_path / "c"
    manifest, records = helpers.build_corpus(root, 3, 3, seed=33,
                                             vowel_s=1.0, n_syllables=4,
                                             vowels=("a",))
    feat_dir = tmp_path / "feats"
    code, _, _ = run_cli(
        ["featurize", "--manifest", str(manifest), "--out", str(feat_dir)],
        capsys)
    assert code == 0
    assert len(list(feat_dir.glob("*.vkfc"))) == 12

    model_path = tmp_path / "m.vkem"
    code, out, _ = run_cli(
        ["train", "--manifest", str(manifest), "--out", str(model_path),
         "--seed", "1", "--recording-type", "vowel", "--epochs", "60"],
        capsys)
    assert code == 0
    assert model_path.exists()
    meta = json.loads(out)
    assert meta["final_loss"] < meta["initial_loss"]

    preds_path = tmp_path / "preds.jsonl"
    code, _, _ = run_cli(
        ["predict", "--manifest", str(manifest), "--model", str(model_path),
         "--out", str(preds_path)], capsys)
    assert code == 0
    assert len(preds_path.read_text().splitlines()) == 6

    code, out, _ = run_cli(
        ["combine", "--manifest", str(manifest),
         "--predictions", str(preds_path), "--score"], capsys)
    assert code == 0
    metrics = json.loads(out)
    assert metrics["n_sessions"] == 6
    assert set(metrics) >= {"accuracy", "macro_f1", "auc"}


def test_run_cv_and_report(tmp_path, capsys):
    root = tmp_path / "c"
    manifest, _ = helpers.build_corpus(root, 3, 3, seed=34, vowel_s=1.0,
                                       n_syllables=4, vowels=("a",))
    runs = tmp_path / "runs"
    argv = ["run", "--manifest", str(manifest), "--seed", "5", "--k", "3",
            "--epochs", "60", "--out", str(runs)]
    code, out, _ = run_cli(argv, capsys)
    assert code == 0
    summary = json.loads(out)
    run_dir = runs / summary["run_id"]
    assert (run_dir / "report.json").exists()
    assert (run_dir / "report.md").exists()
    assert (run_dir / "folds.json").exists()
    assert (run_dir / "config.json").exists()
    assert not (run_dir / "lock").exists()
    assert len(list((run_dir / "models").glob("*.vkem"))) == 6
    assert len(list((run_dir / "predictions").glob("*.jsonl"))) == 3
    assert len(list((run_dir / "decisions").glob("*.jsonl"))) == 3
    assert set(summary["rows"]) == {"sentence", "vowel", "moe"}

    # a rerun reuses the cache and lands in the same directory
    code, out2, _ = run_cli(argv, capsys)
    assert code == 0
    assert json.loads(out2)["run_id"] == summary["run_id"]

    code, rendered, _ = run_cli(
        ["report", "--run", str(run_dir)], capsys)
    assert code == 0
    assert "| row |" in rendered


def test_run_exits_2_on_leakage(tmp_path, tiny_corpus, capsys):
    records = list(tiny_corpus["records"])
    victim = records[0]
    other = next(r for r in records if r.speaker_id != victim.speaker_id)
    evil = make_record(
        clip_id="evil", path=victim.path, speaker_id=other.speaker_id,
        recording_type=victim.recording_type, label=victim.label,
        origin="augmented", dataset_id=victim.dataset_id,
        provenance={"parent_clip_id": victim.clip_id, "ops": []})
    tampered = write_manifest(records + [evil], tmp_path / "tampered.jsonl")
    code, _, err = run_cli(
        ["run", "--manifest", str(tampered),
         "--audio-root", str(tiny_corpus["root"]),
         "--seed", "3", "--k", "2",
         "--epochs", "40", "--out", str(tmp_path / "runs")], capsys)
    assert code == 2
    assert "evil" in err


def test_run_rejects_bad_cross_domain(tmp_path, tiny_corpus, capsys):
    code, _, err = run_cli(
        ["run", "--manifest", str(tiny_corpus["manifest"]), "--seed", "1",
         "--k", "2", "--out", str(tmp_path / "runs"),
         "--cross-domain", "train=imaginary"], capsys)
    assert code == 1
    assert "imaginary" in err
