"""Command line entry points.

Exit codes: 0 success, 1 user or data error (any package error except the
leakage guard), 2 internal invariant violation (the leakage guard). The
`run` command materializes a run directory named by a fingerprint of the
resolved configuration plus the manifest digest, guarded by a lock file,
and reuses cached pooled features on re-runs.
"""

import argparse
import dataclasses
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from voicekit import augment as augment_mod
from voicekit import corpus as corpus_mod
from voicekit import evaluate as eval_mod
from voicekit import moe as moe_mod
from voicekit import synth as synth_mod
from voicekit.audio import load_wav, save_wav
from voicekit.errors import (InvalidConfig, IoFailure, LeakageDetected,
                             VoicekitError)
from voicekit.experts import (TrainConfig, load_external_predictions,
                              load_model, predict, save_model, train_expert,
                              warm_start_classifier, write_predictions)
from voicekit.features import (FrameSpec, MfccConfig, log_mel, mfcc,
                               pool_stats, write_cache)
from voicekit.util import canonical_json, sha256_hex


class _Parser(argparse.ArgumentParser):
    """argparse variant that exits 1 on bad arguments, not 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _read_manifest(path):
    return corpus_mod.parse_manifest(path)


def _audio_root(args):
    if args.audio_root is not None:
        return Path(args.audio_root)
    return Path(args.manifest).resolve().parent


def _load_clip(rec, root):
    path = corpus_mod.resolve_audio_path(rec, root)
    try:
        return load_wav(path, clip_id=rec.clip_id)
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc


def _pmap(fn, items, jobs):
    return eval_mod._pmap(fn, items, jobs)


# -- simple commands --------------------------------------------------------------------

def cmd_validate(args):
    records, diags = corpus_mod.validate_manifest(
        args.manifest, check_files=args.check_files,
        audio_root=args.audio_root)
    for d in diags:
        print(json.dumps(d, sort_keys=True), file=sys.stderr)
    print(json.dumps({"records": len(records), "diagnostics": len(diags)}))
    return 0 if not diags else 1


def cmd_stats(args):
    records = _read_manifest(args.manifest)
    stats = corpus_mod.corpus_stats(
        records, audio_root=args.audio_root)
    print(json.dumps(stats.to_dict(), sort_keys=True, indent=2))
    return 0


def cmd_concat(args):
    # source manifests may live in different directories; relative clip
    # paths are rebased onto the merged manifest's own directory so the
    # default audio-root resolution keeps working
    out_base = Path(args.out).resolve().parent if args.out else Path.cwd()
    merged = []
    seen = {}
    speaker_label = {}
    for path in args.manifests:
        src_base = Path(path).resolve().parent
        for rec in _read_manifest(path):
            if rec.clip_id in seen:
                raise InvalidConfig(
                    f"clip_id {rec.clip_id!r} appears in both "
                    f"{seen[rec.clip_id]} and {path}")
            prior = speaker_label.get(rec.speaker_id)
            if prior is not None and prior != rec.label:
                raise InvalidConfig(
                    f"speaker {rec.speaker_id!r} labeled {prior!r} and "
                    f"{rec.label!r} across manifests")
            seen[rec.clip_id] = str(path)
            speaker_label[rec.speaker_id] = rec.label
            if not Path(rec.path).is_absolute():
                rebased = os.path.relpath(src_base / rec.path, out_base)
                if rebased != rec.path:
                    rec = dataclasses.replace(rec, path=rebased)
            merged.append(rec)
    text = corpus_mod.serialize_manifest(merged)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    print(json.dumps({"records": len(merged)}), file=sys.stderr)
    return 0


def cmd_synth(args):
    records = _read_manifest(args.manifest)
    key = "label" if args.task == "detection" else "pathology_class"
    plan = synth_mod.plan_balancing(
        [r for r in records if r.origin == "real"], key=key)
    presets = None
    if args.presets:
        presets = synth_mod.load_presets(args.presets)
    pairs = synth_mod.execute_plan(
        plan, presets=presets, sample_rate_hz=args.sample_rate,
        seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def render(pair):
        clip, rec = pair
        save_wav(clip, out / rec.path)
        return rec

    new_records = _pmap(render, pairs, args.jobs)
    delta = out / "synthetic.jsonl"
    delta.write_text(corpus_mod.serialize_manifest(new_records),
                     encoding="utf-8")
    counts = {}
    for _, rec in pairs:
        key = f"{rec.recording_type}/{rec.label}"
        counts[key] = counts.get(key, 0) + 1
    print(json.dumps({"generated": counts, "total": len(pairs),
                      "manifest_delta": str(delta)}, sort_keys=True))
    return 0


def cmd_augment(args):
    records = _read_manifest(args.manifest)
    root = _audio_root(args)
    policies = (augment_mod.load_policies(args.policies)
                if args.policies else augment_mod.DEFAULT_POLICIES)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def expand(rec):
        if rec.origin not in ("real", "synthetic"):
            return []
        policy = policies.get(rec.recording_type)
        if policy is None:
            return []
        clip = _load_clip(rec, root)
        produced = []
        for variant, vrec in augment_mod.apply_policy(
                clip, rec, policy, seed=args.seed):
            save_wav(variant, out / Path(vrec.path).name)
            produced.append(vrec)
        return produced

    new_records = [r for chunk in _pmap(expand, records, args.jobs)
                   for r in chunk]
    delta = out / "augmented.jsonl"
    delta.write_text(corpus_mod.serialize_manifest(new_records),
                     encoding="utf-8")
    print(json.dumps({"variants": len(new_records),
                      "manifest_delta": str(delta)}, sort_keys=True))
    return 0


def cmd_featurize(args):
    records = _read_manifest(args.manifest)
    root = _audio_root(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    frame = FrameSpec()
    cfg = MfccConfig()

    def one(rec):
        clip = _load_clip(rec, root)
        matrix = (mfcc(clip, frame, cfg) if args.kind == "mfcc"
                  else log_mel(clip, frame, cfg))
        write_cache(matrix, out / f"{rec.clip_id}.vkfc")
        return matrix.n_frames

    frames = _pmap(one, records, args.jobs)
    print(json.dumps({"clips": len(records), "frames": int(sum(frames))}))
    return 0


def _pooled_rows(records, root, jobs):
    frame, cfg = FrameSpec(), MfccConfig()

    def one(rec):
        clip = _load_clip(rec, root)
        return pool_stats(mfcc(clip, frame, cfg))

    return np.stack(_pmap(one, records, jobs))


def cmd_train(args):
    records = _read_manifest(args.manifest)
    root = _audio_root(args)
    rows = [r for r in records
            if eval_mod._rtype_matches(args.recording_type,
                                       r.recording_type)]
    if args.task == "classification":
        rows = [r for r in rows if r.pathology_class is not None]
        labels = [r.pathology_class for r in rows]
    else:
        labels = [r.label for r in rows]
    X = _pooled_rows(rows, root, args.jobs)
    cfg = TrainConfig(epochs=args.epochs, seed=args.seed)
    init = None
    if args.init_model:
        donor = load_model(args.init_model)
        init = warm_start_classifier(
            donor, tuple(sorted(set(labels))), cfg,
            expert_id=args.recording_type)
    model = train_expert(
        X, labels, cfg, recording_type=args.recording_type,
        expert_id=args.recording_type, init_model=init,
        provenance_tag=init.provenance_tag if init else "builtin")
    save_model(model, args.out)
    print(json.dumps({"model": str(args.out), **model.train_meta},
                     sort_keys=True))
    return 0


def cmd_predict(args):
    model = load_model(args.model)
    records = _read_manifest(args.manifest)
    root = _audio_root(args)
    rows = [r for r in records
            if eval_mod._rtype_matches(model.recording_type,
                                       r.recording_type)]
    X = _pooled_rows(rows, root, args.jobs)
    preds = [predict(model, X[i], clip_id=rows[i].clip_id)
             for i in range(len(rows))]
    write_predictions(preds, args.out)
    print(json.dumps({"predictions": len(preds), "out": str(args.out)}))
    return 0


def cmd_combine(args):
    records = _read_manifest(args.manifest)
    by_expert = {}
    for path in args.predictions:
        for p in load_external_predictions(path):
            by_expert.setdefault(p.expert_id, []).append(p)
    priority = tuple(args.priority.split(","))
    if args.score:
        metrics, decisions = eval_mod.score_sessions(
            records, by_expert, task=args.task, priority=priority)
        if args.out:
            moe_mod.write_decisions(decisions, args.out)
        print(json.dumps(metrics, sort_keys=True))
    else:
        decisions = moe_mod.combine_corpus(records, by_expert,
                                           priority=priority)
        if args.out:
            moe_mod.write_decisions(decisions, args.out)
        else:
            for d in decisions:
                print(json.dumps({
                    "session_id": d.session_id,
                    "speaker_id": d.speaker_id,
                    "chosen_expert": d.chosen_expert_id,
                    "tie_broken": d.tie_broken}, sort_keys=True))
    return 0


# -- run --------------------------------------------------------------------

def _pipeline_config(args):
    policies = (augment_mod.load_policies(args.policies)
                if args.policies else None)
    presets = None
    if args.presets:
        presets = tuple(synth_mod.load_presets(args.presets).values())
    return eval_mod.PipelineConfig(
        task=args.task,
        experts=tuple(args.experts.split(",")),
        moe=args.moe,
        priority=tuple(args.priority.split(",")),
        augment=args.augment,
        synth_balance=args.synth_balance,
        warm_start=args.warm_start,
        external_predictions=tuple(args.external_predictions or ()),
        train=TrainConfig(epochs=args.epochs, seed=args.seed),
        augment_policies=policies,
        synth_presets=presets,
    )


def _runs_root(args):
    if args.out:
        return Path(args.out)
    env = os.environ.get("VOICEKIT_RUNS_DIR")
    return Path(env) if env else Path("runs")


def _parse_cross_domain(values):
    spec = {"train": "synthetic", "test": "real"}
    for v in values:
        if "=" not in v:
            raise InvalidConfig(
                f"cross-domain spec {v!r} must look like train=synthetic")
        key, _, val = v.partition("=")
        if key not in spec or val not in corpus_mod.ORIGINS:
            raise InvalidConfig(f"bad cross-domain spec {v!r}")
        spec[key] = val
    return spec


class _RunLock:
    def __init__(self, run_dir):
        self.path = run_dir / "lock"
        self.fd = None

    def __enter__(self):
        try:
            self.fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise IoFailure(
                f"run directory {self.path.parent} is locked by another "
                f"writer (stale lock? remove {self.path})") from None
        os.write(self.fd, str(os.getpid()).encode())
        return self

    def __exit__(self, *exc):
        if self.fd is not None:
            os.close(self.fd)
            self.path.unlink(missing_ok=True)
        return False


def cmd_run(args):
    records = _read_manifest(args.manifest)
    root = _audio_root(args)
    config = _pipeline_config(args)

    mode = "cv"
    levels = []
    cross = None
    if args.ablate:
        mode = "ablation"
        levels = [s.strip() for s in args.ablate.split(",") if s.strip()]
    if args.cross_domain:
        if mode != "cv":
            raise InvalidConfig("--ablate and --cross-domain are exclusive")
        mode = "cross_domain"
        cross = _parse_cross_domain(args.cross_domain)

    manifest_digest = sha256_hex(Path(args.manifest).read_bytes())
    run_key = {
        "pipeline": config.to_dict(), "k": args.k, "seed": args.seed,
        "mode": mode, "levels": levels, "cross": cross,
        "manifest_sha256": manifest_digest,
    }
    run_id = sha256_hex(canonical_json(run_key).encode())[:16]
    run_dir = _runs_root(args) / run_id
    run_dir.mkdir(parents=True, exist_ok=True)

    with _RunLock(run_dir):
        (run_dir / "config.json").write_text(
            json.dumps({**run_key, "manifest": str(args.manifest),
                        "run_id": run_id}, sort_keys=True, indent=2),
            encoding="utf-8")
        cache_dir = run_dir / "cache"
        report = {"task": config.task, "k": args.k, "seed": args.seed,
                  "run_id": run_id, "warnings": []}

        if mode == "ablation":
            abl = eval_mod.run_ablation(
                records, levels, k=args.k, seed=args.seed,
                base_config=config, audio_root=root, jobs=args.jobs,
                cache_dir=cache_dir)
            report["fold_fingerprint"] = abl["fold_fingerprint"]
            report["ablation"] = abl
            report["warnings"].extend(abl["warnings"])
        elif mode == "cross_domain":
            cd = eval_mod.run_cross_domain(
                records, config, k=args.k, seed=args.seed,
                train_origin=cross["train"], test_origin=cross["test"],
                audio_root=root, jobs=args.jobs, cache_dir=cache_dir)
            report["fold_fingerprint"] = cd["fold_fingerprint"]
            report["cross_domain"] = cd
        else:
            result = eval_mod.evaluate_folds(
                records, config, k=args.k, seed=args.seed,
                audio_root=root, jobs=args.jobs, cache_dir=cache_dir)
            folds = result["folds"]
            report["fold_fingerprint"] = folds.fingerprint
            report["rows"] = result["rows"]
            report["row_names"] = result["row_names"]
            (run_dir / "folds.json").write_text(json.dumps({
                "k": folds.k, "seed": folds.seed,
                "fingerprint": folds.fingerprint,
                "assignment": folds.assignment,
            }, sort_keys=True, indent=2), encoding="utf-8")
            models_dir = run_dir / "models"
            preds_dir = run_dir / "predictions"
            decisions_dir = run_dir / "decisions"
            for d in (models_dir, preds_dir, decisions_dir):
                d.mkdir(exist_ok=True)
            headline = ("moe" if "moe" in result["row_names"]
                        else result["row_names"][0])
            for art in result["artifacts"]:
                f = art["fold"]
                for spec, model in art["models"].items():
                    save_model(model,
                               models_dir / f"fold{f:02d}.{spec}.vkem")
                clip_preds = [p for preds in art["predictions"].values()
                              for p in preds]
                write_predictions(clip_preds,
                                  preds_dir / f"fold{f:02d}.jsonl")
                moe_mod.write_decisions(
                    art["decisions"][headline],
                    decisions_dir / f"fold{f:02d}.jsonl")

        eval_mod.emit_report(report, run_dir / "report.json", fmt="json")
        eval_mod.emit_report(report, run_dir / "report.md", fmt="markdown")

    summary = {"run_dir": str(run_dir), "run_id": run_id,
               "fold_fingerprint": report["fold_fingerprint"]}
    if "rows" in report:
        summary["rows"] = {name: rep.aggregate
                           for name, rep in report["rows"].items()}
    if "ablation" in report:
        summary["ablation"] = {
            lv: rep.aggregate["auc"]["mean"]
            for lv, rep in report["ablation"]["levels"].items()}
    if "cross_domain" in report:
        summary["deltas"] = report["cross_domain"]["deltas"]
    if report["warnings"]:
        summary["warnings"] = report["warnings"]
    print(json.dumps(summary, sort_keys=True, indent=2))
    return 0


def cmd_report(args):
    run_dir = Path(args.run)
    source = run_dir / "report.json"
    try:
        data = json.loads(source.read_text(encoding="utf-8"))
    except OSError as exc:
        raise IoFailure(f"cannot read {source}: {exc}") from exc
    if args.format == "json":
        print(json.dumps(data, sort_keys=True, indent=2))
    else:
        def revive(rows):
            return {name: eval_mod.MetricsReport(
                task=r["task"], row_name=r["row"], k=r["k"], seed=r["seed"],
                per_fold=tuple(r["per_fold"]), aggregate=r["aggregate"],
                config_fingerprint=r["config_fingerprint"],
                fold_fingerprint=r["fold_fingerprint"])
                for name, r in rows.items()}
        if data.get("rows"):
            data["rows"] = revive(data["rows"])
        if data.get("ablation"):
            data["ablation"]["levels"] = revive(data["ablation"]["levels"])
        if data.get("cross_domain"):
            cd = data["cross_domain"]
            cd["rows"] = revive(cd["rows"])
            cd["baseline_rows"] = revive(cd["baseline_rows"])
        print(eval_mod.render_markdown(data))
    return 0


# -- parser --------------------------------------------------------------------

def _add_common(p, manifest=True):
    if manifest:
        p.add_argument("--manifest", required=True,
                       help="JSONL corpus manifest")
        p.add_argument("--audio-root", default=None,
                       help="base directory for relative audio paths "
                            "(default: the manifest's directory)")
    p.add_argument("--jobs", type=int, default=1,
                   help="parallel workers for per-clip work")


def build_parser():
    parser = _Parser(prog="voicekit",
                     description="Voice pathology screening toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--audio-root", default=None)
    p.add_argument("--check-files", action=argparse.BooleanOptionalAction,
                   default=False, help="also verify referenced WAVs exist")
    p.set_defaults(fn=cmd_validate)

    p = sub.add_parser("stats", help="corpus summary")
    p.add_argument("--manifest", required=True)
    p.add_argument("--audio-root", default=None)
    p.set_defaults(fn=cmd_stats)

    p = sub.add_parser("concat", help="merge manifests")
    p.add_argument("manifests", nargs="+")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_concat)

    p = sub.add_parser("synth", help="generate balancing synthetic clips")
    _add_common(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--task", choices=("detection", "classification"),
                   default="detection")
    p.add_argument("--presets", default=None, help="JSON preset file")
    p.add_argument("--sample-rate", type=int, default=16000)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("augment", help="write augmented variants")
    _add_common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--policies", default=None, help="JSON policy file")
    p.set_defaults(fn=cmd_augment)

    p = sub.add_parser("featurize", help="write feature caches")
    _add_common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--kind", choices=("mfcc", "logmel"), default="mfcc")
    p.set_defaults(fn=cmd_featurize)

    p = sub.add_parser("train", help="train one expert")
    _add_common(p)
    p.add_argument("--out", required=True, help="model file")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--task", choices=("detection", "classification"),
                   default="detection")
    p.add_argument("--recording-type", choices=("sentence", "vowel", "all"),
                   default="sentence")
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--init-model", default=None,
                   help="warm-start from this detection model")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("predict", help="clip predictions from a model")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_predict)

    p = sub.add_parser("combine", help="session decisions from predictions")
    p.add_argument("--manifest", required=True)
    p.add_argument("--predictions", action="append", required=True,
                   help="JSONL prediction file (repeatable)")
    p.add_argument("--out", default=None, help="decisions JSONL")
    p.add_argument("--score", action=argparse.BooleanOptionalAction,
                   default=False, help="print session metrics")
    p.add_argument("--task", choices=("detection", "classification"),
                   default="detection")
    p.add_argument("--priority", default="sentence,vowel")
    p.set_defaults(fn=cmd_combine)

    p = sub.add_parser("run", help="cross-validated experiment")
    _add_common(p)
    p.add_argument("--out", default=None,
                   help="runs root (default $VOICEKIT_RUNS_DIR or ./runs)")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--task", choices=("detection", "classification"),
                   default="detection")
    p.add_argument("--experts", default="sentence,vowel",
                   help="comma list of sentence,vowel or all")
    p.add_argument("--moe", action=argparse.BooleanOptionalAction,
                   default=True)
    p.add_argument("--priority", default="sentence,vowel")
    p.add_argument("--augment", action=argparse.BooleanOptionalAction,
                   default=False)
    p.add_argument("--synth-balance", action=argparse.BooleanOptionalAction,
                   default=False)
    p.add_argument("--warm-start", action=argparse.BooleanOptionalAction,
                   default=False)
    p.add_argument("--external-predictions", action="append", default=None,
                   help="external predictions JSONL (repeatable)")
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--policies", default=None)
    p.add_argument("--presets", default=None)
    p.add_argument("--ablate", default=None,
                   help="comma list of base,data_pp,tts,moe,moe_star,all")
    p.add_argument("--cross-domain", nargs="*", default=None,
                   metavar="KEY=ORIGIN",
                   help="e.g. train=synthetic test=real")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("report", help="render a run's report")
    p.add_argument("--run", required=True, help="run directory")
    p.add_argument("--format", choices=("json", "markdown"),
                   default="markdown")
    p.set_defaults(fn=cmd_report)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except LeakageDetected as exc:
        print(f"voicekit: invariant violation: {exc}", file=sys.stderr)
        return 2
    except VoicekitError as exc:
        print(f"voicekit: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
