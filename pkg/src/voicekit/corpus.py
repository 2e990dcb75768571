"""Corpus manifests: one JSON object per line describing one audio clip.

Row schema (keys in any order; unknown keys rejected):

    clip_id        unique string
    path           WAV location, relative paths resolve against a base dir
    dataset_id     source collection name
    speaker_id     speaker identity; carries exactly one label corpus-wide
    session_id     recording session; unit of evaluation
    recording_type "sentence" | "vowel"
    vowel_label    optional, vowel records only: a|e|i|o|u
    label          "healthy" | "pathological"
    pathology_class optional, pathological records only
    origin         "real" | "synthetic" | "augmented"
    language       BCP-ish language tag, free string
    provenance     optional object: augmented rows carry parent_clip_id and
                   ops; synthetic rows may carry preset / conditioned_on

parse_manifest raises on the first problem; validate_manifest collects every
problem as a diagnostic dict (the CLI turns those into JSONL on stderr).
"""

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from voicekit import audio
from voicekit.errors import (ConflictingSpeakerLabel, DuplicateClipId,
                             SchemaViolation, VoicekitError)

RECORDING_TYPES = ("sentence", "vowel")
VOWELS = ("a", "e", "i", "o", "u")
LABELS = ("healthy", "pathological")
ORIGINS = ("real", "synthetic", "augmented")

_REQUIRED = ("clip_id", "path", "dataset_id", "speaker_id", "session_id",
             "recording_type", "label", "origin", "language")
_OPTIONAL = ("vowel_label", "pathology_class", "provenance")


@dataclass(frozen=True)
class ClipRecord:
    clip_id: str
    path: str
    dataset_id: str
    speaker_id: str
    session_id: str
    recording_type: str
    label: str
    origin: str
    language: str
    vowel_label: Optional[str] = None
    pathology_class: Optional[str] = None
    provenance: Optional[dict] = field(default=None)

    def to_dict(self):
        d = {
            "clip_id": self.clip_id,
            "path": self.path,
            "dataset_id": self.dataset_id,
            "speaker_id": self.speaker_id,
            "session_id": self.session_id,
            "recording_type": self.recording_type,
            "label": self.label,
            "origin": self.origin,
            "language": self.language,
        }
        if self.vowel_label is not None:
            d["vowel_label"] = self.vowel_label
        if self.pathology_class is not None:
            d["pathology_class"] = self.pathology_class
        if self.provenance is not None:
            d["provenance"] = self.provenance
        return d


def _violation(line, field_name, message):
    return SchemaViolation(
        f"line {line}: {message}" if line else message,
        line=line, field=field_name)


def record_from_dict(obj, line=None):
    """Validate one manifest row and build a ClipRecord."""
    if not isinstance(obj, dict):
        raise _violation(line, None, "row is not a JSON object")
    unknown = set(obj) - set(_REQUIRED) - set(_OPTIONAL)
    if unknown:
        raise _violation(line, sorted(unknown)[0],
                         f"unknown keys {sorted(unknown)}")
    for key in _REQUIRED:
        if key not in obj:
            raise _violation(line, key, f"missing key {key!r}")
        if not isinstance(obj[key], str) or not obj[key]:
            raise _violation(line, key, f"{key!r} must be a non-empty string")
    if obj["recording_type"] not in RECORDING_TYPES:
        raise _violation(line, "recording_type",
                         f"recording_type must be one of {RECORDING_TYPES}")
    if obj["label"] not in LABELS:
        raise _violation(line, "label", f"label must be one of {LABELS}")
    if obj["origin"] not in ORIGINS:
        raise _violation(line, "origin", f"origin must be one of {ORIGINS}")
    vowel_label = obj.get("vowel_label")
    if vowel_label is not None:
        if obj["recording_type"] != "vowel":
            raise _violation(line, "vowel_label",
                             "vowel_label only allowed on vowel records")
        if vowel_label not in VOWELS:
            raise _violation(line, "vowel_label",
                             f"vowel_label must be one of {VOWELS}")
    pathology_class = obj.get("pathology_class")
    if pathology_class is not None:
        if not isinstance(pathology_class, str) or not pathology_class:
            raise _violation(line, "pathology_class",
                             "pathology_class must be a non-empty string")
        if obj["label"] == "healthy":
            raise _violation(line, "pathology_class",
                             "healthy record cannot carry a pathology_class")
    provenance = obj.get("provenance")
    if provenance is not None and not isinstance(provenance, dict):
        raise _violation(line, "provenance", "provenance must be an object")
    return ClipRecord(
        clip_id=obj["clip_id"], path=obj["path"],
        dataset_id=obj["dataset_id"], speaker_id=obj["speaker_id"],
        session_id=obj["session_id"], recording_type=obj["recording_type"],
        label=obj["label"], origin=obj["origin"], language=obj["language"],
        vowel_label=vowel_label, pathology_class=pathology_class,
        provenance=provenance)


def serialize_record(record):
    """One canonical JSON line (sorted keys, compact)."""
    return json.dumps(record.to_dict(), sort_keys=True,
                      separators=(",", ":"))


def serialize_manifest(records):
    return "".join(serialize_record(r) + "\n" for r in records)


def _iter_rows(text):
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise _violation(line_no, None, f"invalid JSON: {exc}") from exc
        yield line_no, record_from_dict(obj, line=line_no)


def parse_manifest_text(text):
    """Parse manifest text, raising on the first violation."""
    records = []
    seen_ids = {}
    speaker_labels = {}
    for line_no, rec in _iter_rows(text):
        if rec.clip_id in seen_ids:
            raise DuplicateClipId(
                f"clip_id {rec.clip_id!r} on line {line_no} already used "
                f"on line {seen_ids[rec.clip_id]}",
                line=line_no, first_line=seen_ids[rec.clip_id])
        seen_ids[rec.clip_id] = line_no
        prior = speaker_labels.get(rec.speaker_id)
        if prior is not None and prior[0] != rec.label:
            raise ConflictingSpeakerLabel(
                f"speaker {rec.speaker_id!r} is {prior[0]!r} on line "
                f"{prior[1]} but {rec.label!r} on line {line_no}",
                line=line_no)
        speaker_labels.setdefault(rec.speaker_id, (rec.label, line_no))
        records.append(rec)
    return records


def parse_manifest(path):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise VoicekitError(f"cannot read manifest {path}: {exc}") from exc
    return parse_manifest_text(text)


def validate_manifest(path, check_files=False, audio_root=None):
    """Collect every problem in a manifest as diagnostic dicts.

    Diagnostic shape: {"kind", "line", "field", "message"}; kinds are
    schema_violation, duplicate_clip_id, conflicting_speaker_label,
    dangling_parent and missing_file.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        return [], [{"kind": "io_failure", "line": None, "field": None,
                     "message": str(exc)}]
    records = []
    diags = []
    seen_ids = {}
    speaker_labels = {}
    lines_by_id = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            diags.append({"kind": "schema_violation", "line": line_no,
                          "field": None, "message": f"invalid JSON: {exc}"})
            continue
        try:
            rec = record_from_dict(obj, line=line_no)
        except SchemaViolation as exc:
            diags.append({"kind": "schema_violation", "line": line_no,
                          "field": exc.field, "message": str(exc)})
            continue
        if rec.clip_id in seen_ids:
            diags.append({
                "kind": "duplicate_clip_id", "line": line_no,
                "field": "clip_id",
                "message": (f"clip_id {rec.clip_id!r} on line {line_no} "
                            f"already used on line {seen_ids[rec.clip_id]}")})
            continue
        seen_ids[rec.clip_id] = line_no
        prior = speaker_labels.get(rec.speaker_id)
        if prior is not None and prior[0] != rec.label:
            diags.append({
                "kind": "conflicting_speaker_label", "line": line_no,
                "field": "label",
                "message": (f"speaker {rec.speaker_id!r} is {prior[0]!r} "
                            f"on line {prior[1]} but {rec.label!r} on "
                            f"line {line_no}")})
            continue
        speaker_labels.setdefault(rec.speaker_id, (rec.label, line_no))
        records.append(rec)
        lines_by_id[rec.clip_id] = line_no
    for rec in records:
        parent = (rec.provenance or {}).get("parent_clip_id")
        if parent is not None and parent not in seen_ids:
            diags.append({
                "kind": "dangling_parent", "line": lines_by_id[rec.clip_id],
                "field": "provenance",
                "message": (f"clip {rec.clip_id!r} references missing "
                            f"parent {parent!r}")})
    if check_files:
        root = Path(audio_root) if audio_root else path.parent
        for rec in records:
            p = Path(rec.path)
            if not p.is_absolute():
                p = root / p
            if not p.is_file():
                diags.append({
                    "kind": "missing_file", "line": lines_by_id[rec.clip_id],
                    "field": "path",
                    "message": f"audio file not found: {p}"})
    return records, diags


def resolve_audio_path(record, audio_root):
    p = Path(record.path)
    if p.is_absolute():
        return p
    return Path(audio_root) / p


@dataclass(frozen=True)
class CorpusStats:
    n_records: int
    n_healthy_speakers: int
    n_pathological_speakers: int
    n_sentence_clips: int
    n_vowel_clips: int
    n_pathology_classes: int
    counts_by_origin: dict
    mean_duration_s: Optional[float]

    def to_dict(self):
        return {
            "n_records": self.n_records,
            "n_healthy_speakers": self.n_healthy_speakers,
            "n_pathological_speakers": self.n_pathological_speakers,
            "n_sentence_clips": self.n_sentence_clips,
            "n_vowel_clips": self.n_vowel_clips,
            "n_pathology_classes": self.n_pathology_classes,
            "counts_by_origin": dict(sorted(self.counts_by_origin.items())),
            "mean_duration_s": self.mean_duration_s,
        }


def corpus_stats(records, audio_root=None):
    """Aggregate counts; mean duration covers only resolvable WAV files."""
    healthy = {r.speaker_id for r in records if r.label == "healthy"}
    pathological = {r.speaker_id for r in records if r.label == "pathological"}
    classes = {r.pathology_class for r in records
               if r.pathology_class is not None}
    by_origin = {}
    for r in records:
        by_origin[r.origin] = by_origin.get(r.origin, 0) + 1
    durations = []
    if audio_root is not None:
        for r in records:
            try:
                durations.append(
                    audio.wav_duration(resolve_audio_path(r, audio_root)))
            except VoicekitError:
                continue
    mean_dur = float(sum(durations) / len(durations)) if durations else None
    return CorpusStats(
        n_records=len(records),
        n_healthy_speakers=len(healthy),
        n_pathological_speakers=len(pathological),
        n_sentence_clips=sum(r.recording_type == "sentence" for r in records),
        n_vowel_clips=sum(r.recording_type == "vowel" for r in records),
        n_pathology_classes=len(classes),
        counts_by_origin=by_origin,
        mean_duration_s=mean_dur)


def filter_corpus(records, dataset_id=None, recording_type=None,
                  origin=None, label=None):
    """Subset records by exact field matches; None means no constraint."""
    out = []
    for r in records:
        if dataset_id is not None and r.dataset_id != dataset_id:
            continue
        if recording_type is not None and r.recording_type != recording_type:
            continue
        if origin is not None and r.origin != origin:
            continue
        if label is not None and r.label != label:
            continue
        out.append(r)
    return out


def records_by_id(records):
    """Index records by clip_id, raising on duplicates."""
    index = {}
    for r in records:
        if r.clip_id in index:
            raise DuplicateClipId(f"clip_id {r.clip_id!r} appears twice")
        index[r.clip_id] = r
    return index
