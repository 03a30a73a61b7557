"""Volunteer answer ingestion and consensus analytics.

Answers arrive as CSV rows (one classification event each); per task the
first R answers from distinct volunteers, ordered by start time, define
the vote. Ties are broken by a seeded uniform draw but stay flagged.
Task difficulty comes from the Shannon entropy of the vote distribution,
normalized by the number of answer options offered.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np

from .errors import (
    IncompleteTaskError,
    SchemaError,
    ValidationError,
)
from .labels import (
    ANSWER_CLASSES_3,
    ANSWER_CLASSES_4,
    DIFFICULTY_EASY,
    DIFFICULTY_HARD,
    DIFFICULTY_MEDIUM,
    VOLUNTEER_KINDS,
)

ANSWER_CSV_COLUMNS = [
    "classification_id",
    "volunteer_id",
    "volunteer_kind",
    "workflow_id",
    "task_id",
    "answer",
    "started_at",
    "finished_at",
]

#: Durations outside (0, 300] seconds are treated as log outliers.
MAX_ANSWER_SECONDS = 300.0

EASY_MAX = 0.33
MEDIUM_MAX = 0.66


@dataclass(frozen=True)
class AnswerRecord:
    """One volunteer classification event."""

    classification_id: str
    volunteer_id: str
    volunteer_kind: str
    workflow_id: str
    task_id: str
    answer: str
    started_at: datetime
    finished_at: datetime

    @property
    def duration_seconds(self) -> float:
        return (self.finished_at - self.started_at).total_seconds()


@dataclass(frozen=True)
class TaskResult:
    """Vote tally and derived metrics for one task at redundancy R."""

    task_id: str
    counts: dict
    consensus: str
    tie: bool
    entropy_raw: float
    entropy_norm: float
    difficulty: str
    redundancy: int
    options: tuple
    mean_duration: float | None = None
    segment_id: int | None = None


@dataclass(frozen=True)
class RejectedRow:
    line: int
    reason: str


@dataclass(frozen=True)
class IngestReport:
    records: list
    rejected: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# Timestamps
# ---------------------------------------------------------------------------


def parse_rfc3339(text: str) -> datetime:
    """Parse an RFC 3339 timestamp; 'Z' and numeric offsets both accepted."""
    cleaned = text.strip()
    if cleaned.endswith(("Z", "z")):
        cleaned = cleaned[:-1] + "+00:00"
    try:
        parsed = datetime.fromisoformat(cleaned)
    except ValueError as exc:
        raise ValidationError(f"unparseable timestamp {text!r}: {exc}")
    if parsed.tzinfo is None:
        raise ValidationError(f"timestamp {text!r} lacks a UTC offset")
    return parsed.astimezone(timezone.utc)


def format_rfc3339(moment: datetime) -> str:
    """Canonical UTC rendering with a 'Z' suffix."""
    return moment.astimezone(timezone.utc).isoformat().replace("+00:00", "Z")


# ---------------------------------------------------------------------------
# CSV ingestion / emission
# ---------------------------------------------------------------------------


def read_answers_csv(path, column_map: dict | None = None) -> IngestReport:
    """Parse an answer log; malformed rows go to the rejection report.

    ``column_map`` optionally maps each canonical column name to the
    column name used by an external export. Records come back ordered by
    start time within task.
    """
    mapping = {c: c for c in ANSWER_CSV_COLUMNS}
    if column_map:
        mapping.update({k: v for k, v in column_map.items()})
    records = []
    rejected = []
    seen_ids = set()
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise SchemaError(f"{path} has no header row")
        missing = [mapping[c] for c in ANSWER_CSV_COLUMNS
                   if mapping[c] not in reader.fieldnames]
        if missing:
            raise SchemaError(f"{path} missing columns: {missing}")
        for line_no, row in enumerate(reader, start=2):
            try:
                record = _parse_row(row, mapping)
            except ValidationError as exc:
                rejected.append(RejectedRow(line=line_no, reason=str(exc)))
                continue
            if record.classification_id in seen_ids:
                rejected.append(
                    RejectedRow(
                        line=line_no,
                        reason=f"duplicate classification_id {record.classification_id!r}",
                    )
                )
                continue
            seen_ids.add(record.classification_id)
            records.append(record)
    records.sort(key=lambda r: (r.task_id, r.started_at, r.classification_id))
    return IngestReport(records=records, rejected=rejected)


def _parse_row(row: dict, mapping: dict) -> AnswerRecord:
    values = {}
    for canonical in ANSWER_CSV_COLUMNS:
        raw = row.get(mapping[canonical])
        if raw is None or raw == "":
            raise ValidationError(f"missing value for column {canonical!r}")
        values[canonical] = raw
    if values["volunteer_kind"] not in VOLUNTEER_KINDS:
        raise ValidationError(
            f"volunteer_kind must be one of {VOLUNTEER_KINDS}, "
            f"got {values['volunteer_kind']!r}"
        )
    if values["answer"] not in ANSWER_CLASSES_4:
        raise ValidationError(
            f"unknown answer label {values['answer']!r}; "
            f"expected one of {ANSWER_CLASSES_4}"
        )
    started = parse_rfc3339(values["started_at"])
    finished = parse_rfc3339(values["finished_at"])
    if finished < started:
        raise ValidationError(
            f"finished_at {values['finished_at']} precedes started_at "
            f"{values['started_at']}"
        )
    return AnswerRecord(
        classification_id=values["classification_id"],
        volunteer_id=values["volunteer_id"],
        volunteer_kind=values["volunteer_kind"],
        workflow_id=values["workflow_id"],
        task_id=values["task_id"],
        answer=values["answer"],
        started_at=started,
        finished_at=finished,
    )


def write_answers_csv(records, path) -> None:
    """Emit records in the canonical schema (UTC timestamps, Z suffix)."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(ANSWER_CSV_COLUMNS)
        for rec in records:
            writer.writerow(
                [
                    rec.classification_id,
                    rec.volunteer_id,
                    rec.volunteer_kind,
                    rec.workflow_id,
                    rec.task_id,
                    rec.answer,
                    format_rfc3339(rec.started_at),
                    format_rfc3339(rec.finished_at),
                ]
            )


# ---------------------------------------------------------------------------
# Voting
# ---------------------------------------------------------------------------


def group_by_task(records) -> dict:
    """Records per task, each list ordered by (started_at, classification_id)."""
    grouped: dict = {}
    for rec in records:
        grouped.setdefault(rec.task_id, []).append(rec)
    for recs in grouped.values():
        recs.sort(key=lambda r: (r.started_at, r.classification_id))
    return grouped


def first_answers(task_records, k: int):
    """First ``k`` answers from distinct volunteers, by start time."""
    used = []
    seen = set()
    for rec in sorted(task_records, key=lambda r: (r.started_at, r.classification_id)):
        if rec.volunteer_id in seen:
            continue
        seen.add(rec.volunteer_id)
        used.append(rec)
        if len(used) == k:
            break
    return used


def _tie_rng(seed: int, task_id: str, k: int) -> np.random.Generator:
    digest = hashlib.sha256(task_id.encode("utf-8")).digest()
    return np.random.default_rng(
        [int(seed), int.from_bytes(digest[:8], "big"), int(k)]
    )


def _tally(used, options, seed, task_id):
    counts = {opt: 0 for opt in options}
    for rec in used:
        if rec.answer not in counts:
            raise ValidationError(
                f"task {task_id}: answer {rec.answer!r} outside offered options {options}"
            )
        counts[rec.answer] += 1
    top = max(counts.values())
    tied = [opt for opt in options if counts[opt] == top]
    tie = len(tied) > 1
    if tie:
        rng = _tie_rng(seed, task_id, len(used))
        consensus = tied[int(rng.integers(len(tied)))]
    else:
        consensus = tied[0]
    return counts, consensus, tie


def majority_vote(records, task_id: str, redundancy: int = 15, seed: int = 0,
                  options=ANSWER_CLASSES_3, segment_id: int | None = None) -> TaskResult:
    """Consensus of the first ``redundancy`` answers for one task.

    Raises :class:`IncompleteTaskError` when the task has fewer answers
    from distinct volunteers than the redundancy.
    """
    if redundancy < 1:
        raise ValidationError(f"redundancy must be >= 1, got {redundancy}")
    task_records = [r for r in records if r.task_id == task_id]
    used = first_answers(task_records, redundancy)
    if len(used) < redundancy:
        raise IncompleteTaskError(
            f"task {task_id} has {len(used)} answers from distinct volunteers, "
            f"needs {redundancy}"
        )
    counts, consensus, tie = _tally(used, tuple(options), seed, task_id)
    raw, norm, difficulty = entropy_difficulty(
        [counts[opt] for opt in options], len(options)
    )
    durations = [
        rec.duration_seconds
        for rec in used
        if 0.0 < rec.duration_seconds <= MAX_ANSWER_SECONDS
    ]
    return TaskResult(
        task_id=task_id,
        counts=counts,
        consensus=consensus,
        tie=tie,
        entropy_raw=raw,
        entropy_norm=norm,
        difficulty=difficulty,
        redundancy=redundancy,
        options=tuple(options),
        mean_duration=(sum(durations) / len(durations)) if durations else None,
        segment_id=segment_id,
    )


def aggregate_results(records, redundancy: int = 15, seed: int = 0,
                      options=ANSWER_CLASSES_3,
                      task_to_segment: dict | None = None):
    """Majority vote over every task present in ``records``.

    Returns (results sorted by task id, ids of incomplete tasks).
    """
    grouped = group_by_task(records)
    results = []
    incomplete = []
    for task_id in sorted(grouped):
        try:
            results.append(
                majority_vote(
                    grouped[task_id], task_id, redundancy, seed, options,
                    segment_id=(task_to_segment or {}).get(task_id),
                )
            )
        except IncompleteTaskError:
            incomplete.append(task_id)
    return results, incomplete


# ---------------------------------------------------------------------------
# Entropy difficulty
# ---------------------------------------------------------------------------


def difficulty_level(entropy_norm: float) -> str:
    """Bucket a normalized entropy: Easy <= 0.33 < Medium <= 0.66 < Hard."""
    if entropy_norm < 0.0:
        raise ValidationError(f"normalized entropy must be >= 0, got {entropy_norm}")
    if entropy_norm <= EASY_MAX:
        return DIFFICULTY_EASY
    if entropy_norm <= MEDIUM_MAX:
        return DIFFICULTY_MEDIUM
    return DIFFICULTY_HARD


def entropy_difficulty(counts, n_options: int):
    """Shannon entropy of a vote distribution and its difficulty level.

    Returns (raw bits, normalized by log2(n_options), Easy/Medium/Hard).
    """
    values = [int(c) for c in counts]
    if any(c < 0 for c in values):
        raise ValidationError(f"counts must be non-negative, got {counts}")
    if len(values) > n_options:
        raise ValidationError(
            f"{len(values)} counts for only {n_options} offered options"
        )
    total = sum(values)
    if total == 0:
        raise ValidationError("cannot compute entropy of all-zero counts")
    if n_options < 2:
        raise ValidationError("entropy normalization needs at least 2 options")
    raw = 0.0
    for c in values:
        if c > 0:
            p = c / total
            raw -= p * math.log2(p)
    norm = raw / math.log2(n_options)
    return raw, norm, difficulty_level(norm)


# ---------------------------------------------------------------------------
# Convergence
# ---------------------------------------------------------------------------


def convergence(records, redundancy: int = 15, ks=(5, 7, 9, 11, 13), seed: int = 0,
                options=ANSWER_CLASSES_3) -> dict:
    """Share of tasks whose consensus at k answers matches full redundancy.

    Every task must be complete at the redundancy. The per-task agreement
    vector is included alongside the per-k percentages.
    """
    ks = [int(k) for k in ks]
    if any(k < 1 or k > redundancy for k in ks):
        raise ValidationError(f"every k must lie in [1, redundancy], got {ks}")
    grouped = group_by_task(records)
    per_task: dict = {}
    for task_id in sorted(grouped):
        used = first_answers(grouped[task_id], redundancy)
        if len(used) < redundancy:
            raise IncompleteTaskError(
                f"task {task_id} incomplete at redundancy {redundancy}"
            )
        _, full_consensus, _ = _tally(used, tuple(options), seed, task_id)
        agreement = {}
        for k in ks:
            _, k_consensus, _ = _tally(used[:k], tuple(options), seed, task_id)
            agreement[k] = k_consensus == full_consensus
        per_task[task_id] = agreement
    n_tasks = len(per_task)
    per_k = {
        k: (100.0 * sum(agree[k] for agree in per_task.values()) / n_tasks)
        if n_tasks
        else 0.0
        for k in ks
    }
    return {"redundancy": redundancy, "per_k": per_k, "per_task": per_task,
            "n_tasks": n_tasks}


# ---------------------------------------------------------------------------
# Timing and difficulty analytics
# ---------------------------------------------------------------------------


def _mean(values) -> float | None:
    values = list(values)
    return (sum(values) / len(values)) if values else None


def time_stats(records, results=None) -> dict:
    """Mean answer durations overall and per grouping, outliers dropped.

    Rows with duration <= 0 s or > 300 s are excluded. Groupings by
    consensus class and difficulty need ``results``; groups with no
    surviving rows are absent from the output.
    """
    kept = [
        rec for rec in records
        if 0.0 < rec.duration_seconds <= MAX_ANSWER_SECONDS
    ]
    out: dict = {"n_used": len(kept), "n_filtered": len(list(records)) - len(kept)}
    overall = _mean(rec.duration_seconds for rec in kept)
    if overall is not None:
        out["overall"] = overall
    by_kind = {}
    for kind in VOLUNTEER_KINDS:
        mean = _mean(
            rec.duration_seconds for rec in kept if rec.volunteer_kind == kind
        )
        if mean is not None:
            by_kind[kind] = mean
    if by_kind:
        out["by_kind"] = by_kind
    if results is not None:
        consensus_of = {res.task_id: res.consensus for res in results}
        difficulty_of = {res.task_id: res.difficulty for res in results}
        by_class: dict = {}
        by_difficulty: dict = {}
        for rec in kept:
            if rec.task_id in consensus_of:
                by_class.setdefault(consensus_of[rec.task_id], []).append(
                    rec.duration_seconds
                )
                by_difficulty.setdefault(difficulty_of[rec.task_id], []).append(
                    rec.duration_seconds
                )
        if by_class:
            out["by_class"] = {
                label: _mean(vals) for label, vals in sorted(by_class.items())
            }
        if by_difficulty:
            out["by_difficulty"] = {
                level: _mean(vals) for level, vals in sorted(by_difficulty.items())
            }
    return out


def difficulty_tables(results, segment_gt=None) -> dict:
    """Difficulty frequencies plus accuracy cuts by difficulty and HoR bin.

    Accuracy sections require ``segment_gt`` and results carrying segment
    ids; tasks without a ground-truth label are skipped there.
    """
    from .groundtruth import hor_bin

    levels = (DIFFICULTY_EASY, DIFFICULTY_MEDIUM, DIFFICULTY_HARD)
    n_tasks = len(results)
    freq = {
        level: {
            "count": sum(1 for r in results if r.difficulty == level),
        }
        for level in levels
    }
    for level in levels:
        freq[level]["percent"] = (
            100.0 * freq[level]["count"] / n_tasks if n_tasks else 0.0
        )
    by_class: dict = {}
    for res in results:
        by_class.setdefault(res.consensus, {lv: 0 for lv in levels})
        by_class[res.consensus][res.difficulty] += 1
    class_freq = {}
    for label in sorted(by_class):
        total = sum(by_class[label].values())
        class_freq[label] = {
            level: {
                "count": by_class[label][level],
                "percent": 100.0 * by_class[label][level] / total if total else 0.0,
            }
            for level in levels
        }
    out = {"frequency": freq, "frequency_by_class": class_freq, "n_tasks": n_tasks}
    if segment_gt is not None:
        by_difficulty: dict = {}
        by_bin: dict = {}
        for res in results:
            if res.segment_id is None or res.segment_id not in segment_gt.labels:
                continue
            correct = res.consensus == segment_gt.labels[res.segment_id]
            by_difficulty.setdefault(res.difficulty, []).append(correct)
            by_bin.setdefault(hor_bin(segment_gt.hor[res.segment_id]), []).append(
                correct
            )
        out["accuracy_by_difficulty"] = {
            level: {
                "percent": 100.0 * sum(flags) / len(flags),
                "n": len(flags),
            }
            for level, flags in sorted(by_difficulty.items())
        }
        out["accuracy_by_hor_bin"] = {
            name: {
                "percent": 100.0 * sum(flags) / len(flags),
                "n": len(flags),
            }
            for name, flags in sorted(by_bin.items())
        }
    return out


# ---------------------------------------------------------------------------
# Result persistence
# ---------------------------------------------------------------------------


def results_to_json(results, incomplete=(), extra: dict | None = None) -> dict:
    payload = {
        "results": [
            {
                "task_id": res.task_id,
                "segment_id": res.segment_id,
                "counts": res.counts,
                "consensus": res.consensus,
                "tie": res.tie,
                "entropy_raw": res.entropy_raw,
                "entropy_norm": res.entropy_norm,
                "difficulty": res.difficulty,
                "redundancy": res.redundancy,
                "options": list(res.options),
                "mean_duration": res.mean_duration,
            }
            for res in results
        ],
        "incomplete_tasks": list(incomplete),
    }
    if extra:
        payload.update(extra)
    return payload


def results_from_json(payload: dict):
    results = [
        TaskResult(
            task_id=item["task_id"],
            counts={k: int(v) for k, v in item["counts"].items()},
            consensus=item["consensus"],
            tie=bool(item["tie"]),
            entropy_raw=float(item["entropy_raw"]),
            entropy_norm=float(item["entropy_norm"]),
            difficulty=item["difficulty"],
            redundancy=int(item["redundancy"]),
            options=tuple(item["options"]),
            mean_duration=item.get("mean_duration"),
            segment_id=item.get("segment_id"),
        )
        for item in payload["results"]
    ]
    return results, payload.get("incomplete_tasks", [])


def save_results(results, incomplete, path, extra: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(results_to_json(results, incomplete, extra), fh, indent=2)
        fh.write("\n")


def load_results(path):
    with open(path, "r", encoding="utf-8") as fh:
        return results_from_json(json.load(fh))
