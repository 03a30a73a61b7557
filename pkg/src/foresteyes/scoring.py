"""Volunteer hit rates, scores, ranking, and cohort aggregates.

A hit is an answer agreeing with the task's consensus; only answers
inside the first-R voting window count toward hits, while the answer
total covers everything the volunteer submitted. The score weighs
participation and agreement as 0.3 * answers + 0.7 * hits.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

from .consensus import first_answers, group_by_task
from .errors import SchemaError, ValidationError
from .labels import VOLUNTEER_KINDS


@dataclass(frozen=True)
class VolunteerScore:
    volunteer_id: str
    volunteer_kind: str
    total_answers: int
    consensus_hits: int
    hr_consensus: float
    vs: float
    hr_gt_u: float | None = None
    hr_gt_m: float | None = None


def volunteer_scores(records, results, gt_u=None, gt_m=None) -> list:
    """Score every volunteer and rank by VS descending (ties by id).

    Raises when records reference tasks without results; filter the
    records first if incomplete tasks are expected.
    """
    by_task = {res.task_id: res for res in results}
    unknown = sorted({r.task_id for r in records} - set(by_task))
    if unknown:
        raise ValidationError(
            f"records reference tasks without results: {unknown[:10]}"
        )
    grouped = group_by_task(records)
    counted: dict = {}
    for task_id, task_records in grouped.items():
        window = first_answers(task_records, by_task[task_id].redundancy)
        for rec in window:
            counted[rec.classification_id] = True

    totals: dict = {}
    hits: dict = {}
    kinds: dict = {}
    gt_totals = {"u": {}, "m": {}}
    gt_hits = {"u": {}, "m": {}}
    for rec in records:
        result = by_task[rec.task_id]
        totals[rec.volunteer_id] = totals.get(rec.volunteer_id, 0) + 1
        kinds[rec.volunteer_id] = rec.volunteer_kind
        if counted.get(rec.classification_id) and rec.answer == result.consensus:
            hits[rec.volunteer_id] = hits.get(rec.volunteer_id, 0) + 1
        for key, gt in (("u", gt_u), ("m", gt_m)):
            if gt is None or result.segment_id is None:
                continue
            label = gt.labels.get(result.segment_id)
            if label is None:
                continue
            gt_totals[key][rec.volunteer_id] = gt_totals[key].get(rec.volunteer_id, 0) + 1
            if rec.answer == label:
                gt_hits[key][rec.volunteer_id] = gt_hits[key].get(rec.volunteer_id, 0) + 1

    scores = []
    for vid in totals:
        total = totals[vid]
        hit = hits.get(vid, 0)
        def gt_rate(key):
            denom = gt_totals[key].get(vid, 0)
            if denom == 0:
                return None
            return 100.0 * gt_hits[key].get(vid, 0) / denom
        scores.append(
            VolunteerScore(
                volunteer_id=vid,
                volunteer_kind=kinds[vid],
                total_answers=total,
                consensus_hits=hit,
                hr_consensus=100.0 * hit / total,
                vs=0.3 * total + 0.7 * hit,
                hr_gt_u=gt_rate("u") if gt_u is not None else None,
                hr_gt_m=gt_rate("m") if gt_m is not None else None,
            )
        )
    scores.sort(key=lambda s: (-s.vs, s.volunteer_id))
    return scores


def cohort_averages(scores) -> dict:
    """Unweighted per-volunteer mean hit rates for each volunteer kind."""
    if not scores:
        raise ValidationError("cannot average an empty score list")
    out: dict = {}
    for kind in VOLUNTEER_KINDS:
        cohort = [s for s in scores if s.volunteer_kind == kind]
        if not cohort:
            continue
        entry = {
            "n_volunteers": len(cohort),
            "hr_consensus": sum(s.hr_consensus for s in cohort) / len(cohort),
        }
        for attr, key in (("hr_gt_u", "hr_gt_u"), ("hr_gt_m", "hr_gt_m")):
            values = [getattr(s, attr) for s in cohort if getattr(s, attr) is not None]
            if values:
                entry[key] = sum(values) / len(values)
        out[kind] = entry
    return out


_RANKING_COLUMNS = [
    "user_id",
    "number_answers",
    "consensus_hits",
    "hr_consensus",
    "vs",
    "hr_gt_u",
    "hr_gt_m",
]


def write_ranking_csv(scores, path) -> None:
    """Ranking export; float columns keep full precision for round-trips."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_RANKING_COLUMNS)
        for s in scores:
            writer.writerow(
                [
                    s.volunteer_id,
                    s.total_answers,
                    s.consensus_hits,
                    repr(s.hr_consensus),
                    repr(s.vs),
                    "" if s.hr_gt_u is None else repr(s.hr_gt_u),
                    "" if s.hr_gt_m is None else repr(s.hr_gt_m),
                ]
            )


def read_ranking_csv(path, kinds: dict | None = None) -> list:
    """Load a ranking export; volunteer kinds default to 'registered'."""
    scores = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [c for c in _RANKING_COLUMNS
                                         if c not in reader.fieldnames]:
            raise SchemaError(f"ranking CSV must have columns {_RANKING_COLUMNS}")
        for row in reader:
            scores.append(
                VolunteerScore(
                    volunteer_id=row["user_id"],
                    volunteer_kind=(kinds or {}).get(row["user_id"], "registered"),
                    total_answers=int(row["number_answers"]),
                    consensus_hits=int(row["consensus_hits"]),
                    hr_consensus=float(row["hr_consensus"]),
                    vs=float(row["vs"]),
                    hr_gt_u=float(row["hr_gt_u"]) if row["hr_gt_u"] else None,
                    hr_gt_m=float(row["hr_gt_m"]) if row["hr_gt_m"] else None,
                )
            )
    return scores
