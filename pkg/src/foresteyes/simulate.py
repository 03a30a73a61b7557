"""Seeded synthetic volunteer population for end-to-end pipeline testing.

Each synthetic volunteer carries a row-stochastic confusion matrix over
the four answer classes and a log-normal duration law per difficulty
proxy. Volunteers answer independently given the segment's true label
(no herding; real volunteers are not independent, but this suffices to
exercise the analytics). Answer streams are byte-for-byte reproducible
from the seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone

import numpy as np

from .consensus import AnswerRecord
from .errors import ValidationError
from .labels import ANSWER_CLASSES_4, FOREST, NON_FOREST, SMALL, UNDEFINED

_BASE_TIME = datetime(2025, 1, 1, tzinfo=timezone.utc)
_SLOT_SECONDS = 5.0

#: Median seconds and log-dispersion per difficulty proxy; medians rise
#: with difficulty so harder tasks take longer by construction.
DEFAULT_DURATION_LAW = {
    "easy": (3.0, 0.3),
    "medium": (4.5, 0.35),
    "hard": (6.5, 0.4),
}


@dataclass(frozen=True)
class VolunteerModel:
    """Synthetic volunteer: confusion rows and a duration law.

    ``confusion[true_label][answer]`` is the probability of giving
    ``answer`` when the segment's true label is ``true_label``; each row
    sums to 1.
    """

    volunteer_id: str
    volunteer_kind: str
    confusion: dict
    duration_law: dict = field(default_factory=lambda: dict(DEFAULT_DURATION_LAW))

    def __post_init__(self):
        for true_label in ANSWER_CLASSES_4:
            row = self.confusion.get(true_label)
            if row is None:
                raise ValidationError(
                    f"confusion matrix missing row for {true_label!r}"
                )
            total = sum(row.get(a, 0.0) for a in ANSWER_CLASSES_4)
            if abs(total - 1.0) > 1e-9:
                raise ValidationError(
                    f"confusion row {true_label!r} sums to {total}, expected 1"
                )
        for proxy, (median, sigma) in self.duration_law.items():
            if median <= 0:
                raise ValidationError(
                    f"duration median for {proxy!r} must be positive, got {median}"
                )
            if sigma < 0:
                raise ValidationError(f"duration dispersion for {proxy!r} is negative")

    def row(self, true_label: str) -> np.ndarray:
        r = self.confusion[true_label]
        return np.asarray([r.get(a, 0.0) for a in ANSWER_CLASSES_4], dtype=np.float64)


def identity_confusion() -> dict:
    """Perfect volunteer: always answers the true label."""
    return {
        t: {a: (1.0 if a == t else 0.0) for a in ANSWER_CLASSES_4}
        for t in ANSWER_CLASSES_4
    }


def binary_confusion(accuracy: float) -> dict:
    """Volunteer with the given per-class accuracy on binary labels.

    Errors on Forest/NonForest go to the opposite binary class; on
    Undefined/Small they split evenly between the binary classes.
    """
    if not 0.0 <= accuracy <= 1.0:
        raise ValidationError(f"accuracy must lie in [0, 1], got {accuracy}")
    miss = 1.0 - accuracy
    return {
        FOREST: {FOREST: accuracy, NON_FOREST: miss, UNDEFINED: 0.0, SMALL: 0.0},
        NON_FOREST: {FOREST: miss, NON_FOREST: accuracy, UNDEFINED: 0.0, SMALL: 0.0},
        UNDEFINED: {FOREST: miss / 2, NON_FOREST: miss / 2, UNDEFINED: accuracy, SMALL: 0.0},
        SMALL: {FOREST: miss / 2, NON_FOREST: miss / 2, UNDEFINED: 0.0, SMALL: accuracy},
    }


def homogeneous_pool(size: int, confusion: dict, duration_law: dict | None = None,
                     registered_fraction: float = 0.8) -> list:
    """Pool of identically-behaved volunteers with deterministic ids."""
    if size < 1:
        raise ValidationError(f"pool size must be >= 1, got {size}")
    n_registered = int(round(size * registered_fraction))
    pool = []
    for i in range(size):
        pool.append(
            VolunteerModel(
                volunteer_id=f"vol-{i + 1:04d}",
                volunteer_kind="registered" if i < n_registered else "anonymous",
                confusion=confusion,
                duration_law=dict(duration_law or DEFAULT_DURATION_LAW),
            )
        )
    return pool


def _difficulty_proxy(hor_value: float) -> str:
    if hor_value >= 0.9:
        return "easy"
    if hor_value >= 0.7:
        return "medium"
    return "hard"


def simulate_campaign(seg_gt, pool, redundancy: int = 15, seed: int = 0,
                      workflow_id: str = "sim") -> list:
    """Generate one answer stream: R distinct volunteers per segment.

    Each sampled volunteer answers by drawing from its confusion row
    conditioned on the segment's ground-truth label; durations follow the
    volunteer's log-normal law keyed by a homogeneity-based difficulty
    proxy. Fully reproducible from the seed.
    """
    if len(pool) < redundancy:
        raise ValidationError(
            f"pool of {len(pool)} volunteers cannot satisfy redundancy {redundancy}"
        )
    rng = np.random.default_rng(int(seed))
    records = []
    seq = 0
    for task_index, sid in enumerate(sorted(seg_gt.labels)):
        true_label = seg_gt.labels[sid]
        proxy = _difficulty_proxy(seg_gt.hor[sid])
        task_id = f"{workflow_id}-{sid:05d}"
        chosen = rng.choice(len(pool), size=redundancy, replace=False)
        for slot, vol_index in enumerate(chosen):
            volunteer = pool[int(vol_index)]
            probs = volunteer.row(true_label)
            answer = ANSWER_CLASSES_4[int(rng.choice(len(ANSWER_CLASSES_4), p=probs))]
            median, sigma = volunteer.duration_law.get(
                proxy, next(iter(volunteer.duration_law.values()))
            )
            duration = float(median * np.exp(sigma * rng.standard_normal()))
            started = _BASE_TIME + timedelta(
                seconds=(task_index * redundancy + slot) * _SLOT_SECONDS
            )
            records.append(
                AnswerRecord(
                    classification_id=f"{workflow_id}-c{seq:07d}",
                    volunteer_id=volunteer.volunteer_id,
                    volunteer_kind=volunteer.volunteer_kind,
                    workflow_id=workflow_id,
                    task_id=task_id,
                    answer=answer,
                    started_at=started,
                    finished_at=started + timedelta(seconds=duration),
                )
            )
            seq += 1
    return records


def task_segment_map(seg_gt, workflow_id: str = "sim") -> dict:
    """task_id -> segment_id mapping matching :func:`simulate_campaign`."""
    return {f"{workflow_id}-{sid:05d}": sid for sid in sorted(seg_gt.labels)}
