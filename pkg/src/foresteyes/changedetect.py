"""Two-epoch change detection against consensus classifications.

Change is one-directional: a pixel counts as deforestation when it was
Forest in the earlier epoch and NonForest in the later one (previously
cleared areas never revert, matching exclusion-mask semantics). The
report breaks the change pixels down by what the later campaign's
consensus said about them, at both pixel and task granularity.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .groundtruth import BinaryGT
from .labels import FOREST, NON_FOREST, SMALL, UNDEFINED
from .segment import Segmentation
from .validation import check_same_shape

#: Breakdown buckets; ``unsegmented`` tracks change pixels that fall
#: outside any segment with a result instead of silently dropping them.
BREAKDOWN_KEYS = ("non_forest", "forest", "undefined", "small", "tie", "unsegmented")

_BUCKET_OF_LABEL = {
    NON_FOREST: "non_forest",
    FOREST: "forest",
    UNDEFINED: "undefined",
    SMALL: "small",
}


@dataclass(frozen=True)
class ChangeReport:
    """Detection outcome for the change pixels between two epochs."""

    epoch_a: str
    epoch_b: str
    gt_change_pixels: int
    detected_pixels: int
    detection_rate: float | None
    breakdown: dict
    task_breakdown: dict

    def __post_init__(self):
        if sum(self.breakdown.values()) != self.gt_change_pixels:
            raise ValidationError(
                "change breakdown does not sum to the change pixel count"
            )

    def to_dict(self) -> dict:
        return {
            "epoch_a": self.epoch_a,
            "epoch_b": self.epoch_b,
            "gt_change_pixels": self.gt_change_pixels,
            "detected_pixels": self.detected_pixels,
            "detection_rate": self.detection_rate,
            "breakdown": dict(self.breakdown),
            "task_breakdown": dict(self.task_breakdown),
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "ChangeReport":
        return cls(
            epoch_a=payload["epoch_a"],
            epoch_b=payload["epoch_b"],
            gt_change_pixels=int(payload["gt_change_pixels"]),
            detected_pixels=int(payload["detected_pixels"]),
            detection_rate=payload.get("detection_rate"),
            breakdown={k: int(v) for k, v in payload["breakdown"].items()},
            task_breakdown={k: int(v) for k, v in payload["task_breakdown"].items()},
        )


def gt_change(gt_a: BinaryGT, gt_b: BinaryGT) -> np.ndarray:
    """Deforestation plane: Forest in epoch a and NonForest in epoch b."""
    check_same_shape("epoch-a ground truth", gt_a, "epoch-b ground truth", gt_b)
    return gt_a.forest & ~gt_b.forest


def detection_report(change: np.ndarray, seg_b: Segmentation, results_b,
                     epoch_a: str = "a", epoch_b: str = "b") -> ChangeReport | None:
    """Score the later campaign's consensus over the change pixels.

    Tied tasks are bucketed separately from their seeded consensus label.
    Returns None when there are no change pixels (rate undefined).
    """
    change = np.asarray(change, dtype=bool)
    check_same_shape("change plane", change, "epoch-b segmentation", seg_b)
    total = int(change.sum())
    if total == 0:
        return None
    by_segment = {
        res.segment_id: res for res in results_b if res.segment_id is not None
    }
    counts = {key: 0 for key in BREAKDOWN_KEYS}
    touched_tasks: dict = {key: set() for key in BREAKDOWN_KEYS}
    labels = seg_b.labels[change]
    for sid in labels.tolist():
        res = by_segment.get(sid) if sid >= 0 else None
        if res is None:
            counts["unsegmented"] += 1
            continue
        bucket = "tie" if res.tie else _BUCKET_OF_LABEL[res.consensus]
        counts[bucket] += 1
        touched_tasks[bucket].add(res.task_id)
    detected = counts["non_forest"]
    return ChangeReport(
        epoch_a=epoch_a,
        epoch_b=epoch_b,
        gt_change_pixels=total,
        detected_pixels=detected,
        detection_rate=100.0 * detected / total,
        breakdown=counts,
        task_breakdown={key: len(tasks) for key, tasks in touched_tasks.items()},
    )


def save_change_report(report: ChangeReport, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_change_report(path) -> ChangeReport:
    with open(path, "r", encoding="utf-8") as fh:
        return ChangeReport.from_dict(json.load(fh))
