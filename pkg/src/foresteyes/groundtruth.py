"""Class-map binarization and segment-level ground truth with homogeneity.

A thematic class map is collapsed to a binary Forest/NonForest plane; the
two segment-level variants then label each segment either by strict
majority (GT-M) or with Undefined below the 0.7 homogeneity threshold
(GT-U). Homogeneity ties (exactly 0.5) count as NonForest, the
conservative choice for deforestation alerting.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import FormatError, SchemaError, ValidationError
from .labels import FOREST, NON_FOREST, UNDEFINED
from .raster import read_planes, write_planes
from .segment import Segmentation
from .validation import check_same_shape

GT_U = "GT-U"
GT_M = "GT-M"
HOR_UNDEFINED_THRESHOLD = 0.7

#: Histogram bins over the homogeneity ratio; together they partition
#: [0.5, 1.0] with the pure segments in their own bin.
HOR_BINS = ("[0.5,0.6)", "[0.6,0.7)", "[0.7,0.8)", "[0.8,0.9)", "[0.9,1.0)", "1.0")


@dataclass(frozen=True)
class ClassMap:
    """Plane of thematic class codes plus a legend mapping code to name."""

    codes: np.ndarray
    legend: dict

    def __post_init__(self):
        codes = np.ascontiguousarray(np.asarray(self.codes, dtype=np.uint8))
        if codes.ndim != 2:
            raise ValidationError(f"codes must be 2-D, got shape {codes.shape}")
        legend = {int(k): str(v) for k, v in self.legend.items()}
        present = set(np.unique(codes).tolist())
        missing = present - set(legend)
        if missing:
            raise ValidationError(f"codes outside legend: {sorted(missing)}")
        codes.flags.writeable = False
        object.__setattr__(self, "codes", codes)
        object.__setattr__(self, "legend", legend)

    @property
    def shape(self) -> tuple:
        return self.codes.shape


@dataclass(frozen=True)
class BinaryGT:
    """Pixel-level Forest/NonForest truth; ``forest`` is True on Forest."""

    forest: np.ndarray

    def __post_init__(self):
        forest = np.ascontiguousarray(np.asarray(self.forest, dtype=bool))
        if forest.ndim != 2:
            raise ValidationError(f"forest plane must be 2-D, got shape {forest.shape}")
        forest.flags.writeable = False
        object.__setattr__(self, "forest", forest)

    @property
    def shape(self) -> tuple:
        return self.forest.shape


class HorResult(NamedTuple):
    ratio: float
    majority: str


@dataclass(frozen=True)
class SegmentGT:
    """Segment-level truth: labels, homogeneity ratios, majorities.

    The GT-U variant labels a segment Undefined exactly when its
    homogeneity ratio falls below 0.7; GT-M always keeps the majority.
    """

    variant: str
    labels: dict
    hor: dict
    majority: dict

    def __post_init__(self):
        if self.variant not in (GT_U, GT_M):
            raise ValidationError(f"unknown variant {self.variant!r}")
        keys = set(self.labels)
        if keys != set(self.hor) or keys != set(self.majority):
            raise ValidationError("labels, hor, and majority must share segment ids")
        for sid, label in self.labels.items():
            ratio = self.hor[sid]
            if self.variant == GT_M and label == UNDEFINED:
                raise ValidationError(f"GT-M segment {sid} labeled Undefined")
            if self.variant == GT_U:
                expect_undef = ratio < HOR_UNDEFINED_THRESHOLD
                if expect_undef != (label == UNDEFINED):
                    raise ValidationError(
                        f"GT-U segment {sid}: hor={ratio} with label {label}"
                    )

    @property
    def segment_ids(self) -> list:
        return sorted(self.labels)


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------


def binarize(classmap: ClassMap, forest_codes) -> BinaryGT:
    """Forest iff the pixel's code is in ``forest_codes``, else NonForest."""
    codes = {int(c) for c in forest_codes}
    unknown = codes - set(classmap.legend)
    if unknown:
        raise ValidationError(f"forest codes outside legend: {sorted(unknown)}")
    lut = np.zeros(256, dtype=bool)
    for c in codes:
        lut[c] = True
    return BinaryGT(forest=lut[classmap.codes])


def hor(segment_pixels, gt: BinaryGT) -> HorResult:
    """Homogeneity ratio of one segment: max(NFP, NNP) / NP.

    ``segment_pixels`` is either a boolean mask or a (rows, cols) pair.
    Ties report NonForest as the majority.
    """
    if isinstance(segment_pixels, np.ndarray) and segment_pixels.dtype == bool:
        values = gt.forest[segment_pixels]
    else:
        rows, cols = segment_pixels
        values = gt.forest[np.asarray(rows), np.asarray(cols)]
    n = int(values.size)
    if n == 0:
        raise ValidationError("empty segment has no homogeneity ratio")
    nfp = int(values.sum())
    nnp = n - nfp
    majority = FOREST if nfp > nnp else NON_FOREST
    return HorResult(ratio=max(nfp, nnp) / n, majority=majority)


def segment_hor(seg: Segmentation, gt: BinaryGT) -> dict:
    """Per-segment homogeneity ratios and majorities, vectorized."""
    check_same_shape("segmentation", seg, "ground truth", gt)
    flat = seg.labels.ravel()
    valid = flat >= 0
    if not valid.any():
        return {}
    idx = flat[valid]
    n_ids = int(idx.max()) + 1
    totals = np.bincount(idx, minlength=n_ids)
    forest = np.bincount(idx, weights=gt.forest.ravel()[valid], minlength=n_ids)
    out = {}
    for rec in seg.segments:
        n = totals[rec.id]
        nfp = int(round(forest[rec.id]))
        nnp = int(n) - nfp
        out[rec.id] = HorResult(
            ratio=max(nfp, nnp) / int(n),
            majority=FOREST if nfp > nnp else NON_FOREST,
        )
    return out


def build_segment_gt(seg: Segmentation, gt: BinaryGT, variant: str) -> SegmentGT:
    """Segment-level ground truth under the GT-U or GT-M rule."""
    if variant not in (GT_U, GT_M):
        raise ValidationError(f"variant must be {GT_U!r} or {GT_M!r}, got {variant!r}")
    ratios = segment_hor(seg, gt)
    labels = {}
    for sid, res in ratios.items():
        if variant == GT_U and res.ratio < HOR_UNDEFINED_THRESHOLD:
            labels[sid] = UNDEFINED
        else:
            labels[sid] = res.majority
    return SegmentGT(
        variant=variant,
        labels=labels,
        hor={sid: res.ratio for sid, res in ratios.items()},
        majority={sid: res.majority for sid, res in ratios.items()},
    )


def hor_bin(ratio: float) -> str:
    """Histogram bin of a homogeneity ratio."""
    if not 0.5 <= ratio <= 1.0:
        raise ValidationError(f"homogeneity ratio {ratio} outside [0.5, 1.0]")
    if ratio == 1.0:
        return HOR_BINS[5]
    return HOR_BINS[min(4, int((ratio - 0.5) / 0.1))]


def hor_histogram(seg: Segmentation, gt: BinaryGT) -> dict:
    """Counts and percentages of segments per homogeneity bin."""
    ratios = segment_hor(seg, gt)
    counts = {name: 0 for name in HOR_BINS}
    for res in ratios.values():
        counts[hor_bin(res.ratio)] += 1
    total = len(ratios)
    return {
        name: {
            "count": counts[name],
            "percent": (100.0 * counts[name] / total) if total else 0.0,
        }
        for name in HOR_BINS
    }


@dataclass(frozen=True)
class AccuracyReport:
    """Overall and per-reference-class accuracy percentages."""

    overall: float
    per_class: dict
    n_samples: int
    n_correct: int


def accuracy(predicted, reference) -> AccuracyReport:
    """Percentage of samples whose predicted label equals the reference.

    Accepts two mappings over the same sample ids or two equal-length
    sequences. Per-class accuracies group samples by reference label.
    """
    if isinstance(predicted, dict) or isinstance(reference, dict):
        if set(predicted) != set(reference):
            raise ValidationError("predicted and reference cover different samples")
        keys = sorted(predicted)
        pred = [predicted[k] for k in keys]
        ref = [reference[k] for k in keys]
    else:
        pred = list(predicted)
        ref = list(reference)
        if len(pred) != len(ref):
            raise ValidationError(
                f"predicted has {len(pred)} samples, reference {len(ref)}"
            )
    if not ref:
        raise ValidationError("cannot compute accuracy over zero samples")
    n_correct = 0
    per_class_total: dict = {}
    per_class_hit: dict = {}
    for p, r in zip(pred, ref):
        per_class_total[r] = per_class_total.get(r, 0) + 1
        if p == r:
            n_correct += 1
            per_class_hit[r] = per_class_hit.get(r, 0) + 1
    return AccuracyReport(
        overall=100.0 * n_correct / len(ref),
        per_class={
            label: 100.0 * per_class_hit.get(label, 0) / total
            for label, total in sorted(per_class_total.items())
        },
        n_samples=len(ref),
        n_correct=n_correct,
    )


def pixel_accuracy(seg: Segmentation, segment_labels: dict, gt: BinaryGT,
                   undefined_policy: str = "wrong") -> AccuracyReport:
    """Pixel-level accuracy with segment labels broadcast to their pixels.

    Labels other than Forest/NonForest (Undefined, Small) count as wrong
    on every pixel under the default policy, or drop out of the sample
    set under ``undefined_policy="exclude"``. Unsegmented pixels are never
    counted.
    """
    if undefined_policy not in ("wrong", "exclude"):
        raise ValidationError(f"unknown undefined_policy {undefined_policy!r}")
    check_same_shape("segmentation", seg, "ground truth", gt)
    pred = []
    ref = []
    for rec in seg.segments:
        if rec.id not in segment_labels:
            continue
        label = segment_labels[rec.id]
        binary = label in (FOREST, NON_FOREST)
        if not binary and undefined_policy == "exclude":
            continue
        rows, cols = seg.pixel_indices(rec.id)
        truth = gt.forest[rows, cols]
        for is_forest in truth:
            ref.append(FOREST if is_forest else NON_FOREST)
            pred.append(label)
    if not ref:
        raise ValidationError("no labeled pixels to score")
    return accuracy(pred, ref)


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def save_class_map(classmap: ClassMap, path) -> None:
    write_planes(
        path,
        classmap.codes[None, :, :],
        ["codes"],
        {"kind": "classmap", "legend": {str(k): v for k, v in classmap.legend.items()}},
        dtype="u8",
    )


def load_class_map(path) -> ClassMap:
    planes, header = read_planes(path)
    if header["dtype"] != "u8":
        raise FormatError(f"class map requires dtype u8, got {header['dtype']!r}")
    if "legend" not in header:
        raise FormatError("class map header missing legend")
    return ClassMap(codes=planes[0], legend={int(k): v for k, v in header["legend"].items()})


def save_binary_gt(gt: BinaryGT, path) -> None:
    write_planes(
        path,
        gt.forest.astype(np.uint8)[None, :, :],
        ["forest"],
        {"kind": "binary-gt"},
        dtype="u8",
    )


def load_binary_gt(path) -> BinaryGT:
    planes, header = read_planes(path)
    if header.get("kind") != "binary-gt":
        raise FormatError(f"{path} is not a binary ground-truth container")
    return BinaryGT(forest=planes[0] != 0)


_SEGMENT_GT_COLUMNS = ["segment_id", "hor", "majority", "gt_u", "gt_m"]


def write_segment_gt_csv(gt_u: SegmentGT, gt_m: SegmentGT, path) -> None:
    """Export both segment-level variants side by side."""
    if gt_u.variant != GT_U or gt_m.variant != GT_M:
        raise ValidationError("write_segment_gt_csv expects (GT-U, GT-M) in order")
    if set(gt_u.labels) != set(gt_m.labels):
        raise ValidationError("GT-U and GT-M cover different segments")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_SEGMENT_GT_COLUMNS)
        for sid in sorted(gt_u.labels):
            writer.writerow(
                [sid, repr(gt_u.hor[sid]), gt_u.majority[sid],
                 gt_u.labels[sid], gt_m.labels[sid]]
            )


def read_segment_gt_csv(path) -> tuple:
    """Load (GT-U, GT-M) from a CSV written by :func:`write_segment_gt_csv`."""
    labels_u: dict = {}
    labels_m: dict = {}
    ratios: dict = {}
    majorities: dict = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [c for c in _SEGMENT_GT_COLUMNS
                                         if c not in reader.fieldnames]:
            raise SchemaError(
                f"segment ground-truth CSV must have columns {_SEGMENT_GT_COLUMNS}"
            )
        for row in reader:
            try:
                sid = int(row["segment_id"])
                ratios[sid] = float(row["hor"])
            except (TypeError, ValueError) as exc:
                raise FormatError(f"bad segment ground-truth row {row!r}: {exc}")
            majorities[sid] = row["majority"]
            labels_u[sid] = row["gt_u"]
            labels_m[sid] = row["gt_m"]
    gt_u = SegmentGT(variant=GT_U, labels=labels_u, hor=ratios, majority=majorities)
    gt_m = SegmentGT(variant=GT_M, labels=labels_m, hor=dict(ratios),
                     majority=dict(majorities))
    return gt_u, gt_m


def save_hor_histogram(histogram: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(histogram, fh, indent=2)
        fh.write("\n")
