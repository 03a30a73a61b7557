"""Turn segments into volunteer-facing task bundles and select task sets.

Every segment becomes one task: each rendered panel is cropped to a zoom
window around the segment (10 px margin, clipped at the image border)
with the segment outlined by a 1-px contour, and a JSON-lines manifest
records the bundle. Selection helpers pick which segments go out, either
by homogeneity or from a prior campaign's hard/undefined/tied results.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np
import scipy.ndimage as ndi

from .errors import FormatError, ValidationError
from .groundtruth import SegmentGT
from .labels import ANSWER_CLASSES_4, FOREST
from .raster import save_png
from .segment import Segmentation

PANEL_KINDS = ("rgb", "false753", "ndvi")
CONTOUR_COLOR = (255, 255, 0)
DEFAULT_ZOOM_MARGIN = 10

_CROSS = ndi.generate_binary_structure(2, 1)


@dataclass(frozen=True)
class Panel:
    """One rendered composition offered to volunteers."""

    kind: str
    image: np.ndarray

    def __post_init__(self):
        if self.kind not in PANEL_KINDS:
            raise ValidationError(
                f"panel kind must be one of {PANEL_KINDS}, got {self.kind!r}"
            )
        img = np.ascontiguousarray(np.asarray(self.image, dtype=np.uint8))
        if img.ndim != 3 or img.shape[2] != 3:
            raise ValidationError(
                f"panel image must have shape (height, width, 3), got {img.shape}"
            )
        img.flags.writeable = False
        object.__setattr__(self, "image", img)


@dataclass(frozen=True)
class TaskSpec:
    """Manifest entry: one segment, its panels, and the answer options."""

    task_id: str
    workflow_id: str
    segment_id: int
    panels: tuple
    answer_options: tuple
    zoom_window: tuple

    def __post_init__(self):
        if len(self.panels) < 2:
            raise ValidationError("a task needs at least 2 panels")
        options = tuple(self.answer_options)
        if len(options) < 3 or len(set(options)) != len(options):
            raise ValidationError(
                f"answer options must be >= 3 and unique, got {options}"
            )
        unknown = [opt for opt in options if opt not in ANSWER_CLASSES_4]
        if unknown:
            raise ValidationError(
                f"answer options outside {ANSWER_CLASSES_4}: {unknown}"
            )
        object.__setattr__(self, "panels", tuple(dict(p) for p in self.panels))
        object.__setattr__(self, "answer_options", options)
        object.__setattr__(self, "zoom_window", tuple(int(v) for v in self.zoom_window))

    def to_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "workflow_id": self.workflow_id,
            "segment_id": self.segment_id,
            "panels": list(self.panels),
            "answer_options": list(self.answer_options),
            "zoom_window": list(self.zoom_window),
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "TaskSpec":
        return cls(
            task_id=payload["task_id"],
            workflow_id=payload["workflow_id"],
            segment_id=int(payload["segment_id"]),
            panels=tuple(payload["panels"]),
            answer_options=tuple(payload["answer_options"]),
            zoom_window=tuple(payload["zoom_window"]),
        )


def _zoom_window(bbox, shape, margin: int):
    r0, c0, h, w = bbox
    height, width = shape
    top = max(0, r0 - margin)
    left = max(0, c0 - margin)
    bottom = min(height, r0 + h + margin)
    right = min(width, c0 + w + margin)
    return (top, left, bottom - top, right - left)


def _contour(mask: np.ndarray) -> np.ndarray:
    """Interior 1-px boundary of a segment mask (4-connected erosion)."""
    eroded = ndi.binary_erosion(mask, structure=_CROSS, border_value=0)
    return mask & ~eroded


def generate_tasks(seg: Segmentation, panels, answer_options, workflow_id: str,
                   out_dir, margin: int = DEFAULT_ZOOM_MARGIN) -> list:
    """Render one task per segment and write the JSON-lines manifest.

    Panel files land under ``<out_dir>/<workflow_id>/`` named
    ``<task_id>_<kind>.png``; the manifest is appended in segment-id
    order so reruns are deterministic.
    """
    panels = list(panels)
    if len(panels) < 2:
        raise ValidationError("generate_tasks needs at least 2 panels")
    if not seg.segments:
        raise ValidationError("empty segmentation: no tasks to generate")
    for panel in panels:
        if panel.image.shape[:2] != seg.shape:
            raise ValidationError(
                f"panel {panel.kind!r} has shape {panel.image.shape[:2]}, "
                f"segmentation is {seg.shape}"
            )
    kinds = [p.kind for p in panels]
    if len(set(kinds)) != len(kinds):
        raise ValidationError(f"duplicate panel kinds: {kinds}")
    workflow_dir = os.path.join(os.fspath(out_dir), workflow_id)
    os.makedirs(workflow_dir, exist_ok=True)
    specs = []
    for rec in sorted(seg.segments, key=lambda r: r.id):
        task_id = f"{workflow_id}-{rec.id:05d}"
        window = _zoom_window(rec.bounding_box, seg.shape, margin)
        top, left, h, w = window
        seg_mask = seg.labels[top : top + h, left : left + w] == rec.id
        outline = _contour(seg_mask)
        panel_entries = []
        for panel in panels:
            crop = panel.image[top : top + h, left : left + w].copy()
            crop[outline] = CONTOUR_COLOR
            filename = f"{task_id}_{panel.kind}.png"
            save_png(crop, os.path.join(workflow_dir, filename))
            panel_entries.append(
                {"kind": panel.kind, "path": os.path.join(workflow_id, filename)}
            )
        specs.append(
            TaskSpec(
                task_id=task_id,
                workflow_id=workflow_id,
                segment_id=rec.id,
                panels=tuple(panel_entries),
                answer_options=tuple(answer_options),
                zoom_window=window,
            )
        )
    write_manifest(specs, os.path.join(workflow_dir, "manifest.jsonl"))
    return specs


def write_manifest(specs, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for spec in specs:
            fh.write(json.dumps(spec.to_dict(), sort_keys=True))
            fh.write("\n")


def read_manifest(path) -> list:
    specs = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                specs.append(TaskSpec.from_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError) as exc:
                raise FormatError(f"bad manifest line {line_no} in {path}: {exc}")
    return specs


def manifest_task_segments(specs) -> dict:
    """task_id -> segment_id from a manifest."""
    return {spec.task_id: spec.segment_id for spec in specs}


# ---------------------------------------------------------------------------
# Task selection
# ---------------------------------------------------------------------------


def select_tasks_by_hor(seg_gt: SegmentGT, n_pure: int = 0, seed: int = 0) -> list:
    """All segments below full homogeneity plus a seeded sample of pure Forest.

    The sample is drawn without replacement from segments with ratio 1.0
    and Forest majority; asking for more than exist is an error.
    """
    if n_pure < 0:
        raise ValidationError(f"n_pure must be >= 0, got {n_pure}")
    mixed = [sid for sid in sorted(seg_gt.hor) if seg_gt.hor[sid] < 1.0]
    pure_forest = [
        sid
        for sid in sorted(seg_gt.hor)
        if seg_gt.hor[sid] == 1.0 and seg_gt.majority[sid] == FOREST
    ]
    if n_pure > len(pure_forest):
        raise ValidationError(
            f"requested {n_pure} pure-Forest segments, only {len(pure_forest)} available"
        )
    rng = np.random.default_rng(int(seed))
    sampled = (
        sorted(int(s) for s in rng.choice(pure_forest, size=n_pure, replace=False))
        if n_pure
        else []
    )
    return sorted(mixed + sampled)


def select_tasks_for_refinement(results) -> list:
    """Segments whose tasks were Undefined, tied, or hard (entropy > 0.66)."""
    from .labels import UNDEFINED

    selected = set()
    missing = []
    for res in results:
        hard = res.entropy_norm > 0.66
        if res.consensus == UNDEFINED or res.tie or hard:
            if res.segment_id is None:
                missing.append(res.task_id)
            else:
                selected.add(res.segment_id)
    if missing:
        raise ValidationError(
            f"results selected for refinement lack segment ids: {missing[:10]}"
        )
    return sorted(selected)
