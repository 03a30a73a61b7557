"""Superpixel segmentation and refinement of hard segments.

Three segmenters share the estimator API: localized k-means in
(color, position) space seeded on a regular grid (`Slic`), optimum-path
forests grown from the same seeds (`IftSlic`), and a region-constrained
variant that seeds only outside an exclusion mask (`MaskSlic`). A fourth
(`KMeansRefiner`) re-segments selected parent segments with k-means and an
elbow rule.

All tie-breaks (equal distance or path cost) resolve to the lower segment
id, and every random draw goes through a caller-supplied seed, so label
planes are reproducible bit for bit.
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass

import numpy as np
import scipy.ndimage as ndi
from sklearn.base import BaseEstimator

from .errors import FormatError, ValidationError
from .raster import BandStack, read_planes, write_planes
from .validation import check_positive, check_same_shape

_CROSS = ndi.generate_binary_structure(2, 1)

#: Cap on the precomputed (seeds x pixels) arc-cost table for path growth;
#: above it, arc costs are evaluated on the fly with identical results.
_ARC_TABLE_MAX_CELLS = 20_000_000


@dataclass(frozen=True)
class SegmentRecord:
    """Per-segment summary: id, size, bounding box, centroid.

    ``bounding_box`` is (row, col, height, width); ``centroid`` is
    (row, col) in pixel coordinates. ``parent_id`` is set for children
    produced by refinement.
    """

    id: int
    pixel_count: int
    bounding_box: tuple
    centroid: tuple
    parent_id: int | None = None


@dataclass(frozen=True)
class Segmentation:
    """Label raster plus per-segment records.

    ``labels`` holds non-negative segment ids, with sentinel -1 for
    masked-out or discarded pixels. Every non-sentinel pixel carries
    exactly one id present in ``segments`` and each segment is a single
    4-connected component.
    """

    labels: np.ndarray
    segments: tuple
    params: dict

    def __post_init__(self):
        labels = np.ascontiguousarray(np.asarray(self.labels, dtype=np.int32))
        if labels.ndim != 2:
            raise ValidationError(f"labels must be 2-D, got shape {labels.shape}")
        labels.flags.writeable = False
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "segments", tuple(self.segments))

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def shape(self) -> tuple:
        return self.labels.shape

    @property
    def segment_ids(self) -> list:
        return [rec.id for rec in self.segments]

    def record(self, segment_id: int) -> SegmentRecord:
        for rec in self.segments:
            if rec.id == segment_id:
                return rec
        raise ValidationError(f"unknown segment id {segment_id}")

    def pixel_indices(self, segment_id: int):
        """(rows, cols) arrays of the segment's pixels."""
        rec = self.record(segment_id)
        r0, c0, h, w = rec.bounding_box
        sub = self.labels[r0 : r0 + h, c0 : c0 + w] == segment_id
        rows, cols = np.nonzero(sub)
        return rows + r0, cols + c0


@dataclass(frozen=True)
class Mask:
    """Boolean exclusion plane; True marks pixels excluded from segmentation."""

    excluded: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(np.asarray(self.excluded, dtype=bool))
        if arr.ndim != 2:
            raise ValidationError(f"mask must be 2-D, got shape {arr.shape}")
        arr.flags.writeable = False
        object.__setattr__(self, "excluded", arr)

    @property
    def shape(self) -> tuple:
        return self.excluded.shape


# ---------------------------------------------------------------------------
# Shared internals
# ---------------------------------------------------------------------------


def _colors(composite: BandStack) -> np.ndarray:
    return np.moveaxis(composite.bands, 0, -1).astype(np.float64)


def _grid_seeds(height: int, width: int, n_segments: int):
    """Regular seed grid with step ~ sqrt(pixels / n_segments).

    Returns float (row, col) positions, row-major. The grid dimensions are
    chosen so their product is as close as possible to ``n_segments``
    (ties prefer squarer grids).
    """
    step = np.sqrt(height * width / n_segments)
    nr_cands = {max(1, int(np.floor(height / step))), max(1, int(np.ceil(height / step)))}
    candidates = set()
    for nr in nr_cands:
        for nc in (
            max(1, int(np.floor(width / step))),
            max(1, int(np.ceil(width / step))),
            max(1, int(round(n_segments / nr))),
        ):
            candidates.add((nr, nc))
    for nc in {max(1, int(np.floor(width / step))), max(1, int(np.ceil(width / step)))}:
        candidates.add((max(1, int(round(n_segments / nc))), nc))
    nr, nc = min(
        candidates,
        key=lambda p: (abs(p[0] * p[1] - n_segments), abs(p[0] - p[1]), p[0]),
    )
    dr, dc = height / nr, width / nc
    positions = [
        ((i + 0.5) * dr - 0.5, (j + 0.5) * dc - 0.5)
        for i in range(nr)
        for j in range(nc)
    ]
    return np.asarray(positions, dtype=np.float64)


def _seed_colors(colors: np.ndarray, positions: np.ndarray) -> np.ndarray:
    rows = np.clip(np.rint(positions[:, 0]).astype(int), 0, colors.shape[0] - 1)
    cols = np.clip(np.rint(positions[:, 1]).astype(int), 0, colors.shape[1] - 1)
    return colors[rows, cols].astype(np.float64)


def _windowed_assign(colors, positions, seed_colors, step, compactness, valid=None):
    """One SLIC assignment sweep; lower seed id wins distance ties."""
    height, width, _ = colors.shape
    dist = np.full((height, width), np.inf, dtype=np.float64)
    labels = np.full((height, width), -1, dtype=np.int32)
    if valid is not None:
        dist[~valid] = -np.inf
    spatial_scale = (compactness * compactness) / (step * step)
    for k in range(positions.shape[0]):
        cr, cc = positions[k]
        r0 = max(0, int(np.floor(cr - step)))
        r1 = min(height, int(np.floor(cr + step)) + 1)
        c0 = max(0, int(np.floor(cc - step)))
        c1 = min(width, int(np.floor(cc + step)) + 1)
        if r0 >= r1 or c0 >= c1:
            continue
        sub = colors[r0:r1, c0:c1]
        d_color2 = ((sub - seed_colors[k]) ** 2).sum(axis=-1)
        dr = np.arange(r0, r1, dtype=np.float64)[:, None] - cr
        dc = np.arange(c0, c1, dtype=np.float64)[None, :] - cc
        d2 = d_color2 + (dr * dr + dc * dc) * spatial_scale
        region = dist[r0:r1, c0:c1]
        update = d2 < region
        region[update] = d2[update]
        labels[r0:r1, c0:c1][update] = k
    _assign_orphan_pixels(labels, positions, valid)
    return labels


def _assign_orphan_pixels(labels, positions, valid):
    """Pixels no window reached go to the spatially nearest seed."""
    orphan = labels < 0
    if valid is not None:
        orphan &= valid
    if not orphan.any():
        return
    rows, cols = np.nonzero(orphan)
    d2 = (rows[:, None] - positions[None, :, 0]) ** 2 + (
        cols[:, None] - positions[None, :, 1]
    ) ** 2
    labels[rows, cols] = np.argmin(d2, axis=1).astype(np.int32)


def _update_centers(colors, labels, positions, seed_colors):
    """Recompute seed positions/colors as per-segment means."""
    n_seeds = positions.shape[0]
    flat = labels.ravel()
    sel = flat >= 0
    idx = flat[sel]
    counts = np.bincount(idx, minlength=n_seeds).astype(np.float64)
    grid_r, grid_c = np.indices(labels.shape)
    new_pos = positions.copy()
    new_col = seed_colors.copy()
    nonzero = counts > 0
    sums_r = np.bincount(idx, weights=grid_r.ravel()[sel], minlength=n_seeds)
    sums_c = np.bincount(idx, weights=grid_c.ravel()[sel], minlength=n_seeds)
    new_pos[nonzero, 0] = sums_r[nonzero] / counts[nonzero]
    new_pos[nonzero, 1] = sums_c[nonzero] / counts[nonzero]
    flat_colors = colors.reshape(-1, colors.shape[2])
    for ch in range(colors.shape[2]):
        sums = np.bincount(idx, weights=flat_colors[sel, ch], minlength=n_seeds)
        new_col[nonzero, ch] = sums[nonzero] / counts[nonzero]
    return new_pos, new_col


def _split_components(labels):
    """Relabel so each 4-connected component gets its own id.

    Component ids are assigned in ascending original-label order, then
    scan order within a label; deterministic.
    """
    comp = np.full_like(labels, -1)
    slices = ndi.find_objects(labels + 1)
    next_id = 0
    for orig_label, sl in enumerate(slices):
        if sl is None:
            continue
        mask = labels[sl] == orig_label
        cc, n = ndi.label(mask, structure=_CROSS)
        for c in range(1, n + 1):
            comp[sl][cc == c] = next_id
            next_id += 1
    return comp, next_id


def _adjacency(comp, n_comps):
    """Shared-border lengths between component pairs."""
    keys = []
    for a, b in (
        (comp[:, :-1].ravel(), comp[:, 1:].ravel()),
        (comp[:-1, :].ravel(), comp[1:, :].ravel()),
    ):
        ok = (a >= 0) & (b >= 0) & (a != b)
        a, b = a[ok].astype(np.int64), b[ok].astype(np.int64)
        keys.append(a * n_comps + b)
        keys.append(b * n_comps + a)
    adj: dict = {i: {} for i in range(n_comps)}
    if keys:
        joined = np.concatenate(keys)
        uniq, counts = np.unique(joined, return_counts=True)
        for key, cnt in zip(uniq.tolist(), counts.tolist()):
            adj[key // n_comps][key % n_comps] = int(cnt)
    return adj


def _compact_scan_order(labels):
    """Renumber ids to 0..K-1 in order of first appearance (raster scan)."""
    flat = labels.ravel()
    valid = flat >= 0
    if not valid.any():
        return labels
    uniq, first = np.unique(flat[valid], return_index=True)
    order = np.argsort(first, kind="stable")
    lut = np.full(int(uniq.max()) + 1, -1, dtype=np.int32)
    lut[uniq[order]] = np.arange(len(uniq), dtype=np.int32)
    out = np.full_like(flat, -1)
    out[valid] = lut[flat[valid]]
    return out.reshape(labels.shape)


def _enforce_connectivity(labels, min_size):
    """Split disconnected labels; merge components below ``min_size``.

    Small components join the neighbor sharing the longest border (ties to
    the lower id); components with no neighbor are kept so every labeled
    pixel stays labeled. Final ids are compacted in scan order.
    """
    comp, n_comps = _split_components(labels)
    if n_comps == 0:
        return comp
    sizes = np.bincount(comp[comp >= 0].ravel(), minlength=n_comps).astype(np.int64)
    adj = _adjacency(comp, n_comps)
    parent = list(range(n_comps))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for cid in range(n_comps):
        if find(cid) != cid or sizes[cid] >= min_size:
            continue
        resolved: dict = {}
        for nb, w in adj[cid].items():
            root = find(nb)
            if root != cid:
                resolved[root] = resolved.get(root, 0) + w
        if not resolved:
            continue
        target = min(resolved, key=lambda r: (-resolved[r], r))
        parent[cid] = target
        sizes[target] += sizes[cid]
        merged = adj[target]
        for nb, w in resolved.items():
            if nb != target:
                merged[nb] = merged.get(nb, 0) + w
        adj[cid] = {}
    lut = np.array([find(i) for i in range(n_comps)], dtype=np.int32)
    out = np.where(comp >= 0, lut[np.maximum(comp, 0)], -1).astype(np.int32)
    return _compact_scan_order(out)


def _records_from_labels(labels, parent_of=None):
    flat = labels.ravel()
    valid = flat >= 0
    if not valid.any():
        return ()
    max_id = int(flat[valid].max())
    counts = np.bincount(flat[valid], minlength=max_id + 1)
    grid_r, grid_c = np.indices(labels.shape)
    sums_r = np.bincount(flat[valid], weights=grid_r.ravel()[valid], minlength=max_id + 1)
    sums_c = np.bincount(flat[valid], weights=grid_c.ravel()[valid], minlength=max_id + 1)
    slices = ndi.find_objects(labels + 1)
    records = []
    for sid in range(max_id + 1):
        if counts[sid] == 0:
            continue
        sl = slices[sid]
        bbox = (
            int(sl[0].start),
            int(sl[1].start),
            int(sl[0].stop - sl[0].start),
            int(sl[1].stop - sl[1].start),
        )
        records.append(
            SegmentRecord(
                id=sid,
                pixel_count=int(counts[sid]),
                bounding_box=bbox,
                centroid=(float(sums_r[sid] / counts[sid]), float(sums_c[sid] / counts[sid])),
                parent_id=None if parent_of is None else parent_of.get(sid),
            )
        )
    return tuple(records)


def segmentation_from_labels(labels, params, parent_of=None) -> Segmentation:
    """Wrap a label plane into a Segmentation with computed records."""
    return Segmentation(
        labels=labels, segments=_records_from_labels(labels, parent_of), params=dict(params)
    )


def check_segmentation(seg: Segmentation) -> None:
    """Verify all structural invariants; raises ValidationError on failure."""
    flat = seg.labels.ravel()
    valid = flat >= 0
    present = set(np.unique(flat[valid]).tolist()) if valid.any() else set()
    declared = {rec.id for rec in seg.segments}
    if present != declared:
        raise ValidationError(
            f"label plane ids {sorted(present)[:10]}... do not match records"
        )
    if len(declared) != len(seg.segments):
        raise ValidationError("duplicate segment ids in records")
    total = 0
    for rec in seg.segments:
        r0, c0, h, w = rec.bounding_box
        sub = seg.labels[r0 : r0 + h, c0 : c0 + w] == rec.id
        count = int(sub.sum())
        if count != rec.pixel_count:
            raise ValidationError(
                f"segment {rec.id}: recorded {rec.pixel_count} pixels, found {count}"
            )
        if (seg.labels == rec.id).sum() != count:
            raise ValidationError(f"segment {rec.id} leaks outside its bounding box")
        rows = sub.any(axis=1)
        cols = sub.any(axis=0)
        if not (rows[0] and rows[-1] and cols[0] and cols[-1]):
            raise ValidationError(f"segment {rec.id} bounding box is not tight")
        _, n = ndi.label(sub, structure=_CROSS)
        if n != 1:
            raise ValidationError(f"segment {rec.id} has {n} connected components")
        total += count
    if total != int(valid.sum()):
        raise ValidationError("segment pixel counts do not sum to labeled pixels")


# ---------------------------------------------------------------------------
# SLIC
# ---------------------------------------------------------------------------


class Slic(BaseEstimator):
    """Localized k-means superpixels on a regular seed grid.

    Distance between a pixel and a seed is
    ``sqrt(d_color^2 + (d_xy / step)^2 * compactness^2)`` with
    ``step = sqrt(pixels / n_segments)``; each seed searches a
    2*step x 2*step window. After the assignment/update rounds, orphan
    components smaller than ``step^2 / 4`` merge into their dominant
    neighbor.
    """

    def __init__(self, n_segments: int = 100, compactness: float = 10.0,
                 iterations: int = 10):
        self.n_segments = n_segments
        self.compactness = compactness
        self.iterations = iterations

    def fit(self, composite: BandStack, y=None):
        n_segments = int(self.n_segments)
        if not 1 <= n_segments <= composite.height * composite.width:
            raise ValidationError(
                f"n_segments must lie in [1, pixel count], got {n_segments}"
            )
        check_positive("compactness", self.compactness)
        if self.iterations < 0:
            raise ValidationError("iterations must be >= 0")
        colors = _colors(composite)
        height, width = colors.shape[:2]
        step = float(np.sqrt(height * width / n_segments))
        positions = _grid_seeds(height, width, n_segments)
        seed_colors = _seed_colors(colors, positions)
        labels = None
        for _ in range(int(self.iterations)):
            labels = _windowed_assign(
                colors, positions, seed_colors, step, float(self.compactness)
            )
            positions, seed_colors = _update_centers(
                colors, labels, positions, seed_colors
            )
        if labels is None:
            labels = _windowed_assign(
                colors, positions, seed_colors, step, float(self.compactness)
            )
        labels = _enforce_connectivity(labels, max(1, int(step * step / 4)))
        self.segmentation_ = segmentation_from_labels(
            labels,
            params={
                "algorithm": "slic",
                "n_segments": n_segments,
                "compactness": float(self.compactness),
                "iterations": int(self.iterations),
            },
        )
        return self

    def fit_predict(self, composite: BandStack, y=None) -> np.ndarray:
        return self.fit(composite).segmentation_.labels


def slic(composite: BandStack, n_segments: int, compactness: float = 10.0,
         iterations: int = 10) -> Segmentation:
    """Functional form of :class:`Slic`."""
    return Slic(n_segments, compactness, iterations).fit(composite).segmentation_


# ---------------------------------------------------------------------------
# IFT-SLIC
# ---------------------------------------------------------------------------


def _optimum_path_forest(colors, seed_pixels, seed_colors, alpha, beta):
    """Grow an optimum-path forest from seeds over the 4-adjacency graph.

    Extending a path into pixel t costs
    ``(alpha * ||color(t) - seed_color||)^beta + 1``. Equal-cost claims
    resolve to the lower seed id.
    """
    height, width, _ = colors.shape
    n_px = height * width
    n_seeds = len(seed_pixels)
    cost = np.full(n_px, np.inf, dtype=np.float64)
    label = np.full(n_px, -1, dtype=np.int32)
    settled = np.zeros(n_px, dtype=bool)
    flat_colors = colors.reshape(n_px, -1)
    # arc-cost table fits comfortably for campaign-sized inputs
    arc_table = None
    if n_seeds * n_px <= _ARC_TABLE_MAX_CELLS:
        norms = np.sqrt(
            ((flat_colors[None, :, :] - seed_colors[:, None, :]) ** 2).sum(axis=2)
        )
        arc_table = (alpha * norms) ** beta + 1.0
    heap = []
    for k, (r, c) in enumerate(seed_pixels):
        p = r * width + c
        if 0.0 < cost[p]:
            cost[p] = 0.0
            label[p] = k
            heapq.heappush(heap, (0.0, k, p))
    while heap:
        c0, lab, p = heapq.heappop(heap)
        if settled[p] or lab != label[p] or c0 != cost[p]:
            continue
        settled[p] = True
        r, c = divmod(p, width)
        if arc_table is None:
            seed_col = seed_colors[lab]
        for nr, nc in ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)):
            if not (0 <= nr < height and 0 <= nc < width):
                continue
            q = nr * width + nc
            if settled[q]:
                continue
            if arc_table is not None:
                arc = arc_table[lab, q]
            else:
                diff = flat_colors[q] - seed_col
                arc = (alpha * np.sqrt(float(diff @ diff))) ** beta + 1.0
            nc_cost = c0 + arc
            if nc_cost < cost[q] or (nc_cost == cost[q] and lab < label[q]):
                cost[q] = nc_cost
                label[q] = lab
                heapq.heappush(heap, (nc_cost, lab, q))
    return label.reshape(height, width)


def _recenter_on_segments(colors, labels, positions, seed_colors):
    """Move each seed to the segment pixel nearest its centroid."""
    height, width, _ = colors.shape
    flat = labels.ravel()
    order = np.argsort(flat, kind="stable")
    sorted_labels = flat[order]
    starts = np.searchsorted(sorted_labels, np.arange(positions.shape[0]))
    ends = np.searchsorted(sorted_labels, np.arange(positions.shape[0]), side="right")
    new_pixels = []
    new_colors = seed_colors.copy()
    grid = np.stack(np.divmod(order, width), axis=1)
    flat_colors = colors.reshape(-1, colors.shape[2])
    for k in range(positions.shape[0]):
        lo, hi = starts[k], ends[k]
        if lo == hi:
            r = int(np.clip(np.rint(positions[k, 0]), 0, height - 1))
            c = int(np.clip(np.rint(positions[k, 1]), 0, width - 1))
            new_pixels.append((r, c))
            continue
        pts = grid[lo:hi]
        centroid = pts.mean(axis=0)
        d2 = ((pts - centroid) ** 2).sum(axis=1)
        best = pts[int(np.argmin(d2))]
        new_pixels.append((int(best[0]), int(best[1])))
        new_colors[k] = flat_colors[order[lo:hi]].mean(axis=0)
    return new_pixels, new_colors


class IftSlic(BaseEstimator):
    """Superpixels as optimum-path forests rooted at grid seeds.

    Each iteration rebuilds the forest with additive path costs combining
    a color term ``(alpha * ||color - seed_color||)^beta`` and a unit step
    term, then recenters the seeds on their segments. ``iterations = 0``
    keeps the forest of the initial grid seeds. Connectivity is inherent
    to path growth.
    """

    def __init__(self, n_segments: int = 100, alpha: float = 0.5,
                 iterations: int = 10, beta: float = 12.0):
        self.n_segments = n_segments
        self.alpha = alpha
        self.iterations = iterations
        self.beta = beta

    def fit(self, composite: BandStack, y=None):
        n_segments = int(self.n_segments)
        if not 1 <= n_segments <= composite.height * composite.width:
            raise ValidationError(
                f"n_segments must lie in [1, pixel count], got {n_segments}"
            )
        check_positive("alpha", self.alpha)
        if self.iterations < 0:
            raise ValidationError("iterations must be >= 0")
        colors = _colors(composite)
        height, width = colors.shape[:2]
        positions = _grid_seeds(height, width, n_segments)
        seed_pixels = [
            (
                int(np.clip(np.rint(r), 0, height - 1)),
                int(np.clip(np.rint(c), 0, width - 1)),
            )
            for r, c in positions
        ]
        seed_colors = _seed_colors(colors, positions)
        labels = _optimum_path_forest(
            colors, seed_pixels, seed_colors, float(self.alpha), float(self.beta)
        )
        for _ in range(int(self.iterations)):
            seed_pixels, seed_colors = _recenter_on_segments(
                colors, labels, positions, seed_colors
            )
            labels = _optimum_path_forest(
                colors, seed_pixels, seed_colors, float(self.alpha), float(self.beta)
            )
        labels = _compact_scan_order(labels)
        self.segmentation_ = segmentation_from_labels(
            labels,
            params={
                "algorithm": "ift-slic",
                "n_segments": n_segments,
                "alpha": float(self.alpha),
                "iterations": int(self.iterations),
                "beta": float(self.beta),
            },
        )
        return self

    def fit_predict(self, composite: BandStack, y=None) -> np.ndarray:
        return self.fit(composite).segmentation_.labels


def ift_slic(composite: BandStack, n_segments: int, alpha: float = 0.5,
             iterations: int = 10) -> Segmentation:
    """Functional form of :class:`IftSlic`."""
    return IftSlic(n_segments, alpha, iterations).fit(composite).segmentation_


# ---------------------------------------------------------------------------
# MaskSLIC
# ---------------------------------------------------------------------------


def requested_segments(n_outside: int, target_region_px: int) -> int:
    """Segment count rule: outside pixels divided by the target region size."""
    check_positive("target_region_px", target_region_px)
    return max(1, int(np.floor(n_outside / target_region_px + 0.5)))


def _mask_seed_pixels(outside: np.ndarray, n_seeds: int, radius: float):
    """Seeds at maxima of the distance transform to the mask.

    The transform is recomputed with already-chosen seeds as obstacles
    whenever suppression (a disk of ``radius`` around each pick) exhausts
    the current transform before ``n_seeds`` are placed.
    """
    height, width = outside.shape
    available = outside.copy()
    chosen = []
    while len(chosen) < n_seeds and available.any():
        padded = np.zeros((height + 2, width + 2), dtype=bool)
        padded[1:-1, 1:-1] = available
        dt = ndi.distance_transform_edt(padded)[1:-1, 1:-1]
        dt[~available] = 0.0
        progressed = False
        while len(chosen) < n_seeds:
            flat_best = int(np.argmax(dt))
            r, c = divmod(flat_best, width)
            if dt[r, c] <= 0.0:
                break
            chosen.append((r, c))
            available[r, c] = False
            progressed = True
            r0 = max(0, int(np.floor(r - radius)))
            r1 = min(height, int(np.ceil(r + radius)) + 1)
            c0 = max(0, int(np.floor(c - radius)))
            c1 = min(width, int(np.ceil(c + radius)) + 1)
            dr = np.arange(r0, r1)[:, None] - r
            dc = np.arange(c0, c1)[None, :] - c
            dt[r0:r1, c0:c1][dr * dr + dc * dc <= radius * radius] = 0.0
        if not progressed:
            break
    return chosen


class MaskSlic(BaseEstimator):
    """Region-constrained superpixels outside an exclusion mask.

    The number of segments follows ``round(outside_pixels / target_region_px)``;
    seeds sit at local maxima of the distance transform to the mask, and
    assignment never touches masked pixels (labeled -1).
    """

    def __init__(self, target_region_px: int = 70, compactness: float = 10.0,
                 iterations: int = 10):
        self.target_region_px = target_region_px
        self.compactness = compactness
        self.iterations = iterations

    def fit(self, composite: BandStack, mask: Mask, y=None):
        check_same_shape("composite", composite, "mask", mask)
        outside = ~mask.excluded
        n_outside = int(outside.sum())
        if n_outside == 0:
            raise ValidationError("mask excludes every pixel: empty outside region")
        n_segments = requested_segments(n_outside, int(self.target_region_px))
        colors = _colors(composite)
        step = float(np.sqrt(n_outside / n_segments))
        seeds = _mask_seed_pixels(outside, n_segments, float(np.sqrt(self.target_region_px)))
        positions = np.asarray(seeds, dtype=np.float64).reshape(-1, 2)
        seed_colors = colors[positions[:, 0].astype(int), positions[:, 1].astype(int)]
        labels = None
        for _ in range(int(self.iterations)):
            labels = _windowed_assign(
                colors, positions, seed_colors, step, float(self.compactness),
                valid=outside,
            )
            positions, seed_colors = _update_centers(
                colors, labels, positions, seed_colors
            )
        if labels is None:
            labels = _windowed_assign(
                colors, positions, seed_colors, step, float(self.compactness),
                valid=outside,
            )
        labels = _enforce_connectivity(labels, max(1, int(step * step / 4)))
        self.segmentation_ = segmentation_from_labels(
            labels,
            params={
                "algorithm": "mask-slic",
                "target_region_px": int(self.target_region_px),
                "n_segments": n_segments,
                "outside_pixels": n_outside,
                "compactness": float(self.compactness),
                "iterations": int(self.iterations),
            },
        )
        return self

    def fit_predict(self, composite: BandStack, mask: Mask, y=None) -> np.ndarray:
        return self.fit(composite, mask).segmentation_.labels


def mask_slic(composite: BandStack, mask: Mask,
              target_region_px: int = 70) -> Segmentation:
    """Functional form of :class:`MaskSlic`."""
    return MaskSlic(target_region_px).fit(composite, mask).segmentation_


# ---------------------------------------------------------------------------
# k-means refinement
# ---------------------------------------------------------------------------


def _lloyd(points, k, rng, max_iter=50):
    """Deterministic seeded Lloyd's k-means; returns (assignment, wcss)."""
    n = points.shape[0]
    centers = [points[int(rng.integers(n))]]
    for _ in range(1, k):
        d2 = np.min(
            ((points[:, None, :] - np.asarray(centers)[None, :, :]) ** 2).sum(-1),
            axis=1,
        )
        total = float(d2.sum())
        if total <= 0:
            centers.append(points[int(rng.integers(n))])
        else:
            centers.append(points[int(rng.choice(n, p=d2 / total))])
    centers = np.asarray(centers, dtype=np.float64)
    assign = None
    for _ in range(max_iter):
        d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(-1)
        new_assign = np.argmin(d2, axis=1)
        if assign is not None and np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for j in range(k):
            sel = assign == j
            if sel.any():
                centers[j] = points[sel].mean(axis=0)
    d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(-1)
    wcss = float(d2[np.arange(n), assign].sum())
    return assign, wcss


def _elbow_k(wcss):
    """Elbow rule: argmax of the discrete second difference of WCSS(k)."""
    if wcss[0] <= 1e-9 or len(wcss) == 1:
        return 1
    if len(wcss) == 2:
        return 2 if wcss[1] < wcss[0] - 1e-12 else 1
    best_k, best_val = 2, -np.inf
    for k in range(2, len(wcss)):
        second = wcss[k - 2] - 2.0 * wcss[k - 1] + wcss[k]
        if second > best_val + 1e-12:
            best_k, best_val = k, second
    return best_k


class KMeansRefiner(BaseEstimator):
    """Split selected parent segments with k-means plus an elbow rule.

    For each parent, k-means runs over the pixels' composite vectors for
    k = 1..max_clusters; the elbow rule picks k, each cluster is split
    into 4-connected components, and components smaller than ``min_size``
    are discarded (their pixels left unlabeled). Children record their
    parent id.
    """

    def __init__(self, min_size: int = 9, max_clusters: int = 6, seed: int = 0):
        self.min_size = min_size
        self.max_clusters = max_clusters
        self.seed = seed

    def fit(self, composite: BandStack, parent: Segmentation, segment_ids, y=None):
        check_same_shape("composite", composite, "parent segmentation", parent)
        known = {rec.id for rec in parent.segments}
        ids = sorted(int(i) for i in segment_ids)
        unknown = [i for i in ids if i not in known]
        if unknown:
            raise ValidationError(f"unknown parent segment ids: {unknown}")
        colors = _colors(composite)
        labels_out = np.full(parent.labels.shape, -1, dtype=np.int32)
        parent_of: dict = {}
        empty_parents = []
        next_id = 0
        for pid in ids:
            rows, cols = parent.pixel_indices(pid)
            if rows.size < int(self.min_size):
                empty_parents.append(pid)
                continue
            points = colors[rows, cols]
            k_max = min(int(self.max_clusters), rows.size)
            wcss = []
            assigns = []
            for k in range(1, k_max + 1):
                rng = np.random.default_rng([int(self.seed), pid, k])
                assign, score = _lloyd(points, k, rng)
                wcss.append(score)
                assigns.append(assign)
            k_best = _elbow_k(wcss)
            assign = assigns[k_best - 1]
            r0, c0 = rows.min(), cols.min()
            h = rows.max() - r0 + 1
            w = cols.max() - c0 + 1
            cluster_plane = np.full((h, w), -1, dtype=np.int32)
            cluster_plane[rows - r0, cols - c0] = assign
            for cluster in range(k_best):
                cc, n = ndi.label(cluster_plane == cluster, structure=_CROSS)
                for comp in range(1, n + 1):
                    sel = cc == comp
                    if int(sel.sum()) < int(self.min_size):
                        continue
                    rr, cc_idx = np.nonzero(sel)
                    labels_out[rr + r0, cc_idx + c0] = next_id
                    parent_of[next_id] = pid
                    next_id += 1
        self.segmentation_ = segmentation_from_labels(
            labels_out,
            params={
                "algorithm": "kmeans-refine",
                "min_size": int(self.min_size),
                "max_clusters": int(self.max_clusters),
                "seed": int(self.seed),
                "parents": ids,
                "empty_parents": empty_parents,
            },
            parent_of=parent_of,
        )
        return self


def refine_kmeans(composite: BandStack, parent: Segmentation, segment_ids,
                  min_size: int = 9, seed: int = 0) -> Segmentation:
    """Functional form of :class:`KMeansRefiner`."""
    refiner = KMeansRefiner(min_size=min_size, seed=seed)
    return refiner.fit(composite, parent, segment_ids).segmentation_


# ---------------------------------------------------------------------------
# Statistics and persistence
# ---------------------------------------------------------------------------


def segmentation_stats(seg: Segmentation) -> dict:
    """Count and pixel-size summary; size fields absent for empty input."""
    counts = [rec.pixel_count for rec in seg.segments]
    if not counts:
        return {"count": 0}
    return {
        "count": len(counts),
        "mean_pixel_count": float(np.mean(counts)),
        "min_pixel_count": int(min(counts)),
        "max_pixel_count": int(max(counts)),
    }


def save_segmentation(seg: Segmentation, path) -> None:
    """Write labels to the .bsj/.bsd container plus a JSON segment table."""
    write_planes(
        path,
        seg.labels[None, :, :],
        ["labels"],
        {"kind": "segmentation"},
        dtype="i32le",
    )
    base = str(path)
    if base.endswith((".bsj", ".bsd")):
        base = base[:-4]
    table = {
        "params": seg.params,
        "segments": [
            {
                "id": rec.id,
                "pixel_count": rec.pixel_count,
                "bounding_box": list(rec.bounding_box),
                "centroid": list(rec.centroid),
                "parent_id": rec.parent_id,
            }
            for rec in seg.segments
        ],
    }
    with open(base + ".segments.json", "w", encoding="utf-8") as fh:
        json.dump(table, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_segmentation(path) -> Segmentation:
    planes, header = read_planes(path)
    if header["dtype"] != "i32le":
        raise FormatError(
            f"segmentation container requires dtype i32le, got {header['dtype']!r}"
        )
    base = str(path)
    if base.endswith((".bsj", ".bsd")):
        base = base[:-4]
    try:
        with open(base + ".segments.json", "r", encoding="utf-8") as fh:
            table = json.load(fh)
    except FileNotFoundError:
        raise FormatError(f"missing segment table: {base}.segments.json")
    except json.JSONDecodeError as exc:
        raise FormatError(f"malformed segment table {base}.segments.json: {exc}")
    records = tuple(
        SegmentRecord(
            id=int(item["id"]),
            pixel_count=int(item["pixel_count"]),
            bounding_box=tuple(item["bounding_box"]),
            centroid=tuple(item["centroid"]),
            parent_id=item.get("parent_id"),
        )
        for item in table["segments"]
    )
    return Segmentation(labels=planes[0], segments=records, params=table["params"])
