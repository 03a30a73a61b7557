import numpy as np
import pytest
from PIL import Image

from foresteyes.consensus import aggregate_results
from foresteyes.errors import ValidationError
from foresteyes.groundtruth import GT_U, SegmentGT
from foresteyes.labels import FOREST, NON_FOREST, UNDEFINED
from foresteyes.segment import segmentation_from_labels
from foresteyes.tasks import (
    Panel,
    TaskSpec,
    generate_tasks,
    manifest_task_segments,
    read_manifest,
    select_tasks_by_hor,
    select_tasks_for_refinement,
    write_manifest,
)

from test_consensus import make_records


def quad_segmentation(size=40):
    labels = np.zeros((size, size), dtype=np.int32)
    half = size // 2
    labels[:half, half:] = 1
    labels[half:, :half] = 2
    labels[half:, half:] = 3
    return segmentation_from_labels(labels, params={"algorithm": "test"})


def flat_panel(kind, size=40, value=128):
    return Panel(kind=kind, image=np.full((size, size, 3), value, dtype=np.uint8))


class TestGenerateTasks:
    def test_cardinality_and_files(self, tmp_path):
        seg = quad_segmentation()
        specs = generate_tasks(
            seg,
            [flat_panel("rgb"), flat_panel("false753", value=60)],
            (FOREST, NON_FOREST, UNDEFINED),
            "wf1",
            tmp_path,
        )
        assert len(specs) == 4
        pngs = sorted(p.name for p in (tmp_path / "wf1").glob("*.png"))
        assert len(pngs) == 8
        names = sorted(
            panel["path"].split("/")[-1] for spec in specs for panel in spec.panels
        )
        assert names == pngs

    def test_zoom_window_clipped_contains_bbox(self, tmp_path):
        seg = quad_segmentation()
        specs = generate_tasks(
            seg,
            [flat_panel("rgb"), flat_panel("false753")],
            (FOREST, NON_FOREST, UNDEFINED),
            "wf2",
            tmp_path,
        )
        for spec in specs:
            rec = seg.record(spec.segment_id)
            top, left, h, w = spec.zoom_window
            r0, c0, bh, bw = rec.bounding_box
            assert top <= r0 and left <= c0
            assert top + h >= r0 + bh and left + w >= c0 + bw
            assert top >= 0 and left >= 0
            assert top + h <= seg.height and left + w <= seg.width
        # corner segment: margin clipped at the border, bbox still inside
        corner = next(s for s in specs if s.segment_id == 0)
        assert corner.zoom_window[:2] == (0, 0)

    def test_three_panel_kinds_in_order(self, tmp_path):
        seg = quad_segmentation()
        specs = generate_tasks(
            seg,
            [flat_panel("rgb"), flat_panel("false753"), flat_panel("ndvi")],
            (FOREST, NON_FOREST, UNDEFINED, "Small"),
            "wf3",
            tmp_path,
        )
        for spec in specs:
            assert [p["kind"] for p in spec.panels] == ["rgb", "false753", "ndvi"]

    def test_contour_drawn(self, tmp_path):
        seg = quad_segmentation()
        specs = generate_tasks(
            seg,
            [flat_panel("rgb"), flat_panel("false753")],
            (FOREST, NON_FOREST, UNDEFINED),
            "wf4",
            tmp_path,
        )
        img = np.asarray(Image.open(tmp_path / "wf4" / f"{specs[0].task_id}_rgb.png"))
        yellow = (img == np.array([255, 255, 0])).all(axis=-1)
        assert yellow.any()

    def test_dimension_mismatch(self, tmp_path):
        seg = quad_segmentation()
        with pytest.raises(ValidationError, match="shape"):
            generate_tasks(
                seg,
                [flat_panel("rgb", size=10), flat_panel("false753", size=10)],
                (FOREST, NON_FOREST, UNDEFINED),
                "wf",
                tmp_path,
            )

    def test_empty_segmentation(self, tmp_path):
        seg = segmentation_from_labels(np.full((4, 4), -1, dtype=np.int32), params={})
        with pytest.raises(ValidationError, match="empty segmentation"):
            generate_tasks(
                seg,
                [flat_panel("rgb", 4), flat_panel("false753", 4)],
                (FOREST, NON_FOREST, UNDEFINED),
                "wf",
                tmp_path,
            )

    def test_manifest_round_trip(self, tmp_path):
        seg = quad_segmentation()
        specs = generate_tasks(
            seg,
            [flat_panel("rgb"), flat_panel("false753")],
            (FOREST, NON_FOREST, UNDEFINED),
            "wf5",
            tmp_path,
        )
        manifest = tmp_path / "wf5" / "manifest.jsonl"
        loaded = read_manifest(manifest)
        assert loaded == specs
        again = tmp_path / "copy.jsonl"
        write_manifest(loaded, again)
        assert again.read_bytes() == manifest.read_bytes()
        assert manifest_task_segments(loaded) == {s.task_id: s.segment_id for s in specs}

    def test_spec_invariants(self):
        with pytest.raises(ValidationError, match="at least 2 panels"):
            TaskSpec("t", "wf", 0, ({"kind": "rgb", "path": "x"},),
                     (FOREST, NON_FOREST, UNDEFINED), (0, 0, 4, 4))
        with pytest.raises(ValidationError, match="unique"):
            TaskSpec(
                "t", "wf", 0,
                ({"kind": "rgb", "path": "x"}, {"kind": "ndvi", "path": "y"}),
                (FOREST, FOREST, UNDEFINED), (0, 0, 4, 4),
            )


class TestSelectByHor:
    def seg_gt(self):
        hor = {0: 0.55, 1: 0.8, 2: 1.0, 3: 1.0, 4: 1.0, 5: 0.95, 6: 0.72,
               7: 1.0, 8: 0.6, 9: 0.85}
        majority = {i: (FOREST if i in (2, 3, 7) else NON_FOREST) for i in hor}
        majority[4] = NON_FOREST  # pure NonForest stays out of the sample pool
        labels = {
            i: (UNDEFINED if hor[i] < 0.7 else majority[i]) for i in hor
        }
        return SegmentGT(variant=GT_U, labels=labels, hor=hor, majority=majority)

    def test_counting(self):
        gt = self.seg_gt()
        selected = select_tasks_by_hor(gt, n_pure=2, seed=1)
        mixed = [sid for sid, h in gt.hor.items() if h < 1.0]
        assert len(selected) == len(mixed) + 2

    def test_zero_pure(self):
        gt = self.seg_gt()
        assert select_tasks_by_hor(gt, n_pure=0) == sorted(
            sid for sid, h in gt.hor.items() if h < 1.0
        )

    def test_all_pure_seeded_sample(self):
        hor = {i: 1.0 for i in range(6)}
        majority = {i: FOREST for i in range(6)}
        gt = SegmentGT(variant=GT_U, labels=dict(majority), hor=hor, majority=majority)
        first = select_tasks_by_hor(gt, n_pure=3, seed=7)
        again = select_tasks_by_hor(gt, n_pure=3, seed=7)
        assert first == again
        assert len(first) == 3

    def test_pure_pool_exhausted(self):
        gt = self.seg_gt()
        with pytest.raises(ValidationError, match="available"):
            select_tasks_by_hor(gt, n_pure=10)


class TestSelectForRefinement:
    def build_results(self):
        records = []
        records += make_records("t0", [FOREST] * 15)  # unanimous: skip
        records += make_records("t1", [FOREST] * 5 + [NON_FOREST] * 5 + [UNDEFINED] * 5)
        records += make_records("t2", [UNDEFINED] * 13 + [FOREST] * 2)  # undefined consensus
        records += make_records("t3", [FOREST] * 7 + [NON_FOREST] * 7 + [UNDEFINED])  # tie
        results, _ = aggregate_results(
            records, redundancy=15,
            task_to_segment={"t0": 0, "t1": 1, "t2": 2, "t3": 3},
        )
        return results

    def test_union_rule(self):
        assert select_tasks_for_refinement(self.build_results()) == [1, 2, 3]

    def test_unanimous_not_selected(self):
        results = [r for r in self.build_results() if r.task_id == "t0"]
        assert select_tasks_for_refinement(results) == []

    def test_missing_segment_ids(self):
        records = make_records("t9", [UNDEFINED] * 15)
        results, _ = aggregate_results(records, redundancy=15)
        with pytest.raises(ValidationError, match="segment ids"):
            select_tasks_for_refinement(results)
