import math

import pytest

from foresteyes.consensus import aggregate_results, write_answers_csv
from foresteyes.errors import ValidationError
from foresteyes.groundtruth import GT_M, SegmentGT
from foresteyes.labels import FOREST, NON_FOREST
from foresteyes.simulate import (
    VolunteerModel,
    binary_confusion,
    homogeneous_pool,
    identity_confusion,
    simulate_campaign,
    task_segment_map,
)


def binary_gt(n_tasks, rng=None, forest_share=0.5):
    labels = {}
    if rng is None:
        labels = {i: FOREST if i % 2 == 0 else NON_FOREST for i in range(n_tasks)}
    else:
        for i in range(n_tasks):
            labels[i] = FOREST if rng.random() < forest_share else NON_FOREST
    return SegmentGT(
        variant=GT_M,
        labels=labels,
        hor={i: 1.0 for i in labels},
        majority=dict(labels),
    )


def consensus_oracle(per_class_accuracy, redundancy):
    """P(majority of R independent answers is correct), binomial sum."""
    need = redundancy // 2 + 1
    return sum(
        math.comb(redundancy, k)
        * per_class_accuracy**k
        * (1 - per_class_accuracy) ** (redundancy - k)
        for k in range(need, redundancy + 1)
    )


class TestVolunteerModel:
    def test_row_sums_validated(self):
        confusion = identity_confusion()
        confusion[FOREST][FOREST] = 0.9  # row no longer sums to 1
        with pytest.raises(ValidationError, match="sums to"):
            VolunteerModel("v1", "registered", confusion)

    def test_duration_law_validated(self):
        with pytest.raises(ValidationError, match="positive"):
            VolunteerModel(
                "v1", "registered", identity_confusion(),
                duration_law={"easy": (0.0, 0.3)},
            )

    def test_pool_too_small(self):
        pool = homogeneous_pool(5, identity_confusion())
        with pytest.raises(ValidationError, match="redundancy"):
            simulate_campaign(binary_gt(3), pool, redundancy=15)


class TestSimulateCampaign:
    def test_perfect_volunteers_unanimous(self):
        gt = binary_gt(10)
        pool = homogeneous_pool(20, identity_confusion())
        records = simulate_campaign(gt, pool, redundancy=15, seed=1)
        assert len(records) == 150
        results, incomplete = aggregate_results(
            records, redundancy=15, task_to_segment=task_segment_map(gt)
        )
        assert incomplete == []
        for res in results:
            assert res.entropy_raw == 0.0
            assert res.consensus == gt.labels[res.segment_id]

    def test_distinct_volunteers_per_task(self):
        gt = binary_gt(6)
        pool = homogeneous_pool(15, identity_confusion())
        records = simulate_campaign(gt, pool, redundancy=15, seed=2)
        by_task = {}
        for rec in records:
            by_task.setdefault(rec.task_id, []).append(rec.volunteer_id)
        for vols in by_task.values():
            assert len(set(vols)) == 15

    def test_byte_identical_output(self, tmp_path):
        gt = binary_gt(8)
        pool = homogeneous_pool(20, binary_confusion(0.8))
        a = simulate_campaign(gt, pool, redundancy=15, seed=42)
        b = simulate_campaign(gt, pool, redundancy=15, seed=42)
        write_answers_csv(a, tmp_path / "a.csv")
        write_answers_csv(b, tmp_path / "b.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
        c = simulate_campaign(gt, pool, redundancy=15, seed=43)
        assert any(x.answer != y.answer for x, y in zip(a, c))

    def test_majority_beats_single_volunteer(self, rng):
        gt = binary_gt(400, rng)
        oracle_single = 0.7
        pool = homogeneous_pool(30, binary_confusion(oracle_single))
        for redundancy in (5, 15):
            records = simulate_campaign(gt, pool, redundancy=redundancy, seed=9)
            results, _ = aggregate_results(
                records, redundancy=redundancy,
                task_to_segment=task_segment_map(gt),
            )
            correct = sum(
                1 for res in results if res.consensus == gt.labels[res.segment_id]
            )
            rate = correct / len(results)
            oracle = consensus_oracle(oracle_single, redundancy)
            assert rate > oracle_single
            assert rate == pytest.approx(oracle, abs=0.05)

    def test_convergence_grows_with_accuracy(self):
        from foresteyes.consensus import convergence

        gt = binary_gt(150)
        rates = []
        for accuracy in (0.6, 0.8, 0.95):
            pool = homogeneous_pool(25, binary_confusion(accuracy))
            records = simulate_campaign(gt, pool, redundancy=15, seed=5)
            out = convergence(records, redundancy=15, ks=(5,), seed=5)
            rates.append(out["per_k"][5])
        assert rates[0] < rates[1] < rates[2] <= 100.0

    def test_durations_scale_with_difficulty_proxy(self):
        gt = SegmentGT(
            variant=GT_M,
            labels={0: FOREST, 1: FOREST, 2: FOREST},
            hor={0: 1.0, 1: 0.8, 2: 0.55},
            majority={0: FOREST, 1: FOREST, 2: FOREST},
        )
        pool = homogeneous_pool(40, identity_confusion())
        records = simulate_campaign(gt, pool, redundancy=30, seed=3)
        mean_by_task = {}
        for rec in records:
            mean_by_task.setdefault(rec.task_id, []).append(rec.duration_seconds)
        means = [sum(v) / len(v) for _, v in sorted(mean_by_task.items())]
        assert means[0] < means[1] < means[2]
