import numpy as np
import pytest

from strokebench.annotations import Segment, default_taxonomy, superclass_of
from strokebench.errors import MetricError
from strokebench.metrics import (ConfusionMatrix, DetectionSet, accuracy, aggregate,
                                 average_precision, confusion, global_iou,
                                 mean_average_precision, tiou)

from oracles import average_precision_bruteforce


def _ds(videos):
    """videos: {vid: ([(b, e, score)...], [(b, e)...])}"""
    ds = DetectionSet()
    for vid, (preds, gts) in videos.items():
        ds.add_video(
            vid,
            [Segment(b, e, "Stroke", s) for b, e, s in preds],
            [Segment(b, e, "Stroke") for b, e in gts],
        )
    return ds


class TestAccuracy:
    def test_identical(self):
        assert accuracy(["a", "b"], ["a", "b"]) == 1.0

    def test_disjoint(self):
        assert accuracy(["a", "a"], ["b", "b"]) == 0.0

    def test_three_of_five(self):
        assert accuracy(list("abcde"), list("abcxy")) == 0.6

    def test_length_mismatch(self):
        with pytest.raises(MetricError, match="length mismatch"):
            accuracy(["a"], ["a", "b"])


class TestConfusion:
    def test_diagonal(self):
        cm = confusion(["A", "A", "B"], ["A", "A", "B"], ["A", "B"])
        assert np.array_equal(cm.counts, [[2, 0], [0, 1]])

    def test_all_a_predicted_b(self):
        cm = confusion(["B"] * 4, ["A"] * 4, ["A", "B"])
        assert cm.counts[0, 1] == 4

    def test_total_equals_samples(self):
        rng = np.random.default_rng(0)
        labels = list("abcdef")
        for _ in range(20):
            n = int(rng.integers(1, 60))
            pred = [labels[i] for i in rng.integers(0, 6, n)]
            truth = [labels[i] for i in rng.integers(0, 6, n)]
            cm = confusion(pred, truth, labels)
            assert cm.total == n
            for i, lab in enumerate(labels):
                assert cm.counts[i].sum() == truth.count(lab)

    def test_unknown_label_rejected(self):
        with pytest.raises(MetricError, match="not in label list"):
            confusion(["z"], ["a"], ["a"])


class TestAggregate:
    def test_two_fine_labels_one_super(self):
        tax = default_taxonomy()
        fine = ["Offensive Forehand Hit", "Offensive Backhand Hit"]
        cm = ConfusionMatrix(fine, np.array([[3, 1], [0, 2]], dtype=np.int64))
        agg = aggregate(cm, tax, "type")
        assert agg.labels == ["Offensive"]
        assert agg.counts.tolist() == [[6]]

    def test_global_is_identity(self):
        tax = default_taxonomy()
        labels = tax.labels[:4]
        cm = ConfusionMatrix(labels, np.arange(16, dtype=np.int64).reshape(4, 4))
        agg = aggregate(cm, tax, "global")
        assert agg.labels == labels
        assert np.array_equal(agg.counts, cm.counts)

    def test_level_shapes_and_totals(self):
        tax = default_taxonomy()
        rng = np.random.default_rng(1)
        cm = ConfusionMatrix(tax.labels, rng.integers(0, 9, (20, 20)).astype(np.int64))
        for level, size in (("type", 3), ("hand", 2), ("type_hand", 6)):
            agg = aggregate(cm, tax, level)
            assert agg.counts.shape == (size, size)
            assert agg.total == cm.total

    def test_diagonal_accuracy_matches_mapped_lists(self):
        tax = default_taxonomy()
        rng = np.random.default_rng(2)
        labels = tax.labels
        for _ in range(50):
            n = int(rng.integers(1, 80))
            pred = [labels[i] for i in rng.integers(0, 20, n)]
            truth = [labels[i] for i in rng.integers(0, 20, n)]
            cm = confusion(pred, truth, labels)
            for level in ("global", "type", "hand", "type_hand"):
                mapped_acc = accuracy([superclass_of(tax, p, level) for p in pred],
                                      [superclass_of(tax, t, level) for t in truth])
                assert aggregate(cm, tax, level).diagonal_accuracy() == mapped_acc


class TestTiou:
    def test_half_open_overlap(self):
        assert abs(tiou(Segment(0, 100, "x"), Segment(50, 150, "y")) - 1 / 3) < 1e-12

    def test_identical_is_one(self):
        assert tiou(Segment(5, 10, "x"), Segment(5, 10, "y")) == 1.0

    def test_disjoint_is_zero(self):
        assert tiou(Segment(0, 10, "x"), Segment(10, 20, "y")) == 0.0

    def test_symmetry_and_identity_condition(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            a = Segment(int(rng.integers(0, 50)), int(rng.integers(51, 100)), "a")
            b = Segment(int(rng.integers(0, 50)), int(rng.integers(51, 100)), "b")
            assert tiou(a, b) == tiou(b, a)
            assert (tiou(a, b) == 1.0) == ((a.begin, a.end) == (b.begin, b.end))


class TestAveragePrecision:
    def test_perfect_detector(self):
        ds = _ds({"v": ([(0, 100, 0.9), (200, 300, 0.8)], [(0, 100), (200, 300)])})
        assert average_precision(ds) == 1.0

    def test_no_predictions(self):
        ds = _ds({"v": ([], [(0, 100)])})
        assert average_precision(ds) == 0.0

    def test_no_ground_truth_rejected(self):
        ds = _ds({"v": ([(0, 100, 0.5)], [])})
        with pytest.raises(MetricError, match="without ground truth"):
            average_precision(ds)

    def test_duplicate_hit_and_miss(self):
        videos = {"v": ([(0, 100, 0.9), (0, 100, 0.8), (500, 600, 0.7)],
                        [(0, 100), (200, 300)])}
        got = average_precision(_ds(videos))
        ref = average_precision_bruteforce(videos, 0.5)
        assert abs(got - ref) < 1e-12
        # 1 TP at rank 1 out of 2 GT, then only FPs: AP = 0.5
        assert abs(got - 0.5) < 1e-12

    def test_matches_bruteforce_on_random_instances(self):
        rng = np.random.default_rng(6)
        for _ in range(300):
            videos = {}
            for vid in ("a", "b")[: int(rng.integers(1, 3))]:
                gts = []
                pos = 0
                for _ in range(int(rng.integers(0, 6))):
                    pos += int(rng.integers(1, 60))
                    end = pos + int(rng.integers(1, 80))
                    gts.append((pos, end))
                    pos = end
                preds = []
                for _ in range(int(rng.integers(0, 9))):
                    b = int(rng.integers(0, 300))
                    e = b + int(rng.integers(1, 90))
                    preds.append((b, e, float(np.round(rng.random(), 3))))
                videos[vid] = (preds, gts)
            if sum(len(g) for _, g in videos.values()) == 0:
                continue
            thr = float(rng.choice([0.3, 0.5, 0.7]))
            got = average_precision(_ds(videos), thr)
            ref = average_precision_bruteforce(videos, thr)
            assert abs(got - ref) < 1e-12

    def test_score_monotone_transform_invariance(self):
        rng = np.random.default_rng(7)
        videos = {"v": ([(int(b), int(b) + 50, float(s)) for b, s in
                         zip(rng.integers(0, 500, 8), rng.random(8))],
                        [(0, 50), (100, 150), (300, 350)])}
        base = average_precision(_ds(videos))
        squashed = {"v": ([(b, e, s / (1 + s)) for b, e, s in videos["v"][0]],
                          videos["v"][1])}
        assert abs(average_precision(_ds(squashed)) - base) < 1e-12

    def test_ap_within_unit_interval(self):
        rng = np.random.default_rng(8)
        for _ in range(50):
            videos = {"v": ([(int(b), int(b) + 30, float(s)) for b, s in
                             zip(rng.integers(0, 400, 5), rng.random(5))],
                            [(50, 80), (200, 230)])}
            ap = average_precision(_ds(videos))
            assert 0.0 <= ap <= 1.0


class TestMeanAveragePrecision:
    def test_single_class_equals_ap(self):
        ds = _ds({"v": ([(0, 100, 0.9)], [(0, 100)])})
        assert mean_average_precision({"Stroke": ds}) == average_precision(ds)

    def test_mean_of_two_classes(self):
        ds_hi = _ds({"v": ([(0, 100, 0.9)], [(0, 100)])})            # AP 1.0
        ds_lo = _ds({"v": ([(500, 600, 0.9)], [(0, 100)])})          # AP 0.0
        assert mean_average_precision({"a": ds_hi, "b": ds_lo}) == 0.5

    def test_class_without_gt_excluded(self):
        with_gt = _ds({"v": ([(0, 100, 0.9)], [(0, 100)])})
        no_gt = _ds({"v": ([(0, 100, 0.9)], [])})
        assert mean_average_precision({"a": with_gt, "b": no_gt}) == 1.0

    def test_class_with_gt_but_no_predictions_contributes_zero(self):
        a = _ds({"v": ([(0, 100, 0.9)], [(0, 100)])})
        b = _ds({"v": ([], [(0, 100)])})
        assert mean_average_precision({"a": a, "b": b}) == 0.5


class TestGlobalIou:
    def test_hand_case_one_third(self):
        ds = _ds({"v": ([(0, 100, 0.9)], [(50, 150)])})
        assert abs(global_iou(ds) - 1 / 3) < 1e-12

    def test_abutting_predictions_count_as_union(self):
        ds = _ds({"v": ([(0, 75, 0.9), (75, 150, 0.8)], [(0, 150)])})
        assert global_iou(ds) == 1.0

    def test_micro_average_across_videos(self):
        ds = _ds({
            "v1": ([(0, 100, 0.9)], [(50, 150)]),   # I=50, U=150
            "v2": ([(0, 50, 0.9)], [(50, 100)]),    # I=0,  U=100
        })
        assert abs(global_iou(ds) - 50 / 250) < 1e-12

    def test_empty_everything_rejected(self):
        ds = _ds({"v": ([], [])})
        with pytest.raises(MetricError, match="undefined"):
            global_iou(ds)

    def test_split_invariance(self):
        rng = np.random.default_rng(9)
        for _ in range(30):
            b = int(rng.integers(0, 100))
            e = b + int(rng.integers(2, 200))
            cut = int(rng.integers(b + 1, e))
            gt = [(b - 20 if b >= 20 else b, e + 30)]
            whole = _ds({"v": ([(b, e, 0.9)], gt)})
            split = _ds({"v": ([(b, cut, 0.9), (cut, e, 0.8)], gt)})
            assert abs(global_iou(whole) - global_iou(split)) < 1e-12


def test_splitting_a_detection_hurts_map_but_not_global_iou():
    # One perfect detection vs. the same frames as two half-windows. Each half
    # covers exactly half the ground truth, so both can only fall below the
    # matching threshold when it exceeds 0.5; at 0.6 AP collapses to 0 while
    # the frame-wise overlap is untouched.
    gt = [(0, 150)]
    whole = {"v": ([(0, 150, 0.9)], gt)}
    split = {"v": ([(0, 75, 0.9), (75, 150, 0.8)], gt)}
    assert average_precision(_ds(whole), 0.6) == 1.0
    assert average_precision(_ds(split), 0.6) == 0.0
    assert global_iou(_ds(whole)) == global_iou(_ds(split)) == 1.0


def test_splitting_hurts_map_at_default_threshold_too():
    # At the default 0.5 the larger piece of any split still matches, but when
    # the false-positive piece outranks it, AP strictly drops: 1.0 -> 0.5.
    gt = [(0, 150)]
    whole = {"v": ([(0, 150, 0.9)], gt)}
    split = {"v": ([(0, 50, 0.9), (50, 150, 0.8)], gt)}
    assert average_precision(_ds(whole)) == 1.0
    assert average_precision(_ds(split)) == 0.5
    assert global_iou(_ds(whole)) == global_iou(_ds(split)) == 1.0
