import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from plantforge.cloud import LabeledCloud
from plantforge.errors import InvalidPrediction, SchemaError, ShapeError
from plantforge.grouping import InstancePrediction
from plantforge.metrics import (DEFAULT_THRESHOLDS, STRICT_THRESHOLDS,
                                EvalReport, aggregate, confusion_matrix,
                                instance_eval, semantic_eval)


def cloud_with(sem, inst=None):
    sem = np.asarray(sem, dtype=np.int32)
    inst = (np.full(len(sem), -1, np.int32) if inst is None
            else np.asarray(inst, dtype=np.int32))
    return LabeledCloud(points=np.zeros((len(sem), 3), dtype=np.float32),
                        semantic=sem, instance=inst)


def pred(class_id, indices, conf):
    return InstancePrediction(class_id=class_id,
                              point_indices=np.asarray(indices),
                              confidence=conf)


class TestSemanticEval:
    def test_perfect(self):
        gt = cloud_with([0, 1, 2, 1])
        res = semantic_eval(gt, np.array([0, 1, 2, 1]))
        assert res.miou == 1.0
        assert all(res.iou[c] == 1.0 for c in range(3))

    def test_hand_confusion_example(self):
        gt = cloud_with([0, 1, 1, 1])
        res = semantic_eval(gt, np.array([0, 0, 1, 1]))
        assert res.iou[0] == pytest.approx(1 / 2)
        assert res.iou[1] == pytest.approx(2 / 3)
        assert res.miou == pytest.approx(7 / 12)

    def test_absent_class_excluded(self):
        gt = cloud_with([0, 0])
        res = semantic_eval(gt, np.array([0, 0]), n_classes=3)
        assert res.iou[2] is None
        assert res.miou == 1.0

    def test_unlabeled_gt_excluded(self):
        gt = cloud_with([0, -1, 1])
        res = semantic_eval(gt, np.array([0, 1, 1]))
        assert int(res.confusion.sum()) == 2
        assert res.miou == 1.0

    def test_undefined_reported_as_none(self):
        gt = cloud_with([0, 0])
        res = semantic_eval(gt, np.array([1, 1]), n_classes=2)
        assert res.precision[0] is None      # no class-0 predictions
        assert res.recall[1] is None         # no class-1 ground truth
        assert res.iou[0] == 0.0

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            semantic_eval(cloud_with([0, 1]), np.array([0]))

    def test_matches_counting_oracle(self, rng):
        for _ in range(20):
            n = int(rng.integers(5, 100))
            n_classes = int(rng.integers(2, 5))
            gt_arr = rng.integers(-1, n_classes, n).astype(np.int32)
            pr = rng.integers(0, n_classes, n).astype(np.int32)
            res = semantic_eval(cloud_with(gt_arr), pr, n_classes=n_classes)
            tp, fp, fn = oracles.semantic_counts(gt_arr, pr, n_classes)
            for c in range(n_classes):
                denom = tp[c] + fp[c] + fn[c]
                if denom == 0:
                    assert res.iou[c] is None
                else:
                    assert res.iou[c] == pytest.approx(tp[c] / denom)

    @given(st.integers(2, 4), st.integers(1, 60), st.integers(0, 2 ** 31 - 1))
    @settings(max_examples=30, deadline=None)
    def test_bounds_property(self, n_classes, n, seed):
        r = np.random.default_rng(seed)
        gt_arr = r.integers(-1, n_classes, n).astype(np.int32)
        pr = r.integers(0, n_classes, n).astype(np.int32)
        res = semantic_eval(cloud_with(gt_arr), pr, n_classes=n_classes)
        for c in range(n_classes):
            for metric in (res.iou, res.precision, res.recall, res.f1):
                if metric[c] is not None:
                    assert 0.0 <= metric[c] <= 1.0


class TestInstanceEval:
    def test_perfect_match(self):
        gt = cloud_with([0, 0, 0, 1], [0, 0, 0, -1])
        preds = [pred(0, [0, 1, 2], 0.9)]
        res = instance_eval(gt, preds)
        assert res.ap25[0] == 1.0
        assert res.ap50[0] == 1.0
        assert res.ap_strict[0] == 1.0

    def test_empty_predictions(self):
        gt = cloud_with([0, 0], [0, 0])
        res = instance_eval(gt, [])
        assert res.map25 == 0.0
        assert res.map_strict == 0.0

    def test_duplicate_indices_rejected(self):
        gt = cloud_with([0, 0], [0, 0])
        with pytest.raises(InvalidPrediction):
            instance_eval(gt, [pred(0, [0, 0], 0.5)])

    def test_half_overlap_threshold_behavior(self):
        # Prediction covers half of a 4-point instance: IoU = 0.5.
        gt = cloud_with([0] * 4, [0] * 4)
        preds = [pred(0, [0, 1], 0.8)]
        res = instance_eval(gt, preds)
        assert res.ap25[0] == 1.0
        assert res.ap50[0] == 1.0   # IoU 0.5 >= 0.5 threshold
        assert res.ap[0][0.55] == 0.0

    def test_threshold_monotonicity(self, rng):
        for _ in range(20):
            gt, preds = _random_scene(rng)
            res = instance_eval(gt, preds)
            for cid, curve in res.ap.items():
                values = [curve[t] for t in sorted(curve)]
                assert all(a >= b - 1e-12 for a, b in zip(values, values[1:]))

    def test_matches_bruteforce_oracle(self, rng):
        for _ in range(30):
            gt, preds = _random_scene(rng)
            res = instance_eval(gt, preds)
            labeled = gt.semantic >= 0
            for cid in res.ap:
                gt_masks = [np.flatnonzero((gt.instance == i) & labeled
                                           & (gt.semantic == cid))
                            for i in np.unique(gt.instance[
                                (gt.instance >= 0) & (gt.semantic == cid) & labeled])]
                class_preds = [p for p in preds if p.class_id == cid
                               and len(p.point_indices)]
                for t in res.ap[cid]:
                    want = oracles.average_precision(
                        [p.point_indices.tolist() for p in class_preds],
                        [p.confidence for p in class_preds],
                        [m.tolist() for m in gt_masks], t, len(gt),
                        labeled=labeled)
                    assert abs(res.ap[cid][t] - want) <= 1e-12

    def test_permutation_invariance(self, rng):
        gt, preds = _random_scene(rng)
        res_a = instance_eval(gt, preds)
        order = rng.permutation(len(preds))
        res_b = instance_eval(gt, [preds[i] for i in order])
        assert res_a.ap == res_b.ap

    def test_classes_without_gt_ignored(self):
        gt = cloud_with([0, 0], [0, 0])
        preds = [pred(0, [0, 1], 0.9), pred(1, [0], 0.9)]
        res = instance_eval(gt, preds)
        assert set(res.ap) == {0}
        assert res.map_strict == 1.0

    def test_default_thresholds(self):
        assert DEFAULT_THRESHOLDS[0] == 0.25
        assert list(STRICT_THRESHOLDS) == pytest.approx(
            [0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95])


def _random_scene(rng, max_points=200, max_instances=5, max_classes=3):
    n = int(rng.integers(20, max_points + 1))
    n_inst = int(rng.integers(1, max_instances + 1))
    inst = rng.integers(0, n_inst, n).astype(np.int32)
    inst_class = rng.integers(0, max_classes, n_inst).astype(np.int32)
    sem = inst_class[inst].astype(np.int32)
    unlabeled = rng.random(n) < 0.05
    sem = np.where(unlabeled, -1, sem).astype(np.int32)
    inst = np.where(unlabeled, -1, inst).astype(np.int32)
    gt = cloud_with(sem, inst)
    preds = []
    for _ in range(int(rng.integers(0, 8))):
        size = int(rng.integers(1, max(2, n // 2)))
        idx = rng.choice(n, size=size, replace=False)
        preds.append(pred(int(rng.integers(0, max_classes)), idx,
                          float(rng.random())))
    return gt, preds


class TestAggregate:
    def _report(self, miou, map_strict):
        return EvalReport(classes={0: "a"}, miou=miou, map_strict=map_strict,
                          sample_count=1, wall_clock_s=1.0)

    def test_single_identity(self):
        rep = self._report(0.8, 0.5)
        out = aggregate([rep])
        assert out.miou == pytest.approx(0.8)
        assert out.map_strict == pytest.approx(0.5)

    def test_mean_of_two(self):
        out = aggregate([self._report(0.8, 0.4), self._report(0.6, 0.6)])
        assert out.miou == pytest.approx(0.7)
        assert out.map_strict == pytest.approx(0.5)

    def test_three_report_recomputation(self, rng):
        values = rng.random(3)
        reports = [self._report(float(v), float(v) / 2) for v in values]
        out = aggregate(reports)
        assert out.miou == pytest.approx(float(np.mean(values)))
        assert out.map_strict == pytest.approx(float(np.mean(values)) / 2)
        assert out.sample_count == 3
        assert out.throughput == pytest.approx(1.0)

    def test_class_map_mismatch(self):
        a = EvalReport(classes={0: "a"})
        b = EvalReport(classes={0: "b"})
        with pytest.raises(SchemaError):
            aggregate([a, b])


class TestConfusionMatrix:
    def test_basic(self):
        conf = confusion_matrix(np.array([0, 1, 1]), np.array([0, 1, 0]), 2)
        assert conf.tolist() == [[1, 0], [1, 1]]

    def test_total_excludes_unlabeled(self):
        conf = confusion_matrix(np.array([-1, 1]), np.array([0, 1]), 2)
        assert conf.sum() == 1
