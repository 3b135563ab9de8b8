"""Semantic and instance segmentation metrics.

Semantic: per-class IoU / precision / recall / F1 from a confusion matrix,
with mIoU averaged over classes present in the ground truth. Instance:
average precision at mask-IoU thresholds via greedy confidence-ordered
matching and precision-envelope integration (AP25, AP50, and the mean over
0.50..0.95 in steps of 0.05).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .cloud import LabeledCloud
from .errors import InvalidPrediction, SchemaError, ShapeError
from .grouping import InstancePrediction

STRICT_THRESHOLDS = tuple(np.round(np.arange(0.50, 0.951, 0.05), 2))
DEFAULT_THRESHOLDS = (0.25,) + STRICT_THRESHOLDS


def confusion_matrix(gt: np.ndarray, pred: np.ndarray, n_classes: int) -> np.ndarray:
    """Row = ground truth, column = prediction; gt < 0 points excluded."""
    gt = np.asarray(gt).reshape(-1)
    pred = np.asarray(pred).reshape(-1)
    if gt.shape != pred.shape:
        raise ShapeError(f"gt has {len(gt)} labels, pred has {len(pred)}")
    keep = gt >= 0
    if np.any(pred[keep] < 0) or (keep.any() and pred[keep].max() >= n_classes):
        raise ShapeError("prediction labels outside [0, n_classes)")
    flat = n_classes * gt[keep].astype(np.int64) + pred[keep].astype(np.int64)
    counts = np.bincount(flat, minlength=n_classes * n_classes)
    return counts.reshape(n_classes, n_classes)


@dataclass
class SemanticResult:
    """Per-class rates (None where the denominator is zero) plus mIoU."""

    n_classes: int
    iou: dict[int, float | None]
    precision: dict[int, float | None]
    recall: dict[int, float | None]
    f1: dict[int, float | None]
    miou: float | None
    confusion: np.ndarray


def semantic_eval(gt: LabeledCloud | np.ndarray, pred_semantic: np.ndarray,
                  n_classes: int | None = None) -> SemanticResult:
    """Per-class semantic metrics; unlabeled (-1) ground truth is excluded.

    Undefined ratios are reported as None, never as zero. mIoU averages
    IoU over classes that appear in the ground truth.
    """
    gt_labels = gt.semantic if isinstance(gt, LabeledCloud) else np.asarray(gt)
    pred = np.asarray(pred_semantic).reshape(-1)
    if n_classes is None:
        top = max(int(gt_labels.max(initial=-1)), int(pred.max(initial=-1)))
        n_classes = top + 1
    conf = confusion_matrix(gt_labels, pred, n_classes)
    tp = np.diag(conf).astype(np.float64)
    fp = conf.sum(axis=0) - tp
    fn = conf.sum(axis=1) - tp

    def rate(num, den):
        return {c: (num[c] / den[c] if den[c] > 0 else None)
                for c in range(n_classes)}

    iou = rate(tp, tp + fp + fn)
    precision = rate(tp, tp + fp)
    recall = rate(tp, tp + fn)
    f1 = {}
    for c in range(n_classes):
        p, r = precision[c], recall[c]
        if p is None or r is None or (p + r) == 0:
            f1[c] = None
        else:
            f1[c] = 2 * p * r / (p + r)
    present = [c for c in range(n_classes) if (tp + fn)[c] > 0]
    miou = float(np.mean([iou[c] for c in present])) if present else None
    return SemanticResult(n_classes=n_classes, iou=iou, precision=precision,
                          recall=recall, f1=f1, miou=miou, confusion=conf)


@dataclass
class InstanceResult:
    """AP per class per threshold, plus the usual summaries."""

    ap: dict[int, dict[float, float]]        # class -> threshold -> AP
    ap25: dict[int, float]
    ap50: dict[int, float]
    ap_strict: dict[int, float]              # mean over 0.50..0.95
    map25: float | None
    map50: float | None
    map_strict: float | None


def instance_eval(gt: LabeledCloud, preds: list[InstancePrediction],
                  iou_thresholds=DEFAULT_THRESHOLDS,
                  instance_classes: list[int] | None = None) -> InstanceResult:
    """Greedy confidence-ordered matching and envelope-integrated AP.

    Only classes with at least one ground-truth instance enter the class
    means. Points with ground-truth semantic -1 are excluded from mask IoU
    on both sides.
    """
    thresholds = [float(t) for t in iou_thresholds]
    gt_instances = _gt_instances(gt, instance_classes)
    classes = sorted(gt_instances)
    labeled = gt.semantic >= 0

    per_class_preds: dict[int, list[InstancePrediction]] = {c: [] for c in classes}
    for pred in preds:
        idx = pred.point_indices
        if len(np.unique(idx)) != len(idx):
            raise InvalidPrediction("prediction contains duplicate point indices")
        if len(idx) and (idx.min() < 0 or idx.max() >= len(gt)):
            raise InvalidPrediction("prediction references out-of-range points")
        if pred.class_id in per_class_preds:
            per_class_preds[pred.class_id].append(pred)

    ap: dict[int, dict[float, float]] = {}
    for cid in classes:
        masks = [np.asarray(g, dtype=np.int64) for g in gt_instances[cid]]
        ranked = sorted(per_class_preds[cid],
                        key=lambda p: (-p.confidence, int(p.point_indices.min())
                                       if len(p.point_indices) else 0))
        ious = _match_matrix(ranked, masks, labeled)
        ap[cid] = {t: _average_precision(ious, len(masks), t) for t in thresholds}

    def summarize(t: float) -> tuple[dict[int, float], float | None]:
        per = {c: ap[c][t] for c in classes if t in ap[c]}
        mean = float(np.mean(list(per.values()))) if per else None
        return per, mean

    ap25, map25 = summarize(0.25) if 0.25 in thresholds else ({}, None)
    ap50, map50 = summarize(0.5) if 0.5 in thresholds else ({}, None)
    strict = [t for t in thresholds if t in STRICT_THRESHOLDS]
    ap_strict = {c: float(np.mean([ap[c][t] for t in strict]))
                 for c in classes} if strict else {}
    map_strict = (float(np.mean(list(ap_strict.values())))
                  if ap_strict else None)
    return InstanceResult(ap=ap, ap25=ap25, ap50=ap50, ap_strict=ap_strict,
                          map25=map25, map50=map50, map_strict=map_strict)


def _gt_instances(gt: LabeledCloud,
                  instance_classes: list[int] | None) -> dict[int, list[np.ndarray]]:
    """Ground-truth instance masks per class (labeled points only)."""
    out: dict[int, list[np.ndarray]] = {}
    valid = (gt.instance >= 0) & (gt.semantic >= 0)
    for iid in np.unique(gt.instance[valid]):
        sel = np.flatnonzero((gt.instance == iid) & valid)
        cid = int(gt.semantic[sel[0]])
        if instance_classes is not None and cid not in instance_classes:
            continue
        out.setdefault(cid, []).append(sel)
    return out


def _match_matrix(ranked: list[InstancePrediction], masks: list[np.ndarray],
                  labeled: np.ndarray) -> np.ndarray:
    """IoU of each ranked prediction against each ground-truth mask."""
    ious = np.zeros((len(ranked), len(masks)))
    gt_sets = [frozenset(m.tolist()) for m in masks]
    for i, pred in enumerate(ranked):
        p_idx = pred.point_indices[labeled[pred.point_indices]]
        p_set = frozenset(p_idx.tolist())
        for j, g_set in enumerate(gt_sets):
            inter = len(p_set & g_set)
            union = len(p_set | g_set)
            ious[i, j] = inter / union if union else 0.0
    return ious


def _average_precision(ious: np.ndarray, n_gt: int, threshold: float) -> float:
    """Greedy matching by rank, then all-point precision-envelope AP."""
    if n_gt == 0:
        return 0.0
    n_pred = len(ious)
    if n_pred == 0:
        return 0.0
    matched = np.zeros(n_gt, dtype=bool)
    tp = np.zeros(n_pred, dtype=bool)
    for i in range(n_pred):
        best_j = -1
        best_iou = 0.0
        for j in range(n_gt):
            if matched[j]:
                continue
            if ious[i, j] >= threshold and ious[i, j] > best_iou:
                best_iou = ious[i, j]
                best_j = j
        if best_j >= 0:
            matched[best_j] = True
            tp[i] = True
    cum_tp = np.cumsum(tp)
    ranks = np.arange(1, n_pred + 1)
    precision = cum_tp / ranks
    recall = cum_tp / n_gt
    # Precision envelope: max precision at any recall >= r.
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    prev_recall = 0.0
    area = 0.0
    for i in range(n_pred):
        if tp[i]:
            area += (recall[i] - prev_recall) * envelope[i]
            prev_recall = recall[i]
    return float(area)


@dataclass
class EvalReport:
    """One evaluation run: per-class semantic and instance scores plus
    throughput context."""

    classes: dict[int, str]
    semantic: dict[int, dict[str, float | None]] = field(default_factory=dict)
    miou: float | None = None
    instance: dict[int, dict[str, float]] = field(default_factory=dict)
    map25: float | None = None
    map50: float | None = None
    map_strict: float | None = None
    sample_count: int = 0
    wall_clock_s: float = 0.0

    @property
    def throughput(self) -> float:
        return self.sample_count / self.wall_clock_s if self.wall_clock_s > 0 else 0.0

    def to_dict(self) -> dict:
        return {
            "classes": {str(k): v for k, v in sorted(self.classes.items())},
            "semantic": {str(k): v for k, v in sorted(self.semantic.items())},
            "miou": self.miou,
            "instance": {str(k): v for k, v in sorted(self.instance.items())},
            "map25": self.map25,
            "map50": self.map50,
            "map": self.map_strict,
            "sample_count": self.sample_count,
            "wall_clock_s": self.wall_clock_s,
            "samples_per_s": self.throughput,
        }

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")

    @classmethod
    def from_results(cls, classes: dict[int, str],
                     semantic: SemanticResult | None,
                     instance: InstanceResult | None,
                     sample_count: int = 1,
                     wall_clock_s: float = 0.0) -> "EvalReport":
        report = cls(classes=dict(classes), sample_count=sample_count,
                     wall_clock_s=wall_clock_s)
        if semantic is not None:
            report.semantic = {
                c: {"iou": semantic.iou[c], "precision": semantic.precision[c],
                    "recall": semantic.recall[c], "f1": semantic.f1[c]}
                for c in range(semantic.n_classes)
            }
            report.miou = semantic.miou
        if instance is not None:
            report.instance = {
                c: {"ap25": instance.ap25.get(c), "ap50": instance.ap50.get(c),
                    "ap": instance.ap_strict.get(c)}
                for c in instance.ap
            }
            report.map25 = instance.map25
            report.map50 = instance.map50
            report.map_strict = instance.map_strict
        return report


def aggregate(reports: list[EvalReport]) -> EvalReport:
    """Dataset-level means over per-sample reports.

    Scalar summaries are unweighted means over reports where they are
    defined; throughput re-derives from total samples and wall clock.
    """
    if not reports:
        raise SchemaError("nothing to aggregate")
    classes = reports[0].classes
    for rep in reports[1:]:
        if rep.classes != classes:
            raise SchemaError("reports have mismatched class maps")

    def mean_of(values):
        vals = [v for v in values if v is not None]
        return float(np.mean(vals)) if vals else None

    out = EvalReport(classes=dict(classes))
    out.miou = mean_of([r.miou for r in reports])
    out.map25 = mean_of([r.map25 for r in reports])
    out.map50 = mean_of([r.map50 for r in reports])
    out.map_strict = mean_of([r.map_strict for r in reports])
    sem_classes = sorted({c for r in reports for c in r.semantic})
    for c in sem_classes:
        out.semantic[c] = {
            key: mean_of([r.semantic[c][key] for r in reports if c in r.semantic])
            for key in ("iou", "precision", "recall", "f1")
        }
    inst_classes = sorted({c for r in reports for c in r.instance})
    for c in inst_classes:
        out.instance[c] = {
            key: mean_of([r.instance[c][key] for r in reports if c in r.instance])
            for key in ("ap25", "ap50", "ap")
        }
    out.sample_count = sum(r.sample_count for r in reports)
    out.wall_clock_s = sum(r.wall_clock_s for r in reports)
    return out
