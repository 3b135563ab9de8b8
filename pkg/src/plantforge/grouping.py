"""Grouping-based instance segmentation over externally produced outputs.

An external network supplies per-point semantic scores and center offsets;
grouping forms per-class candidate sets by score threshold, shifts points
by their offsets, and takes connected components of the fixed-radius ball
graph in shifted space. Small clusters are rejected by class-specific
point-count thresholds.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.spatial import cKDTree

from .cloud import LabeledCloud
from .dataset import DatasetStats
from .errors import (DegenerateStats, InvalidArgument, InvalidInput,
                     MissingThreshold, ShapeError)

DEFAULT_SCORE_THRESHOLD = 0.2


@dataclass
class ModelOutput:
    """Per-point class scores (n x n_classes, each in [0, 1]) and 3D offsets
    toward the predicted instance center."""

    semantic_scores: np.ndarray
    offsets: np.ndarray

    def __post_init__(self):
        self.semantic_scores = np.asarray(self.semantic_scores,
                                          dtype=np.float32)
        if self.semantic_scores.ndim != 2:
            raise ShapeError("semantic_scores must be 2-D (points x classes)")
        self.offsets = np.asarray(self.offsets, dtype=np.float32).reshape(-1, 3)
        if len(self.offsets) != len(self.semantic_scores):
            raise ShapeError("offsets length does not match semantic_scores")
        if not np.all(np.isfinite(self.semantic_scores)):
            raise ShapeError("semantic_scores contain non-finite values")
        if len(self.semantic_scores) and (
                self.semantic_scores.min() < -1e-6
                or self.semantic_scores.max() > 1 + 1e-6):
            raise ShapeError("semantic_scores must lie in [0, 1]")

    def __len__(self) -> int:
        return len(self.semantic_scores)

    @property
    def n_classes(self) -> int:
        return self.semantic_scores.shape[1]

    def save(self, directory, sample_id: str) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        self.semantic_scores.astype("<f4").tofile(
            directory / f"{sample_id}.scores")
        self.offsets.astype("<f4").tofile(directory / f"{sample_id}.offsets")

    @classmethod
    def load(cls, directory, sample_id: str, n_classes: int) -> "ModelOutput":
        directory = Path(directory)
        scores = np.fromfile(directory / f"{sample_id}.scores", dtype="<f4")
        if n_classes < 1 or scores.size % n_classes:
            raise ShapeError(f"scores file size {scores.size} not divisible "
                             f"by {n_classes} classes")
        offsets = np.fromfile(directory / f"{sample_id}.offsets", dtype="<f4")
        return cls(semantic_scores=scores.reshape(-1, n_classes),
                   offsets=offsets.reshape(-1, 3))


@dataclass
class GroupingParams:
    """Ball-query radius, score threshold, and per-class minimum sizes."""

    radius: float
    min_points: dict[int, int]
    score_threshold: float = DEFAULT_SCORE_THRESHOLD

    def __post_init__(self):
        if self.radius <= 0:
            raise InvalidArgument(f"grouping radius must be positive, "
                                  f"got {self.radius}")
        if not 0.0 < self.score_threshold <= 1.0:
            raise InvalidArgument("score_threshold must be in (0, 1]")
        for cid, np_min in self.min_points.items():
            if np_min < 1:
                raise InvalidArgument(f"min_points[{cid}] must be >= 1")

    def to_dict(self) -> dict:
        return {"radius": self.radius,
                "score_threshold": self.score_threshold,
                "min_points": {str(k): v for k, v in
                               sorted(self.min_points.items())}}

    @classmethod
    def from_dict(cls, data: dict) -> "GroupingParams":
        return cls(radius=float(data["radius"]),
                   score_threshold=float(data.get("score_threshold",
                                                  DEFAULT_SCORE_THRESHOLD)),
                   min_points={int(k): int(v)
                               for k, v in data["min_points"].items()})


@dataclass
class InstancePrediction:
    """A scored point-index set of one class."""

    class_id: int
    point_indices: np.ndarray
    confidence: float

    def __post_init__(self):
        self.point_indices = np.asarray(self.point_indices, dtype=np.int64)

    def to_dict(self) -> dict:
        return {"class_id": int(self.class_id),
                "confidence": float(self.confidence),
                "point_indices": self.point_indices.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "InstancePrediction":
        return cls(class_id=int(d["class_id"]),
                   point_indices=np.asarray(d["point_indices"], dtype=np.int64),
                   confidence=float(d["confidence"]))


def group(cloud: LabeledCloud, output: ModelOutput, params: GroupingParams,
          instance_classes: list[int] | None = None,
          mode: str = "shifted") -> list[InstancePrediction]:
    """Cluster candidate points per class in offset-shifted space.

    ``mode="shifted"`` clusters shifted coordinates only (default).
    ``mode="dual"`` additionally clusters original coordinates and returns
    the union of both prediction sets (exact duplicates removed).

    Output order: class ascending, then confidence descending, then lowest
    member index. A point may appear under several classes (soft grouping).
    """
    if len(output) != len(cloud):
        raise ShapeError(f"model output has {len(output)} rows for "
                         f"{len(cloud)} points")
    if mode not in ("shifted", "dual"):
        raise InvalidArgument(f"unknown grouping mode {mode!r}")
    classes = (sorted(params.min_points) if instance_classes is None
               else sorted(instance_classes))
    shifted = cloud.points.astype(np.float64) + output.offsets.astype(np.float64)
    spaces = [shifted] if mode == "shifted" else [shifted,
                                                  cloud.points.astype(np.float64)]
    predictions: list[InstancePrediction] = []
    seen: set[tuple[int, bytes]] = set()
    for cid in classes:
        if cid not in params.min_points:
            raise MissingThreshold(f"no min_points entry for class {cid}")
        if cid >= output.n_classes or cid < 0:
            raise ShapeError(f"class {cid} outside score matrix width "
                             f"{output.n_classes}")
        candidates = np.flatnonzero(
            output.semantic_scores[:, cid] >= params.score_threshold)
        if candidates.size == 0:
            continue
        class_preds = []
        for space in spaces:
            for members in _ball_components(space[candidates], params.radius):
                idx = candidates[members]
                if len(idx) < params.min_points[cid]:
                    continue
                key = (cid, idx.tobytes())
                if key in seen:
                    continue
                seen.add(key)
                conf = float(np.mean(output.semantic_scores[idx, cid]))
                class_preds.append(InstancePrediction(
                    class_id=cid, point_indices=idx, confidence=conf))
        class_preds.sort(key=lambda p: (-p.confidence, int(p.point_indices[0])))
        predictions.extend(class_preds)
    return predictions


def _ball_components(points: np.ndarray, radius: float) -> list[np.ndarray]:
    """Connected components of the distance <= radius graph; each component
    is returned as sorted positions into ``points``."""
    n = len(points)
    tree = cKDTree(points)
    pairs = tree.query_pairs(r=radius, output_type="ndarray")
    graph = sparse.coo_matrix(
        (np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    _, labels = sparse.csgraph.connected_components(graph, directed=False)
    order = np.argsort(labels, kind="stable")
    sorted_labels = labels[order]
    cuts = np.flatnonzero(np.diff(sorted_labels)) + 1
    return [np.sort(part) for part in np.split(order, cuts)]


def infer_params(target_stats: DatasetStats, reference_stats: DatasetStats,
                 reference_params: GroupingParams) -> GroupingParams:
    """Scale reference grouping parameters to a new dataset.

    The radius scales with the ratio of mean instance extents; each
    per-class minimum point count scales with the ratio of mean instance
    sizes for that class. The score threshold is unchanged.
    """
    ref_extent = reference_stats.mean_instance_extent()
    tgt_extent = target_stats.mean_instance_extent()
    if not np.isfinite(ref_extent) or ref_extent <= 0:
        raise DegenerateStats("reference stats have no usable instance extent")
    if not np.isfinite(tgt_extent) or tgt_extent <= 0:
        raise DegenerateStats("target stats have no usable instance extent")
    min_points = {}
    for cid, ref_np in reference_params.min_points.items():
        ref_count = reference_stats.mean_instance_points(cid)
        tgt_count = target_stats.mean_instance_points(cid)
        if not np.isfinite(ref_count) or ref_count <= 0:
            raise DegenerateStats(f"reference stats have no class-{cid} instances")
        if not np.isfinite(tgt_count):
            raise DegenerateStats(f"target stats have no class-{cid} instances")
        min_points[cid] = max(1, int(round(ref_np * tgt_count / ref_count)))
    return GroupingParams(
        radius=reference_params.radius * tgt_extent / ref_extent,
        min_points=min_points,
        score_threshold=reference_params.score_threshold,
    )


def oracle_output(cloud: LabeledCloud, noise_sigma: float = 0.0,
                  seed: int = 0, n_classes: int | None = None) -> ModelOutput:
    """Perfect-model outputs from ground truth, for exercising the grouping
    pipeline without a network.

    Scores are one-hot on the true class; offsets point to the instance
    centroid plus optional Gaussian noise.
    """
    sem = cloud.semantic
    inst = cloud.instance
    if np.any(sem < 0) or np.any(inst < 0):
        raise InvalidInput("oracle_output requires a fully instance-labeled cloud")
    if n_classes is None:
        n_classes = int(sem.max()) + 1
    elif n_classes <= int(sem.max()):
        raise InvalidArgument(f"n_classes={n_classes} too small for labels")
    n = len(cloud)
    scores = np.zeros((n, n_classes), dtype=np.float32)
    scores[np.arange(n), sem] = 1.0

    pts = cloud.points.astype(np.float64)
    offsets = np.empty((n, 3), dtype=np.float64)
    for iid in np.unique(inst):
        sel = inst == iid
        offsets[sel] = pts[sel].mean(axis=0) - pts[sel]
    if noise_sigma > 0:
        rng = np.random.default_rng(seed)
        offsets = offsets + rng.normal(0.0, noise_sigma, size=(n, 3))
    return ModelOutput(semantic_scores=scores,
                       offsets=offsets.astype(np.float32))
