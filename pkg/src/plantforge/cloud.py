"""Labeled point cloud container, the currency passed between all stages."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidGeometry, ShapeError

UNLABELED = -1


@dataclass
class LabeledCloud:
    """Points with per-point semantic class, instance id, and optional color.

    ``semantic`` and ``instance`` use -1 for unlabeled / no-instance points.
    Arrays are validated and frozen on construction; operations return new
    clouds instead of mutating.
    """

    points: np.ndarray
    semantic: np.ndarray = None
    instance: np.ndarray = None
    color: np.ndarray | None = field(default=None)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float32).reshape(-1, 3)
        n = len(pts)
        if self.semantic is None:
            self.semantic = np.full(n, UNLABELED, dtype=np.int32)
        if self.instance is None:
            self.instance = np.full(n, UNLABELED, dtype=np.int32)
        sem = np.asarray(self.semantic, dtype=np.int32).reshape(-1)
        inst = np.asarray(self.instance, dtype=np.int32).reshape(-1)
        if len(sem) != n or len(inst) != n:
            raise ShapeError(
                f"label lengths {len(sem)}/{len(inst)} do not match {n} points")
        if not np.all(np.isfinite(pts)):
            raise InvalidGeometry("points contain NaN or Inf coordinates")
        col = self.color
        if col is not None:
            col = np.asarray(col, dtype=np.uint8).reshape(-1, 3)
            if len(col) != n:
                raise ShapeError(f"color length {len(col)} does not match {n} points")
        _check_instance_consistency(sem, inst)
        for arr in (pts, sem, inst, col):
            if arr is not None:
                arr.setflags(write=False)
        self.points, self.semantic, self.instance, self.color = pts, sem, inst, col

    def __len__(self) -> int:
        return len(self.points)

    @property
    def has_color(self) -> bool:
        return self.color is not None

    def select(self, indices: np.ndarray) -> "LabeledCloud":
        """New cloud containing the given point indices, labels carried through."""
        idx = np.asarray(indices, dtype=np.int64)
        return LabeledCloud(
            points=self.points[idx],
            semantic=self.semantic[idx],
            instance=self.instance[idx],
            color=self.color[idx] if self.color is not None else None,
        )

    def with_points(self, points: np.ndarray) -> "LabeledCloud":
        """Same labels, replaced coordinates (e.g. after deformation)."""
        return LabeledCloud(points=points, semantic=self.semantic,
                            instance=self.instance, color=self.color)


def _check_instance_consistency(semantic: np.ndarray, instance: np.ndarray):
    """Every instance id >= 0 must map to exactly one semantic class."""
    mask = instance >= 0
    if not mask.any():
        return
    pairs = np.unique(np.stack([instance[mask], semantic[mask]], axis=1), axis=0)
    ids, counts = np.unique(pairs[:, 0], return_counts=True)
    bad = ids[counts > 1]
    if bad.size:
        raise ShapeError(
            f"instance id(s) {bad[:5].tolist()} span multiple semantic classes")


def merge_clouds(clouds: list[LabeledCloud]) -> LabeledCloud:
    """Concatenate clouds; colors are kept only if every part has them."""
    if not clouds:
        return LabeledCloud(points=np.zeros((0, 3), dtype=np.float32))
    keep_color = all(c.has_color for c in clouds)
    return LabeledCloud(
        points=np.concatenate([c.points for c in clouds]),
        semantic=np.concatenate([c.semantic for c in clouds]),
        instance=np.concatenate([c.instance for c in clouds]),
        color=np.concatenate([c.color for c in clouds]) if keep_color else None,
    )
