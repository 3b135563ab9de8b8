"""Voxelization, spatial indexing, and the resolution-aware sampling strategies.

All structures are static: built once from a fixed cloud, then queried.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .cloud import LabeledCloud
from .errors import EmptyInput, InvalidArgument, InvalidGeometry


@dataclass
class VoxelGrid:
    """Partition of a point set into cubic cells of edge ``voxel_size``.

    ``occupied`` maps integer (i, j, k) cell indices to arrays of point
    indices. Points exactly on the upper boundary of the global bounding
    box are clamped into the last cell, so the grid is a true partition.
    """

    origin: np.ndarray
    voxel_size: float
    occupied: dict[tuple[int, int, int], np.ndarray]

    @property
    def n_occupied(self) -> int:
        return len(self.occupied)

    def cell_of(self, points: np.ndarray) -> np.ndarray:
        """Integer cell indices for points.

        Only points exactly on the grid's upper boundary plane clamp into
        the last cell; everything else keeps its floor cell (points beyond
        the grid simply map to unoccupied cells).
        """
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        frac = (pts - self.origin) / self.voxel_size
        idx = np.floor(frac).astype(np.int64)
        last = self._last_cell
        on_boundary = (idx == last + 1) & (frac == idx)
        return np.where(on_boundary, last, idx)

    @property
    def _last_cell(self) -> np.ndarray:
        cells = np.array(list(self.occupied.keys()), dtype=np.int64)
        return cells.max(axis=0)


def voxelize(cloud: LabeledCloud, voxel_size: float) -> VoxelGrid:
    """Partition the cloud into cubic voxels anchored at the coordinate minimum."""
    if voxel_size <= 0:
        raise InvalidArgument(f"voxel_size must be positive, got {voxel_size}")
    if len(cloud) == 0:
        raise EmptyInput("cannot voxelize an empty cloud")
    pts = cloud.points.astype(np.float64)
    if not np.all(np.isfinite(pts)):
        raise InvalidGeometry("non-finite coordinates")
    origin = pts.min(axis=0)
    idx = np.floor((pts - origin) / voxel_size).astype(np.int64)
    # Clamp exact upper-boundary points into the last cell along each axis.
    span = pts.max(axis=0) - origin
    top = np.floor(span / voxel_size).astype(np.int64)
    on_edge = top.astype(np.float64) * voxel_size >= span
    last = np.where(on_edge & (top > 0), top - 1, top)
    idx = np.minimum(idx, last)

    order = np.lexsort((idx[:, 2], idx[:, 1], idx[:, 0]))
    sorted_idx = idx[order]
    keys, starts = np.unique(sorted_idx, axis=0, return_index=True)
    bounds = np.append(starts, len(order))
    occupied = {
        tuple(int(v) for v in keys[r]): np.sort(order[bounds[r]:bounds[r + 1]])
        for r in range(len(keys))
    }
    return VoxelGrid(origin=origin, voxel_size=float(voxel_size), occupied=occupied)


class SpatialIndex:
    """KD-tree over a fixed point set for k-NN and fixed-radius queries.

    Radius queries are exact: candidates from the tree are re-filtered with
    the canonical squared-distance test so results match an exhaustive scan
    bit for bit.
    """

    def __init__(self, points: np.ndarray):
        self._points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        self._tree = cKDTree(self._points) if len(self._points) else None

    def __len__(self) -> int:
        return len(self._points)

    @property
    def points(self) -> np.ndarray:
        return self._points

    def radius(self, query, r: float) -> np.ndarray:
        """Indices with Euclidean distance <= r, ascending by (distance, index)."""
        if r <= 0:
            raise InvalidArgument(f"radius must be positive, got {r}")
        if self._tree is None:
            return np.array([], dtype=np.int64)
        q = np.asarray(query, dtype=np.float64).reshape(3)
        cand = np.array(self._tree.query_ball_point(q, r * (1 + 1e-9)),
                        dtype=np.int64)
        if cand.size == 0:
            return cand
        d2 = np.sum((self._points[cand] - q) ** 2, axis=1)
        keep = d2 <= r * r
        cand, d2 = cand[keep], d2[keep]
        order = np.lexsort((cand, d2))
        return cand[order]

    def knn(self, query, k: int) -> np.ndarray:
        """Indices of the k nearest points, ascending by distance."""
        if not 1 <= k <= len(self._points):
            raise InvalidArgument(f"k={k} out of range for {len(self._points)} points")
        q = np.asarray(query, dtype=np.float64).reshape(3)
        _, idx = self._tree.query(q, k=k)
        return np.atleast_1d(idx).astype(np.int64)


def radius_neighbors(index: SpatialIndex, query, r: float) -> np.ndarray:
    """Ball query against a built index; see ``SpatialIndex.radius``."""
    return index.radius(query, r)


def farthest_point_sample(cloud: LabeledCloud, k: int, seed: int) -> np.ndarray:
    """Greedy farthest point sampling.

    The first index is drawn from the seeded RNG; each subsequent pick
    maximizes the minimum distance to the already-selected set (argmax ties
    resolved to the lowest index).
    """
    n = len(cloud)
    if not 1 <= k <= n:
        raise InvalidArgument(f"k={k} out of range for {n} points")
    pts = cloud.points.astype(np.float64)
    rng = np.random.default_rng(seed)
    selected = np.empty(k, dtype=np.int64)
    selected[0] = rng.integers(n)
    min_d2 = np.sum((pts - pts[selected[0]]) ** 2, axis=1)
    for i in range(1, k):
        nxt = int(np.argmax(min_d2))
        selected[i] = nxt
        min_d2 = np.minimum(min_d2, np.sum((pts - pts[nxt]) ** 2, axis=1))
    return selected


def blockwise_downsample(cloud: LabeledCloud, block_size: float,
                         points_per_block: int, seed: int) -> LabeledCloud:
    """Downsample within square XY blocks instead of globally.

    Each non-empty block keeps min(points_per_block, population) points,
    drawn uniformly without replacement. Labels are carried through.
    """
    if block_size <= 0:
        raise InvalidArgument(f"block_size must be positive, got {block_size}")
    if points_per_block < 1:
        raise InvalidArgument("points_per_block must be >= 1")
    if len(cloud) == 0:
        raise EmptyInput("cannot downsample an empty cloud")
    xy = cloud.points[:, :2].astype(np.float64)
    base = xy.min(axis=0)
    block = np.floor((xy - base) / block_size).astype(np.int64)

    order = np.lexsort((block[:, 1], block[:, 0]))
    sorted_block = block[order]
    _, starts = np.unique(sorted_block, axis=0, return_index=True)
    bounds = np.append(starts, len(order))

    rng = np.random.default_rng(seed)
    kept = []
    for r in range(len(starts)):
        members = order[bounds[r]:bounds[r + 1]]
        if len(members) > points_per_block:
            members = rng.choice(members, size=points_per_block, replace=False)
        kept.append(members)
    idx = np.sort(np.concatenate(kept))
    return cloud.select(idx)
