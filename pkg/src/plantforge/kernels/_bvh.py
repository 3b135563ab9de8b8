"""Flat-array bounding volume hierarchy over triangles.

Built once per mesh with median splits on the longest centroid axis;
both ray-casting backends traverse the same arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LEAF_SIZE = 4


@dataclass
class BvhArrays:
    node_min: np.ndarray    # (N, 3) float64
    node_max: np.ndarray    # (N, 3) float64
    node_left: np.ndarray   # (N,) int32, -1 for leaves
    node_right: np.ndarray  # (N,) int32, -1 for leaves
    node_start: np.ndarray  # (N,) int32, offset into tri_order (leaves)
    node_count: np.ndarray  # (N,) int32, 0 for internal nodes
    tri_order: np.ndarray   # (T,) int32 permutation of triangle ids
    v0: np.ndarray          # (T, 3) float64 triangle corners
    v1: np.ndarray
    v2: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.node_left)


def build_bvh(triangles: np.ndarray, leaf_size: int = LEAF_SIZE) -> BvhArrays:
    """Build from (T, 3, 3) corner coordinates."""
    tri = np.ascontiguousarray(triangles, dtype=np.float64)
    n = len(tri)
    if n == 0:
        raise ValueError("cannot build a BVH over zero triangles")
    tri_min = tri.min(axis=1)
    tri_max = tri.max(axis=1)
    centroids = tri.mean(axis=1)

    node_min, node_max = [], []
    node_left, node_right = [], []
    node_start, node_count = [], []
    order = np.arange(n, dtype=np.int32)

    # Stack of (start, end, node_id) ranges over `order`; children are
    # allocated before being pushed so ids are stable.
    def alloc():
        node_min.append(None)
        node_max.append(None)
        node_left.append(-1)
        node_right.append(-1)
        node_start.append(0)
        node_count.append(0)
        return len(node_left) - 1

    root = alloc()
    stack = [(0, n, root)]
    while stack:
        start, end, nid = stack.pop()
        ids = order[start:end]
        node_min[nid] = tri_min[ids].min(axis=0)
        node_max[nid] = tri_max[ids].max(axis=0)
        if end - start <= leaf_size:
            node_start[nid] = start
            node_count[nid] = end - start
            continue
        cen = centroids[ids]
        axis = int(np.argmax(cen.max(axis=0) - cen.min(axis=0)))
        local = np.argsort(cen[:, axis], kind="stable")
        order[start:end] = ids[local]
        mid = start + (end - start) // 2
        left = alloc()
        right = alloc()
        node_left[nid] = left
        node_right[nid] = right
        stack.append((start, mid, left))
        stack.append((mid, end, right))

    return BvhArrays(
        node_min=np.ascontiguousarray(node_min, dtype=np.float64),
        node_max=np.ascontiguousarray(node_max, dtype=np.float64),
        node_left=np.asarray(node_left, dtype=np.int32),
        node_right=np.asarray(node_right, dtype=np.int32),
        node_start=np.asarray(node_start, dtype=np.int32),
        node_count=np.asarray(node_count, dtype=np.int32),
        tri_order=order,
        v0=np.ascontiguousarray(tri[:, 0]),
        v1=np.ascontiguousarray(tri[:, 1]),
        v2=np.ascontiguousarray(tri[:, 2]),
    )
