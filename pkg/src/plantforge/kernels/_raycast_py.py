"""Pure-numpy first-hit ray casting over BVH arrays.

Packet traversal: a stack of (node, active-ray subset) pairs, with AABB
pruning against each ray's current best hit. Arithmetic matches the
compiled kernel operation for operation so both backends return identical
results.
"""

from __future__ import annotations

import numpy as np

from ._bvh import BvhArrays

T_MIN = 1e-9
DET_EPS = 1e-14
BARY_EPS = 1e-12


def raycast_first_hit(bvh: BvhArrays, origins: np.ndarray, dirs: np.ndarray,
                      max_range: float) -> tuple[np.ndarray, np.ndarray]:
    """Nearest triangle hit per ray.

    Returns (tri_index, t) arrays; misses get tri_index -1 and t = inf.
    Triangles are double-sided; exact-distance ties resolve to the lower
    triangle index.
    """
    origins = np.ascontiguousarray(origins, dtype=np.float64).reshape(-1, 3)
    dirs = np.ascontiguousarray(dirs, dtype=np.float64).reshape(-1, 3)
    n_rays = len(origins)
    best_t = np.full(n_rays, np.inf)
    best_tri = np.full(n_rays, -1, dtype=np.int32)
    if n_rays == 0:
        return best_tri, best_t

    stack = [(0, np.arange(n_rays, dtype=np.int64))]
    while stack:
        nid, rays = stack.pop()
        o = origins[rays]
        d = dirs[rays]
        t_near, t_far = _slab(bvh.node_min[nid], bvh.node_max[nid], o, d)
        limit = np.minimum(best_t[rays], max_range)
        alive = (t_near <= t_far) & (t_far >= T_MIN) & (t_near <= limit)
        rays = rays[alive]
        if rays.size == 0:
            continue
        count = bvh.node_count[nid]
        if count == 0:
            stack.append((int(bvh.node_left[nid]), rays))
            stack.append((int(bvh.node_right[nid]), rays))
            continue
        start = bvh.node_start[nid]
        tris = bvh.tri_order[start:start + count]
        o = origins[rays]
        d = dirs[rays]
        for tri in tris:
            t = _intersect(bvh.v0[tri], bvh.v1[tri], bvh.v2[tri], o, d, max_range)
            take = (t < best_t[rays]) | ((t == best_t[rays]) & (tri < best_tri[rays]))
            upd = rays[take]
            best_t[upd] = t[take]
            best_tri[upd] = tri
    return best_tri, best_t


def _slab(bmin, bmax, o, d):
    """Ray/AABB entry and exit distances; axes with zero direction reduce
    to a containment test."""
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        t1 = (bmin - o) * inv
        t2 = (bmax - o) * inv
    zero = d == 0.0
    if zero.any():
        inside = (o >= bmin) & (o <= bmax)
        t1 = np.where(zero, np.where(inside, -np.inf, np.inf), t1)
        t2 = np.where(zero, np.where(inside, np.inf, -np.inf), t2)
    lo = np.minimum(t1, t2)
    hi = np.maximum(t1, t2)
    return lo.max(axis=1), hi.min(axis=1)


def _intersect(v0, v1, v2, o, d, max_range):
    """Double-sided Moller-Trumbore for one triangle against many rays;
    returns inf where there is no hit in (T_MIN, max_range]."""
    e1 = v1 - v0
    e2 = v2 - v0
    px = d[:, 1] * e2[2] - d[:, 2] * e2[1]
    py = d[:, 2] * e2[0] - d[:, 0] * e2[2]
    pz = d[:, 0] * e2[1] - d[:, 1] * e2[0]
    det = e1[0] * px + e1[1] * py + e1[2] * pz
    sx = o[:, 0] - v0[0]
    sy = o[:, 1] - v0[1]
    sz = o[:, 2] - v0[2]
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / det
        u = (sx * px + sy * py + sz * pz) * inv
        qx = sy * e1[2] - sz * e1[1]
        qy = sz * e1[0] - sx * e1[2]
        qz = sx * e1[1] - sy * e1[0]
        v = (d[:, 0] * qx + d[:, 1] * qy + d[:, 2] * qz) * inv
        t = (e2[0] * qx + e2[1] * qy + e2[2] * qz) * inv
    ok = (np.abs(det) >= DET_EPS)
    ok &= (u >= -BARY_EPS) & (u <= 1.0 + BARY_EPS)
    ok &= (v >= -BARY_EPS) & (u + v <= 1.0 + BARY_EPS)
    ok &= (t > T_MIN) & (t <= max_range)
    return np.where(ok, t, np.inf)
