"""Hot ray-casting kernel with backend selection at import time.

The compiled Cython kernel is used when its extension module imported
successfully; otherwise the numpy fallback takes over. Set
``PLANTFORGE_BACKEND=python`` or ``=compiled`` to force a choice (the
latter raises if the extension is unavailable).
"""

from __future__ import annotations

import os

import numpy as np

from . import _raycast_py
from ._bvh import BvhArrays, build_bvh

try:
    from . import _raycast as _compiled
except ImportError:
    _compiled = None


def _python_raycast(bvh: BvhArrays, origins, dirs, max_range):
    return _raycast_py.raycast_first_hit(bvh, origins, dirs, max_range)


def _compiled_raycast(bvh: BvhArrays, origins, dirs, max_range):
    origins = np.ascontiguousarray(origins, dtype=np.float64).reshape(-1, 3)
    dirs = np.ascontiguousarray(dirs, dtype=np.float64).reshape(-1, 3)
    return _compiled.raycast_first_hit_arrays(
        bvh.node_min, bvh.node_max, bvh.node_left, bvh.node_right,
        bvh.node_start, bvh.node_count, bvh.tri_order,
        bvh.v0, bvh.v1, bvh.v2, origins, dirs, float(max_range))


_BACKENDS = {"python": _python_raycast}
if _compiled is not None:
    _BACKENDS["compiled"] = _compiled_raycast

_forced = os.environ.get("PLANTFORGE_BACKEND")
if _forced:
    if _forced not in _BACKENDS:
        raise ImportError(
            f"PLANTFORGE_BACKEND={_forced!r} requested but only "
            f"{sorted(_BACKENDS)} are available")
    BACKEND = _forced
else:
    BACKEND = "compiled" if "compiled" in _BACKENDS else "python"


def raycast_first_hit(bvh: BvhArrays, origins, dirs, max_range: float):
    """First triangle hit per ray using the active backend.

    Returns (tri_index int32, t float64); misses are (-1, inf).
    """
    return _BACKENDS[BACKEND](bvh, origins, dirs, max_range)


def available_backends() -> list[str]:
    return sorted(_BACKENDS)


def get_raycast(backend: str):
    """Explicit backend lookup, used by the parity tests and the benchmark."""
    return _BACKENDS[backend]


__all__ = ["BvhArrays", "build_bvh", "raycast_first_hit", "available_backends",
           "get_raycast", "BACKEND"]
