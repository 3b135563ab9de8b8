"""Virtual terrestrial laser scanning of labeled tree meshes.

Rays leave each scanner position on a regular (azimuth, elevation) grid;
the first triangle hit within range yields one point, displaced along the
ray by seeded Gaussian range noise. Points inherit the hit triangle's
organ and instance labels, and all positions merge as if perfectly
co-registered.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .cloud import LabeledCloud, merge_clouds
from .errors import EmptyInput, InvalidArgument
from .mesh import TriMesh
from .treegen import TreeModel

FULL_AZIMUTH = (0.0, 360.0)
DEFAULT_ELEVATION = (-60.0, 90.0)
DEFAULT_POSITIONS = 4
DEFAULT_STANDOFF = 2.0


@dataclass
class ScannerConfig:
    """Sensor model: positions, angular step, noise, and range limits.

    Azimuth always spans the full circle [0, 360); the elevation span is
    configurable. Grids are half-open with step = ``angular_resolution``,
    so halving the resolution exactly doubles the per-axis ray count.
    """

    positions: list | np.ndarray
    angular_resolution: float
    elevation_range: tuple[float, float] = DEFAULT_ELEVATION
    range_noise_sigma: float = 0.0
    max_range: float = 100.0
    seed: int = 0
    azimuth_range: tuple[float, float] = field(default=FULL_AZIMUTH, init=False)

    def validate(self) -> None:
        if self.angular_resolution <= 0:
            raise InvalidArgument("angular_resolution must be positive")
        if self.range_noise_sigma < 0:
            raise InvalidArgument("range_noise_sigma must be >= 0")
        if self.max_range <= 0:
            raise InvalidArgument("max_range must be positive")
        lo, hi = self.elevation_range
        if not -90.0 <= lo < hi <= 90.0:
            raise InvalidArgument(f"bad elevation range ({lo}, {hi})")
        if len(np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)) == 0:
            raise InvalidArgument("need at least one scanner position")


def grid_steps(span_deg: float, resolution_deg: float) -> int:
    """Number of rays along one angular axis (half-open grid)."""
    return int(np.floor(span_deg / resolution_deg + 1e-9))


def grid_counts(cfg: ScannerConfig) -> tuple[int, int]:
    """(azimuth steps, elevation steps) for one scanner position."""
    az0, az1 = cfg.azimuth_range
    el0, el1 = cfg.elevation_range
    return (grid_steps(az1 - az0, cfg.angular_resolution),
            grid_steps(el1 - el0, cfg.angular_resolution))


def _grid_dirs(cfg: ScannerConfig, ray_ids: np.ndarray, n_el: int) -> np.ndarray:
    """Unit directions for azimuth-major ray ids."""
    az0 = cfg.azimuth_range[0]
    el0 = cfg.elevation_range[0]
    az = np.deg2rad(az0 + cfg.angular_resolution * (ray_ids // n_el))
    el = np.deg2rad(el0 + cfg.angular_resolution * (ray_ids % n_el))
    cos_el = np.cos(el)
    return np.stack([cos_el * np.cos(az), cos_el * np.sin(az), np.sin(el)], axis=1)


def ray_grid(cfg: ScannerConfig) -> tuple[np.ndarray, int, int]:
    """All ray directions for one scanner position, azimuth-major."""
    n_az, n_el = grid_counts(cfg)
    dirs = _grid_dirs(cfg, np.arange(n_az * n_el), n_el)
    return dirs, n_az, n_el


class TriangleBVH:
    """First-hit acceleration structure over a labeled mesh."""

    def __init__(self, mesh: TriMesh):
        if len(mesh) == 0:
            raise EmptyInput("mesh has no triangles")
        self.mesh = mesh
        self.arrays = kernels.build_bvh(mesh.triangles())

    def first_hit(self, origins: np.ndarray, dirs: np.ndarray,
                  max_range: float) -> tuple[np.ndarray, np.ndarray]:
        """(triangle index, distance) per ray; misses are (-1, inf)."""
        return kernels.raycast_first_hit(self.arrays, origins, dirs, max_range)


_RAY_CHUNK = 1 << 21


def scan(model: TreeModel | TriMesh, cfg: ScannerConfig) -> LabeledCloud:
    """Simulate a multi-position TLS acquisition of a tree model.

    Rays are processed in fixed-order chunks, so the per-position noise
    stream is identical regardless of chunking.
    """
    mesh = model.mesh if isinstance(model, TreeModel) else model
    if len(mesh) == 0:
        raise EmptyInput("cannot scan an empty mesh")
    cfg.validate()
    bvh = TriangleBVH(mesh)
    positions = np.asarray(cfg.positions, dtype=np.float64).reshape(-1, 3)
    n_az, n_el = grid_counts(cfg)
    total = n_az * n_el
    parts = []
    for pos_idx, pos in enumerate(positions):
        rng = np.random.default_rng([cfg.seed, pos_idx])
        for start in range(0, total, _RAY_CHUNK):
            ray_ids = np.arange(start, min(start + _RAY_CHUNK, total))
            dirs = _grid_dirs(cfg, ray_ids, n_el)
            origins = np.broadcast_to(pos, dirs.shape)
            tri, t = bvh.first_hit(origins, dirs, cfg.max_range)
            noise = (rng.normal(0.0, cfg.range_noise_sigma, size=len(dirs))
                     if cfg.range_noise_sigma > 0 else np.zeros(len(dirs)))
            hit = tri >= 0
            if not hit.any():
                continue
            pts = pos + (t[hit, None] + noise[hit, None]) * dirs[hit]
            parts.append(LabeledCloud(
                points=pts.astype(np.float32),
                semantic=mesh.organ_id[tri[hit]],
                instance=mesh.instance_id[tri[hit]],
            ))
    return merge_clouds(parts)


def default_tls_positions(model: TreeModel | TriMesh, n_positions: int = DEFAULT_POSITIONS,
                          standoff: float = DEFAULT_STANDOFF) -> np.ndarray:
    """Scanner origins equally spaced on a horizontal circle around the model.

    Circle radius is the model's XY half-extent plus ``standoff``; height is
    the vertical midpoint; the first position sits on the +X axis.
    """
    if n_positions < 1:
        raise InvalidArgument("n_positions must be >= 1")
    if standoff <= 0:
        raise InvalidArgument("standoff must be positive")
    mesh = model.mesh if isinstance(model, TreeModel) else model
    lo, hi = mesh.bounds()
    center = (lo + hi) / 2.0
    half_extent = float(max(hi[0] - lo[0], hi[1] - lo[1]) / 2.0)
    radius = half_extent + standoff
    angles = 2 * np.pi * np.arange(n_positions) / n_positions
    return np.stack([center[0] + radius * np.cos(angles),
                     center[1] + radius * np.sin(angles),
                     np.full(n_positions, center[2])], axis=1)
