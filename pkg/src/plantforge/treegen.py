"""Procedural tree generation from statistics of real annotated trees.

The pipeline mirrors how orchard trees are modeled: a tapered trunk built
from a skeleton polyline, first-order branches placed from per-branch
records, and higher orders attached hierarchically with scaled-down length
and radius. Candidate branches are capsule-tested against the existing
organs and re-sampled on collision.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cloud import LabeledCloud
from .errors import InvalidArgument, InvalidStats, MissingOrgan
from .mesh import TriMesh

TRUNK_ORGAN = 0
BRANCH_ORGAN = 1


@dataclass
class BranchRecord:
    """One branch summarized for generation.

    ``insertion`` is the attachment height as a fraction of the trunk
    height (or of the parent branch length for order >= 2). Angles are in
    radians: azimuth in the XY plane, elevation above the horizontal.
    """

    insertion: float
    azimuth: float
    elevation: float
    length: float
    base_radius: float
    order: int = 1

    def to_dict(self) -> dict:
        return {"insertion": self.insertion, "azimuth": self.azimuth,
                "elevation": self.elevation, "length": self.length,
                "base_radius": self.base_radius, "order": self.order}

    @classmethod
    def from_dict(cls, d: dict) -> "BranchRecord":
        return cls(**d)


@dataclass
class TreeStats:
    """Key statistics extracted from (or interpolated between) base trees.

    ``trunk_polyline`` is normalized: base at the origin, unit height.
    """

    trunk_height: float
    trunk_base_radius: float
    trunk_polyline: np.ndarray
    branch_records: list[BranchRecord] = field(default_factory=list)
    n_skipped: int = 0

    def __post_init__(self):
        self.trunk_polyline = np.asarray(self.trunk_polyline,
                                         dtype=np.float64).reshape(-1, 3)

    @property
    def branch_count_per_order(self) -> dict[int, int]:
        counts: dict[int, int] = {}
        for rec in self.branch_records:
            counts[rec.order] = counts.get(rec.order, 0) + 1
        return counts

    def records_of_order(self, order: int) -> list[BranchRecord]:
        return [r for r in self.branch_records if r.order == order]

    def validate(self) -> None:
        if not np.isfinite(self.trunk_height) or self.trunk_height <= 0:
            raise InvalidStats(f"trunk_height must be positive, got {self.trunk_height}")
        if self.trunk_base_radius <= 0:
            raise InvalidStats("trunk_base_radius must be positive")
        if len(self.trunk_polyline) < 2:
            raise InvalidStats("trunk polyline needs at least two nodes")
        orders = set()
        for rec in self.branch_records:
            if not 0.0 <= rec.insertion <= 1.0:
                raise InvalidStats(f"insertion {rec.insertion} outside [0, 1]")
            if rec.length <= 0 or rec.base_radius <= 0:
                raise InvalidStats("branch length and radius must be positive")
            if rec.order < 1:
                raise InvalidStats("branch order must be >= 1")
            orders.add(rec.order)
        for k in orders:
            if k > 1 and (k - 1) not in orders:
                raise InvalidStats(f"order-{k} records without order-{k - 1} records")

    def to_dict(self) -> dict:
        return {
            "trunk_height": self.trunk_height,
            "trunk_base_radius": self.trunk_base_radius,
            "trunk_polyline": self.trunk_polyline.tolist(),
            "branch_records": [r.to_dict() for r in self.branch_records],
            "n_skipped": self.n_skipped,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TreeStats":
        return cls(
            trunk_height=d["trunk_height"],
            trunk_base_radius=d["trunk_base_radius"],
            trunk_polyline=np.asarray(d["trunk_polyline"], dtype=np.float64),
            branch_records=[BranchRecord.from_dict(r) for r in d["branch_records"]],
            n_skipped=d.get("n_skipped", 0),
        )


@dataclass
class Segment:
    start: np.ndarray
    end: np.ndarray
    start_radius: float
    end_radius: float
    organ_id: int
    instance_id: int


@dataclass
class TreeModel:
    """Organ-labeled skeleton plus surface mesh.

    ``parent_instance`` maps each instance to its parent (-1 for the
    trunk); ``attach_radius`` records the parent radius at the attachment
    point, which bounds the child's base radius (tapering).
    """

    segments: list[Segment]
    parent_instance: dict[int, int]
    attach_radius: dict[int, float]
    mesh: TriMesh
    stats: TreeStats | None = None

    @property
    def n_instances(self) -> int:
        return len(self.parent_instance)

    def instance_segments(self, instance_id: int) -> list[Segment]:
        return [s for s in self.segments if s.instance_id == instance_id]

    def save(self, directory, name: str) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        self.mesh.save_ply(directory / f"{name}.mesh.ply")
        skeleton = {
            "segments": [
                {"start": s.start.tolist(), "end": s.end.tolist(),
                 "start_radius": s.start_radius, "end_radius": s.end_radius,
                 "organ_id": s.organ_id, "instance_id": s.instance_id}
                for s in self.segments
            ],
            "instances": [
                {"instance_id": iid, "parent": self.parent_instance[iid],
                 "attach_radius": self.attach_radius[iid]}
                for iid in sorted(self.parent_instance)
            ],
        }
        with open(directory / f"{name}.skeleton.json", "w", encoding="utf-8") as f:
            json.dump(skeleton, f, sort_keys=True, separators=(",", ":"))
            f.write("\n")

    @classmethod
    def load(cls, directory, name: str) -> "TreeModel":
        directory = Path(directory)
        mesh = TriMesh.load_ply(directory / f"{name}.mesh.ply")
        with open(directory / f"{name}.skeleton.json", "r", encoding="utf-8") as f:
            skeleton = json.load(f)
        segments = [
            Segment(start=np.asarray(s["start"]), end=np.asarray(s["end"]),
                    start_radius=s["start_radius"], end_radius=s["end_radius"],
                    organ_id=s["organ_id"], instance_id=s["instance_id"])
            for s in skeleton["segments"]
        ]
        parents = {e["instance_id"]: e["parent"] for e in skeleton["instances"]}
        attach = {e["instance_id"]: e["attach_radius"] for e in skeleton["instances"]}
        return cls(segments=segments, parent_instance=parents,
                   attach_radius=attach, mesh=mesh)


@dataclass
class GeneratorConfig:
    """Knobs for the generation step; defaults are documented conventions,
    not values taken from any measured tree."""

    tip_radius_fraction: float = 0.1
    length_scale: float = 0.5      # per extra order
    radius_scale: float = 0.6      # per extra order
    retry_budget: int = 20
    radial_segments: int = 12
    branch_segments: int = 5
    children_max: int = 2          # per parent when no records exist for an order
    collision_tolerance: float = 1e-4
    curvature_jitter: float = 0.12  # radians of per-segment direction drift
    child_tilt_range: tuple[float, float] = (np.deg2rad(35.0), np.deg2rad(70.0))
    child_insertion_range: tuple[float, float] = (0.3, 0.9)


# ---------------------------------------------------------------------------
# Statistics extraction


def extract_stats(base: LabeledCloud, trunk_class: int = TRUNK_ORGAN,
                  branch_class: int = BRANCH_ORGAN, n_bins: int = 20,
                  min_branch_points: int = 5) -> TreeStats:
    """Summarize a labeled real tree into generation statistics.

    The trunk polyline is the per-height-bin centroid curve; each branch
    instance contributes one record from its principal axis. Branch
    instances under ``min_branch_points`` are skipped and counted.
    """
    trunk_mask = base.semantic == trunk_class
    if not trunk_mask.any():
        raise MissingOrgan(f"no points with trunk class {trunk_class}")
    trunk = base.points[trunk_mask].astype(np.float64)
    z_min, z_max = trunk[:, 2].min(), trunk[:, 2].max()
    height = float(z_max - z_min)
    if height <= 0:
        raise MissingOrgan("trunk points are degenerate (zero height)")

    bin_h = height / n_bins
    bins = np.clip(((trunk[:, 2] - z_min) / bin_h).astype(int), 0, n_bins - 1)
    nodes = []
    for b in range(n_bins):
        sel = bins == b
        if not sel.any():
            continue
        cen = trunk[sel].mean(axis=0)
        nodes.append([cen[0], cen[1], z_min + (b + 0.5) * bin_h])
    nodes = np.asarray(nodes)
    base_xy = nodes[0, :2]
    nodes = np.vstack([[base_xy[0], base_xy[1], z_min], nodes,
                       [nodes[-1, 0], nodes[-1, 1], z_max]])
    polyline = (nodes - [base_xy[0], base_xy[1], z_min]) / height

    low = trunk[bins == bins.min()]
    base_radius = float(np.median(
        np.linalg.norm(low[:, :2] - low[:, :2].mean(axis=0), axis=1)))
    base_radius = max(base_radius, 1e-4)

    records: list[BranchRecord] = []
    skipped = 0
    branch_mask = (base.semantic == branch_class) & (base.instance >= 0)
    for iid in np.unique(base.instance[branch_mask]):
        pts = base.points[(base.instance == iid) & branch_mask].astype(np.float64)
        if len(pts) < min_branch_points:
            skipped += 1
            continue
        rec = _branch_record(pts, nodes, z_min, height)
        if rec is not None:
            records.append(rec)
        else:
            skipped += 1
    records.sort(key=lambda r: (r.order, r.insertion, r.azimuth))
    return TreeStats(trunk_height=height, trunk_base_radius=base_radius,
                     trunk_polyline=polyline, branch_records=records,
                     n_skipped=skipped)


def _branch_record(pts: np.ndarray, trunk_nodes: np.ndarray,
                   z_min: float, height: float) -> BranchRecord | None:
    center = pts.mean(axis=0)
    centered = pts - center
    cov = centered.T @ centered / len(pts)
    eigval, eigvec = np.linalg.eigh(cov)
    axis = eigvec[:, -1]
    proj = centered @ axis
    length = float(proj.max() - proj.min())
    if length <= 0:
        return None
    end_a = center + axis * proj.min()
    end_b = center + axis * proj.max()
    dist_a = np.min(np.linalg.norm(trunk_nodes - end_a, axis=1))
    dist_b = np.min(np.linalg.norm(trunk_nodes - end_b, axis=1))
    near, far = (end_a, end_b) if dist_a <= dist_b else (end_b, end_a)
    direction = (far - near) / np.linalg.norm(far - near)
    radial = centered - np.outer(proj, axis)
    radius = float(np.mean(np.linalg.norm(radial, axis=1)))
    radius = max(radius, 1e-4)
    return BranchRecord(
        insertion=float(np.clip((near[2] - z_min) / height, 0.0, 1.0)),
        azimuth=float(np.arctan2(direction[1], direction[0])),
        elevation=float(np.arctan2(direction[2], np.hypot(direction[0], direction[1]))),
        length=length,
        base_radius=radius,
        order=1,
    )


# ---------------------------------------------------------------------------
# Statistics interpolation


def interpolate_stats(a: TreeStats, b: TreeStats, t: float, seed: int) -> TreeStats:
    """Blend two statistics records at fraction ``t`` (0 gives ``a``).

    Branch records are paired rank-by-rank after sorting by insertion
    height; the surplus on the longer side pairs with the shorter side's
    per-order mean. The per-order count interpolates linearly and the
    blended pool is subsampled to it with the seeded RNG.
    """
    a.validate()
    b.validate()
    if not 0.0 <= t <= 1.0:
        raise InvalidArgument(f"t={t} outside [0, 1]")
    rng = np.random.default_rng(seed)
    poly_a, poly_b = _common_resolution(a.trunk_polyline, b.trunk_polyline)
    records: list[BranchRecord] = []
    orders = sorted(set(r.order for r in a.branch_records)
                    | set(r.order for r in b.branch_records))
    for order in orders:
        recs_a = sorted(a.records_of_order(order), key=lambda r: r.insertion)
        recs_b = sorted(b.records_of_order(order), key=lambda r: r.insertion)
        count = int(round(len(recs_a) + (len(recs_b) - len(recs_a)) * t))
        pool = _blend_records(recs_a, recs_b, t)
        if count < len(pool):
            chosen = rng.choice(len(pool), size=count, replace=False)
            pool = [pool[i] for i in sorted(chosen)]
        records.extend(sorted(pool, key=lambda r: r.insertion))
    return TreeStats(
        trunk_height=_lerp(a.trunk_height, b.trunk_height, t),
        trunk_base_radius=_lerp(a.trunk_base_radius, b.trunk_base_radius, t),
        trunk_polyline=poly_a + (poly_b - poly_a) * t,
        branch_records=records,
    )


def _lerp(x: float, y: float, t: float) -> float:
    return float(x + (y - x) * t)


def _lerp_record(ra: BranchRecord, rb: BranchRecord, t: float) -> BranchRecord:
    return BranchRecord(
        insertion=_lerp(ra.insertion, rb.insertion, t),
        azimuth=_lerp(ra.azimuth, rb.azimuth, t),
        elevation=_lerp(ra.elevation, rb.elevation, t),
        length=_lerp(ra.length, rb.length, t),
        base_radius=_lerp(ra.base_radius, rb.base_radius, t),
        order=ra.order,
    )


def _mean_record(recs: list[BranchRecord]) -> BranchRecord:
    return BranchRecord(
        insertion=float(np.mean([r.insertion for r in recs])),
        azimuth=float(np.mean([r.azimuth for r in recs])),
        elevation=float(np.mean([r.elevation for r in recs])),
        length=float(np.mean([r.length for r in recs])),
        base_radius=float(np.mean([r.base_radius for r in recs])),
        order=recs[0].order,
    )


def _blend_records(recs_a: list[BranchRecord], recs_b: list[BranchRecord],
                   t: float) -> list[BranchRecord]:
    na, nb = len(recs_a), len(recs_b)
    pool = [_lerp_record(recs_a[i], recs_b[i], t) for i in range(min(na, nb))]
    if na > nb:
        partner = _mean_record(recs_b) if nb else _mean_record(recs_a)
        pool += [_lerp_record(recs_a[i], partner, t) for i in range(nb, na)]
    elif nb > na:
        partner = _mean_record(recs_a) if na else _mean_record(recs_b)
        pool += [_lerp_record(partner, recs_b[i], t) for i in range(na, nb)]
    return pool


def _common_resolution(pa: np.ndarray, pb: np.ndarray):
    if len(pa) == len(pb):
        return pa, pb
    k = max(len(pa), len(pb))
    return _resample_polyline(pa, k), _resample_polyline(pb, k)


def _resample_polyline(poly: np.ndarray, k: int) -> np.ndarray:
    seg = np.linalg.norm(np.diff(poly, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    if s[-1] == 0:
        return np.repeat(poly[:1], k, axis=0)
    target = np.linspace(0.0, s[-1], k)
    return np.stack([np.interp(target, s, poly[:, c]) for c in range(3)], axis=1)


# ---------------------------------------------------------------------------
# Tree generation


def generate_tree(stats: TreeStats, seed: int, max_order: int = 2,
                  config: GeneratorConfig | None = None) -> TreeModel:
    """Build an organ-labeled tree model from statistics.

    Deterministic given (stats, seed). Collisions between organ capsules
    trigger re-sampling of azimuth and insertion up to the retry budget,
    after which the branch is dropped.
    """
    try:
        stats.validate()
    except InvalidStats:
        raise
    if max_order < 1:
        raise InvalidArgument(f"max_order must be >= 1, got {max_order}")
    cfg = config or GeneratorConfig()
    rng = np.random.default_rng([0x7EE, seed])

    builder = _TreeBuilder(cfg, rng)
    builder.build_trunk(stats)
    prev_order: list[_Chain] = [builder.trunk_chain]
    for order in range(1, max_order + 1):
        records = stats.records_of_order(order)
        placed: list[_Chain] = []
        if records:
            for rec in records:
                chain = builder.place_record(rec, prev_order, order)
                if chain is not None:
                    placed.append(chain)
        elif order > 1:
            for parent in prev_order:
                n_children = int(rng.integers(0, cfg.children_max + 1))
                for _ in range(n_children):
                    chain = builder.place_child(parent, order)
                    if chain is not None:
                        placed.append(chain)
        if not placed:
            break
        prev_order = placed
    return builder.finish(stats)


def generate_population(bases: list[TreeStats], n: int, seed: int,
                        max_order: int = 2,
                        config: GeneratorConfig | None = None) -> list[TreeModel]:
    """Generate ``n`` trees, each from a seeded random base pair and blend
    fraction. Per-tree RNG streams derive from (seed, index) so the output
    does not depend on scheduling."""
    if not bases:
        raise InvalidArgument("need at least one base stats record")
    if n < 1:
        raise InvalidArgument(f"n must be >= 1, got {n}")
    trees = []
    for i in range(n):
        rng = np.random.default_rng([seed, i])
        ia, ib = rng.integers(len(bases), size=2)
        t = float(rng.random())
        seed_interp = int(rng.integers(2 ** 62))
        seed_tree = int(rng.integers(2 ** 62))
        stats = interpolate_stats(bases[ia], bases[ib], t, seed=seed_interp)
        trees.append(generate_tree(stats, seed=seed_tree, max_order=max_order,
                                   config=config))
    return trees


@dataclass
class _Chain:
    """A committed organ: polyline nodes with per-node radii."""

    nodes: np.ndarray
    radii: np.ndarray
    instance_id: int
    organ_id: int
    base_radius: float
    length: float

    def radius_at(self, frac: float) -> float:
        seg = np.linalg.norm(np.diff(self.nodes, axis=0), axis=1)
        s = np.concatenate([[0.0], np.cumsum(seg)])
        return float(np.interp(frac * s[-1], s, self.radii))

    def point_at(self, frac: float) -> np.ndarray:
        seg = np.linalg.norm(np.diff(self.nodes, axis=0), axis=1)
        s = np.concatenate([[0.0], np.cumsum(seg)])
        target = frac * s[-1]
        return np.array([np.interp(target, s, self.nodes[:, c]) for c in range(3)])

    def direction_at(self, frac: float) -> np.ndarray:
        seg = np.diff(self.nodes, axis=0)
        lengths = np.linalg.norm(seg, axis=1)
        s = np.cumsum(lengths)
        idx = int(np.searchsorted(s, frac * s[-1], side="left"))
        idx = min(idx, len(seg) - 1)
        return seg[idx] / lengths[idx]


class _TreeBuilder:
    def __init__(self, cfg: GeneratorConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.rng = rng
        self.segments: list[Segment] = []
        self.parent_instance: dict[int, int] = {}
        self.attach_radius: dict[int, float] = {}
        self.chain_parent: dict[int, int] = {}
        self._seg_start: list[np.ndarray] = []
        self._seg_end: list[np.ndarray] = []
        self._seg_radius: list[float] = []
        self._seg_instance: list[int] = []
        self.chains: list[_Chain] = []
        self.trunk_chain: _Chain | None = None
        self._next_instance = 0

    def build_trunk(self, stats: TreeStats) -> None:
        nodes = stats.trunk_polyline * stats.trunk_height
        keep = np.concatenate(
            [[True], np.linalg.norm(np.diff(nodes, axis=0), axis=1) > 1e-12])
        nodes = nodes[keep]
        radii = _taper_radii(nodes, stats.trunk_base_radius,
                             self.cfg.tip_radius_fraction)
        chain = _Chain(nodes=nodes, radii=radii, instance_id=self._next_instance,
                       organ_id=TRUNK_ORGAN, base_radius=stats.trunk_base_radius,
                       length=float(np.sum(np.linalg.norm(np.diff(nodes, axis=0),
                                                          axis=1))))
        self._commit(chain, parent=-1, attach_radius=float("inf"))
        self.trunk_chain = chain

    def place_record(self, rec: BranchRecord, parents: list[_Chain],
                     order: int) -> "_Chain | None":
        """Place one branch from a record, re-sampling azimuth/insertion on
        collision."""
        parent = parents[0] if len(parents) == 1 else \
            parents[int(self.rng.integers(len(parents)))]
        insertion, azimuth = rec.insertion, rec.azimuth
        for _ in range(self.cfg.retry_budget + 1):
            chain = self._candidate(parent, insertion, azimuth, rec.elevation,
                                    rec.length, rec.base_radius, order)
            if chain is not None and not self._collides(chain, parent.instance_id):
                self._commit(chain, parent=parent.instance_id,
                             attach_radius=parent.radius_at(insertion))
                return chain
            insertion = float(self.rng.uniform(0.05, 0.98))
            azimuth = float(self.rng.uniform(0.0, 2 * np.pi))
        return None

    def place_child(self, parent: _Chain, order: int) -> "_Chain | None":
        """Place one procedural higher-order branch on a parent chain."""
        cfg = self.cfg
        length = parent.length * cfg.length_scale
        base_radius = parent.base_radius * cfg.radius_scale
        lo, hi = cfg.child_insertion_range
        insertion = float(self.rng.uniform(lo, hi))
        azimuth = float(self.rng.uniform(0.0, 2 * np.pi))
        for _ in range(cfg.retry_budget + 1):
            direction = self._tilted_direction(parent, insertion, azimuth)
            chain = self._candidate_dir(parent, insertion, direction, length,
                                        base_radius, order)
            if chain is not None and not self._collides(chain, parent.instance_id):
                self._commit(chain, parent=parent.instance_id,
                             attach_radius=parent.radius_at(insertion))
                return chain
            insertion = float(self.rng.uniform(lo, hi))
            azimuth = float(self.rng.uniform(0.0, 2 * np.pi))
        return None

    def _tilted_direction(self, parent: _Chain, insertion: float,
                          azimuth: float) -> np.ndarray:
        axis = parent.direction_at(insertion)
        perp = _perpendicular(axis)
        perp2 = np.cross(axis, perp)
        side = np.cos(azimuth) * perp + np.sin(azimuth) * perp2
        lo, hi = self.cfg.child_tilt_range
        tilt = float(self.rng.uniform(lo, hi))
        return np.cos(tilt) * axis + np.sin(tilt) * side

    def _candidate(self, parent: _Chain, insertion: float, azimuth: float,
                   elevation: float, length: float, base_radius: float,
                   order: int) -> "_Chain | None":
        direction = np.array([
            np.cos(elevation) * np.cos(azimuth),
            np.cos(elevation) * np.sin(azimuth),
            np.sin(elevation),
        ])
        return self._candidate_dir(parent, insertion, direction, length,
                                   base_radius, order)

    def _candidate_dir(self, parent: _Chain, insertion: float,
                       direction: np.ndarray, length: float, base_radius: float,
                       order: int) -> "_Chain | None":
        cfg = self.cfg
        attach = parent.point_at(insertion)
        radius = min(base_radius, parent.radius_at(insertion))
        if radius <= 0 or length <= 0:
            return None
        n_seg = cfg.branch_segments
        step = length / n_seg
        nodes = [attach]
        d = direction / np.linalg.norm(direction)
        for _ in range(n_seg):
            jitter = self.rng.normal(0.0, cfg.curvature_jitter, size=3)
            d = d + jitter * step / max(length, 1e-9)
            d = d / np.linalg.norm(d)
            nodes.append(nodes[-1] + d * step)
        nodes = np.asarray(nodes)
        radii = _taper_radii(nodes, radius, cfg.tip_radius_fraction)
        return _Chain(nodes=nodes, radii=radii, instance_id=self._next_instance,
                      organ_id=BRANCH_ORGAN, base_radius=radius, length=length)

    def _collides(self, chain: _Chain, parent_id: int) -> bool:
        if not self._seg_start:
            return False
        starts = np.asarray(self._seg_start)
        ends = np.asarray(self._seg_end)
        radii = np.asarray(self._seg_radius)
        owners = np.asarray(self._seg_instance)
        mask = owners != parent_id
        if not mask.any():
            return False
        starts, ends, radii = starts[mask], ends[mask], radii[mask]
        c0 = chain.nodes[:-1]
        c1 = chain.nodes[1:]
        cr = np.maximum(chain.radii[:-1], chain.radii[1:])
        dist = segment_pair_distance(
            c0[:, None, :], c1[:, None, :], starts[None, :, :], ends[None, :, :])
        limit = cr[:, None] + radii[None, :] - self.cfg.collision_tolerance
        return bool(np.any(dist < limit))

    def _commit(self, chain: _Chain, parent: int, attach_radius: float) -> None:
        iid = chain.instance_id
        self.parent_instance[iid] = parent
        self.attach_radius[iid] = attach_radius
        for i in range(len(chain.nodes) - 1):
            seg = Segment(start=chain.nodes[i], end=chain.nodes[i + 1],
                          start_radius=float(chain.radii[i]),
                          end_radius=float(chain.radii[i + 1]),
                          organ_id=chain.organ_id, instance_id=iid)
            self.segments.append(seg)
            self._seg_start.append(chain.nodes[i])
            self._seg_end.append(chain.nodes[i + 1])
            self._seg_radius.append(float(max(chain.radii[i], chain.radii[i + 1])))
            self._seg_instance.append(iid)
        self.chains.append(chain)
        self._next_instance += 1

    def finish(self, stats: TreeStats) -> TreeModel:
        mesh = _chains_to_mesh(self.chains, self.cfg.radial_segments)
        return TreeModel(segments=self.segments,
                         parent_instance=self.parent_instance,
                         attach_radius=self.attach_radius,
                         mesh=mesh, stats=stats)


def _taper_radii(nodes: np.ndarray, base_radius: float,
                 tip_fraction: float) -> np.ndarray:
    seg = np.linalg.norm(np.diff(nodes, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    frac = s / s[-1] if s[-1] > 0 else s
    return base_radius * (1.0 - (1.0 - tip_fraction) * frac)


def _perpendicular(v: np.ndarray) -> np.ndarray:
    pick = np.array([1.0, 0.0, 0.0]) if abs(v[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    p = np.cross(v, pick)
    return p / np.linalg.norm(p)


def segment_pair_distance(p0, p1, q0, q1) -> np.ndarray:
    """Minimum distance between segments [p0, p1] and [q0, q1] (broadcasting)."""
    d1 = p1 - p0
    d2 = q1 - q0
    r = p0 - q0
    a = np.sum(d1 * d1, axis=-1)
    e = np.sum(d2 * d2, axis=-1)
    f = np.sum(d2 * r, axis=-1)
    c = np.sum(d1 * r, axis=-1)
    b = np.sum(d1 * d2, axis=-1)
    denom = a * e - b * b
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(denom > 1e-15, (b * f - c * e) / np.where(denom == 0, 1, denom), 0.0)
    s = np.clip(s, 0.0, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(e > 1e-15, (b * s + f) / np.where(e == 0, 1, e), 0.0)
    t_clamped = np.clip(t, 0.0, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(a > 1e-15, (b * t_clamped - c) / np.where(a == 0, 1, a), 0.0)
    s = np.clip(s, 0.0, 1.0)
    cp = p0 + s[..., None] * d1
    cq = q0 + t_clamped[..., None] * d2
    return np.linalg.norm(cp - cq, axis=-1)


def _chains_to_mesh(chains: list[_Chain], radial_segments: int) -> TriMesh:
    vertices: list[np.ndarray] = []
    faces: list[np.ndarray] = []
    organ: list[np.ndarray] = []
    instance: list[np.ndarray] = []
    offset = 0
    for chain in chains:
        v, f = _tube(chain.nodes, chain.radii, radial_segments)
        vertices.append(v)
        faces.append(f + offset)
        organ.append(np.full(len(f), chain.organ_id, dtype=np.int32))
        instance.append(np.full(len(f), chain.instance_id, dtype=np.int32))
        offset += len(v)
    return TriMesh(vertices=np.concatenate(vertices),
                   faces=np.concatenate(faces),
                   organ_id=np.concatenate(organ),
                   instance_id=np.concatenate(instance))


def _tube(nodes: np.ndarray, radii: np.ndarray, m: int):
    """Swept tube with parallel-transport frames plus end caps."""
    tangents = np.diff(nodes, axis=0)
    tangents = tangents / np.linalg.norm(tangents, axis=1, keepdims=True)
    node_tangent = np.empty_like(nodes)
    node_tangent[0] = tangents[0]
    node_tangent[-1] = tangents[-1]
    for i in range(1, len(nodes) - 1):
        t = tangents[i - 1] + tangents[i]
        norm = np.linalg.norm(t)
        node_tangent[i] = t / norm if norm > 1e-12 else tangents[i]

    normal = _perpendicular(node_tangent[0])
    theta = 2 * np.pi * np.arange(m) / m
    cos_t, sin_t = np.cos(theta), np.sin(theta)

    verts = []
    for i, node in enumerate(nodes):
        t = node_tangent[i]
        normal = normal - t * np.dot(normal, t)
        n_len = np.linalg.norm(normal)
        normal = normal / n_len if n_len > 1e-12 else _perpendicular(t)
        binormal = np.cross(t, normal)
        ring = (node[None, :]
                + radii[i] * (cos_t[:, None] * normal[None, :]
                              + sin_t[:, None] * binormal[None, :]))
        verts.append(ring)
    rings = np.concatenate(verts)

    faces = []
    for i in range(len(nodes) - 1):
        a = i * m + np.arange(m)
        b = ((np.arange(m) + 1) % m) + i * m
        c = a + m
        d = b + m
        faces.append(np.stack([a, b, c], axis=1))
        faces.append(np.stack([b, d, c], axis=1))
    faces = np.concatenate(faces)

    # End caps: triangle fans around the node centers.
    n_ring_verts = len(rings)
    caps_v = np.stack([nodes[0], nodes[-1]])
    cap_faces = []
    first = np.arange(m)
    cap_faces.append(np.stack(
        [np.full(m, n_ring_verts), (first + 1) % m, first], axis=1))
    last = (len(nodes) - 1) * m + np.arange(m)
    cap_faces.append(np.stack(
        [np.full(m, n_ring_verts + 1), (len(nodes) - 1) * m + (first + 1) % m, last],
        axis=1))
    all_verts = np.concatenate([rings, caps_v]).astype(np.float32)
    all_faces = np.concatenate([faces] + cap_faces).astype(np.int32)
    return all_verts, all_faces
