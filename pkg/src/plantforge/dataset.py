"""Standardized on-disk dataset format, JSON manifest, splits, statistics.

Sample layout inside a dataset directory:
  ``<id>.points``  little-endian float32 xyz triples
  ``<id>.sem``     little-endian int32 semantic class ids (-1 unlabeled)
  ``<id>.inst``    little-endian int32 instance ids (-1 no instance)
  ``<id>.rgb``     optional uint8 rgb triples
with ``manifest.json`` at the dataset root.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cloud import LabeledCloud
from .errors import CorruptSample, InvalidArgument, SchemaError

MANIFEST_NAME = "manifest.json"


@dataclass
class DatasetManifest:
    """Dataset metadata: class map, instance classes, splits, sample paths.

    ``groups`` optionally attaches per-sample metadata (e.g. which orchard
    a tree came from) used for stratified splits and protocol assembly.
    """

    name: str
    classes: dict[int, str]
    instance_classes: list[int]
    splits: dict[str, list[str]] = field(default_factory=dict)
    samples: dict[str, str] = field(default_factory=dict)
    groups: dict[str, dict[str, str]] = field(default_factory=dict)
    root: Path | None = None

    def validate(self) -> None:
        ids = sorted(self.classes)
        if ids != list(range(len(ids))):
            raise SchemaError(f"class ids must be contiguous from 0, got {ids}")
        for cid in self.instance_classes:
            if cid not in self.classes:
                raise SchemaError(f"instance class {cid} missing from class map")
        seen: dict[str, str] = {}
        for split, sample_ids in self.splits.items():
            for sid in sample_ids:
                if sid in seen:
                    raise SchemaError(
                        f"sample {sid!r} appears in splits {seen[sid]!r} and {split!r}")
                seen[sid] = split
                if sid not in self.samples:
                    raise SchemaError(f"split {split!r} lists unknown sample {sid!r}")

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    def sample_path(self, sample_id: str) -> Path:
        if sample_id not in self.samples:
            raise SchemaError(f"unknown sample id {sample_id!r}")
        rel = self.samples[sample_id]
        return (self.root / rel) if self.root is not None else Path(rel)

    def split_ids(self, split: str | None) -> list[str]:
        if split is None:
            return sorted(self.samples)
        if split not in self.splits:
            raise SchemaError(f"unknown split {split!r}")
        return list(self.splits[split])

    def to_dict(self) -> dict:
        out = {
            "name": self.name,
            "classes": {str(k): v for k, v in sorted(self.classes.items())},
            "instance_classes": sorted(self.instance_classes),
            "splits": {k: list(v) for k, v in self.splits.items()},
            "samples": dict(sorted(self.samples.items())),
        }
        if self.groups:
            out["groups"] = {k: dict(sorted(v.items()))
                             for k, v in sorted(self.groups.items())}
        return out

    def save(self, path) -> None:
        path = Path(path)
        if path.is_dir():
            path = path / MANIFEST_NAME
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")

    @classmethod
    def from_dict(cls, data: dict, root: Path | None = None) -> "DatasetManifest":
        try:
            manifest = cls(
                name=data["name"],
                classes={int(k): str(v) for k, v in data["classes"].items()},
                instance_classes=[int(c) for c in data["instance_classes"]],
                splits={k: list(v) for k, v in data.get("splits", {}).items()},
                samples={str(k): str(v) for k, v in data.get("samples", {}).items()},
                groups={str(k): dict(v) for k, v in data.get("groups", {}).items()},
                root=root,
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"malformed manifest: {exc}") from None
        manifest.validate()
        return manifest

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        path = Path(path)
        if path.is_dir():
            path = path / MANIFEST_NAME
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
        return cls.from_dict(data, root=path.parent)


def write_standard(cloud: LabeledCloud, directory, sample_id: str) -> None:
    """Write a cloud in the standard binary layout (little-endian)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    cloud.points.astype("<f4").tofile(directory / f"{sample_id}.points")
    cloud.semantic.astype("<i4").tofile(directory / f"{sample_id}.sem")
    cloud.instance.astype("<i4").tofile(directory / f"{sample_id}.inst")
    rgb = directory / f"{sample_id}.rgb"
    if cloud.color is not None:
        cloud.color.astype("u1").tofile(rgb)
    elif rgb.exists():
        rgb.unlink()


def load_standard(directory, sample_id: str) -> LabeledCloud:
    """Load a standard-format sample; raises CorruptSample on size mismatch."""
    directory = Path(directory)
    try:
        raw = np.fromfile(directory / f"{sample_id}.points", dtype="<f4")
    except FileNotFoundError:
        raise CorruptSample(f"sample {sample_id!r}: missing points file") from None
    if raw.size % 3:
        raise CorruptSample(f"sample {sample_id!r}: points file size not a "
                            f"multiple of 12 bytes")
    pts = raw.reshape(-1, 3)
    n = len(pts)
    sem = _read_labels(directory / f"{sample_id}.sem", n, sample_id)
    inst = _read_labels(directory / f"{sample_id}.inst", n, sample_id)
    color = None
    rgb = directory / f"{sample_id}.rgb"
    if rgb.exists():
        cr = np.fromfile(rgb, dtype="u1")
        if cr.size != 3 * n:
            raise CorruptSample(f"sample {sample_id!r}: rgb length {cr.size // 3} "
                                f"does not match {n} points")
        color = cr.reshape(-1, 3)
    return LabeledCloud(points=pts, semantic=sem, instance=inst, color=color)


def _read_labels(path: Path, n: int, sample_id: str) -> np.ndarray:
    try:
        arr = np.fromfile(path, dtype="<i4")
    except FileNotFoundError:
        raise CorruptSample(f"sample {sample_id!r}: missing {path.suffix} file") from None
    if arr.size != n:
        raise CorruptSample(f"sample {sample_id!r}: {path.suffix} has {arr.size} "
                            f"labels for {n} points")
    return arr


def make_splits(manifest: DatasetManifest, ratios: dict[str, float],
                stratify_by: str | None = None, seed: int = 0) -> DatasetManifest:
    """Seed-deterministic disjoint, exhaustive splits.

    With ``stratify_by``, ratios are applied within each group value of
    that key, so group proportions are preserved up to rounding.
    """
    total = sum(ratios.values())
    if abs(total - 1.0) > 1e-9:
        raise InvalidArgument(f"split fractions sum to {total}, expected 1")
    sample_ids = sorted(manifest.samples)
    if stratify_by is None:
        pools = {"": sample_ids}
    else:
        pools = {}
        for sid in sample_ids:
            meta = manifest.groups.get(sid, {})
            if stratify_by not in meta:
                raise SchemaError(
                    f"sample {sid!r} has no group key {stratify_by!r}")
            pools.setdefault(meta[stratify_by], []).append(sid)

    rng = np.random.default_rng(seed)
    split_names = list(ratios)
    assigned: dict[str, list[str]] = {name: [] for name in split_names}
    for _, pool in sorted(pools.items()):
        pool = list(pool)
        order = rng.permutation(len(pool))
        shuffled = [pool[i] for i in order]
        counts = _apportion(len(pool), [ratios[name] for name in split_names])
        offset = 0
        for name, count in zip(split_names, counts):
            assigned[name].extend(shuffled[offset:offset + count])
            offset += count
    for name in split_names:
        assigned[name].sort()
    return DatasetManifest(
        name=manifest.name,
        classes=dict(manifest.classes),
        instance_classes=list(manifest.instance_classes),
        splits=assigned,
        samples=dict(manifest.samples),
        groups={k: dict(v) for k, v in manifest.groups.items()},
        root=manifest.root,
    )


def _apportion(n: int, fractions: list[float]) -> list[int]:
    """Largest-remainder rounding of n into len(fractions) integer parts."""
    exact = [n * f for f in fractions]
    counts = [int(np.floor(e)) for e in exact]
    leftovers = n - sum(counts)
    remainders = sorted(range(len(exact)),
                        key=lambda i: (-(exact[i] - counts[i]), i))
    for i in remainders[:leftovers]:
        counts[i] += 1
    return counts


@dataclass
class SampleStats:
    """Per-sample counting results."""

    sample_id: str
    class_points: dict[int, int]
    class_instances: dict[int, int]
    instance_extents: dict[int, list[float]]     # class -> bbox diagonals
    instance_points: dict[int, list[int]]        # class -> per-instance sizes


@dataclass
class DatasetStats:
    """Per-class distributions over every sample of a manifest."""

    classes: dict[int, str]
    samples: list[SampleStats]

    def points_per_sample(self, class_id: int) -> np.ndarray:
        return np.array([s.class_points.get(class_id, 0) for s in self.samples])

    def instances_per_sample(self, class_id: int) -> np.ndarray:
        return np.array([s.class_instances.get(class_id, 0) for s in self.samples])

    def mean_instance_extent(self, class_id: int | None = None) -> float:
        """Mean axis-aligned bbox diagonal over instances (all classes when
        class_id is None). NaN when there are no instances."""
        values = []
        for s in self.samples:
            for cid, extents in s.instance_extents.items():
                if class_id is None or cid == class_id:
                    values.extend(extents)
        return float(np.mean(values)) if values else float("nan")

    def mean_instance_points(self, class_id: int) -> float:
        values = []
        for s in self.samples:
            values.extend(s.instance_points.get(class_id, []))
        return float(np.mean(values)) if values else float("nan")


def compute_sample_stats(sample_id: str, cloud: LabeledCloud) -> SampleStats:
    sem = cloud.semantic
    inst = cloud.instance
    class_points = {int(c): int(n) for c, n in
                    zip(*np.unique(sem[sem >= 0], return_counts=True))}
    class_instances: dict[int, int] = {}
    instance_extents: dict[int, list[float]] = {}
    instance_points: dict[int, list[int]] = {}
    mask = inst >= 0
    for iid in np.unique(inst[mask]):
        sel = inst == iid
        cid = int(sem[sel][0])
        pts = cloud.points[sel].astype(np.float64)
        diag = float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))
        class_instances[cid] = class_instances.get(cid, 0) + 1
        instance_extents.setdefault(cid, []).append(diag)
        instance_points.setdefault(cid, []).append(int(sel.sum()))
    return SampleStats(sample_id=sample_id, class_points=class_points,
                       class_instances=class_instances,
                       instance_extents=instance_extents,
                       instance_points=instance_points)


def compute_stats(manifest: DatasetManifest, split: str | None = None) -> DatasetStats:
    """Exact per-sample class/instance statistics for a manifest."""
    records = []
    for sid in manifest.split_ids(split):
        path = manifest.sample_path(sid)
        try:
            cloud = load_standard(path.parent, path.name)
        except CorruptSample as exc:
            raise CorruptSample(f"sample {sid!r}: {exc}") from None
        records.append(compute_sample_stats(sid, cloud))
    return DatasetStats(classes=dict(manifest.classes), samples=records)
