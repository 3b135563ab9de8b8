"""Sim-to-real experiment assembly: group-balanced base-tree folds and the
0-shot / few-shot / vanilla training manifests, plus per-fold synthetic
corpora. No training happens here; the artifacts feed an external trainer.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import DatasetManifest, load_standard, write_standard
from .errors import InvalidProtocol, SchemaError
from .treegen import GeneratorConfig, extract_stats, generate_population
from .vls import ScannerConfig, default_tls_positions, scan


@dataclass
class ProtocolConfig:
    """Parameters of one protocol run."""

    group_key: str = "orchard"
    kb: int = 6
    n_folds: int | None = None          # default: as many disjoint folds as fit
    synthetic_count: int = 150
    synthetic_mode: str = "surface"     # "surface" or "vls"
    points_per_tree: int = 20000
    max_order: int = 2
    resolution_deg: float = 0.3
    n_positions: int = 4
    standoff: float = 2.0
    noise_sigma: float = 0.0
    seed: int = 0
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)


def assemble_folds(ids_by_group: dict[str, list[str]], kb: int,
                   n_folds: int | None, seed: int) -> list[list[str]]:
    """Disjoint folds of ``kb`` base trees, balanced across groups.

    ``kb`` must divide evenly over the groups; folds partition the pool
    when every group size is a multiple of its per-fold share.
    """
    groups = sorted(ids_by_group)
    if not groups:
        raise InvalidProtocol("no groups to draw base trees from")
    if kb < len(groups) or kb % len(groups):
        raise InvalidProtocol(
            f"K_b={kb} cannot be balanced across {len(groups)} groups")
    per_group = kb // len(groups)
    max_folds = min(len(ids_by_group[g]) // per_group for g in groups)
    if max_folds == 0:
        raise InvalidProtocol(f"K_b={kb} exceeds the available base trees")
    folds_requested = max_folds if n_folds is None else n_folds
    if folds_requested < 1 or folds_requested > max_folds:
        raise InvalidProtocol(
            f"{folds_requested} folds of K_b={kb} do not fit "
            f"{sum(len(v) for v in ids_by_group.values())} base trees")
    rng = np.random.default_rng(seed)
    shuffled = {}
    for g in groups:
        ids = sorted(ids_by_group[g])
        shuffled[g] = [ids[i] for i in rng.permutation(len(ids))]
    folds = []
    for k in range(folds_requested):
        fold = []
        for g in groups:
            fold.extend(shuffled[g][k * per_group:(k + 1) * per_group])
        folds.append(sorted(fold))
    return folds


def kb_test_ratio(kb: int, test_size: int) -> float:
    if test_size <= 0:
        raise InvalidProtocol("empty test split")
    return kb / test_size


def run_simreal_protocol(manifest: DatasetManifest, config: ProtocolConfig,
                         out_dir) -> dict:
    """Materialize folds, per-fold synthetic corpora, and the three
    training-configuration manifests; returns the protocol summary dict."""
    if "train" not in manifest.splits or "test" not in manifest.splits:
        raise SchemaError("protocol needs 'train' and 'test' splits")
    train_ids = sorted(manifest.splits["train"])
    test_ids = sorted(manifest.splits["test"])
    ids_by_group: dict[str, list[str]] = {}
    for sid in train_ids:
        meta = manifest.groups.get(sid, {})
        if config.group_key not in meta:
            raise SchemaError(
                f"sample {sid!r} has no group key {config.group_key!r}")
        ids_by_group.setdefault(meta[config.group_key], []).append(sid)

    folds = assemble_folds(ids_by_group, config.kb, config.n_folds, config.seed)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    summary = {
        "kb": config.kb,
        "group_key": config.group_key,
        "n_folds": len(folds),
        "folds": folds,
        "test": test_ids,
        "kb_test_ratio": kb_test_ratio(config.kb, len(test_ids)),
        "synthetic_count": config.synthetic_count,
    }
    with open(out_dir / "protocol.json", "w", encoding="utf-8") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")

    for k, fold in enumerate(folds):
        fold_dir = out_dir / f"fold_{k:02d}"
        fold_dir.mkdir(parents=True, exist_ok=True)
        synth_ids = []
        if config.synthetic_count > 0:
            synth_ids = _generate_fold_synthetics(manifest, fold, config,
                                                  fold_dir, fold_seed=k)
        _write_fold_manifests(manifest, fold, synth_ids, train_ids, test_ids,
                              fold_dir)
    return summary


def _generate_fold_synthetics(manifest: DatasetManifest, fold: list[str],
                              config: ProtocolConfig, fold_dir: Path,
                              fold_seed: int) -> list[str]:
    bases = []
    for sid in fold:
        path = manifest.sample_path(sid)
        cloud = load_standard(path.parent, path.name)
        bases.append(extract_stats(cloud))
    seed = int(np.random.default_rng([config.seed, fold_seed]).integers(2 ** 62))
    trees = generate_population(bases, config.synthetic_count, seed=seed,
                                max_order=config.max_order,
                                config=config.generator)
    synth_ids = []
    for i, tree in enumerate(trees):
        sid = f"synth_{i:04d}"
        if config.synthetic_mode == "vls":
            positions = default_tls_positions(tree, config.n_positions,
                                              config.standoff)
            cloud = scan(tree, ScannerConfig(
                positions=positions,
                angular_resolution=config.resolution_deg,
                range_noise_sigma=config.noise_sigma,
                seed=seed + i,
            ))
        else:
            cloud = tree.mesh.sample_surface(config.points_per_tree,
                                             seed=seed + i)
        write_standard(cloud, fold_dir, sid)
        synth_ids.append(sid)
    return synth_ids


def _write_fold_manifests(manifest: DatasetManifest, fold: list[str],
                          synth_ids: list[str], train_ids: list[str],
                          test_ids: list[str], fold_dir: Path) -> None:
    def rel_real(sid: str) -> str:
        target = manifest.sample_path(sid)
        return os.path.relpath(target, fold_dir)

    real_samples = {sid: rel_real(sid) for sid in train_ids + test_ids}
    synth_samples = {sid: sid for sid in synth_ids}

    zero_shot = DatasetManifest(
        name=f"{manifest.name}-0shot",
        classes=dict(manifest.classes),
        instance_classes=list(manifest.instance_classes),
        splits={"train": list(synth_ids), "test": list(test_ids)},
        samples={**synth_samples, **{sid: real_samples[sid] for sid in test_ids}},
    )
    zero_shot.save(fold_dir / "manifest_0shot.json")

    kb_shot = DatasetManifest(
        name=f"{manifest.name}-kbshot",
        classes=dict(manifest.classes),
        instance_classes=list(manifest.instance_classes),
        splits={"pretrain": list(synth_ids), "finetune": list(fold),
                "test": list(test_ids)},
        samples={**synth_samples,
                 **{sid: real_samples[sid] for sid in fold + test_ids}},
    )
    kb_shot.save(fold_dir / "manifest_kbshot.json")

    vanilla = DatasetManifest(
        name=f"{manifest.name}-vanilla",
        classes=dict(manifest.classes),
        instance_classes=list(manifest.instance_classes),
        splits={"train": list(train_ids), "test": list(test_ids)},
        samples=dict(real_samples),
    )
    vanilla.save(fold_dir / "manifest_vanilla.json")
