import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from plantforge.cloud import LabeledCloud
from plantforge.treegen import BranchRecord, TreeStats


def random_cloud(rng, n, n_classes=3, with_instances=True, scale=1.0):
    points = (rng.random((n, 3)) * scale).astype(np.float32)
    semantic = rng.integers(0, n_classes, size=n).astype(np.int32)
    if with_instances:
        # One instance per (class, slot) so labels stay consistent.
        slot = rng.integers(0, 3, size=n)
        instance = (semantic * 3 + slot).astype(np.int32)
    else:
        instance = np.full(n, -1, dtype=np.int32)
    return LabeledCloud(points=points, semantic=semantic, instance=instance)


def blob_cloud(rng, n_instances, points_per_blob=30, n_classes=2,
               center_spread=10.0, blob_sigma=0.05):
    """Well-separated Gaussian blobs, one instance each."""
    points, semantic, instance = [], [], []
    centers = rng.random((n_instances, 3)) * center_spread
    # Enforce pairwise separation so oracle offsets cluster unambiguously.
    for trial in range(200):
        dists = np.linalg.norm(centers[:, None] - centers[None, :], axis=2)
        np.fill_diagonal(dists, np.inf)
        if dists.min() > 1.0:
            break
        centers = rng.random((n_instances, 3)) * center_spread
    for i, center in enumerate(centers):
        pts = center + rng.normal(0, blob_sigma, size=(points_per_blob, 3))
        points.append(pts)
        semantic.extend([i % n_classes] * points_per_blob)
        instance.extend([i] * points_per_blob)
    return LabeledCloud(points=np.concatenate(points).astype(np.float32),
                        semantic=np.array(semantic, dtype=np.int32),
                        instance=np.array(instance, dtype=np.int32))


def base_stats(rng, n_branches=None, height=None):
    """Plausible synthetic base-tree statistics."""
    n_nodes = 6
    poly = np.stack([np.zeros(n_nodes), np.zeros(n_nodes),
                     np.linspace(0, 1, n_nodes)], axis=1)
    poly[1:, 0] = rng.normal(0, 0.01, n_nodes - 1)
    poly[1:, 1] = rng.normal(0, 0.01, n_nodes - 1)
    if n_branches is None:
        n_branches = int(rng.integers(6, 14))
    records = [BranchRecord(
        insertion=float(rng.uniform(0.2, 0.95)),
        azimuth=float(rng.uniform(0, 2 * np.pi)),
        elevation=float(rng.uniform(0.1, 0.9)),
        length=float(rng.uniform(0.4, 1.2)),
        base_radius=float(rng.uniform(0.012, 0.03)),
        order=1) for _ in range(n_branches)]
    return TreeStats(
        trunk_height=height if height is not None else float(rng.uniform(1.6, 2.6)),
        trunk_base_radius=float(rng.uniform(0.04, 0.08)),
        trunk_polyline=poly,
        branch_records=records)


def cylinder_cloud(rng, radius, height, n, center=(0.0, 0.0, 0.0)):
    """Points uniformly on a vertical cylinder surface."""
    theta = rng.uniform(0, 2 * np.pi, n)
    z = rng.uniform(0, height, n)
    pts = np.stack([center[0] + radius * np.cos(theta),
                    center[1] + radius * np.sin(theta),
                    center[2] + z], axis=1)
    return pts


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
