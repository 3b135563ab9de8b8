"""Benchmark the compiled ray-casting kernel against the numpy fallback.

Usage: python benchmarks/bench_raycast.py [--rays 500000] [--seed 0]
Builds a synthetic tree, then times first-hit casting of a TLS-style ray
grid through both backends and checks they agree.
"""

import argparse
import time

import numpy as np

from plantforge import kernels
from plantforge.treegen import BranchRecord, TreeStats, generate_tree
from plantforge.vls import ScannerConfig, default_tls_positions, grid_counts, ray_grid


def make_tree(seed: int):
    rng = np.random.default_rng(seed)
    poly = np.stack([np.zeros(8), np.zeros(8), np.linspace(0, 1, 8)], axis=1)
    records = [BranchRecord(
        insertion=float(rng.uniform(0.2, 0.95)),
        azimuth=float(rng.uniform(0, 2 * np.pi)),
        elevation=float(rng.uniform(0.1, 0.8)),
        length=float(rng.uniform(0.5, 1.2)),
        base_radius=float(rng.uniform(0.01, 0.03)),
    ) for _ in range(25)]
    stats = TreeStats(trunk_height=2.2, trunk_base_radius=0.06,
                      trunk_polyline=poly, branch_records=records)
    return generate_tree(stats, seed=seed, max_order=3)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--rays", type=int, default=500_000)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    tree = make_tree(args.seed)
    bvh = kernels.build_bvh(tree.mesh.triangles())
    print(f"mesh: {len(tree.mesh)} triangles, BVH: {bvh.n_nodes} nodes")

    positions = default_tls_positions(tree, 1, 2.0)
    resolution = np.sqrt(360.0 * 150.0 / args.rays)
    cfg = ScannerConfig(positions=positions, angular_resolution=resolution,
                        elevation_range=(-60.0, 90.0))
    dirs, n_az, n_el = ray_grid(cfg)
    origins = np.broadcast_to(positions[0], dirs.shape)
    print(f"rays: {len(dirs)} ({n_az} az x {n_el} el, {resolution:.4f} deg)")

    results = {}
    for backend in kernels.available_backends():
        cast = kernels.get_raycast(backend)
        cast(bvh, origins[:1000], dirs[:1000], 100.0)  # warm up
        start = time.perf_counter()
        tri, t = cast(bvh, origins, dirs, 100.0)
        elapsed = time.perf_counter() - start
        results[backend] = (tri, t, elapsed)
        rate = len(dirs) / elapsed / 1e6
        print(f"{backend:>9}: {elapsed:8.3f} s  ({rate:6.2f} Mray/s, "
              f"{int((tri >= 0).sum())} hits)")

    if len(results) == 2:
        tri_c, t_c, el_c = results["compiled"]
        tri_p, t_p, el_p = results["python"]
        match = np.array_equal(tri_c, tri_p) and np.array_equal(t_c, t_p)
        print(f"backends agree: {match}; speedup: {el_p / el_c:.1f}x")


if __name__ == "__main__":
    main()
