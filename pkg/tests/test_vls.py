import numpy as np
import pytest

import oracles
from plantforge import kernels
from plantforge.errors import EmptyInput, InvalidArgument
from plantforge.mesh import TriMesh
from plantforge.treegen import generate_tree
from plantforge.vls import (ScannerConfig, TriangleBVH, default_tls_positions,
                            grid_counts, grid_steps, ray_grid, scan)

from conftest import base_stats

BACKENDS = kernels.available_backends()


def quad(x0, x1, y0, y1, z, organ=0, instance=0):
    """Two triangles spanning an axis-aligned rectangle at height z
    (normal along +z)."""
    verts = np.array([[x0, y0, z], [x1, y0, z], [x1, y1, z], [x0, y1, z]],
                     dtype=np.float32)
    faces = np.array([[0, 1, 2], [0, 2, 3]], dtype=np.int32)
    return TriMesh(vertices=verts, faces=faces,
                   organ_id=np.full(2, organ, dtype=np.int32),
                   instance_id=np.full(2, instance, dtype=np.int32))


def merge_meshes(a, b):
    return TriMesh(
        vertices=np.concatenate([a.vertices, b.vertices]),
        faces=np.concatenate([a.faces, b.faces + len(a.vertices)]),
        organ_id=np.concatenate([a.organ_id, b.organ_id]),
        instance_id=np.concatenate([a.instance_id, b.instance_id]))


def facing_quad(z, size, organ=0, instance=0):
    """Quad in the plane at height z, centered on the z axis."""
    return quad(-size, size, -size, size, z, organ=organ, instance=instance)


class TestBVH:
    @pytest.mark.parametrize("backend", BACKENDS)
    def test_matches_exhaustive(self, backend, rng):
        cast = kernels.get_raycast(backend)
        for trial in range(5):
            tris = rng.random((int(rng.integers(5, 200)), 3, 3)) * 2 - 0.5
            bvh = kernels.build_bvh(tris)
            origins = rng.random((200, 3)) * 3 - 1
            dirs = rng.normal(size=(200, 3))
            dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
            tri, t = cast(bvh, origins, dirs, 10.0)
            tri_o, t_o = oracles.exhaustive_first_hit(tris, origins, dirs, 10.0)
            assert np.array_equal(tri, tri_o)
            assert np.array_equal(t, t_o)

    def test_backends_agree(self, rng):
        if len(BACKENDS) < 2:
            pytest.skip("compiled backend unavailable")
        tris = rng.random((300, 3, 3))
        bvh = kernels.build_bvh(tris)
        origins = rng.random((500, 3)) * 2 - 0.5
        dirs = rng.normal(size=(500, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        results = [kernels.get_raycast(b)(bvh, origins, dirs, 50.0)
                   for b in BACKENDS]
        assert np.array_equal(results[0][0], results[1][0])
        assert np.array_equal(results[0][1], results[1][1])

    def test_axis_parallel_rays(self):
        # Rays with exact zero components against axis-aligned boxes.
        mesh = facing_quad(z=1.0, size=1.0)
        bvh = TriangleBVH(mesh)
        origins = np.array([[0.0, 0.0, 0.0], [0.5, 0.5, 0.0],
                            [2.0, 0.0, 0.0]])
        dirs = np.array([[0.0, 0.0, 1.0]] * 3)
        tri, t = bvh.first_hit(origins, dirs, 10.0)
        assert tri[0] >= 0 and tri[1] >= 0
        assert tri[2] == -1
        assert t[0] == pytest.approx(1.0)

    def test_max_range_cutoff(self):
        mesh = facing_quad(z=5.0, size=1.0)
        bvh = TriangleBVH(mesh)
        o = np.zeros((1, 3))
        d = np.array([[0.0, 0.0, 1.0]])
        tri, _ = bvh.first_hit(o, d, 4.0)
        assert tri[0] == -1
        tri, _ = bvh.first_hit(o, d, 5.0)
        assert tri[0] >= 0


class TestScan:
    def test_grid_steps_resolution_ratio(self):
        # Paper resolutions: 0.3 vs 0.03 degrees gives exactly 10x per axis.
        for span in (360.0, 150.0, 90.0):
            assert grid_steps(span, 0.3) * 10 == grid_steps(span, 0.03)
            assert grid_steps(span, 0.3) * 5 == grid_steps(span, 0.06)
        assert grid_steps(360.0, 0.3) == 1200
        assert grid_steps(360.0, 0.06) == 6000

    def test_noiseless_points_on_plane(self):
        mesh = facing_quad(z=2.0, size=5.0)
        cfg = ScannerConfig(positions=[[0, 0, 0]], angular_resolution=2.0,
                            elevation_range=(30.0, 80.0), seed=0)
        cloud = scan(mesh, cfg)
        assert len(cloud) > 0
        assert np.abs(cloud.points[:, 2].astype(np.float64) - 2.0).max() <= 1e-6

    def test_occlusion_blocks_far_quad(self):
        near = facing_quad(z=1.0, size=8.0, organ=0, instance=0)
        far = facing_quad(z=2.0, size=2.0, organ=1, instance=1)
        mesh = merge_meshes(near, far)
        cfg = ScannerConfig(positions=[[0, 0, 0]], angular_resolution=1.0,
                            elevation_range=(20.0, 88.0), seed=0)
        cloud = scan(mesh, cfg)
        assert len(cloud) > 0
        assert not np.any(cloud.instance == 1)

    def test_label_inheritance(self, rng):
        tree = generate_tree(base_stats(rng), seed=0, max_order=2)
        positions = default_tls_positions(tree, 1, 2.0)
        cfg = ScannerConfig(positions=positions, angular_resolution=0.5,
                            elevation_range=(-30.0, 60.0), seed=2)
        mesh = tree.mesh
        bvh = TriangleBVH(mesh)
        dirs, _, n_el = ray_grid(cfg)
        origins = np.broadcast_to(positions[0], dirs.shape)
        tri, t = bvh.first_hit(origins, dirs, cfg.max_range)
        cloud = scan(tree, cfg)
        hits = tri >= 0
        assert len(cloud) == int(hits.sum())
        assert np.array_equal(cloud.semantic, mesh.organ_id[tri[hits]])
        assert np.array_equal(cloud.instance, mesh.instance_id[tri[hits]])

    def test_occlusion_soundness_along_rays(self, rng):
        tree = generate_tree(base_stats(rng), seed=1, max_order=2)
        positions = default_tls_positions(tree, 1, 2.0)
        cfg = ScannerConfig(positions=positions, angular_resolution=1.0,
                            elevation_range=(-20.0, 45.0), seed=0)
        cloud = scan(tree, cfg)
        origin = positions[0]
        pts = cloud.points.astype(np.float64)
        vecs = pts - origin
        dist = np.linalg.norm(vecs, axis=1)
        dirs = vecs / dist[:, None]
        tri, t = TriangleBVH(tree.mesh).first_hit(
            np.broadcast_to(origin, dirs.shape), dirs, cfg.max_range)
        # No stored point may lie strictly behind the first surface on its ray.
        assert np.all(dist <= t + 1e-5)

    def test_noise_is_seeded_and_along_ray(self, rng):
        mesh = facing_quad(z=3.0, size=10.0)
        cfg = dict(positions=[[0, 0, 0]], angular_resolution=2.0,
                   elevation_range=(30.0, 80.0), range_noise_sigma=0.01)
        a = scan(mesh, ScannerConfig(seed=5, **cfg))
        b = scan(mesh, ScannerConfig(seed=5, **cfg))
        c = scan(mesh, ScannerConfig(seed=6, **cfg))
        assert np.array_equal(a.points, b.points)
        assert not np.array_equal(a.points, c.points)
        # Noisy points stay on the ray: direction from origin unchanged.
        clean = scan(mesh, ScannerConfig(seed=5, positions=[[0, 0, 0]],
                                         angular_resolution=2.0,
                                         elevation_range=(30.0, 80.0)))
        d_noisy = a.points / np.linalg.norm(a.points, axis=1, keepdims=True)
        d_clean = clean.points / np.linalg.norm(clean.points, axis=1,
                                                keepdims=True)
        assert np.allclose(d_noisy, d_clean, atol=1e-5)

    def test_monotone_density(self, rng):
        tree = generate_tree(base_stats(rng), seed=3, max_order=1)
        positions = default_tls_positions(tree, 1, 2.0)
        counts = []
        for res in (2.0, 1.0, 0.5):
            cfg = ScannerConfig(positions=positions, angular_resolution=res,
                                elevation_range=(-20.0, 45.0), seed=0)
            counts.append(len(scan(tree, cfg)))
        assert counts[0] <= counts[1] <= counts[2]

    def test_empty_mesh(self):
        mesh = TriMesh(vertices=np.zeros((0, 3)), faces=np.zeros((0, 3)),
                       organ_id=np.zeros(0), instance_id=np.zeros(0))
        with pytest.raises(EmptyInput):
            scan(mesh, ScannerConfig(positions=[[0, 0, 0]],
                                     angular_resolution=1.0))


class TestPositions:
    def test_single_position_on_x_axis(self, rng):
        tree = generate_tree(base_stats(rng), seed=0, max_order=1)
        pos = default_tls_positions(tree, 1, 2.0)
        lo, hi = tree.mesh.bounds()
        center = (lo + hi) / 2
        assert pos.shape == (1, 3)
        assert pos[0, 1] == pytest.approx(center[1])
        assert pos[0, 0] > center[0]

    def test_four_positions_cardinal(self, rng):
        tree = generate_tree(base_stats(rng), seed=0, max_order=1)
        pos = default_tls_positions(tree, 4, 2.0)
        lo, hi = tree.mesh.bounds()
        center = (lo + hi) / 2
        angles = np.degrees(np.arctan2(pos[:, 1] - center[1],
                                       pos[:, 0] - center[0])) % 360
        assert np.allclose(sorted(angles), [0, 90, 180, 270], atol=1e-6)

    def test_circle_radius(self, rng):
        tree = generate_tree(base_stats(rng), seed=0, max_order=2)
        standoff = 1.7
        pos = default_tls_positions(tree, 5, standoff)
        lo, hi = tree.mesh.bounds()
        center = (lo + hi) / 2
        half_extent = max(hi[0] - lo[0], hi[1] - lo[1]) / 2
        dist = np.linalg.norm(pos[:, :2] - center[:2], axis=1)
        assert np.allclose(dist, half_extent + standoff, atol=1e-9)

    def test_bad_args(self, rng):
        tree = generate_tree(base_stats(rng), seed=0, max_order=1)
        with pytest.raises(InvalidArgument):
            default_tls_positions(tree, 0, 1.0)
        with pytest.raises(InvalidArgument):
            default_tls_positions(tree, 1, 0.0)
