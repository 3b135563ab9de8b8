import numpy as np
import pytest

from plantforge.cloud import LabeledCloud
from plantforge.deform import (LEAF, WOOD, DeformField, ForceSpec, Material,
                               MaterialMap, apply_deformation,
                               assemble_system, augment, build_lattice,
                               element_stiffness, solve_elastic)
from plantforge.errors import (InvalidArgument, LatticeCoverageError,
                               MissingMaterial, UnconstrainedSystem)

MATERIALS = MaterialMap({0: WOOD, 1: LEAF})


def cloud_from_cells(cells, jitter_rng=None, voxel=0.1, labels=None):
    """A cloud with a few points inside each requested voxel cell."""
    pts, sem = [], []
    for idx, cell in enumerate(cells):
        base = np.asarray(cell, dtype=np.float64) * voxel
        offsets = (np.array([[0.25, 0.25, 0.25], [0.75, 0.5, 0.5],
                             [0.5, 0.75, 0.25]]) * voxel)
        if jitter_rng is not None:
            offsets = jitter_rng.uniform(0.05, 0.95, (3, 3)) * voxel
        pts.append(base + offsets)
        sem.extend([labels[idx] if labels else 0] * 3)
    pts = np.concatenate(pts).astype(np.float32)
    return LabeledCloud(points=pts, semantic=np.array(sem, dtype=np.int32),
                        instance=np.zeros(len(pts), dtype=np.int32))


def random_anchored_cells(rng, n_extra):
    """Face-connected random cell set grown from the origin (anchored)."""
    cells = {(0, 0, 0)}
    frontier = [(0, 0, 0)]
    moves = np.array([[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0],
                      [0, 0, 1], [0, 0, -1]])
    while len(cells) < n_extra + 1:
        base = frontier[rng.integers(len(frontier))]
        step = moves[rng.integers(6)]
        new = tuple(int(v) for v in (np.array(base) + step))
        if new[2] < 0:
            continue
        if new not in cells:
            cells.add(new)
            frontier.append(new)
    cells.add((0, 0, 1))  # guarantee a free (non-ground) layer
    return sorted(cells)


class TestLattice:
    def test_single_voxel(self):
        cloud = cloud_from_cells([(0, 0, 0)])
        lat = build_lattice(cloud, 0.1, MATERIALS)
        assert lat.n_elements == 1
        assert lat.n_vertices == 8

    def test_majority_material(self):
        pts = np.array([[0.01, 0.01, 0.01], [0.02, 0.02, 0.02],
                        [0.03, 0.03, 0.03], [0.04, 0.04, 0.04],
                        [0.05, 0.05, 0.05]], dtype=np.float32)
        sem = np.array([0, 0, 0, 1, 1], dtype=np.int32)
        cloud = LabeledCloud(points=pts, semantic=sem,
                             instance=np.full(5, -1, np.int32))
        lat = build_lattice(cloud, 0.1, MATERIALS)
        assert lat.elem_class[0] == 0
        assert lat.elem_young[0] == WOOD.young_modulus

    def test_majority_tie_takes_lower_class(self):
        pts = np.array([[0.01] * 3, [0.02] * 3, [0.03] * 3, [0.04] * 3],
                       dtype=np.float32)
        sem = np.array([1, 1, 0, 0], dtype=np.int32)
        cloud = LabeledCloud(points=pts, semantic=sem,
                             instance=np.full(4, -1, np.int32))
        lat = build_lattice(cloud, 0.1, MATERIALS)
        assert lat.elem_class[0] == 0

    def test_shared_face_topology(self):
        cloud = cloud_from_cells([(0, 0, 0), (1, 0, 0)])
        lat = build_lattice(cloud, 0.1, MATERIALS)
        assert lat.n_elements == 2
        assert lat.n_vertices == 12
        shared = set(lat.elem_verts[0]) & set(lat.elem_verts[1])
        assert len(shared) == 4

    def test_missing_material(self):
        cloud = cloud_from_cells([(0, 0, 0)], labels=[2])
        with pytest.raises(MissingMaterial):
            build_lattice(cloud, 0.1, MATERIALS)


class TestElementStiffness:
    def test_symmetry_and_psd(self, rng):
        for nu in (0.2, 0.3, 0.45):
            ke = element_stiffness(2.0e6, nu, 0.05)
            assert np.abs(ke - ke.T).max() <= 1e-10 * np.abs(ke).max()
            eigs = np.linalg.eigvalsh(ke)
            assert eigs.min() >= -1e-8 * eigs.max()
            for _ in range(5):
                u = rng.normal(size=24)
                assert u @ ke @ u >= -1e-8 * eigs.max()

    def test_rigid_modes_in_null_space(self):
        ke = element_stiffness(1e6, 0.3, 0.1)
        for axis in range(3):
            u = np.zeros(24)
            u[axis::3] = 1.0
            assert np.abs(ke @ u).max() <= 1e-6


class TestSolve:
    def test_zero_force_zero_displacement(self):
        cloud = cloud_from_cells([(0, 0, 0), (0, 0, 1)])
        lat = build_lattice(cloud, 0.1, MATERIALS)
        field = solve_elastic(lat, ForceSpec(entries=[], bound=1.0))
        assert not np.any(field.displacements)

    def test_linearity(self, rng):
        for trial in range(5):
            cells = random_anchored_cells(rng, int(rng.integers(3, 12)))
            cloud = cloud_from_cells(cells, jitter_rng=rng)
            lat = build_lattice(cloud, 0.1, MATERIALS)
            fixed = lat.lowest_layer_fixed()
            free = np.flatnonzero(~fixed)
            vid = int(free[rng.integers(len(free))])
            vec = rng.uniform(-2, 2, 3)
            u1 = solve_elastic(lat, ForceSpec([(vid, vec)], bound=5.0),
                               fixed).displacements
            u2 = solve_elastic(lat, ForceSpec([(vid, 2 * vec)], bound=10.0),
                               fixed).displacements
            scale = np.abs(u1).max()
            assert scale > 0
            assert np.abs(u2 - 2 * u1).max() <= 1e-8 * 2 * scale

    def test_matches_dense_direct_solve(self, rng):
        for cells in ([(0, 0, 0)], [(0, 0, 0), (1, 0, 0)],
                      [(0, 0, 0), (1, 0, 0), (0, 1, 0), (0, 0, 1)]):
            cloud = cloud_from_cells(cells)
            lat = build_lattice(cloud, 0.1, MATERIALS)
            fixed = lat.lowest_layer_fixed()
            if fixed.all():
                fixed = np.zeros(lat.n_vertices, dtype=bool)
                fixed[lat.elem_verts[0][:4]] = True
            k_mat, free_ids, _ = assemble_system(lat, fixed)
            free = np.flatnonzero(~fixed)
            vid = int(free[-1])
            vec = np.array([0.3, -0.2, 0.4])
            field = solve_elastic(lat, ForceSpec([(vid, vec)], bound=1.0), fixed)
            f_vec = np.zeros(k_mat.shape[0])
            pos = np.flatnonzero(free_ids == vid)
            assert len(pos) == 1
            f_vec[3 * pos[0]:3 * pos[0] + 3] = vec
            u_dense = np.linalg.solve(k_mat.toarray(), f_vec)
            got = field.displacements[free_ids].reshape(-1)
            denom = np.abs(u_dense).max()
            assert np.abs(got - u_dense).max() <= 1e-8 * denom

    def test_unconstrained_rejected(self):
        cloud = cloud_from_cells([(0, 0, 0)])
        lat = build_lattice(cloud, 0.1, MATERIALS)
        with pytest.raises(UnconstrainedSystem):
            solve_elastic(lat, ForceSpec([], bound=1.0),
                          fixed=np.zeros(lat.n_vertices, dtype=bool))

    def test_global_stiffness_symmetric(self, rng):
        cells = random_anchored_cells(rng, 10)
        cloud = cloud_from_cells(cells, jitter_rng=rng)
        lat = build_lattice(cloud, 0.1, MATERIALS)
        k_mat, _, _ = assemble_system(lat, lat.lowest_layer_fixed())
        diff = (k_mat - k_mat.T)
        assert np.abs(diff.toarray()).max() <= 1e-10 * np.abs(k_mat.toarray()).max()

    def test_force_bound_enforced(self):
        with pytest.raises(InvalidArgument):
            ForceSpec([(0, np.array([6.0, 0, 0]))], bound=5.0)

    def test_hinged_component_frozen(self):
        # Two voxels sharing only a corner: the top one must freeze, not
        # blow up the solver.
        pts = np.array([[0.0, 0.0, 0.0], [0.05, 0.05, 0.05],
                        [0.15, 0.15, 0.15], [0.19, 0.19, 0.19]],
                       dtype=np.float32)
        cloud = LabeledCloud(points=pts, semantic=np.zeros(4, np.int32),
                             instance=np.zeros(4, np.int32))
        lat = build_lattice(cloud, 0.1, MATERIALS)
        assert sorted(map(tuple, lat.elem_cells)) == [(0, 0, 0), (1, 1, 1)]
        fixed = lat.lowest_layer_fixed()
        k_mat, free_ids, n_frozen = assemble_system(lat, fixed)
        assert n_frozen == 1
        field = solve_elastic(lat, ForceSpec([], bound=1.0), fixed)
        assert field.frozen_components == 1


class TestApply:
    def test_zero_field_bit_exact(self, rng):
        cloud = cloud_from_cells([(0, 0, 0), (0, 1, 0)], jitter_rng=rng)
        lat = build_lattice(cloud, 0.1, MATERIALS)
        field = DeformField(displacements=np.zeros((lat.n_vertices, 3)),
                            fixed=lat.lowest_layer_fixed())
        out = apply_deformation(cloud, lat, field)
        assert out.points.tobytes() == cloud.points.tobytes()

    def test_uniform_field_translates(self, rng):
        cloud = cloud_from_cells([(0, 0, 0), (1, 0, 0)], jitter_rng=rng)
        lat = build_lattice(cloud, 0.1, MATERIALS)
        u0 = np.array([0.01, -0.02, 0.005])
        field = DeformField(
            displacements=np.tile(u0, (lat.n_vertices, 1)),
            fixed=np.zeros(lat.n_vertices, dtype=bool))
        out = apply_deformation(cloud, lat, field)
        moved = out.points.astype(np.float64) - cloud.points.astype(np.float64)
        assert np.abs(moved - u0).max() <= 1e-7

    def test_trilinear_blend_matches_manual(self, rng):
        cloud = cloud_from_cells([(0, 0, 0)], jitter_rng=rng)
        lat = build_lattice(cloud, 0.1, MATERIALS)
        disp = rng.normal(0, 0.01, (lat.n_vertices, 3))
        field = DeformField(displacements=disp,
                            fixed=np.zeros(lat.n_vertices, dtype=bool))
        out = apply_deformation(cloud, lat, field)
        coords = lat.vert_coords
        for i, p in enumerate(cloud.points.astype(np.float64)):
            f = (p - lat.grid.origin) / lat.voxel_size
            fx, fy, fz = f - np.floor(f)
            expected = np.zeros(3)
            for corner, vid in zip(
                    [(0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0),
                     (0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 1)],
                    lat.elem_verts[0]):
                w = ((fx if corner[0] else 1 - fx)
                     * (fy if corner[1] else 1 - fy)
                     * (fz if corner[2] else 1 - fz))
                expected += w * disp[vid]
            got = out.points[i].astype(np.float64) - p
            assert np.abs(got - expected).max() <= 1e-7

    def test_outside_lattice_rejected(self, rng):
        cloud = cloud_from_cells([(0, 0, 0)], jitter_rng=rng)
        lat = build_lattice(cloud, 0.1, MATERIALS)
        other = LabeledCloud(points=np.array([[0.05, 0.05, 5.0]], np.float32),
                             semantic=np.zeros(1, np.int32),
                             instance=np.zeros(1, np.int32))
        field = DeformField(displacements=np.ones((lat.n_vertices, 3)),
                            fixed=np.zeros(lat.n_vertices, dtype=bool))
        with pytest.raises(LatticeCoverageError):
            apply_deformation(other, lat, field)


class TestAugment:
    def test_zero_bound_identity(self, rng):
        cloud = cloud_from_cells([(0, 0, 0), (0, 0, 1), (0, 0, 2)],
                                 jitter_rng=rng)
        variants = augment(cloud, 3, 0.1, MATERIALS, force_bound=0.0, seed=1)
        for v in variants:
            assert v.points.tobytes() == cloud.points.tobytes()
            assert np.array_equal(v.semantic, cloud.semantic)

    def test_labels_and_count_invariant(self, rng):
        cells = random_anchored_cells(rng, 15)
        cloud = cloud_from_cells(cells, jitter_rng=rng)
        variants = augment(cloud, 3, 0.1, MATERIALS, force_bound=5.0, seed=2)
        for v in variants:
            assert len(v) == len(cloud)
            assert np.array_equal(v.semantic, cloud.semantic)
            assert np.array_equal(v.instance, cloud.instance)

    def test_deterministic(self, rng):
        cells = random_anchored_cells(rng, 8)
        cloud = cloud_from_cells(cells, jitter_rng=rng)
        a = augment(cloud, 2, 0.1, MATERIALS, force_bound=3.0, seed=5)
        b = augment(cloud, 2, 0.1, MATERIALS, force_bound=3.0, seed=5)
        for va, vb in zip(a, b):
            assert va.points.tobytes() == vb.points.tobytes()

    def test_variants_differ(self, rng):
        cells = random_anchored_cells(rng, 8)
        cloud = cloud_from_cells(cells, jitter_rng=rng)
        variants = augment(cloud, 2, 0.1, MATERIALS, force_bound=3.0, seed=5)
        assert not np.array_equal(variants[0].points, variants[1].points)

    def test_material_map_validation(self):
        with pytest.raises(InvalidArgument):
            Material(-1.0, 0.3).validate()
        with pytest.raises(InvalidArgument):
            Material(1e6, 0.5).validate()

    def test_default_material_heuristic(self):
        mm = MaterialMap.default_for({0: "trunk", 1: "Leaf"})
        assert mm.get(0) == WOOD
        assert mm.get(1) == LEAF
