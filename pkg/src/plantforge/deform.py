"""Physics-based elastic deformation of labeled clouds on a voxel lattice.

The cloud is voxelized, each occupied voxel becomes an 8-node trilinear
hexahedral element with isotropic material from its majority point class,
and external forces at lattice vertices drive a linear elastostatic solve
(K u = f). Point displacements are trilinear interpolations of their
voxel's corner displacements, so labels and topology are untouched.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .cloud import LabeledCloud
from .errors import (InvalidArgument, LatticeCoverageError, MissingMaterial,
                     SolverFailure, UnconstrainedSystem)
from .geom import VoxelGrid, voxelize

# Corner offsets in local node order (matches the shape functions below).
_CORNERS = np.array([
    (0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0),
    (0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 1),
], dtype=np.int64)
_XI = 2.0 * _CORNERS - 1.0

SOLVER_RTOL = 1e-8
SOLVER_ITER_FACTOR = 10


@dataclass(frozen=True)
class Material:
    young_modulus: float
    poisson_ratio: float

    def validate(self) -> None:
        if self.young_modulus <= 0:
            raise InvalidArgument(f"Young's modulus must be positive, "
                                  f"got {self.young_modulus}")
        if not 0.0 < self.poisson_ratio < 0.5:
            raise InvalidArgument(f"Poisson ratio must be in (0, 0.5), "
                                  f"got {self.poisson_ratio}")


# Working defaults, dimensionally consistent but deliberately soft so that
# newton-scale forces produce visible bending; override per dataset.
WOOD = Material(young_modulus=1.0e6, poisson_ratio=0.30)
LEAF = Material(young_modulus=1.0e5, poisson_ratio=0.45)


@dataclass
class MaterialMap:
    """Per-class elastic properties."""

    materials: dict[int, Material]

    def __post_init__(self):
        for mat in self.materials.values():
            mat.validate()

    def get(self, class_id: int) -> Material:
        if class_id not in self.materials:
            raise MissingMaterial(f"no material for class {class_id}")
        return self.materials[class_id]

    @classmethod
    def default_for(cls, classes: dict[int, str]) -> "MaterialMap":
        """Leaf-named classes get the soft material, everything else wood."""
        return cls({cid: LEAF if "leaf" in name.lower() else WOOD
                    for cid, name in classes.items()})

    @classmethod
    def from_dict(cls, data: dict) -> "MaterialMap":
        return cls({int(k): Material(young_modulus=float(v["E"]),
                                     poisson_ratio=float(v["nu"]))
                    for k, v in data.items()})

    def to_dict(self) -> dict:
        return {str(k): {"E": m.young_modulus, "nu": m.poisson_ratio}
                for k, m in sorted(self.materials.items())}


@dataclass
class ForceSpec:
    """External forces at lattice vertices; components bounded in magnitude."""

    entries: list[tuple[int, np.ndarray]]
    bound: float

    def __post_init__(self):
        checked = []
        for vid, vec in self.entries:
            vec = np.asarray(vec, dtype=np.float64).reshape(3)
            if np.any(np.abs(vec) > self.bound + 1e-12):
                raise InvalidArgument(
                    f"force {vec.tolist()} exceeds bound {self.bound}")
            checked.append((int(vid), vec))
        self.entries = checked


@dataclass
class DeformField:
    """Per-lattice-vertex displacements; fixed vertices are exactly zero."""

    displacements: np.ndarray
    fixed: np.ndarray
    frozen_components: int = 0
    residual: float = 0.0


@dataclass
class Lattice:
    """Hexahedral elements over the occupied voxels of a cloud."""

    grid: VoxelGrid
    elem_cells: np.ndarray       # (E, 3) voxel indices
    elem_verts: np.ndarray       # (E, 8) vertex ids in local node order
    vert_coords: np.ndarray      # (V, 3)
    elem_young: np.ndarray       # (E,)
    elem_poisson: np.ndarray     # (E,)
    elem_class: np.ndarray       # (E,) majority semantic class
    cell_to_elem: dict = field(repr=False, default_factory=dict)

    @property
    def n_elements(self) -> int:
        return len(self.elem_cells)

    @property
    def n_vertices(self) -> int:
        return len(self.vert_coords)

    @property
    def voxel_size(self) -> float:
        return self.grid.voxel_size

    def lowest_layer_fixed(self) -> np.ndarray:
        """Boolean mask fixing all vertices of the lowest occupied z-layer."""
        k_min = self.elem_cells[:, 2].min()
        fixed = np.zeros(self.n_vertices, dtype=bool)
        for e in np.flatnonzero(self.elem_cells[:, 2] == k_min):
            fixed[self.elem_verts[e]] = True
        return fixed


def build_lattice(cloud: LabeledCloud, voxel_size: float,
                  materials: MaterialMap) -> Lattice:
    """One element per occupied voxel; material from the voxel's majority
    semantic class (ties take the lower class id)."""
    grid = voxelize(cloud, voxel_size)
    cells = np.array(sorted(grid.occupied), dtype=np.int64)
    n_elem = len(cells)

    corner_keys = cells[:, None, :] + _CORNERS[None, :, :]
    flat = corner_keys.reshape(-1, 3)
    uniq, inverse = np.unique(flat, axis=0, return_inverse=True)
    elem_verts = inverse.reshape(n_elem, 8).astype(np.int64)
    vert_coords = grid.origin + uniq * voxel_size

    young = np.empty(n_elem)
    poisson = np.empty(n_elem)
    elem_class = np.empty(n_elem, dtype=np.int64)
    sem = cloud.semantic
    for e, cell in enumerate(cells):
        members = grid.occupied[tuple(cell)]
        labels = sem[members]
        ids, counts = np.unique(labels, return_counts=True)
        cid = int(ids[counts == counts.max()].min())
        mat = materials.get(cid)
        young[e] = mat.young_modulus
        poisson[e] = mat.poisson_ratio
        elem_class[e] = cid
    cell_to_elem = {tuple(c): e for e, c in enumerate(cells)}
    return Lattice(grid=grid, elem_cells=cells, elem_verts=elem_verts,
                   vert_coords=vert_coords, elem_young=young,
                   elem_poisson=poisson, elem_class=elem_class,
                   cell_to_elem=cell_to_elem)


def element_stiffness(young: float, poisson: float, h: float) -> np.ndarray:
    """24x24 stiffness of a cube element (2x2x2 Gauss quadrature)."""
    return young * h * _unit_stiffness(poisson)


_UNIT_CACHE: dict[float, np.ndarray] = {}


def _unit_stiffness(poisson: float) -> np.ndarray:
    ke = _UNIT_CACHE.get(poisson)
    if ke is not None:
        return ke
    lam = poisson / ((1 + poisson) * (1 - 2 * poisson))
    mu = 1.0 / (2 * (1 + poisson))
    d_mat = np.zeros((6, 6))
    d_mat[:3, :3] = lam
    d_mat[np.diag_indices(3)] = lam + 2 * mu
    d_mat[3:, 3:] = np.eye(3) * mu

    g = 1.0 / np.sqrt(3.0)
    ke = np.zeros((24, 24))
    # Unit cube (h = 1): jacobian h/2 per axis, det = (1/2)^3, dN/dx = 2 dN/dxi.
    det_j = 0.125
    for gx in (-g, g):
        for gy in (-g, g):
            for gz in (-g, g):
                dn = np.empty((8, 3))
                for i in range(8):
                    xi, eta, zeta = _XI[i]
                    dn[i, 0] = 0.125 * xi * (1 + eta * gy) * (1 + zeta * gz)
                    dn[i, 1] = 0.125 * eta * (1 + xi * gx) * (1 + zeta * gz)
                    dn[i, 2] = 0.125 * zeta * (1 + xi * gx) * (1 + eta * gy)
                dn = dn * 2.0
                b_mat = np.zeros((6, 24))
                for i in range(8):
                    bx, by, bz = dn[i]
                    col = 3 * i
                    b_mat[0, col] = bx
                    b_mat[1, col + 1] = by
                    b_mat[2, col + 2] = bz
                    b_mat[3, col] = by
                    b_mat[3, col + 1] = bx
                    b_mat[4, col + 1] = bz
                    b_mat[4, col + 2] = by
                    b_mat[5, col] = bz
                    b_mat[5, col + 2] = bx
                ke += b_mat.T @ d_mat @ b_mat * det_j
    ke = (ke + ke.T) / 2.0
    _UNIT_CACHE[poisson] = ke
    return ke


def assemble_system(lattice: Lattice, fixed: np.ndarray):
    """Global stiffness over free DOFs plus the vertex -> DOF mapping.

    Returns (K csr, free_vertex_ids, frozen_component_count). Vertices in
    connected components without any fixed vertex are frozen out to avoid
    singular blocks.
    """
    fixed = np.asarray(fixed, dtype=bool)
    if fixed.shape != (lattice.n_vertices,):
        raise InvalidArgument("fixed mask length does not match lattice vertices")
    if not fixed.any():
        raise UnconstrainedSystem("no fixed vertex; system has rigid-body modes")

    frozen, n_frozen_components = _frozen_vertices(lattice, fixed)
    free = ~(fixed | frozen)
    free_ids = np.flatnonzero(free)
    dof_of_vertex = np.full(lattice.n_vertices, -1, dtype=np.int64)
    dof_of_vertex[free_ids] = np.arange(len(free_ids))

    n_dof = 3 * len(free_ids)
    rows, cols, vals = [], [], []
    h = lattice.voxel_size
    for e in range(lattice.n_elements):
        ke = element_stiffness(lattice.elem_young[e], lattice.elem_poisson[e], h)
        verts = lattice.elem_verts[e]
        dofs = np.repeat(dof_of_vertex[verts] * 3, 3)
        dofs = dofs + np.tile(np.arange(3), 8)
        keep = np.repeat(dof_of_vertex[verts] >= 0, 3)
        ii = np.repeat(dofs, 24).reshape(24, 24)
        jj = np.tile(dofs, 24).reshape(24, 24)
        mask = keep[:, None] & keep[None, :]
        rows.append(ii[mask])
        cols.append(jj[mask])
        vals.append(ke[mask])
    k_mat = sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n_dof, n_dof)).tocsr()
    return k_mat, free_ids, n_frozen_components


def _frozen_vertices(lattice: Lattice, fixed: np.ndarray):
    """Vertices belonging only to under-constrained components.

    Components are taken over face adjacency: elements meeting only at an
    edge or corner hinge freely, so a component counts as anchored only
    when its fixed vertices span three or more non-collinear points, which
    kills every rigid mode. Everything else is frozen to keep the reduced
    system positive definite.
    """
    n_elem = lattice.n_elements
    rows, cols = [], []
    for axis in range(3):
        offset = np.zeros(3, dtype=np.int64)
        offset[axis] = 1
        for e in range(n_elem):
            nb = lattice.cell_to_elem.get(tuple(lattice.elem_cells[e] + offset))
            if nb is not None:
                rows.append(e)
                cols.append(nb)
    graph = sparse.coo_matrix(
        (np.ones(len(rows)), (rows, cols)), shape=(n_elem, n_elem))
    n_comp, labels = sparse.csgraph.connected_components(graph, directed=False)

    frozen = np.ones(lattice.n_vertices, dtype=bool)
    n_anchored = 0
    for comp in range(n_comp):
        verts = np.unique(lattice.elem_verts[labels == comp])
        anchors = verts[fixed[verts]]
        if len(anchors) >= 3:
            centered = (lattice.vert_coords[anchors]
                        - lattice.vert_coords[anchors].mean(axis=0))
            if np.linalg.matrix_rank(centered, tol=1e-9 * lattice.voxel_size) >= 2:
                frozen[verts] = False
                n_anchored += 1
    frozen &= ~np.asarray(fixed, dtype=bool)
    return frozen, int(n_comp - n_anchored)


def solve_elastic(lattice: Lattice, forces: ForceSpec,
                  fixed: np.ndarray | None = None) -> DeformField:
    """Solve K u = f with fixed vertices constrained to zero.

    Jacobi-preconditioned conjugate gradient, relative residual 1e-8,
    iteration cap 10x the DOF count.
    """
    if fixed is None:
        fixed = lattice.lowest_layer_fixed()
    k_mat, free_ids, n_frozen = assemble_system(lattice, fixed)
    n_dof = k_mat.shape[0]
    dof_of_vertex = np.full(lattice.n_vertices, -1, dtype=np.int64)
    dof_of_vertex[free_ids] = np.arange(len(free_ids))

    f_vec = np.zeros(n_dof)
    for vid, vec in forces.entries:
        if not 0 <= vid < lattice.n_vertices:
            raise InvalidArgument(f"force vertex {vid} out of range")
        dof = dof_of_vertex[vid]
        if dof >= 0:
            f_vec[3 * dof:3 * dof + 3] += vec

    u_free, residual, converged = _pcg(
        k_mat, f_vec, rtol=SOLVER_RTOL, maxiter=SOLVER_ITER_FACTOR * max(n_dof, 1))
    if not converged:
        raise SolverFailure(f"PCG did not converge: relative residual {residual:.3e}")
    disp = np.zeros((lattice.n_vertices, 3))
    disp[free_ids] = u_free.reshape(-1, 3)
    return DeformField(displacements=disp, fixed=np.asarray(fixed, dtype=bool),
                       frozen_components=n_frozen, residual=residual)


def _pcg(a_mat, b_vec, rtol: float, maxiter: int):
    b_norm = np.linalg.norm(b_vec)
    x = np.zeros_like(b_vec)
    if b_norm == 0.0:
        return x, 0.0, True
    diag = a_mat.diagonal()
    inv_diag = np.where(diag > 0, 1.0 / np.where(diag == 0, 1.0, diag), 1.0)
    r = b_vec.copy()
    z = inv_diag * r
    p = z.copy()
    rz = float(r @ z)
    for _ in range(maxiter):
        ap = a_mat @ p
        alpha = rz / float(p @ ap)
        x += alpha * p
        r -= alpha * ap
        r_norm = np.linalg.norm(r)
        if r_norm <= rtol * b_norm:
            return x, r_norm / b_norm, True
        z = inv_diag * r
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x, np.linalg.norm(r) / b_norm, False


def apply_deformation(cloud: LabeledCloud, lattice: Lattice,
                      deform: DeformField) -> LabeledCloud:
    """Displace each point by the trilinear blend of its voxel's corners.

    A zero field returns the input cloud unchanged (bit-exact identity).
    """
    if not np.any(deform.displacements):
        return cloud
    cells = lattice.grid.cell_of(cloud.points)
    pts = cloud.points.astype(np.float64)
    elems = np.empty(len(pts), dtype=np.int64)
    for i, cell in enumerate(map(tuple, cells)):
        e = lattice.cell_to_elem.get(cell)
        if e is None:
            raise LatticeCoverageError(
                f"point {i} at {pts[i].tolist()} lies outside the lattice")
        elems[i] = e

    local = (pts - lattice.grid.origin) / lattice.voxel_size - cells
    local = np.clip(local, 0.0, 1.0)
    axis_w = np.where(_CORNERS[None, :, :] == 1,
                      local[:, None, :], 1.0 - local[:, None, :])
    weights = axis_w.prod(axis=2)                      # (n, 8)
    corner_disp = deform.displacements[lattice.elem_verts[elems]]  # (n, 8, 3)
    disp = np.einsum("nc,ncd->nd", weights, corner_disp)
    return cloud.with_points((pts + disp).astype(np.float32))


def augment(cloud: LabeledCloud, n_variants: int, voxel_size: float,
            materials: MaterialMap, force_bound: float, seed: int,
            forces_per_variant: int = 8,
            fixed: np.ndarray | None = None) -> list[LabeledCloud]:
    """Generate deformed variants with seeded random vertex forces.

    Per variant, ``forces_per_variant`` non-fixed vertices receive force
    vectors with components uniform in [-force_bound, +force_bound]. The
    lowest occupied voxel layer is fixed unless a mask is supplied.
    """
    if n_variants < 1:
        raise InvalidArgument("n_variants must be >= 1")
    if force_bound < 0:
        raise InvalidArgument("force_bound must be >= 0")
    lattice = build_lattice(cloud, voxel_size, materials)
    if fixed is None:
        fixed = lattice.lowest_layer_fixed()
    candidates = np.flatnonzero(~np.asarray(fixed, dtype=bool))
    if candidates.size == 0:
        raise UnconstrainedSystem("every lattice vertex is fixed")
    variants = []
    for v in range(n_variants):
        rng = np.random.default_rng([seed, v])
        n_pick = min(forces_per_variant, len(candidates))
        verts = rng.choice(candidates, size=n_pick, replace=False)
        vecs = rng.uniform(-force_bound, force_bound, size=(n_pick, 3))
        forces = ForceSpec(entries=list(zip(verts.tolist(), vecs)),
                           bound=force_bound)
        deform = solve_elastic(lattice, forces, fixed=fixed)
        variants.append(apply_deformation(cloud, lattice, deform))
    return variants
