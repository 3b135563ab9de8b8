"""Triangle mesh with per-face organ and instance labels."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _ply
from .cloud import LabeledCloud
from .errors import EmptyInput, SchemaError


@dataclass
class TriMesh:
    """Indexed triangle mesh; every face carries (organ_id, instance_id)."""

    vertices: np.ndarray   # (V, 3) float32
    faces: np.ndarray      # (F, 3) int32 vertex indices
    organ_id: np.ndarray   # (F,) int32
    instance_id: np.ndarray  # (F,) int32

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float32).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int32).reshape(-1, 3)
        self.organ_id = np.asarray(self.organ_id, dtype=np.int32).reshape(-1)
        self.instance_id = np.asarray(self.instance_id, dtype=np.int32).reshape(-1)
        if len(self.organ_id) != len(self.faces) or len(self.instance_id) != len(self.faces):
            raise SchemaError("face label arrays do not match face count")
        if len(self.faces) and self.faces.max() >= len(self.vertices):
            raise SchemaError("face references a missing vertex")

    def __len__(self) -> int:
        return len(self.faces)

    def triangles(self) -> np.ndarray:
        """(F, 3, 3) float64 corner coordinates."""
        return self.vertices.astype(np.float64)[self.faces]

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        if len(self.vertices) == 0:
            raise EmptyInput("mesh has no vertices")
        v = self.vertices.astype(np.float64)
        return v.min(axis=0), v.max(axis=0)

    def face_areas(self) -> np.ndarray:
        tri = self.triangles()
        cross = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        return 0.5 * np.linalg.norm(cross, axis=1)

    def sample_surface(self, n: int, seed: int) -> LabeledCloud:
        """Area-weighted uniform surface sampling with labels from faces."""
        if len(self.faces) == 0:
            raise EmptyInput("mesh has no faces")
        rng = np.random.default_rng(seed)
        areas = self.face_areas()
        total = areas.sum()
        if total <= 0:
            raise EmptyInput("mesh has zero surface area")
        face_idx = rng.choice(len(areas), size=n, p=areas / total)
        u = rng.random(n)
        v = rng.random(n)
        flip = u + v > 1
        u[flip], v[flip] = 1 - u[flip], 1 - v[flip]
        tri = self.triangles()[face_idx]
        pts = (tri[:, 0]
               + u[:, None] * (tri[:, 1] - tri[:, 0])
               + v[:, None] * (tri[:, 2] - tri[:, 0]))
        return LabeledCloud(points=pts.astype(np.float32),
                            semantic=self.organ_id[face_idx],
                            instance=self.instance_id[face_idx])

    def save_ply(self, path, binary: bool = True) -> None:
        """Binary PLY with integer ``organ_id``/``instance_id`` face properties."""
        v = self.vertices
        _ply.write_ply(path, [
            ("vertex", [("x", v[:, 0]), ("y", v[:, 1]), ("z", v[:, 2])], {}),
            ("face", [("vertex_indices", self.faces),
                      ("organ_id", self.organ_id),
                      ("instance_id", self.instance_id)],
             {"list_props": {"vertex_indices"}}),
        ], binary=binary)

    @classmethod
    def load_ply(cls, path) -> "TriMesh":
        data = _ply.read_ply(path)
        if "vertex" not in data or "face" not in data:
            raise SchemaError(f"{path}: mesh PLY needs vertex and face elements")
        vert = data["vertex"]
        face = data["face"]
        for key in ("x", "y", "z"):
            if key not in vert:
                raise SchemaError(f"{path}: missing vertex property {key!r}")
        if "vertex_indices" not in face:
            raise SchemaError(f"{path}: missing face property vertex_indices")
        n_faces = len(face["vertex_indices"])
        organ = face.get("organ_id", np.zeros(n_faces, dtype=np.int32))
        inst = face.get("instance_id", np.zeros(n_faces, dtype=np.int32))
        vertices = np.stack([vert["x"], vert["y"], vert["z"]], axis=1)
        return cls(vertices=vertices, faces=face["vertex_indices"],
                   organ_id=organ, instance_id=inst)
