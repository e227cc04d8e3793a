"""Triangle mesh container, face normals, and OBJ file IO."""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np


class MeshError(ValueError):
    pass


@dataclass(frozen=True)
class Mesh:
    """Immutable triangle mesh: vertices in meters, CCW-wound faces.

    Vertex array is (V, 3) float64, face array is (F, 3) int64 indices.
    """

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(np.asarray(self.vertices, dtype=np.float64))
        f = np.ascontiguousarray(np.asarray(self.faces, dtype=np.int64))
        if v.ndim != 2 or v.shape[1] != 3:
            raise MeshError(f"vertices must be (V, 3), got {v.shape}")
        if f.ndim != 2 or f.shape[1] != 3:
            raise MeshError(f"faces must be (F, 3), got {f.shape}")
        if v.shape[0] < 3:
            raise MeshError(f"need at least 3 vertices, got {v.shape[0]}")
        if f.shape[0] < 1:
            raise MeshError("need at least 1 face")
        if f.min() < 0 or f.max() >= v.shape[0]:
            raise MeshError("face index out of range")
        if (f[:, 0] == f[:, 1]).any() or (f[:, 1] == f[:, 2]).any() or (f[:, 0] == f[:, 2]).any():
            bad = int(np.nonzero((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2]))[0][0])
            raise MeshError(f"face {bad} repeats a vertex index")
        v.setflags(write=False)
        f.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)

    @property
    def num_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def num_faces(self) -> int:
        return self.faces.shape[0]

    def with_vertices(self, vertices: np.ndarray) -> "Mesh":
        """Same topology, new vertex positions."""
        return Mesh(vertices, self.faces)


def as_vertex_field(values: np.ndarray, num_vertices: int) -> np.ndarray:
    """Validate a per-vertex 3-vector field against a mesh's vertex count."""
    a = np.asarray(values, dtype=np.float64)
    if a.shape != (num_vertices, 3):
        raise MeshError(f"vertex field shape {a.shape} does not match ({num_vertices}, 3)")
    return a


# Fallback for zero-area faces; keeps training alive on transiently collapsed
# triangles instead of aborting.
DEGENERATE_NORMAL = np.array([0.0, 0.0, 1.0])

# Diagnostic counter, incremented per degenerate face seen.
degenerate_face_count = 0


def face_normals(mesh: Mesh, vertices: np.ndarray | None = None) -> np.ndarray:
    """Unit normals per face, normalize((b-a) x (c-a)) for face (a, b, c).

    Zero-area faces get the (0, 0, 1) fallback and bump the module-level
    diagnostic counter.  Pass `vertices` to evaluate on displaced positions
    with the mesh's topology.
    """
    global degenerate_face_count
    v = mesh.vertices if vertices is None else as_vertex_field(vertices, mesh.num_vertices)
    a = v[mesh.faces[:, 0]]
    b = v[mesh.faces[:, 1]]
    c = v[mesh.faces[:, 2]]
    n = np.cross(b - a, c - a)
    norms = np.linalg.norm(n, axis=1)
    degenerate = norms < 1e-300
    if degenerate.any():
        degenerate_face_count += int(degenerate.sum())
        n[degenerate] = DEGENERATE_NORMAL
        norms[degenerate] = 1.0
    return n / norms[:, None]


def load_mesh(path: str | os.PathLike) -> Mesh:
    """Load an OBJ mesh. Only `v` and triangular `f` records; others are skipped."""
    vertices: list[list[float]] = []
    faces: list[list[int]] = []
    warned: set[str] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            tag = parts[0]
            if tag == "v":
                if len(parts) < 4:
                    raise MeshError(f"{path}:{lineno}: malformed vertex record")
                vertices.append([float(parts[1]), float(parts[2]), float(parts[3])])
            elif tag == "f":
                idx = [int(p.split("/")[0]) for p in parts[1:]]
                if len(idx) != 3:
                    raise MeshError(
                        f"{path}:{lineno}: face {len(faces) + 1} has {len(idx)} vertices; only triangles supported"
                    )
                faces.append([i - 1 if i > 0 else len(vertices) + i for i in idx])
            elif tag not in warned:
                warned.add(tag)
                import warnings

                warnings.warn(f"ignoring OBJ record type '{tag}' in {path}")
    return Mesh(np.array(vertices), np.array(faces))


def save_mesh(mesh: Mesh, path: str | os.PathLike) -> None:
    """Write an OBJ file with full float64 precision (1-based face indices)."""
    with open(path, "w", encoding="utf-8") as fh:
        for x, y, z in mesh.vertices:
            fh.write(f"v {x:.17g} {y:.17g} {z:.17g}\n")
        for i, j, k in mesh.faces + 1:
            fh.write(f"f {i} {j} {k}\n")
