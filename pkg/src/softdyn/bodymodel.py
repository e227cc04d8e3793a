"""Parametric articulated body: blendshapes, linear blend skinning and its
inverse, soft-tissue composition, and ground-truth displacement extraction.

Also provides a procedurally generated humanoid test template (a stand-in for
licensed body-model assets) and the JSON+binary template container.
"""

from __future__ import annotations

import json
import os
import warnings
from dataclasses import dataclass, field

import numpy as np

from .geometry import Mesh, MeshError, as_vertex_field


class BodyModelError(ValueError):
    pass


class SingularBlendError(RuntimeError):
    """A vertex's blended skinning matrix is numerically singular."""


# ---- parameters -------------------------------------------------------------

BETA_CLAMP = 4.0


@dataclass(frozen=True)
class ShapeParams:
    beta: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.beta, dtype=np.float64).ravel()
        if not np.all(np.isfinite(b)):
            raise BodyModelError("shape coefficients must be finite")
        b.setflags(write=False)
        object.__setattr__(self, "beta", b)

    def clamped(self) -> np.ndarray:
        """Coefficients clamped to +-4 for evaluation; warns when clipping."""
        if np.abs(self.beta).max(initial=0.0) > BETA_CLAMP:
            warnings.warn(f"shape coefficients outside +-{BETA_CLAMP}, clamping")
            return np.clip(self.beta, -BETA_CLAMP, BETA_CLAMP)
        return self.beta

    @staticmethod
    def zeros(n: int = 10) -> "ShapeParams":
        return ShapeParams(np.zeros(n))


@dataclass(frozen=True)
class PoseParams:
    """Per-joint axis-angle rotations plus a root translation, both in
    template units.  Per-joint angles must stay below pi; wraparound
    ambiguity is rejected at ingest."""

    theta: np.ndarray
    root_translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        th = np.asarray(self.theta, dtype=np.float64)
        x = np.asarray(self.root_translation, dtype=np.float64).ravel()
        if th.ndim != 2 or th.shape[1] != 3:
            raise BodyModelError(f"theta must be (J, 3), got {th.shape}")
        if x.shape != (3,):
            raise BodyModelError("root_translation must be a 3-vector")
        if not (np.all(np.isfinite(th)) and np.all(np.isfinite(x))):
            raise BodyModelError("pose parameters must be finite")
        angles = np.linalg.norm(th, axis=1)
        if angles.max(initial=0.0) >= np.pi:
            j = int(np.argmax(angles))
            raise BodyModelError(f"joint {j} rotation angle {angles[j]:.4f} >= pi")
        th.setflags(write=False)
        x.setflags(write=False)
        object.__setattr__(self, "theta", th)
        object.__setattr__(self, "root_translation", x)

    @staticmethod
    def rest(num_joints: int) -> "PoseParams":
        return PoseParams(np.zeros((num_joints, 3)))


# ---- rotations --------------------------------------------------------------

def rodrigues(axis_angle: np.ndarray) -> np.ndarray:
    """Axis-angle vectors (..., 3) to rotation matrices (..., 3, 3).

    Uses the series forms of sin(t)/t and (1-cos t)/t^2 near zero, so the
    rest pose maps exactly to the identity.
    """
    aa = np.asarray(axis_angle, dtype=np.float64)
    t2 = (aa * aa).sum(axis=-1)
    t = np.sqrt(t2)
    small = t < 1e-6
    with np.errstate(invalid="ignore", divide="ignore"):
        a = np.where(small, 1.0 - t2 / 6.0, np.sin(t) / np.where(small, 1.0, t))
        b = np.where(small, 0.5 - t2 / 24.0, (1.0 - np.cos(t)) / np.where(small, 1.0, t2))
    x, y, z = aa[..., 0], aa[..., 1], aa[..., 2]
    zero = np.zeros_like(x)
    K = np.stack([
        np.stack([zero, -z, y], axis=-1),
        np.stack([z, zero, -x], axis=-1),
        np.stack([-y, x, zero], axis=-1),
    ], axis=-2)
    eye = np.broadcast_to(np.eye(3), K.shape)
    return eye + a[..., None, None] * K + b[..., None, None] * (K @ K)


# ---- template ---------------------------------------------------------------

@dataclass(frozen=True)
class BodyTemplate:
    """Static assets of the body model.

    shape_basis is (num_shape, V, 3); pose_basis is (9*(J-1), V, 3), one
    basis vector per rotation-matrix element of each non-root joint.
    """

    rest_mesh: Mesh
    joint_regressor: np.ndarray   # (J, V)
    parent: np.ndarray            # (J,), parent[0] == -1
    skin_weights: np.ndarray      # (V, J)
    shape_basis: np.ndarray       # (num_shape, V, 3)
    pose_basis: np.ndarray        # (9*(J-1), V, 3)
    mirror_map: np.ndarray        # (V,)
    joint_mirror: np.ndarray      # (J,)

    def __post_init__(self):
        V = self.rest_mesh.num_vertices
        for name in ("joint_regressor", "parent", "skin_weights", "shape_basis",
                     "pose_basis", "mirror_map", "joint_mirror"):
            arr = np.ascontiguousarray(np.asarray(getattr(self, name)))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        J = self.joint_regressor.shape[0]
        if self.parent.shape != (J,) or self.parent[0] != -1:
            raise BodyModelError("parent must be (J,) with parent[0] == -1")
        # tree check: every non-root parent precedes its child
        if J > 1 and not np.all(self.parent[1:] < np.arange(1, J)):
            raise BodyModelError("parent array must be topologically ordered (acyclic)")
        if self.skin_weights.shape != (V, J):
            raise BodyModelError(f"skin_weights must be ({V}, {J})")
        if self.skin_weights.min() < 0:
            raise BodyModelError("skin weights must be non-negative")
        if np.abs(self.skin_weights.sum(axis=1) - 1.0).max() > 1e-6:
            raise BodyModelError("skin weight rows must sum to 1")
        if self.pose_basis.shape[0] != 9 * (J - 1):
            raise BodyModelError(f"pose_basis must have 9*(J-1)={9 * (J - 1)} rows")
        if not np.array_equal(self.mirror_map[self.mirror_map], np.arange(V)):
            raise BodyModelError("mirror_map must be an involution")
        if not np.array_equal(self.joint_mirror[self.joint_mirror], np.arange(J)):
            raise BodyModelError("joint_mirror must be an involution")

    @property
    def num_vertices(self) -> int:
        return self.rest_mesh.num_vertices

    @property
    def num_joints(self) -> int:
        return self.joint_regressor.shape[0]

    @property
    def num_shape(self) -> int:
        return self.shape_basis.shape[0]

    def rest_pose(self) -> PoseParams:
        return PoseParams.rest(self.num_joints)


def pose_feature(tpl: BodyTemplate, pose: PoseParams) -> np.ndarray:
    """Vectorized (R(theta_j) - I) over non-root joints; length 9*(J-1)."""
    R = rodrigues(pose.theta[1:])
    return (R - np.eye(3)).reshape(-1)


def shape_offset(tpl: BodyTemplate, shape: ShapeParams) -> np.ndarray:
    beta = shape.clamped()
    if beta.shape[0] != tpl.num_shape:
        raise BodyModelError(f"expected {tpl.num_shape} shape coefficients, got {beta.shape[0]}")
    return np.tensordot(beta, tpl.shape_basis, axes=1)


def unposed_body(tpl: BodyTemplate, shape: ShapeParams, pose: PoseParams,
                 displacement: np.ndarray | None = None) -> Mesh:
    """Rest template + shape blendshapes + pose correctives + soft tissue."""
    v = tpl.rest_mesh.vertices + shape_offset(tpl, shape)
    v = v + np.tensordot(pose_feature(tpl, pose), tpl.pose_basis, axes=1)
    if displacement is not None:
        v = v + as_vertex_field(displacement, tpl.num_vertices)
    return tpl.rest_mesh.with_vertices(v)


def regress_joints(tpl: BodyTemplate, shape: ShapeParams) -> np.ndarray:
    """Rest joint positions from the shape-deformed (not displaced) template."""
    return tpl.joint_regressor @ (tpl.rest_mesh.vertices + shape_offset(tpl, shape))


def skinning_transforms(tpl: BodyTemplate, shape: ShapeParams, pose: PoseParams) -> np.ndarray:
    """World transform of each joint relative to rest, as (J, 3, 4) affines."""
    joints = regress_joints(tpl, shape)
    R = rodrigues(pose.theta)
    J = tpl.num_joints
    world_R = np.empty((J, 3, 3))
    world_t = np.empty((J, 3))
    for j in range(J):
        p = tpl.parent[j]
        local_t = joints[j] - (joints[p] if p >= 0 else 0.0)
        if p < 0:
            world_R[j] = R[j]
            world_t[j] = local_t
        else:
            world_R[j] = world_R[p] @ R[j]
            world_t[j] = world_R[p] @ local_t + world_t[p]
    G = np.empty((J, 3, 4))
    G[:, :, :3] = world_R
    G[:, :, 3] = world_t - np.einsum("jab,jb->ja", world_R, joints)
    return G


def _blend_transforms(tpl: BodyTemplate, G: np.ndarray) -> np.ndarray:
    J = tpl.num_joints
    return (tpl.skin_weights @ G.reshape(J, 12)).reshape(-1, 3, 4)


def skin(tpl: BodyTemplate, unposed: Mesh, shape: ShapeParams, pose: PoseParams) -> Mesh:
    """Pose an unposed mesh by linear blend skinning; root translation last."""
    if unposed.num_vertices != tpl.num_vertices:
        raise BodyModelError("unposed mesh does not have template topology")
    B = _blend_transforms(tpl, skinning_transforms(tpl, shape, pose))
    v = np.einsum("vab,vb->va", B[:, :, :3], unposed.vertices) + B[:, :, 3]
    return unposed.with_vertices(v + pose.root_translation)


COND_LIMIT = 1e8


def unskin(tpl: BodyTemplate, posed: Mesh, shape: ShapeParams, pose: PoseParams) -> Mesh:
    """Invert linear blend skinning per vertex.

    Raises SingularBlendError naming the first vertex whose blended matrix
    has condition number >= 1e8.
    """
    if posed.num_vertices != tpl.num_vertices:
        raise BodyModelError("posed mesh does not have template topology")
    B = _blend_transforms(tpl, skinning_transforms(tpl, shape, pose))
    A = B[:, :, :3]
    cond = np.linalg.cond(A)
    bad = ~(cond < COND_LIMIT)
    if bad.any():
        v = int(np.nonzero(bad)[0][0])
        raise SingularBlendError(
            f"blended skinning matrix near-singular at vertex {v} (cond={cond[v]:.3g})")
    rhs = posed.vertices - pose.root_translation - B[:, :, 3]
    v = np.linalg.solve(A, rhs[:, :, None])[:, :, 0]
    return posed.with_vertices(v)


def extract_gt_displacement(tpl: BodyTemplate, scan: Mesh, shape: ShapeParams,
                            pose: PoseParams) -> np.ndarray:
    """Soft-tissue component of a scan: unskin, then subtract template,
    pose correctives, and shape blendshapes."""
    unposed = unskin(tpl, scan, shape, pose)
    base = unposed_body(tpl, shape, pose).vertices
    return unposed.vertices - base


# ---- procedural test template -----------------------------------------------

# Canonical 24-joint skeleton, topologically ordered, left = -x.
_JOINT_NAMES = [
    "pelvis", "hip_l", "hip_r", "spine1", "knee_l", "knee_r", "spine2",
    "ankle_l", "ankle_r", "spine3", "foot_l", "foot_r", "neck",
    "collar_l", "collar_r", "head", "shoulder_l", "shoulder_r",
    "elbow_l", "elbow_r", "wrist_l", "wrist_r", "hand_l", "hand_r",
]
_PARENT24 = np.array([-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12,
                      13, 14, 16, 17, 18, 19, 20, 21])
_MIRROR24 = np.array([0, 2, 1, 3, 5, 4, 6, 8, 7, 9, 11, 10, 12, 14, 13, 15,
                      17, 16, 19, 18, 21, 20, 23, 22])
_JOINT_POS24 = np.array([
    [0.00, 0.95, 0.00],   # pelvis
    [-0.09, 0.91, 0.00],  # hip_l
    [0.09, 0.91, 0.00],   # hip_r
    [0.00, 1.10, 0.00],   # spine1
    [-0.10, 0.50, 0.00],  # knee_l
    [0.10, 0.50, 0.00],   # knee_r
    [0.00, 1.22, 0.00],   # spine2
    [-0.105, 0.10, 0.00],  # ankle_l
    [0.105, 0.10, 0.00],   # ankle_r
    [0.00, 1.34, 0.00],   # spine3
    [-0.11, 0.04, 0.10],  # foot_l
    [0.11, 0.04, 0.10],   # foot_r
    [0.00, 1.48, 0.00],   # neck
    [-0.07, 1.42, 0.00],  # collar_l
    [0.07, 1.42, 0.00],   # collar_r
    [0.00, 1.60, 0.00],   # head
    [-0.17, 1.40, 0.00],  # shoulder_l
    [0.17, 1.40, 0.00],   # shoulder_r
    [-0.42, 1.40, 0.00],  # elbow_l
    [0.42, 1.40, 0.00],   # elbow_r
    [-0.65, 1.40, 0.00],  # wrist_l
    [0.65, 1.40, 0.00],   # wrist_r
    [-0.76, 1.40, 0.00],  # hand_l
    [0.76, 1.40, 0.00],   # hand_r
])
_TUBE_RADIUS24 = np.array([
    0.14, 0.09, 0.09, 0.13, 0.06, 0.06, 0.12, 0.05, 0.05, 0.11,
    0.04, 0.04, 0.05, 0.05, 0.05, 0.09, 0.05, 0.05, 0.045, 0.045,
    0.035, 0.035, 0.03, 0.03,
])


@dataclass(frozen=True)
class TemplateConfig:
    num_vertices: int = 500
    num_joints: int = 24
    num_shape: int = 10
    seed: int = 0


def _leaf_stub(joints: np.ndarray, parent: np.ndarray, j: int) -> np.ndarray:
    """End point for a leaf joint's bone: a short cap away from its parent."""
    p = parent[j]
    d = joints[j] - joints[p]
    n = np.linalg.norm(d)
    if n < 1e-9:
        d, n = np.array([0.0, 1.0, 0.0]), 1.0
    return joints[j] + d / n * max(0.05, 0.35 * n)


def bone_segments(joints: np.ndarray, parent: np.ndarray) -> list[tuple[int, np.ndarray, np.ndarray]]:
    """(joint, start, end) per skinned bone: joint j owns the segment running
    to the mean of its children (or a stub for leaves); the root's segment
    spans up to its last child to give the torso a core."""
    J = len(parent)
    segments = []
    for j in range(J):
        children = [c for c in range(J) if parent[c] == j]
        if children:
            end = np.mean([joints[c] for c in children], axis=0)
        elif j == 0:
            end = joints[0] + np.array([0.0, 0.1, 0.0])
        else:
            end = _leaf_stub(joints, parent, j)
        segments.append((j, joints[j].copy(), end))
    return segments


def _point_segment_distance(points: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = b - a
    denom = float(d @ d)
    if denom < 1e-18:
        return np.linalg.norm(points - a, axis=1)
    t = np.clip((points - a) @ d / denom, 0.0, 1.0)
    proj = a + t[:, None] * d
    return np.linalg.norm(points - proj, axis=1)


def _smooth_field(rng: np.random.Generator, points: np.ndarray, amplitude: float,
                  n_waves: int = 4) -> np.ndarray:
    """Seeded smooth random (V, 3) field: a few low-frequency sinusoids."""
    out = np.zeros_like(points)
    for _ in range(n_waves):
        k = rng.normal(size=3) * rng.uniform(1.0, 3.0)
        phase = rng.uniform(0, 2 * np.pi)
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        out += np.sin(points @ k + phase)[:, None] * direction
    return out * (amplitude / n_waves)


def build_test_template(config: TemplateConfig = TemplateConfig()) -> BodyTemplate:
    """Procedural humanoid: one tube of rings per bone, mirror-symmetric
    about the x=0 plane, with smooth seeded blendshape bases.

    Stands in for a licensed body-model asset; supports 2..24 joints (a
    truncation of the canonical skeleton) and hits the requested vertex
    count exactly, padding with unreferenced on-axis points if needed.
    """
    V_target, J = config.num_vertices, config.num_joints
    if V_target < 4 or J < 2:
        raise BodyModelError(f"invalid config: V={V_target}, J={J}")
    if J > 24:
        raise BodyModelError("procedural skeleton supports at most 24 joints")
    if (_MIRROR24[:J] >= J).any():
        raise BodyModelError(
            f"J={J} splits a left/right joint pair; use a mirror-closed count "
            "(3, 4, 6, 7, 9, 10, 12, 13, 15, 16, 18, 20, 22 or 24)")

    joints = _JOINT_POS24[:J].copy()
    parent = _PARENT24[:J].copy()
    jm = _MIRROR24[:J].copy()
    joint_mirror = np.where(jm < J, jm, np.arange(J))
    radii = _TUBE_RADIUS24[:J]
    rng = np.random.default_rng(config.seed)

    segments = bone_segments(joints, parent)
    # ring segment count: even, scaled so tubes consume most of the budget
    S = int(np.clip(round(np.sqrt(V_target / (1.8 * len(segments)))), 2, 12)) * 2
    # rings proportional to bone length, so extremity stubs stay small the
    # way real bodies allocate surface area; mirrored pairs share a count
    lengths = np.array([np.linalg.norm(b - a) for _, a, b in segments])
    ring_budget = V_target // S
    rings = np.maximum(2, np.floor(ring_budget * lengths / lengths.sum()).astype(int))
    central = [i for i, (j, _, _) in enumerate(segments) if joints[j][0] == 0.0]
    seg_of_joint = {j: i for i, (j, _, _) in enumerate(segments)}
    leftover = ring_budget - rings.sum()
    oi = 0
    while leftover > 0 and central:
        rings[central[oi % len(central)]] += 1
        leftover -= 1
        oi += 1
    while rings.sum() > ring_budget:
        grown = [i for i in central if rings[i] > 2]
        if grown:
            rings[max(grown, key=lambda i: rings[i])] -= 1
            continue
        # shrink the largest limb pair symmetrically
        limbs = [i for i in range(len(segments)) if i not in central and rings[i] > 2]
        if not limbs:
            break
        i = max(limbs, key=lambda i: rings[i])
        j = segments[i][0]
        rings[i] -= 1
        rings[seg_of_joint[int(joint_mirror[j])]] = rings[i]

    verts: list[np.ndarray] = []
    faces: list[list[int]] = []
    mirror: dict[int, int] = {}

    def add_tube(j: int, a: np.ndarray, b: np.ndarray, n_rings: int, radius: float) -> list[int]:
        axis = b - a
        ln = np.linalg.norm(axis)
        axis = axis / ln if ln > 1e-9 else np.array([0.0, 1.0, 0.0])
        # frame: for on-axis bones u must be the x direction so rings mirror onto themselves
        u = np.array([1.0, 0.0, 0.0])
        if abs(axis @ u) > 0.9:
            u = np.array([0.0, 0.0, 1.0])
        w = np.cross(axis, u)
        w /= np.linalg.norm(w)
        u = np.cross(w, axis)
        start = len(verts)
        for r in range(n_rings):
            t = r / (n_rings - 1) if n_rings > 1 else 0.5
            c = a + (b - a) * t
            taper = 1.0 - 0.35 * t
            for s in range(S):
                phi = 2 * np.pi * s / S
                verts.append(c + radius * taper * (np.cos(phi) * u + np.sin(phi) * w))
        for r in range(n_rings - 1):
            for s in range(S):
                q = [start + r * S + s, start + r * S + (s + 1) % S,
                     start + (r + 1) * S + s, start + (r + 1) * S + (s + 1) % S]
                faces.append([q[0], q[1], q[3]])
                faces.append([q[0], q[3], q[2]])
        return list(range(start, len(verts)))

    handled = set()
    for si, (j, a, b) in enumerate(segments):
        if j in handled:
            continue
        mj = joint_mirror[j]
        if mj == j or joints[j][0] == 0.0:
            # central bone: ring angles are mirror-closed for even S
            ids = add_tube(j, a, b, rings[si], radii[j])
            n_rings = rings[si]
            for r in range(n_rings):
                for s in range(S):
                    # x -> -x maps angle phi to pi - phi
                    s2 = (S // 2 - s) % S
                    mirror[ids[r * S + s]] = ids[r * S + s2]
            handled.add(j)
        else:
            # limb pair: build one side, mirror it vertex-for-vertex
            msi = next(i for i, (jj, _, _) in enumerate(segments) if jj == mj)
            ids = add_tube(j, a, b, rings[si], radii[j])
            start = len(verts)
            for vid in ids:
                p = verts[vid].copy()
                p[0] = -p[0]
                verts.append(p)
            nf = len(ids) // S
            for r in range(nf - 1):
                for s in range(S):
                    q = [start + r * S + s, start + r * S + (s + 1) % S,
                         start + (r + 1) * S + s, start + (r + 1) * S + (s + 1) % S]
                    # winding flipped to keep normals outward after mirroring
                    faces.append([q[0], q[3], q[1]])
                    faces.append([q[0], q[2], q[3]])
            for k, vid in enumerate(ids):
                mirror[vid] = start + k
                mirror[start + k] = vid
            handled.add(j)
            handled.add(mj)
            rings[msi] = rings[si]

    # pad to the exact requested count with self-mirrored on-axis points
    pad_y = 0.0
    while len(verts) < V_target:
        verts.append(np.array([0.0, 0.95 + pad_y, 0.18]))
        mirror[len(verts) - 1] = len(verts) - 1
        pad_y += 1e-3
    if len(verts) > V_target:
        raise BodyModelError(
            f"V={V_target} too small for J={J} tubes (need >= {len(verts)}); increase V")

    vertices = np.array(verts)
    mirror_map = np.array([mirror[i] for i in range(len(verts))])
    mesh = Mesh(vertices, np.array(faces))

    # skin weights: gaussian in distance to each bone segment, top 4
    V = len(verts)
    dist = np.empty((V, J))
    for j, a, b in segments:
        dist[:, j] = _point_segment_distance(vertices, a, b)
    sigma = np.maximum(radii, 0.04) * 2.2
    logw = -((dist / sigma) ** 2)
    w = np.exp(logw - logw.max(axis=1, keepdims=True))
    top4 = np.argsort(w, axis=1)[:, :-4]
    np.put_along_axis(w, top4, 0.0, axis=1)
    weights = w / w.sum(axis=1, keepdims=True)

    # joint regressor: gaussian over the 12 nearest vertices to each joint
    reg = np.zeros((J, V))
    for j in range(J):
        d = np.linalg.norm(vertices - joints[j], axis=1)
        near = np.argsort(d)[:12]
        g = np.exp(-((d[near] / 0.06) ** 2))
        reg[j, near] = g / g.sum()

    # blendshape bases: first shape direction inflates radially from the
    # spine axis (more mass for negative coefficients), the rest are smooth
    # noise; rows orthonormalized with a graded amplitude spectrum so shape
    # recovery is well conditioned (mimicking a PCA-built shape space)
    num_shape = config.num_shape
    raw = np.empty((num_shape, V, 3))
    radial = vertices - np.array([0.0, 1.0, 0.0]) * vertices[:, 1][:, None]
    rn = np.linalg.norm(radial, axis=1, keepdims=True)
    radial = radial / np.maximum(rn, 1e-9)
    torso_weight = np.exp(-((vertices[:, 1] - 1.1) / 0.45) ** 2)
    raw[0] = -0.045 * radial * torso_weight[:, None] + _smooth_field(rng, vertices, 0.004)
    for i in range(1, num_shape):
        raw[i] = _smooth_field(rng, vertices, 0.03 / (1.0 + 0.4 * i))
    Q, Rq = np.linalg.qr(raw.reshape(num_shape, -1).T)
    Q = Q * np.sign(np.diag(Rq))  # keep each row aligned with its raw direction
    amps = 0.35 / (1.0 + 0.15 * np.arange(num_shape))
    shape_basis = (Q.T * amps[:, None]).reshape(num_shape, V, 3)

    # pose correctives: small smooth fields localized around the owning joint
    # (kept well below the shape amplitudes, like SMPL's corrective scale)
    P = 9 * (J - 1)
    pose_basis = np.empty((P, V, 3))
    for j in range(1, J):
        falloff = np.exp(-(np.linalg.norm(vertices - joints[j], axis=1) / 0.2) ** 2)
        for e in range(9):
            pose_basis[9 * (j - 1) + e] = _smooth_field(rng, vertices, 0.003) * falloff[:, None]

    return BodyTemplate(
        rest_mesh=mesh,
        joint_regressor=reg,
        parent=parent,
        skin_weights=weights,
        shape_basis=shape_basis,
        pose_basis=pose_basis,
        mirror_map=mirror_map,
        joint_mirror=joint_mirror,
    )


# ---- template container (JSON manifest + little-endian f64 blob) ------------

_FLOAT_FIELDS = ("rest_vertices", "joint_regressor", "skin_weights",
                 "shape_basis", "pose_basis")


def save_template(tpl: BodyTemplate, path: str | os.PathLike) -> None:
    """Write `<path>.json` + `<path>.bin`; the manifest documents the blob
    layout (field order, shapes, little-endian float64)."""
    path = os.fspath(path)
    arrays = {
        "rest_vertices": tpl.rest_mesh.vertices,
        "joint_regressor": tpl.joint_regressor,
        "skin_weights": tpl.skin_weights,
        "shape_basis": tpl.shape_basis,
        "pose_basis": tpl.pose_basis,
    }
    manifest = {
        "format": "softdyn-template-v1",
        "counts": {"vertices": tpl.num_vertices, "faces": tpl.rest_mesh.num_faces,
                   "joints": tpl.num_joints, "shape": tpl.num_shape},
        "dtype": "<f8",
        "blob_order": [{"name": k, "shape": list(v.shape)} for k, v in arrays.items()],
        "faces": tpl.rest_mesh.faces.tolist(),
        "parent": tpl.parent.tolist(),
        "mirror_map": tpl.mirror_map.tolist(),
        "joint_mirror": tpl.joint_mirror.tolist(),
    }
    with open(path + ".bin", "wb") as fh:
        for key in _FLOAT_FIELDS:
            fh.write(arrays[key].astype("<f8").tobytes())
    with open(path + ".json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh)
        fh.write("\n")


def load_template(path: str | os.PathLike) -> BodyTemplate:
    path = os.fspath(path)
    with open(path + ".json", "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("format") != "softdyn-template-v1":
        raise BodyModelError(f"{path}: not a template container")
    raw = np.fromfile(path + ".bin", dtype="<f8")
    arrays = {}
    offset = 0
    for entry in manifest["blob_order"]:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape))
        arrays[entry["name"]] = raw[offset:offset + n].reshape(shape)
        offset += n
    if offset != raw.size:
        raise BodyModelError(f"{path}.bin: size mismatch")
    return BodyTemplate(
        rest_mesh=Mesh(arrays["rest_vertices"], np.array(manifest["faces"])),
        joint_regressor=arrays["joint_regressor"],
        parent=np.array(manifest["parent"]),
        skin_weights=arrays["skin_weights"],
        shape_basis=arrays["shape_basis"],
        pose_basis=arrays["pose_basis"],
        mirror_map=np.array(manifest["mirror_map"]),
        joint_mirror=np.array(manifest["joint_mirror"]),
    )
