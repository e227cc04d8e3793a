"""Static pose disentanglement: a multi-modal autoencoder with a pose
encoder and a mesh encoder sharing one 10-D latent and one mesh decoder.

The mesh branch reconstructs skinned mean-shape vertices, which weights the
latent toward pose components that move many vertices; the pose encoder is
then forced to keep those and drop subject-specific articulation detail.
Root rotation and translation are excluded throughout (the motion descriptor
carries root dynamics separately).
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .bodymodel import BodyTemplate, PoseParams, ShapeParams, skin, unposed_body
from .nn import (AdamState, NetModel, TrainingDiverged, adam_step, forward,
                 load_model, save_model)


@dataclass
class PoseAE:
    e_pose: NetModel
    e_mesh: NetModel
    d_mesh: NetModel
    latent_dim: int
    num_joints: int

    def content_hash(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for m in (self.e_pose, self.e_mesh, self.d_mesh):
            h.update(m.content_hash().encode())
        return h.hexdigest()


def pose_vector(pose: PoseParams) -> np.ndarray:
    """Non-root joint angles, flattened; the pose-AE input representation."""
    return pose.theta[1:].reshape(-1)


def mean_shape_vertices(tpl: BodyTemplate, pose: PoseParams) -> np.ndarray:
    """Skinned mean-shape vertices with root motion zeroed, flattened."""
    theta = pose.theta.copy()
    theta[0] = 0.0
    p = PoseParams(theta)
    beta = ShapeParams.zeros(tpl.num_shape)
    return skin(tpl, unposed_body(tpl, beta, p), beta, p).vertices.reshape(-1)


def build_pose_ae(tpl: BodyTemplate, latent_dim: int = 10, hidden: int = 256,
                  seed: int = 0) -> PoseAE:
    J = tpl.num_joints
    d_pose = 3 * (J - 1)
    d_mesh = 3 * tpl.num_vertices
    e_pose = NetModel([
        {"kind": "dense", "in": d_pose, "out": hidden, "activation": "tanh"},
        {"kind": "dense", "in": hidden, "out": hidden, "activation": "tanh"},
        {"kind": "dense", "in": hidden, "out": latent_dim, "activation": "linear"},
    ], seed=seed)
    e_mesh = NetModel([
        {"kind": "dense", "in": d_mesh, "out": hidden, "activation": "tanh"},
        {"kind": "dense", "in": hidden, "out": hidden, "activation": "tanh"},
        {"kind": "dense", "in": hidden, "out": latent_dim, "activation": "linear"},
    ], seed=seed + 1)
    d_mesh_net = NetModel([
        {"kind": "dense", "in": latent_dim, "out": hidden, "activation": "tanh"},
        {"kind": "dense", "in": hidden, "out": hidden, "activation": "tanh"},
        {"kind": "dense", "in": hidden, "out": d_mesh, "activation": "linear"},
    ], seed=seed + 2)
    return PoseAE(e_pose=e_pose, e_mesh=e_mesh, d_mesh=d_mesh_net,
                  latent_dim=latent_dim, num_joints=J)


@dataclass
class PoseTrainOptions:
    lr: float = 1e-3
    batch_size: int = 256
    epochs: int = 20
    seed: int = 0
    log_every: int = 0


@dataclass
class PoseTrainHistory:
    loss: list[float] = field(default_factory=list)
    mesh_term: list[float] = field(default_factory=list)
    pose_term: list[float] = field(default_factory=list)
    diverged: bool = False


def train_pose_ae(tpl: BodyTemplate, poses: list[PoseParams],
                  ae: PoseAE | None = None,
                  opts: PoseTrainOptions = PoseTrainOptions()) -> tuple[PoseAE, PoseTrainHistory]:
    """Joint Adam on both reconstruction terms.

    Skinned mean-shape vertices are precomputed once per pose; a non-finite
    loss aborts and restores the last finished epoch.
    """
    if ae is None:
        ae = build_pose_ae(tpl, seed=opts.seed)
    X_pose = np.stack([pose_vector(p) for p in poses])
    X_mesh = np.stack([mean_shape_vertices(tpl, p) for p in poses])

    params = {f"ep.{k}": v for k, v in ae.e_pose.params.items()}
    params |= {f"em.{k}": v for k, v in ae.e_mesh.params.items()}
    params |= {f"dm.{k}": v for k, v in ae.d_mesh.params.items()}
    state = AdamState(lr=opts.lr)
    rng = np.random.default_rng(opts.seed)
    history = PoseTrainHistory()
    checkpoint = {k: v.data.copy() for k, v in params.items()}
    n = len(poses)
    V = tpl.num_vertices
    for epoch in range(opts.epochs):
        order = rng.permutation(n)
        tot = tot_m = tot_p = 0.0
        batches = 0
        for start in range(0, n, opts.batch_size):
            idx = order[start:start + opts.batch_size]
            xb_mesh = Tensor(X_mesh[idx])
            B = len(idx)
            z_mesh = forward(ae.e_mesh, xb_mesh).output
            z_pose = forward(ae.e_pose, Tensor(X_pose[idx])).output
            rec_mesh = forward(ae.d_mesh, z_mesh).output
            rec_pose = forward(ae.d_mesh, z_pose).output
            diff_m = (rec_mesh - xb_mesh).reshape(B, V, 3)
            diff_p = (rec_pose - xb_mesh).reshape(B, V, 3)
            term_m = ad.mean(ad.norm(diff_m, axis=2, eps=1e-18))
            term_p = ad.mean(ad.norm(diff_p, axis=2, eps=1e-18))
            loss = term_m + term_p
            val = loss.item()
            if not np.isfinite(val):
                for k, v in params.items():
                    v.data = checkpoint[k]
                history.diverged = True
                return ae, history
            for v in params.values():
                v.grad = None
            loss.backward()
            try:
                adam_step(state, params, {k: (v.grad if v.grad is not None
                                              else np.zeros_like(v.data))
                                          for k, v in params.items()})
            except TrainingDiverged:
                for k, v in params.items():
                    v.data = checkpoint[k]
                history.diverged = True
                return ae, history
            tot += val
            tot_m += term_m.item()
            tot_p += term_p.item()
            batches += 1
        checkpoint = {k: v.data.copy() for k, v in params.items()}
        history.loss.append(tot / batches)
        history.mesh_term.append(tot_m / batches)
        history.pose_term.append(tot_p / batches)
        if opts.log_every and (epoch + 1) % opts.log_every == 0:
            print(f"pose-ae epoch {epoch + 1}/{opts.epochs} loss {history.loss[-1]:.6f}")
    return ae, history


def deshape(ae: PoseAE, pose: PoseParams) -> np.ndarray:
    """The disentangled pose code for one pose; pure function of the weights."""
    out = forward(ae.e_pose, pose_vector(pose)[None]).output
    return out.data[0]


def deshape_batch(ae: PoseAE, poses: list[PoseParams]) -> np.ndarray:
    X = np.stack([pose_vector(p) for p in poses])
    return forward(ae.e_pose, X).output.data


def sensitivity_report(ae: PoseAE, poses: list[PoseParams],
                       probe_joints: dict[str, int] | None = None,
                       eps: float = 0.05) -> dict:
    """Report-only diagnostic: mean pose-code response to a small single-axis
    perturbation of each probe joint, averaged over a pose corpus.

    A disentangled code should respond less to extremity articulation (e.g.
    wrist) than to large-deformation joints (e.g. shoulder); there is no
    quantitative criterion, so this is informational.
    """
    if probe_joints is None:
        probe_joints = {"wrist_l": 20, "shoulder_l": 16, "hip_l": 1}
    out = {}
    for name, j in probe_joints.items():
        if j >= ae.num_joints or j == 0:
            continue
        responses = []
        for pose in poses:
            theta = pose.theta.copy()
            theta[j, 0] += eps
            bumped = PoseParams(theta, pose.root_translation)
            responses.append(np.linalg.norm(deshape(ae, bumped) - deshape(ae, pose)))
        out[name] = float(np.mean(responses))
    return out


def save_pose_ae(ae: PoseAE, path: str | os.PathLike) -> None:
    path = os.fspath(path)
    save_model(ae.e_pose, path + ".epose",
               extra={"latent_dim": ae.latent_dim, "num_joints": ae.num_joints})
    save_model(ae.e_mesh, path + ".emesh")
    save_model(ae.d_mesh, path + ".dmesh")


def load_pose_ae(path: str | os.PathLike) -> PoseAE:
    from .nn import load_model_extra

    path = os.fspath(path)
    extra = load_model_extra(path + ".epose")
    return PoseAE(e_pose=load_model(path + ".epose"), e_mesh=load_model(path + ".emesh"),
                  d_mesh=load_model(path + ".dmesh"), latent_dim=extra["latent_dim"],
                  num_joints=extra["num_joints"])
