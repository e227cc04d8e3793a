"""Recurrent soft-tissue regressor: motion descriptor + shape coefficients in,
latent deformation out, with a GRU branch and a non-recurrent shortcut.

Also the composed runtime pipeline: descriptors -> regressor -> deformation
decoder -> unposed compose -> skinning.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .bodymodel import BodyTemplate, PoseParams, ShapeParams, skin, unposed_body
from .geometry import Mesh
from .motion import MotionSequence, build_descriptors
from .nn import (AdamState, NetModel, TrainingDiverged, adam_step, forward,
                 load_model, save_model, zero_state)
from .posespace import PoseAE
from .subspace import SoftTissueAE


class RegressorError(ValueError):
    pass


@dataclass
class RegressorModel:
    net: NetModel
    descriptor_dim: int
    beta_dim: int
    latent_dim: int
    pose_ae_hash: str = ""
    soft_ae_hash: str = ""
    # input/target standardization, fitted from the training corpus;
    # acceleration features are rate^2-scaled and would saturate gates raw,
    # and latent targets sit orders of magnitude below unit scale
    input_loc: np.ndarray = field(default_factory=lambda: np.zeros(0))
    input_scale: np.ndarray = field(default_factory=lambda: np.ones(0))
    target_loc: np.ndarray = field(default_factory=lambda: np.zeros(0))
    target_scale: np.ndarray = field(default_factory=lambda: np.ones(0))

    def __post_init__(self):
        spec = self.net.topology[0]
        if spec["in"] != self.descriptor_dim + self.beta_dim or spec["out"] != self.latent_dim:
            raise RegressorError("net topology inconsistent with declared dimensions")
        d = self.descriptor_dim + self.beta_dim
        if self.input_loc.size == 0:
            self.input_loc = np.zeros(d)
        if self.input_scale.size == 0:
            self.input_scale = np.ones(d)
        if self.target_loc.size == 0:
            self.target_loc = np.zeros(self.latent_dim)
        if self.target_scale.size == 0:
            self.target_scale = np.ones(self.latent_dim)

    def normalize(self, x: np.ndarray) -> np.ndarray:
        return (x - self.input_loc) / self.input_scale

    def denormalize_target(self, z: np.ndarray) -> np.ndarray:
        return z * self.target_scale + self.target_loc


def build_regressor(descriptor_dim: int, beta_dim: int, latent_dim: int,
                    hidden: int | None = None, seed: int = 0,
                    pose_ae_hash: str = "", soft_ae_hash: str = "") -> RegressorModel:
    hidden = hidden if hidden is not None else 2 * latent_dim
    net = NetModel([{"kind": "gru_skip", "in": descriptor_dim + beta_dim,
                     "hidden": hidden, "out": latent_dim}], seed=seed)
    # zero output heads: a fresh model predicts exactly zero, the natural
    # baseline for a deformation regressor
    net.set_param("layer0.Wo", np.zeros_like(net.params["layer0.Wo"].data))
    net.set_param("layer0.Ws", np.zeros_like(net.params["layer0.Ws"].data))
    return RegressorModel(net=net, descriptor_dim=descriptor_dim, beta_dim=beta_dim,
                          latent_dim=latent_dim, pose_ae_hash=pose_ae_hash,
                          soft_ae_hash=soft_ae_hash)


def reset_state(model: RegressorModel, batch: int = 1) -> dict[int, np.ndarray]:
    """Fresh per-sequence recurrent state (zeros)."""
    return zero_state(model.net, batch=batch)


def regress_step(model: RegressorModel, descriptor: np.ndarray, beta: np.ndarray,
                 state: dict[int, np.ndarray]) -> tuple[np.ndarray, dict[int, np.ndarray]]:
    """One recurrent step; deterministic in eval mode."""
    x = np.concatenate([descriptor, beta])
    if x.size != model.descriptor_dim + model.beta_dim:
        raise RegressorError(
            f"descriptor+beta size {x.size} != {model.descriptor_dim + model.beta_dim}")
    fwd = forward(model.net, model.normalize(x)[None], state=state)
    new_state = {i: s.data for i, s in fwd.states.items()}
    return model.denormalize_target(fwd.output.data[0]), new_state


@dataclass
class RegressorTrainOptions:
    lr: float = 1e-3
    batch_size: int = 10
    epochs: int = 100
    seed: int = 0
    truncate: int = 0          # frames per BPTT window; 0 = full sequence
    log_every: int = 0


@dataclass
class RegressorHistory:
    loss: list[float] = field(default_factory=list)
    diverged: bool = False


def _sequence_loss(model: RegressorModel, desc: np.ndarray, beta: np.ndarray,
                   targets: np.ndarray, mode: str) -> Tensor:
    """L_pos + L_vel + L_acc on a batch of equal-length sequences.

    desc: (B, T, D); beta: (B, |beta|); targets: (B, T, k).  Velocities and
    accelerations are per-frame backward differences of the latent
    trajectories, mirroring the descriptor's scheme.
    """
    B, T, _ = desc.shape
    x_all = model.normalize(np.concatenate(
        [desc, np.repeat(beta[:, None, :], T, axis=1)], axis=2))
    state = {i: Tensor(np.zeros((B, model.net.topology[i]["hidden"])))
             for i in model.net.recurrent_layers()}
    outs = []
    for t in range(T):
        fwd = forward(model.net, Tensor(x_all[:, t]), mode=mode, state=state)
        state = fwd.states
        outs.append(fwd.output)
    pred = ad.stack(outs, axis=1)            # (B, T, k)
    tgt = Tensor(targets)
    dp = pred[:, 1:] - pred[:, :-1]
    dt_ = tgt[:, 1:] - tgt[:, :-1]
    ap = dp[:, 1:] - dp[:, :-1]
    at = dt_[:, 1:] - dt_[:, :-1]
    l_pos = ad.mean((pred - tgt) ** 2.0)
    l_vel = ad.mean((dp - dt_) ** 2.0)
    l_acc = ad.mean((ap - at) ** 2.0)
    return l_pos + l_vel + l_acc


def train_regressor(model: RegressorModel, sequences: list[dict],
                    opts: RegressorTrainOptions = RegressorTrainOptions()) -> RegressorHistory:
    """Adam over sequence batches.

    Each sequence dict carries "descriptors" (T, D), "beta" (|beta|,) and
    "latents" (T, k); all sequences must share T (the desk corpus does).
    A non-finite loss aborts and restores the last finished epoch.
    """
    if not sequences:
        raise RegressorError("no training sequences")
    desc = np.stack([s["descriptors"] for s in sequences])
    betas = np.stack([s["beta"] for s in sequences])
    targets = np.stack([s["latents"] for s in sequences])
    n, T = desc.shape[0], desc.shape[1]
    flat = np.concatenate([desc.reshape(n * T, -1),
                           np.repeat(betas, T, axis=0)], axis=1)
    model.input_loc = flat.mean(axis=0)
    model.input_scale = np.maximum(flat.std(axis=0), 1e-6)
    # one shared target scale keeps relative latent-channel importance intact
    model.target_loc = np.zeros(model.latent_dim)
    model.target_scale = np.full(model.latent_dim, max(float(targets.std()), 1e-9))
    targets = targets / model.target_scale
    rng = np.random.default_rng(opts.seed)
    state = AdamState(lr=opts.lr)
    history = RegressorHistory()
    checkpoint = {k: v.data.copy() for k, v in model.net.params.items()}
    windows = [(0, T)] if opts.truncate <= 0 else \
        [(s, min(s + opts.truncate, T)) for s in range(0, T, opts.truncate)]
    for epoch in range(opts.epochs):
        order = rng.permutation(n)
        tot = 0.0
        batches = 0
        for start in range(0, n, opts.batch_size):
            idx = order[start:start + opts.batch_size]
            for lo, hi in windows:
                loss = _sequence_loss(model, desc[idx, lo:hi], betas[idx],
                                      targets[idx, lo:hi], "eval")
                val = loss.item()
                if not np.isfinite(val):
                    for k, v in model.net.params.items():
                        v.data = checkpoint[k]
                    history.diverged = True
                    return history
                model.net.zero_grad()
                loss.backward()
                try:
                    adam_step(state, model.net.params,
                              {k: (v.grad if v.grad is not None else np.zeros_like(v.data))
                               for k, v in model.net.params.items()})
                except TrainingDiverged:
                    for k, v in model.net.params.items():
                        v.data = checkpoint[k]
                    history.diverged = True
                    return history
                tot += val
                batches += 1
        checkpoint = {k: v.data.copy() for k, v in model.net.params.items()}
        history.loss.append(tot / batches)
        if opts.log_every and (epoch + 1) % opts.log_every == 0:
            print(f"regressor epoch {epoch + 1}/{opts.epochs} loss {history.loss[-1]:.6f}")
    return history


def predict_latents(model: RegressorModel, seq: MotionSequence,
                    beta: np.ndarray) -> np.ndarray:
    """Latent deformation trajectory for one sequence, zero initial state."""
    desc = seq.descriptor_matrix()
    state = reset_state(model)
    out = np.empty((seq.num_frames, model.latent_dim))
    for t in range(seq.num_frames):
        out[t], state = regress_step(model, desc[t], beta, state)
    return out


# ---- composed runtime pipeline -------------------------------------------------

@dataclass
class Pipeline:
    """Everything the runtime needs: pose encoder, regressor, deformation
    decoder, and the body template."""

    tpl: BodyTemplate
    pose_ae: PoseAE | None
    soft_ae: SoftTissueAE
    regressor: RegressorModel

    def verify_hashes(self) -> None:
        if self.regressor.pose_ae_hash and self.pose_ae is not None:
            if self.regressor.pose_ae_hash != self.pose_ae.content_hash():
                raise RegressorError("pose encoder hash does not match regressor provenance")
        if self.regressor.soft_ae_hash:
            if self.regressor.soft_ae_hash != self.soft_ae.content_hash():
                raise RegressorError("deformation decoder hash does not match regressor provenance")


def predict_sequence(pipe: Pipeline, beta: ShapeParams, poses: list[PoseParams],
                     frame_rate: float) -> tuple[list[Mesh], np.ndarray]:
    """Posed meshes plus the raw regressed displacement fields."""
    seq = build_descriptors(pipe.pose_ae, poses, frame_rate)
    latents = predict_latents(pipe.regressor, seq, beta.beta)
    deltas = pipe.soft_ae.decode(latents)
    meshes = []
    for t, pose in enumerate(poses):
        unposed = unposed_body(pipe.tpl, beta, pose, deltas[t])
        meshes.append(skin(pipe.tpl, unposed, beta, pose))
    return meshes, deltas


def save_regressor(model: RegressorModel, path: str | os.PathLike) -> None:
    save_model(model.net, os.fspath(path), extra={
        "descriptor_dim": model.descriptor_dim, "beta_dim": model.beta_dim,
        "latent_dim": model.latent_dim, "pose_ae_hash": model.pose_ae_hash,
        "soft_ae_hash": model.soft_ae_hash,
        "input_loc": model.input_loc.tolist(),
        "input_scale": model.input_scale.tolist(),
        "target_loc": model.target_loc.tolist(),
        "target_scale": model.target_scale.tolist(),
    })


def load_regressor(path: str | os.PathLike) -> RegressorModel:
    from .nn import load_model_extra

    net = load_model(os.fspath(path))
    extra = load_model_extra(os.fspath(path))
    return RegressorModel(net=net, descriptor_dim=extra["descriptor_dim"],
                          beta_dim=extra["beta_dim"], latent_dim=extra["latent_dim"],
                          pose_ae_hash=extra.get("pose_ae_hash", ""),
                          soft_ae_hash=extra.get("soft_ae_hash", ""),
                          input_loc=np.array(extra.get("input_loc", [])),
                          input_scale=np.array(extra.get("input_scale", [])),
                          target_loc=np.array(extra.get("target_loc", [])),
                          target_scale=np.array(extra.get("target_scale", [])))
