"""Soft-tissue deformation subspace: PCA baseline and the nonlinear
autoencoder whose boundary layers start as the PCA transform.

The autoencoder trains against a surface term (mean per-vertex error) plus a
heavily weighted face-normal agreement term, with normals evaluated on the
unposed template plus displacement.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .geometry import Mesh, face_normals
from .nn import (AdamState, NetModel, TrainingDiverged, adam_step, forward,
                 load_model, save_model)


class SubspaceError(ValueError):
    pass


# ---- PCA ---------------------------------------------------------------------

@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray              # (3V,)
    basis: np.ndarray             # (k, 3V), orthonormal rows
    singular_values: np.ndarray   # (k,)

    @property
    def latent_dim(self) -> int:
        return self.basis.shape[0]


def _flatten_fields(samples) -> np.ndarray:
    X = np.asarray(samples, dtype=np.float64)
    if X.ndim == 3:
        X = X.reshape(X.shape[0], -1)
    return X


def fit_pca(samples, k: int) -> PcaModel:
    """Mean-centered SVD; rows of `basis` are the top-k right singular vectors
    with a deterministic sign convention."""
    X = _flatten_fields(samples)
    n, d = X.shape
    if k > min(n, d):
        raise SubspaceError(f"k={k} exceeds min(#samples, 3V) = {min(n, d)}")
    mean = X.mean(axis=0)
    _, s, Vt = np.linalg.svd(X - mean, full_matrices=False)
    basis = Vt[:k]
    sign = np.sign(basis[np.arange(k), np.argmax(np.abs(basis), axis=1)]) if k else np.ones(0)
    return PcaModel(mean=mean, basis=basis * sign[:, None], singular_values=s[:k])


def pca_encode(m: PcaModel, delta) -> np.ndarray:
    flat = np.asarray(delta, dtype=np.float64).reshape(-1, m.mean.size)
    z = (flat - m.mean) @ m.basis.T
    return z[0] if np.asarray(delta).ndim <= 2 else z


def pca_decode(m: PcaModel, z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    flat = m.mean + np.atleast_2d(z) @ m.basis
    out = flat.reshape(-1, m.mean.size // 3, 3)
    return out[0] if z.ndim == 1 else out


def pca_reconstruct(m: PcaModel, delta) -> np.ndarray:
    return pca_decode(m, pca_encode(m, delta))


def save_pca(m: PcaModel, path: str | os.PathLike) -> None:
    path = os.fspath(path)
    with open(path + ".bin", "wb") as fh:
        fh.write(m.mean.astype("<f8").tobytes())
        fh.write(m.basis.astype("<f8").tobytes())
        fh.write(m.singular_values.astype("<f8").tobytes())
    with open(path + ".json", "w", encoding="utf-8") as fh:
        json.dump({"format": "softdyn-pca-v1", "dim": int(m.mean.size),
                   "k": int(m.latent_dim)}, fh)
        fh.write("\n")


def load_pca(path: str | os.PathLike) -> PcaModel:
    path = os.fspath(path)
    with open(path + ".json", "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    d, k = manifest["dim"], manifest["k"]
    raw = np.fromfile(path + ".bin", dtype="<f8")
    return PcaModel(mean=raw[:d], basis=raw[d:d + k * d].reshape(k, d),
                    singular_values=raw[d + k * d:])


# ---- autoencoder ---------------------------------------------------------------

@dataclass
class SoftTissueAE:
    """Encoder/decoder pair over flattened displacement fields."""

    encoder: NetModel
    decoder: NetModel
    latent_dim: int
    num_vertices: int

    def encode(self, delta) -> np.ndarray:
        arr = np.asarray(delta, dtype=np.float64)
        single = arr.ndim == 2
        flat = arr.reshape(1, -1) if single else arr.reshape(arr.shape[0], -1)
        z = forward(self.encoder, flat).output.data
        return z[0] if single else z

    def decode(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        out = forward(self.decoder, np.atleast_2d(z)).output.data
        fields = out.reshape(-1, self.num_vertices, 3)
        return fields[0] if z.ndim == 1 else fields

    def reconstruct(self, delta) -> np.ndarray:
        return self.decode(self.encode(delta))

    def content_hash(self) -> str:
        import hashlib

        h = hashlib.sha256()
        h.update(self.encoder.content_hash().encode())
        h.update(self.decoder.content_hash().encode())
        return h.hexdigest()


@dataclass
class AeSpec:
    latent_dim: int = 25
    boundary_factor: int = 4   # PCA boundary width = factor * latent_dim
    residual_units: int = 2
    hidden_factor: int = 1     # residual branch width = factor * boundary width
    dropout: float = 0.1


def build_soft_ae(pca: PcaModel, spec: AeSpec = AeSpec(), seed: int = 0) -> SoftTissueAE:
    """Autoencoder whose boundary layers start as a wide PCA transform.

    The boundary layers project to/from `boundary_factor * latent_dim` PCA
    coordinates; identity-sliced bottleneck layers and zero-initialized
    residual branches make the fresh model reproduce plain PCA at
    `latent_dim` exactly in eval mode.  Training can then bend the extra
    boundary directions into the bottleneck, which a subspace equal in width
    to the bottleneck never could.
    """
    k = spec.latent_dim
    d = pca.mean.size
    if pca.latent_dim < k:
        raise SubspaceError(f"PCA model has {pca.latent_dim} rows, need >= {k}")
    b_dim = min(spec.boundary_factor * k, pca.latent_dim)
    unit = {"kind": "residual", "width": b_dim, "hidden": spec.hidden_factor * b_dim,
            "activation": "tanh", "dropout": spec.dropout}
    enc_layers: list[dict] = [{"kind": "dense", "in": d, "out": b_dim, "activation": "linear"}]
    enc_layers += [dict(unit) for _ in range(spec.residual_units)]
    enc_layers.append({"kind": "dense", "in": b_dim, "out": k, "activation": "linear"})
    dec_layers: list[dict] = [{"kind": "dense", "in": k, "out": b_dim, "activation": "linear"}]
    dec_layers += [dict(unit) for _ in range(spec.residual_units)]
    dec_layers.append({"kind": "dense", "in": b_dim, "out": d, "activation": "linear"})

    encoder = NetModel(enc_layers, seed=seed)
    decoder = NetModel(dec_layers, seed=seed + 1)
    basis = pca.basis[:b_dim]
    encoder.set_param("layer0.W", basis.T)
    encoder.set_param("layer0.b", -(basis @ pca.mean))
    enc_last = len(enc_layers) - 1
    encoder.set_param(f"layer{enc_last}.W", np.eye(b_dim, k))   # slice top-k coords
    encoder.set_param(f"layer{enc_last}.b", np.zeros(k))
    decoder.set_param("layer0.W", np.eye(k, b_dim))             # embed into boundary
    decoder.set_param("layer0.b", np.zeros(b_dim))
    dec_last = len(dec_layers) - 1
    decoder.set_param(f"layer{dec_last}.W", basis)
    decoder.set_param(f"layer{dec_last}.b", pca.mean)
    return SoftTissueAE(encoder=encoder, decoder=decoder, latent_dim=k,
                        num_vertices=d // 3)


@dataclass
class TrainOptions:
    lr: float = 1e-4
    batch_size: int = 256
    epochs: int = 200
    lambda_norm: float = 1000.0
    seed: int = 0
    log_every: int = 0
    keep_best: bool = True   # restore the best eval-mode epoch at the end


@dataclass
class TrainHistory:
    loss: list[float] = field(default_factory=list)
    surf: list[float] = field(default_factory=list)
    norm: list[float] = field(default_factory=list)
    diverged: bool = False


def _batch_loss(ae: SoftTissueAE, batch: np.ndarray, mesh: Mesh,
                gt_normals: np.ndarray, opts: TrainOptions,
                rng: np.random.Generator | None, mode: str):
    """Graph loss for one batch: surface error + weighted normal error."""
    x = Tensor(batch)
    z = forward(ae.encoder, x, mode=mode, rng=rng).output
    rec = forward(ae.decoder, z, mode=mode, rng=rng).output
    B = batch.shape[0]
    V = ae.num_vertices
    diff = rec - x
    # whole-field Euclidean norm per sample, averaged over the batch, which
    # keeps the default normal-term weight on a sane relative scale
    surf = ad.mean(ad.norm(diff, axis=1, eps=1e-18))

    verts = rec.reshape(B, V, 3) + Tensor(mesh.vertices[None])
    a = ad.take(verts, mesh.faces[:, 0], axis=1)
    b = ad.take(verts, mesh.faces[:, 1], axis=1)
    c = ad.take(verts, mesh.faces[:, 2], axis=1)
    n = ad.cross(b - a, c - a)
    n = n / ad.norm(n, axis=-1, keepdims=True, eps=1e-18)
    dot = ad.sum_(n * Tensor(gt_normals), axis=-1)
    lnorm = ad.mean(ad.abs_(1.0 - dot))
    return surf + opts.lambda_norm * lnorm, surf, lnorm


def _input_normals(mesh: Mesh, batch: np.ndarray) -> np.ndarray:
    """Batched unit face normals of template-plus-displacement meshes."""
    V = mesh.num_vertices
    verts = mesh.vertices[None] + batch.reshape(batch.shape[0], V, 3)
    a = verts[:, mesh.faces[:, 0]]
    b = verts[:, mesh.faces[:, 1]]
    c = verts[:, mesh.faces[:, 2]]
    n = np.cross(b - a, c - a)
    norms = np.linalg.norm(n, axis=2, keepdims=True)
    np.maximum(norms, 1e-300, out=norms)
    return n / norms


def train_soft_ae(ae: SoftTissueAE, fields, mesh: Mesh,
                  opts: TrainOptions = TrainOptions()) -> TrainHistory:
    """Adam on L_surf + lambda * L_norm over displacement fields.

    A non-finite loss aborts training and restores the last good parameters.
    """
    X = _flatten_fields(fields)
    rng = np.random.default_rng(opts.seed)
    params = {f"enc.{k}": v for k, v in ae.encoder.params.items()}
    params |= {f"dec.{k}": v for k, v in ae.decoder.params.items()}
    state = AdamState(lr=opts.lr)
    history = TrainHistory()
    checkpoint = {k: v.data.copy() for k, v in params.items()}
    n = X.shape[0]
    probe = X[:: max(1, n // 512)][:512]
    probe_normals = _input_normals(mesh, probe)

    def probe_loss() -> float:
        loss, _, _ = _batch_loss(ae, probe, mesh, probe_normals, opts, None, "eval")
        return loss.item()

    best_loss = probe_loss()
    best = {k: v.data.copy() for k, v in params.items()}
    for epoch in range(opts.epochs):
        order = rng.permutation(n)
        epoch_loss = epoch_surf = epoch_norm = 0.0
        batches = 0
        for start in range(0, n, opts.batch_size):
            batch = X[order[start:start + opts.batch_size]]
            gt_n = _input_normals(mesh, batch)
            loss, surf, lnorm = _batch_loss(ae, batch, mesh, gt_n, opts, rng, "train")
            val = loss.item()
            if not np.isfinite(val):
                for k, v in params.items():
                    v.data = checkpoint[k]
                history.diverged = True
                return history
            for v in params.values():
                v.grad = None
            loss.backward()
            try:
                adam_step(state, params, {k: v.grad if v.grad is not None
                                          else np.zeros_like(v.data) for k, v in params.items()})
            except TrainingDiverged:
                for k, v in params.items():
                    v.data = checkpoint[k]
                history.diverged = True
                return history
            epoch_loss += val
            epoch_surf += surf.item()
            epoch_norm += lnorm.item()
            batches += 1
        checkpoint = {k: v.data.copy() for k, v in params.items()}
        history.loss.append(epoch_loss / batches)
        history.surf.append(epoch_surf / batches)
        history.norm.append(epoch_norm / batches)
        if opts.keep_best:
            val = probe_loss()
            if val < best_loss:
                best_loss = val
                best = {k: v.data.copy() for k, v in params.items()}
        if opts.log_every and (epoch + 1) % opts.log_every == 0:
            print(f"soft-ae epoch {epoch + 1}/{opts.epochs} "
                  f"loss {history.loss[-1]:.6f} surf {history.surf[-1]:.6f}")
    if opts.keep_best:
        for k, v in params.items():
            v.data = best[k]
    return history


def save_soft_ae(ae: SoftTissueAE, path: str | os.PathLike) -> None:
    path = os.fspath(path)
    save_model(ae.encoder, path + ".enc",
               extra={"latent_dim": ae.latent_dim, "num_vertices": ae.num_vertices})
    save_model(ae.decoder, path + ".dec")


def load_soft_ae(path: str | os.PathLike) -> SoftTissueAE:
    from .nn import load_model_extra

    path = os.fspath(path)
    encoder = load_model(path + ".enc")
    decoder = load_model(path + ".dec")
    extra = load_model_extra(path + ".enc")
    return SoftTissueAE(encoder=encoder, decoder=decoder,
                        latent_dim=extra["latent_dim"],
                        num_vertices=extra["num_vertices"])
