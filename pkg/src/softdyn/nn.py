"""Network building blocks: dense, residual unit, GRU, dropout; Adam; model IO.

A NetModel is an ordered list of layer specs plus named float64 parameter
tensors.  Forward passes build an autodiff graph (see autodiff.py); the graph
is the activation cache for the backward pass.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

ACTIVATIONS = {
    "linear": lambda t: t,
    "tanh": ad.tanh,
    "sigmoid": ad.sigmoid,
    "relu": ad.relu,
}


class ShapeMismatch(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    pass


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


@dataclass
class NetModel:
    """Topology descriptor plus named parameters.

    Layer specs (dicts, JSON-serializable):
      dense:    {kind, in, out, activation}
      residual: {kind, width, hidden, activation, dropout?}
                y = x + W2·drop(act(W1·x+b1))+b2
      gru:      {kind, in, hidden}
      dropout:  {kind, rate}
      gru_skip: {kind, in, hidden, out}   y = Wo·GRU(x) + bo + Ws·x + bs

    Residual branch output layers (W2) start at zero so the unit is the
    identity at init.  All other weights use uniform +-sqrt(6/(fan+fan)) init.
    """

    topology: list[dict]
    params: dict[str, Tensor] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if not self.params:
            self._init_params()

    def _init_params(self):
        rng = np.random.default_rng(self.seed)
        for i, spec in enumerate(self.topology):
            kind = spec["kind"]
            p = f"layer{i}."
            if kind == "dense":
                n, m = spec["in"], spec["out"]
                self._add(p + "W", glorot(rng, n, m, (n, m)))
                self._add(p + "b", np.zeros(m))
            elif kind == "residual":
                w, h = spec["width"], spec["hidden"]
                self._add(p + "W1", glorot(rng, w, h, (w, h)))
                self._add(p + "b1", np.zeros(h))
                self._add(p + "W2", np.zeros((h, w)))
                self._add(p + "b2", np.zeros(w))
            elif kind in ("gru", "gru_skip"):
                n, h = spec["in"], spec["hidden"]
                for gate in ("z", "r", "h"):
                    self._add(p + f"W{gate}", glorot(rng, n, h, (n, h)))
                    self._add(p + f"U{gate}", glorot(rng, h, h, (h, h)))
                    self._add(p + f"b{gate}", np.zeros(h))
                if kind == "gru_skip":
                    m = spec["out"]
                    self._add(p + "Wo", glorot(rng, h, m, (h, m)))
                    self._add(p + "bo", np.zeros(m))
                    self._add(p + "Ws", glorot(rng, n, m, (n, m)))
                    self._add(p + "bs", np.zeros(m))
            elif kind == "dropout":
                pass
            else:
                raise ValueError(f"unknown layer kind {kind!r}")

    def _add(self, name: str, data: np.ndarray):
        self.params[name] = Tensor(data, requires_grad=True)

    @property
    def input_dim(self) -> int | None:
        for spec in self.topology:
            if spec["kind"] in ("dense", "gru", "gru_skip"):
                return spec["in"]
            if spec["kind"] == "residual":
                return spec["width"]
        return None

    @property
    def output_dim(self) -> int | None:
        for spec in reversed(self.topology):
            if spec["kind"] == "dense":
                return spec["out"]
            if spec["kind"] == "gru_skip":
                return spec["out"]
            if spec["kind"] == "gru":
                return spec["hidden"]
            if spec["kind"] == "residual":
                return spec["width"]
        return None

    def recurrent_layers(self) -> list[int]:
        return [i for i, s in enumerate(self.topology) if s["kind"] in ("gru", "gru_skip")]

    def zero_grad(self):
        for t in self.params.values():
            t.grad = None

    def set_param(self, name: str, data: np.ndarray):
        expect = self.params[name].data.shape
        # contiguity matters: BLAS rounding must match after a save/load cycle
        data = np.ascontiguousarray(data, dtype=np.float64)
        if data.shape != expect:
            raise ShapeMismatch(f"param {name}: expected {expect}, got {data.shape}")
        self.params[name] = Tensor(data, requires_grad=True)

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(json.dumps(self.topology, sort_keys=True).encode())
        for name in sorted(self.params):
            h.update(name.encode())
            h.update(self.params[name].data.tobytes())
        return h.hexdigest()


@dataclass
class ForwardPass:
    """Graph handle returned by forward(); consumed by backward()."""

    model: NetModel
    input: Tensor
    output: Tensor
    states: dict[int, Tensor]
    consumed: bool = False


def zero_state(model: NetModel, batch: int = 1) -> dict[int, np.ndarray]:
    """Per-sequence recurrent state, zero-initialized."""
    return {i: np.zeros((batch, model.topology[i]["hidden"])) for i in model.recurrent_layers()}


def _gru_cell(params, p: str, x: Tensor, h: Tensor) -> Tensor:
    z = ad.sigmoid(x @ params[p + "Wz"] + h @ params[p + "Uz"] + params[p + "bz"])
    r = ad.sigmoid(x @ params[p + "Wr"] + h @ params[p + "Ur"] + params[p + "br"])
    hc = ad.tanh(x @ params[p + "Wh"] + ad.mul(r, h) @ params[p + "Uh"] + params[p + "bh"])
    return ad.add(ad.mul(1.0 - z, h), ad.mul(z, hc))


def forward(model: NetModel, x, mode: str = "eval", rng: np.random.Generator | None = None,
            state: dict[int, np.ndarray] | None = None) -> ForwardPass:
    """One pass through the topology; `x` is (batch, features).

    Recurrent layers read their state from `state` (zeros when omitted) and
    leave the stepped state in the returned ForwardPass.states.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if mode == "train" and rng is None and any(s["kind"] == "dropout" for s in model.topology):
        raise ValueError("train-mode forward through dropout needs an rng")
    x_in = x if isinstance(x, Tensor) else Tensor(np.atleast_2d(np.asarray(x, dtype=np.float64)),
                                                  requires_grad=True)
    t = x_in
    new_states: dict[int, Tensor] = {}
    for i, spec in enumerate(model.topology):
        kind = spec["kind"]
        p = f"layer{i}."
        width = {"dense": "in", "gru": "in", "gru_skip": "in", "residual": "width"}.get(kind)
        if width is not None and t.shape[-1] != spec[width]:
            raise ShapeMismatch(f"layer {i} ({kind}): expected input width {spec[width]}, got {t.shape[-1]}")
        if kind == "dense":
            t = ACTIVATIONS[spec["activation"]](t @ model.params[p + "W"] + model.params[p + "b"])
        elif kind == "residual":
            act = ACTIVATIONS[spec.get("activation", "tanh")]
            branch = act(t @ model.params[p + "W1"] + model.params[p + "b1"])
            rate = spec.get("dropout", 0.0)
            if mode == "train" and rate > 0:
                if rng is None:
                    raise ValueError("train-mode forward through dropout needs an rng")
                branch = ad.mul(branch, ad.dropout_mask(branch.shape, rate, rng))
            t = t + (branch @ model.params[p + "W2"] + model.params[p + "b2"])
        elif kind in ("gru", "gru_skip"):
            h0 = Tensor(np.zeros((t.shape[0], spec["hidden"]))) if state is None or i not in state \
                else (state[i] if isinstance(state[i], Tensor) else Tensor(state[i]))
            h1 = _gru_cell(model.params, p, t, h0)
            new_states[i] = h1
            if kind == "gru_skip":
                t = (h1 @ model.params[p + "Wo"] + model.params[p + "bo"]) + \
                    (t @ model.params[p + "Ws"] + model.params[p + "bs"])
            else:
                t = h1
        elif kind == "dropout":
            if mode == "train":
                t = ad.mul(t, ad.dropout_mask(t.shape, spec["rate"], rng))
    return ForwardPass(model=model, input=x_in, output=t, states=new_states)


def backward(model: NetModel, fwd: ForwardPass, upstream_grad=None):
    """Reverse-mode gradients of a cached forward pass.

    Returns (param_grads, input_grad).  A ForwardPass can be consumed once.
    """
    if fwd is None or fwd.consumed:
        raise RuntimeError("backward requires a fresh cached forward pass")
    fwd.consumed = True
    model.zero_grad()
    if upstream_grad is None:
        upstream_grad = np.ones_like(fwd.output.data)
    fwd.output.backward(upstream_grad)
    grads = {name: (t.grad if t.grad is not None else np.zeros_like(t.data))
             for name, t in model.params.items()}
    return grads, fwd.input.grad


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(state: AdamState, params: dict[str, Tensor], grads: dict[str, np.ndarray]) -> None:
    """Textbook Adam update with bias correction, in place."""
    state.step_count += 1
    t = state.step_count
    for name, p in params.items():
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise TrainingDiverged(f"non-finite gradient for {name} at step {t}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        state.m[name] = state.beta1 * state.m[name] + (1 - state.beta1) * g
        state.v[name] = state.beta2 * state.v[name] + (1 - state.beta2) * g * g
        m_hat = state.m[name] / (1 - state.beta1 ** t)
        v_hat = state.v[name] / (1 - state.beta2 ** t)
        p.data = p.data - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


def gradient_check(model: NetModel, x: np.ndarray, tolerance: float = 1e-4,
                   h: float = 1e-5, state: dict | None = None,
                   rng_seed: int = 0) -> dict:
    """Analytic vs central-difference gradients of sum(output) per parameter.

    Report lists the max relative error per layer; train-mode dropout uses a
    fixed rng seed so both paths see the same mask... dropout layers are
    checked in eval mode (the mask is not a function of parameters).
    """
    fwd = forward(model, x, mode="eval", state=state)
    grads, _ = backward(model, fwd)

    def loss_at() -> float:
        out = forward(model, x, mode="eval", state=state).output
        return float(out.data.sum())

    layers: dict[int, dict] = {}
    for name, p in model.params.items():
        layer_idx = int(name.split(".")[0][len("layer"):])
        num = np.zeros_like(p.data)
        flat = p.data.ravel()
        nflat = num.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = loss_at()
            flat[i] = orig - h
            fm = loss_at()
            flat[i] = orig
            nflat[i] = (fp - fm) / (2 * h)
        denom = np.maximum(np.maximum(np.abs(num), np.abs(grads[name])), 1e-6)
        rel = float(np.max(np.abs(grads[name] - num) / denom)) if num.size else 0.0
        entry = layers.setdefault(layer_idx, {"layer": layer_idx,
                                              "kind": model.topology[layer_idx]["kind"],
                                              "max_rel_error": 0.0})
        entry["max_rel_error"] = max(entry["max_rel_error"], rel)
    report = sorted(layers.values(), key=lambda e: e["layer"])
    for entry in report:
        entry["pass"] = entry["max_rel_error"] < tolerance
    return {"tolerance": tolerance, "layers": report,
            "max_rel_error": max((e["max_rel_error"] for e in report), default=0.0),
            "pass": all(e["pass"] for e in report)}


# ---- model container: JSON manifest + little-endian f64 blob ---------------

def save_model(model: NetModel, path: str | os.PathLike, extra: dict | None = None) -> None:
    """Write `<path>.json` + `<path>.bin`; parameter order is the manifest's."""
    path = os.fspath(path)
    names = sorted(model.params)
    blob = b"".join(model.params[n].data.astype("<f8").tobytes() for n in names)
    manifest = {
        "format": "softdyn-model-v1",
        "seed": model.seed,
        "topology": model.topology,
        "params": [{"name": n, "shape": list(model.params[n].data.shape)} for n in names],
        "dtype": "<f8",
        "content_hash": model.content_hash(),
    }
    if extra:
        manifest["extra"] = extra
    with open(path + ".bin", "wb") as fh:
        fh.write(blob)
    with open(path + ".json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1)
        fh.write("\n")


def load_model(path: str | os.PathLike) -> NetModel:
    path = os.fspath(path)
    with open(path + ".json", "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    raw = np.fromfile(path + ".bin", dtype="<f8")
    model = NetModel(topology=manifest["topology"], seed=manifest["seed"])
    offset = 0
    for entry in manifest["params"]:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape)) if shape else 1
        model.set_param(entry["name"], raw[offset:offset + n].reshape(shape))
        offset += n
    if offset != raw.size:
        raise ValueError(f"{path}.bin: expected {offset} values, found {raw.size}")
    if model.content_hash() != manifest["content_hash"]:
        raise ValueError(f"{path}: content hash mismatch")
    return model


def load_model_extra(path: str | os.PathLike) -> dict:
    with open(os.fspath(path) + ".json", "r", encoding="utf-8") as fh:
        return json.load(fh).get("extra", {})
