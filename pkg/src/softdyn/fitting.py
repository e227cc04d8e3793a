"""Shape and pose recovery from scan sequences.

Builds the body model forward pass inside the autodiff graph and minimizes
mean squared vertex distance with Adam: shape and pose jointly on frame 0,
then per-frame pose with shape frozen, warm-started from the previous frame.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .bodymodel import BodyTemplate, PoseParams, ShapeParams
from .geometry import Mesh
from .nn import AdamState, adam_step


class FittingDiverged(RuntimeError):
    """Objective rose for too many consecutive steps; carries the best iterate."""

    def __init__(self, message: str, best: dict):
        super().__init__(message)
        self.best = best


@dataclass
class FitOptions:
    lr: float = 1e-2
    shape_steps: int = 400
    pose_steps: int = 150
    gauss_newton_iters: int = 30
    warm_adam_threshold: float = 1e-4  # skip per-frame Adam below this objective
    divergence_patience: int = 50
    plateau_patience: int = 60
    plateau_rtol: float = 1e-9
    objective_tol: float = 1e-14   # squared meters; 1e-7 m RMS
    warm_start: bool = True


@dataclass
class FitResult:
    beta: ShapeParams
    thetas: list[PoseParams]
    residuals: np.ndarray  # per-frame RMS vertex error, meters

    def __post_init__(self):
        r = np.asarray(self.residuals, dtype=np.float64)
        if not (np.all(np.isfinite(r)) and (r >= 0).all()):
            raise ValueError("residuals must be finite and non-negative")
        self.residuals = r

    def to_dict(self) -> dict:
        return {
            "beta": self.beta.beta.tolist(),
            "thetas": [t.theta.tolist() for t in self.thetas],
            "root_translations": [t.root_translation.tolist() for t in self.thetas],
            "residuals": self.residuals.tolist(),
        }

    @staticmethod
    def from_dict(d: dict) -> "FitResult":
        thetas = [PoseParams(np.array(t), np.array(x))
                  for t, x in zip(d["thetas"], d["root_translations"])]
        return FitResult(ShapeParams(np.array(d["beta"])), thetas, np.array(d["residuals"]))


def save_fit(fit: FitResult, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(fit.to_dict(), fh)
        fh.write("\n")


def load_fit(path: str | os.PathLike) -> FitResult:
    with open(path, "r", encoding="utf-8") as fh:
        return FitResult.from_dict(json.load(fh))


# ---- differentiable body model ----------------------------------------------

def rodrigues_ad(theta: Tensor) -> Tensor:
    """Axis-angle (J, 3) -> rotation matrices (J, 3, 3) in the autodiff graph.

    The norm is eps-regularized; at exactly zero angle the value error is
    O(1e-16) and the gradient matches the true generator matrices.
    """
    t2 = ad.sum_(theta * theta, axis=1)
    t2r = t2 + 1e-18
    t = ad.sqrt(t2r)
    a = ad.sin(t) / t
    b = (1.0 - ad.cos(t)) / t2r
    x, y, z = theta[:, 0], theta[:, 1], theta[:, 2]
    zero = x * 0.0
    K = ad.stack([
        ad.stack([zero, -z, y], axis=-1),
        ad.stack([z, zero, -x], axis=-1),
        ad.stack([-y, x, zero], axis=-1),
    ], axis=-2)
    eye = Tensor(np.broadcast_to(np.eye(3), K.shape).copy())
    J = theta.shape[0]
    return eye + a.reshape(J, 1, 1) * K + b.reshape(J, 1, 1) * (K @ K)


def posed_vertices_ad(tpl: BodyTemplate, beta: Tensor, theta: Tensor,
                      trans: Tensor) -> Tensor:
    """Differentiable M(beta, theta): blendshapes, FK, LBS, root translation."""
    V, J = tpl.num_vertices, tpl.num_joints
    rest = Tensor(tpl.rest_mesh.vertices)
    Bs = Tensor(tpl.shape_basis.reshape(tpl.num_shape, -1))
    Bp = Tensor(tpl.pose_basis.reshape(9 * (J - 1), -1))
    Reg = Tensor(tpl.joint_regressor)
    W = Tensor(tpl.skin_weights)

    shaped = rest + (beta.reshape(1, -1) @ Bs).reshape(V, 3)
    joints = Reg @ shaped
    R = rodrigues_ad(theta)
    eye = Tensor(np.broadcast_to(np.eye(3), (J - 1, 3, 3)).copy())
    pf = (R[1:] - eye).reshape(1, -1)
    unposed = shaped + (pf @ Bp).reshape(V, 3)

    world_R: list[Tensor] = [None] * J  # type: ignore[list-item]
    world_t: list[Tensor] = [None] * J  # type: ignore[list-item]
    for j in range(J):
        p = int(tpl.parent[j])
        Rj = R[j]
        jj = joints[j].reshape(3, 1)
        if p < 0:
            world_R[j] = Rj
            world_t[j] = jj
        else:
            local = (joints[j] - joints[p]).reshape(3, 1)
            world_R[j] = world_R[p] @ Rj
            world_t[j] = world_R[p] @ local + world_t[p]
    rows = []
    for j in range(J):
        gt = world_t[j] - world_R[j] @ joints[j].reshape(3, 1)
        rows.append(ad.concat([world_R[j], gt], axis=1).reshape(12))  # (3,4) row-major
    G = ad.stack(rows, axis=0)  # (J, 12)

    blend = (W @ G).reshape(V, 3, 4)
    A = blend[:, :, :3]
    b = blend[:, :, 3]
    out = (A @ unposed.reshape(V, 3, 1)).reshape(V, 3) + b
    return out + trans.reshape(1, 3)


def _objective(tpl: BodyTemplate, scan: np.ndarray, beta: Tensor, theta: Tensor,
               trans: Tensor) -> Tensor:
    diff = posed_vertices_ad(tpl, beta, theta, trans) - Tensor(scan)
    return ad.mean(ad.sum_(diff * diff, axis=1))


def _forward_np(tpl: BodyTemplate, beta: np.ndarray, theta: np.ndarray,
                trans: np.ndarray) -> np.ndarray:
    """Plain-numpy unclamped forward, used for finite-difference Jacobians."""
    from .bodymodel import rodrigues

    V, J = tpl.num_vertices, tpl.num_joints
    shaped = tpl.rest_mesh.vertices + np.tensordot(beta, tpl.shape_basis, axes=1)
    joints = tpl.joint_regressor @ shaped
    R = rodrigues(theta)
    pf = (R[1:] - np.eye(3)).reshape(-1)
    unposed = shaped + np.tensordot(pf, tpl.pose_basis, axes=1)
    wR = np.empty((J, 3, 3))
    wt = np.empty((J, 3))
    for j in range(J):
        p = int(tpl.parent[j])
        local = joints[j] - (joints[p] if p >= 0 else 0.0)
        if p < 0:
            wR[j], wt[j] = R[j], local
        else:
            wR[j] = wR[p] @ R[j]
            wt[j] = wR[p] @ local + wt[p]
    G = np.empty((J, 3, 4))
    G[:, :, :3] = wR
    G[:, :, 3] = wt - np.einsum("jab,jb->ja", wR, joints)
    B = (tpl.skin_weights @ G.reshape(J, 12)).reshape(V, 3, 4)
    return np.einsum("vab,vb->va", B[:, :, :3], unposed) + B[:, :, 3] + trans


def _gauss_newton(tpl: BodyTemplate, scan: np.ndarray, beta: np.ndarray,
                  theta: np.ndarray, trans: np.ndarray, fit_shape: bool,
                  iters: int, tol: float) -> tuple[np.ndarray, np.ndarray, np.ndarray, float]:
    """Levenberg-damped Gauss-Newton polish of the vertex objective.

    Adam finds the basin; this drives the last mile, which Adam cannot do at
    the squared condition number of the shape/pose coupling.  The Jacobian is
    central finite differences of the same forward model.
    """
    J = tpl.num_joints
    target = scan.ravel()
    nV3 = target.size

    def pack(b, th, tr):
        return np.concatenate([b, th.ravel(), tr]) if fit_shape else np.concatenate([th.ravel(), tr])

    def unpack(x):
        if fit_shape:
            return x[:len(beta)], x[len(beta):len(beta) + 3 * J].reshape(J, 3), x[-3:]
        return beta, x[:3 * J].reshape(J, 3), x[-3:]

    def resid(x):
        b, th, tr = unpack(x)
        return _forward_np(tpl, b, th, tr).ravel() - target

    x = pack(beta, theta, trans)
    r = resid(x)
    obj = float(r @ r) / nV3 * 3.0  # mean squared per-vertex distance
    lam = 1e-4
    h = 1e-6
    for _ in range(iters):
        if obj < tol:
            break
        Jac = np.empty((nV3, x.size))
        for i in range(x.size):
            xp, xm = x.copy(), x.copy()
            xp[i] += h
            xm[i] -= h
            Jac[:, i] = (resid(xp) - resid(xm)) / (2 * h)
        JtJ = Jac.T @ Jac
        Jtr = Jac.T @ r
        accepted = False
        for _try in range(8):
            delta = np.linalg.solve(JtJ + lam * np.diag(np.diag(JtJ)) + 1e-12 * np.eye(x.size), -Jtr)
            x_new = x + delta
            r_new = resid(x_new)
            obj_new = float(r_new @ r_new) / nV3 * 3.0
            if obj_new < obj:
                x, r, obj = x_new, r_new, obj_new
                lam = max(lam / 3.0, 1e-10)
                accepted = True
                break
            lam *= 10.0
        if not accepted:
            break
    b, th, tr = unpack(x)
    return b.copy(), th.copy(), tr.copy(), obj


def wrap_axis_angle(theta: np.ndarray) -> np.ndarray:
    """Re-wrap any axis-angle row with angle >= pi to its < pi equivalent."""
    theta = theta.copy()
    angles = np.linalg.norm(theta, axis=1)
    for j in np.nonzero(angles >= np.pi)[0]:
        a = angles[j] % (2 * np.pi)
        if a >= np.pi:
            a -= 2 * np.pi
        theta[j] = theta[j] / angles[j] * a
    return theta


def _minimize(tpl: BodyTemplate, scan: np.ndarray, params: dict[str, Tensor],
              steps: int, opts: FitOptions) -> float:
    """Adam descent on the vertex objective; returns the best objective.

    Parameters are left at the best-seen iterate.  Divergence means the
    objective sat above twice the best value for `divergence_patience`
    consecutive steps; a plateau near the best value stops cleanly instead.
    """
    state = AdamState(lr=opts.lr)
    best = np.inf
    best_data = {k: t.data.copy() for k, t in params.items()}
    rising = 0
    since_improvement = 0
    for _ in range(steps):
        for t in params.values():
            t.grad = None
        obj = _objective(tpl, scan, params["beta"], params["theta"], params["trans"])
        val = obj.item()
        if val < best * (1.0 - opts.plateau_rtol):
            since_improvement = 0
        else:
            since_improvement += 1
        if val < best:
            best = val
            best_data = {k: t.data.copy() for k, t in params.items()}
        rising = rising + 1 if val > max(2.0 * best, best + 1e-12) else 0
        if rising >= opts.divergence_patience:
            for k, t in params.items():
                t.data = best_data[k]
            raise FittingDiverged(
                f"objective rose for {rising} consecutive steps",
                {k: v.copy() for k, v in best_data.items()} | {"objective": best})
        if best < opts.objective_tol or since_improvement > opts.plateau_patience:
            break
        obj.backward()
        trainable = {k: t for k, t in params.items() if t.requires_grad}
        adam_step(state, trainable, {k: t.grad for k, t in trainable.items()})
    for k, t in params.items():
        t.data = best_data[k]
    return best


def fit_sequence(tpl: BodyTemplate, scans: list[Mesh], init: FitResult | None = None,
                 opts: FitOptions = FitOptions()) -> FitResult:
    """Recover (beta, theta_t) for a scan sequence.

    Shape is solved jointly with pose on frame 0, then frozen while each
    frame's pose is optimized, warm-started from the previous frame unless
    opts.warm_start is off.
    """
    if not scans:
        raise ValueError("need at least one scan")
    for i, s in enumerate(scans):
        if s.num_vertices != tpl.num_vertices:
            raise ValueError(f"scan {i} does not have template topology")
    J = tpl.num_joints

    if init is not None:
        beta0 = init.beta.beta.copy()
        theta0 = init.thetas[0].theta.copy()
        trans0 = init.thetas[0].root_translation.copy()
    else:
        beta0 = np.zeros(tpl.num_shape)
        theta0 = np.zeros((J, 3))
        trans0 = np.zeros(3)

    # stage 1: shape and pose on frame 0 (Adam basin search, then polish)
    beta = Tensor(beta0, requires_grad=True)
    theta = Tensor(theta0, requires_grad=True)
    trans = Tensor(trans0, requires_grad=True)
    _minimize(tpl, scans[0].vertices, {"beta": beta, "theta": theta, "trans": trans},
              opts.shape_steps, opts)
    beta_v, theta_v, trans_v, _ = _gauss_newton(
        tpl, scans[0].vertices, beta.data, theta.data, trans.data,
        fit_shape=True, iters=opts.gauss_newton_iters, tol=opts.objective_tol)
    beta_fixed = Tensor(beta_v)  # constant from here on

    thetas: list[PoseParams] = []
    residuals = np.empty(len(scans))
    prev_theta, prev_trans = theta_v, trans_v
    for t, scan in enumerate(scans):
        if t == 0 or opts.warm_start:
            start_th, start_tr = prev_theta, prev_trans
        elif init is not None and t < len(init.thetas):
            start_th, start_tr = init.thetas[t].theta, init.thetas[t].root_translation
        else:
            start_th, start_tr = theta_v, trans_v
        th = Tensor(start_th.copy(), requires_grad=True)
        tr = Tensor(start_tr.copy(), requires_grad=True)
        if t > 0:
            diff = _forward_np(tpl, beta_fixed.data, th.data, tr.data) - scan.vertices
            if (diff * diff).sum(axis=1).mean() > opts.warm_adam_threshold:
                _minimize(tpl, scan.vertices, {"beta": beta_fixed, "theta": th, "trans": tr},
                          opts.pose_steps, opts)
        _, th_v, tr_v, obj = _gauss_newton(
            tpl, scan.vertices, beta_fixed.data, th.data, tr.data,
            fit_shape=False, iters=opts.gauss_newton_iters, tol=opts.objective_tol)
        residuals[t] = np.sqrt(obj)
        prev_theta, prev_trans = th_v, tr_v
        thetas.append(PoseParams(wrap_axis_angle(th_v), tr_v.copy()))

    return FitResult(ShapeParams(beta_fixed.data.copy()), thetas, residuals)
