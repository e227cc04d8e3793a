"""Disentangled motion descriptors: the pose code, its first and second
backward differences, and root translation velocity/acceleration.

Backward differences keep the descriptor causal, so it can be computed
online frame by frame; leading frames are zero-padded to match the
regressor's zero initial state.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bodymodel import PoseParams
from .posespace import PoseAE, deshape_batch, pose_vector


class MotionError(ValueError):
    pass


@dataclass(frozen=True)
class MotionSequence:
    """Per-frame pose codes and their dynamics at a fixed frame rate.

    The descriptor matrix row layout is [code, d(code), d2(code), dX, d2X],
    giving 3*code_dim + 6 numbers per frame.
    """

    frame_rate: float
    poses: list[PoseParams]
    code: np.ndarray       # (T, D)
    d_code: np.ndarray     # (T, D), per second
    d2_code: np.ndarray    # (T, D), per second^2
    d_root: np.ndarray     # (T, 3), m/s
    d2_root: np.ndarray    # (T, 3), m/s^2

    @property
    def num_frames(self) -> int:
        return len(self.poses)

    @property
    def code_dim(self) -> int:
        return self.code.shape[1]

    @property
    def descriptor_dim(self) -> int:
        return 3 * self.code_dim + 6

    def descriptor(self, t: int) -> np.ndarray:
        return np.concatenate([self.code[t], self.d_code[t], self.d2_code[t],
                               self.d_root[t], self.d2_root[t]])

    def descriptor_matrix(self) -> np.ndarray:
        return np.concatenate([self.code, self.d_code, self.d2_code,
                               self.d_root, self.d2_root], axis=1)


def _dynamics(values: np.ndarray, rate: float) -> tuple[np.ndarray, np.ndarray]:
    """Backward-difference velocity and acceleration, zero-padded at the start."""
    vel = np.zeros_like(values)
    acc = np.zeros_like(values)
    if len(values) > 1:
        vel[1:] = (values[1:] - values[:-1]) * rate
    if len(values) > 2:
        acc[2:] = (values[2:] - 2 * values[1:-1] + values[:-2]) * rate * rate
    return vel, acc


def build_descriptors(pose_ae: PoseAE | None, poses: list[PoseParams],
                      frame_rate: float) -> MotionSequence:
    """Descriptor sequence for a pose trajectory.

    With pose_ae=None the raw non-root joint angles stand in for the
    disentangled code (the no-disentanglement ablation path).
    """
    if len(poses) < 1:
        raise MotionError("need at least one frame")
    if frame_rate <= 0:
        raise MotionError("frame rate must be positive")
    if pose_ae is None:
        code = np.stack([pose_vector(p) for p in poses])
    else:
        code = deshape_batch(pose_ae, poses)
    roots = np.stack([p.root_translation for p in poses])
    d_code, d2_code = _dynamics(code, frame_rate)
    d_root, d2_root = _dynamics(roots, frame_rate)
    return MotionSequence(frame_rate=frame_rate, poses=list(poses), code=code,
                          d_code=d_code, d2_code=d2_code, d_root=d_root,
                          d2_root=d2_root)
