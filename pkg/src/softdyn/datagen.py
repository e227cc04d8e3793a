"""Desk-scale data supply: scripted motion families, a damped-oscillator
soft-tissue oracle standing in for captured 4D scans, sequence mirroring,
and motion transfer across subjects.

Subjects carry a per-subject "style": fixed offsets on low-influence joints
(static style, which pose disentanglement should remove) and a timing warp
(dynamic style, which motion transfer removes).
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .bodymodel import (BodyTemplate, PoseParams, ShapeParams, bone_segments,
                        regress_joints, skin, skinning_transforms, unposed_body,
                        _blend_transforms, _point_segment_distance)


class DatagenError(ValueError):
    pass


# ---- subjects ----------------------------------------------------------------

def softness_scalar(beta: np.ndarray) -> float:
    """First shape coefficient to softness: -2.5 -> 1.0 (soft),
    +0.5 -> 0.1 (stiff), linear, clamped to [0, 1]."""
    return float(np.clip(1.0 - 0.3 * (beta[0] + 2.5), 0.0, 1.0))


@dataclass(frozen=True)
class SyntheticSubject:
    subject_id: str
    beta: np.ndarray
    softness: np.ndarray       # per-vertex, in [0, 1]
    omega: float               # natural frequency, rad/s
    zeta: float                # damping ratio

    def __post_init__(self):
        if not (self.omega > 0):
            raise DatagenError("omega must be positive")
        if not (0 < self.zeta <= 2):
            raise DatagenError("zeta must be in (0, 2]")
        if self.softness.min() < 0 or self.softness.max() > 1:
            raise DatagenError("softness must lie in [0, 1]")


def _flesh_profile(tpl: BodyTemplate) -> np.ndarray:
    """Per-vertex jiggle factor in [0.25, 1]: larger away from the bones."""
    joints = regress_joints(tpl, ShapeParams.zeros(tpl.num_shape))
    segs = bone_segments(joints, tpl.parent)
    d = np.min(np.stack([_point_segment_distance(tpl.rest_mesh.vertices, a, b)
                         for _, a, b in segs]), axis=0)
    lo, hi = d.min(), d.max()
    p = (d - lo) / (hi - lo) if hi > lo else np.zeros_like(d)
    return 0.25 + 0.75 * p


def make_subject(tpl: BodyTemplate, subject_id: str, beta: np.ndarray) -> SyntheticSubject:
    s = softness_scalar(beta)
    return SyntheticSubject(
        subject_id=subject_id,
        beta=np.asarray(beta, dtype=np.float64),
        softness=s * _flesh_profile(tpl),
        omega=14.0 + (1.0 - s) * 16.0,   # soft bodies resonate low and slow
        zeta=0.25 + 0.2 * (1.0 - s),
    )


# ---- scripted motion families -------------------------------------------------

FAMILIES = ("walk", "run", "jump", "hop", "arm_raise_l", "arm_raise_r",
            "squat", "sway")

# joints whose per-subject offsets constitute "static style": extremities
# with low mesh influence, so the pose autoencoder can compress them away
_STYLE_JOINTS = {10, 11, 15, 20, 21, 22, 23}  # feet, head, wrists, hands

_GRAVITY = 9.81


@dataclass(frozen=True)
class SubjectStyle:
    joint_offsets: np.ndarray   # (J, 3)
    freq_mult: float
    phase: float

    @staticmethod
    def neutral(num_joints: int) -> "SubjectStyle":
        return SubjectStyle(np.zeros((num_joints, 3)), 1.0, 0.0)


def make_style(num_joints: int, seed: int) -> SubjectStyle:
    rng = np.random.default_rng(seed)
    offsets = np.zeros((num_joints, 3))
    for j in _STYLE_JOINTS:
        if j < num_joints:
            offsets[j] = rng.uniform(-0.18, 0.18, size=3)
    return SubjectStyle(offsets, float(rng.uniform(0.85, 1.15)), float(rng.uniform(0, 2 * np.pi)))


@dataclass(frozen=True)
class MotionClip:
    family: str
    poses: list[PoseParams]
    frame_rate: float

    @property
    def num_frames(self) -> int:
        return len(self.poses)


# per-frame pose observation noise, the scan-fitting jitter a real capture
# pipeline would leave in the recovered angles
OBSERVE_SIGMA_JOINT = 0.02   # rad
OBSERVE_SIGMA_ROOT = 0.003   # m


def observe_clip(clip: MotionClip, rng: np.random.Generator,
                 sigma_joint: float = OBSERVE_SIGMA_JOINT,
                 sigma_root: float = OBSERVE_SIGMA_ROOT) -> MotionClip:
    """The clip as a fitting stage would recover it: iid angle jitter on the
    non-root joints and a smaller root-translation jitter."""
    poses = []
    for p in clip.poses:
        theta = p.theta.copy()
        theta[1:] += rng.normal(scale=sigma_joint, size=theta[1:].shape)
        root = p.root_translation + rng.normal(scale=sigma_root, size=3)
        poses.append(PoseParams(theta, root))
    return MotionClip(family=clip.family, poses=poses, frame_rate=clip.frame_rate)


def _set(theta, j, axis, value):
    if j < theta.shape[0]:
        theta[j, axis] = value


def _family_pose(family: str, phase: float, t_sec: float, J: int) -> tuple[np.ndarray, np.ndarray]:
    """Joint angles and root translation for one frame of a scripted family.

    `phase` already includes the subject's timing warp.
    """
    th = np.zeros((J, 3))
    root = np.zeros(3)
    s = np.sin(phase)
    c = np.cos(phase)
    if family in ("walk", "run"):
        amp = 0.5 if family == "walk" else 0.8
        _set(th, 1, 0, amp * s)          # hips swing antiphase about x
        _set(th, 2, 0, -amp * s)
        _set(th, 4, 0, 0.5 * amp * (1 - c))   # knees flex
        _set(th, 5, 0, 0.5 * amp * (1 + c))
        _set(th, 16, 2, 0.4 * amp * s)    # arms counter-swing about z
        _set(th, 17, 2, 0.4 * amp * s)
        speed = 1.1 if family == "walk" else 2.4
        root[2] = speed * t_sec
        root[1] = 0.03 * abs(s)
    elif family in ("jump", "hop"):
        period = 1.2 if family == "jump" else 0.7
        g_eff = 0.5 * _GRAVITY
        tau = (phase / (2 * np.pi)) * period % period
        crouch_end, flight_end = 0.35 * period, 0.85 * period
        if tau < crouch_end:
            k = tau / crouch_end
            bend = 0.8 * k
            root[1] = -0.18 * k
        elif tau < flight_end:
            # ballistic arc from crouch depth back to stand height: root y is
            # exactly quadratic in time while airborne
            tf = flight_end - crouch_end
            ts = tau - crouch_end
            v0 = (0.18 + 0.5 * g_eff * tf * tf) / tf
            root[1] = -0.18 + v0 * ts - 0.5 * g_eff * ts * ts
            bend = 0.1
        else:
            bend = 0.3 * (1 - (tau - flight_end) / (period - flight_end))
            root[1] = 0.0
        _set(th, 1, 0, -bend)
        _set(th, 2, 0, -bend)
        _set(th, 4, 0, 1.6 * bend)
        _set(th, 5, 0, 1.6 * bend)
        _set(th, 16, 2, 0.5 * bend)
        _set(th, 17, 2, -0.5 * bend)
    elif family in ("arm_raise_l", "arm_raise_r"):
        j = 16 if family.endswith("_l") else 17
        lift = 0.6 * (1 - np.cos(phase)) / 2 + 0.2
        _set(th, j, 2, lift if family.endswith("_l") else -lift)
        _set(th, j + 2, 2, 0.3 * lift * (1 if family.endswith("_l") else -1))
        _set(th, 3, 2, 0.05 * s)
    elif family == "squat":
        bend = 0.5 * (1 - c) / 2
        _set(th, 1, 0, -bend)
        _set(th, 2, 0, -bend)
        _set(th, 4, 0, 1.8 * bend)
        _set(th, 5, 0, 1.8 * bend)
        _set(th, 3, 0, 0.4 * bend)
        root[1] = -0.25 * (1 - c) / 2
    elif family == "sway":
        _set(th, 3, 2, 0.25 * s)
        _set(th, 6, 2, 0.18 * s)
        root[0] = 0.06 * s
    else:
        raise DatagenError(f"unknown motion family {family!r}")
    return th, root


# base repetition rate of each family, Hz (the jump/hop rates equal 1/period
# so the ballistic arc phase lines up with real seconds)
_FAMILY_HZ = {"walk": 1.0, "run": 1.6, "jump": 1.0 / 1.2, "hop": 1.0 / 0.7,
              "arm_raise_l": 0.5, "arm_raise_r": 0.5, "squat": 0.6, "sway": 0.5}


def generate_motion(tpl: BodyTemplate, family: str, num_frames: int,
                    frame_rate: float, style: SubjectStyle | None = None) -> MotionClip:
    """One scripted clip; style adds fixed joint offsets and a timing warp."""
    J = tpl.num_joints
    if style is None:
        style = SubjectStyle.neutral(J)
    if family not in _FAMILY_HZ:
        raise DatagenError(f"unknown motion family {family!r}")
    hz = _FAMILY_HZ[family] * style.freq_mult
    poses = []
    for t in range(num_frames):
        t_sec = t / frame_rate
        phase = 2 * np.pi * hz * t_sec + style.phase
        th, root = _family_pose(family, phase, t_sec, J)
        th = th + style.joint_offsets
        poses.append(PoseParams(th, root))
    return MotionClip(family=family, poses=poses, frame_rate=frame_rate)


def generate_motions(tpl: BodyTemplate, families: list[str], num_frames: int,
                     frame_rate: float, seed: int,
                     style: SubjectStyle | None = None) -> list[MotionClip]:
    del seed  # scripts are deterministic; the seed only names the corpus
    return [generate_motion(tpl, f, num_frames, frame_rate, style) for f in families]


def pose_corpus(tpl: BodyTemplate, families=FAMILIES, num_styles: int = 20,
                num_frames: int = 100, frame_rate: float = 60.0, seed: int = 0,
                stride: int = 4) -> list[PoseParams]:
    """Clean poses across many synthetic actors for pose-autoencoder training.

    Static poses need no soft-tissue capture, so the corpus can be much
    larger and noise-free compared to the fitted sequence data, mirroring
    how a MoCap archive relates to a 4D scan set."""
    poses = []
    for s in range(num_styles):
        style = make_style(tpl.num_joints, seed + 5000 + s)
        for family in families:
            clip = generate_motion(tpl, family, num_frames, frame_rate, style)
            poses.extend(clip.poses[::stride])
    return poses


# ---- soft-tissue oracle --------------------------------------------------------

STIFFEN_LENGTH = 0.05  # meters; tissue stiffens as it stretches past this


def integrate_soft_oscillator(accel: np.ndarray, softness: np.ndarray,
                              omega, zeta: float, dt: float,
                              stiffen_length: float = STIFFEN_LENGTH) -> np.ndarray:
    """Semi-implicit Euler on
        u'' = -w^2 (1 + |u|^2/L^2) u - 2 z w u' - softness * accel.

    accel is (T, V, 3) forcing in unposed space; omega may be scalar or a
    per-vertex array.  The amplitude-stiffening spring keeps offsets bounded
    and makes the deformation family nonlinear.  Returns (T, V, 3) offsets.
    """
    omega = np.asarray(omega, dtype=np.float64)
    if dt * omega.max() > 2.0:
        raise DatagenError(f"unstable oracle config: dt*omega = {dt * omega.max():.3f} > 2")
    T, V, _ = accel.shape
    u = np.zeros((V, 3))
    vel = np.zeros((V, 3))
    out = np.empty((T, V, 3))
    sv = softness[:, None]
    w = omega[:, None] if omega.ndim else omega
    inv_l2 = 1.0 / (stiffen_length * stiffen_length)
    # cap the stiffened frequency at the semi-implicit stability limit
    cap = (1.8 / (dt * omega.max())) ** 2
    for t in range(T):
        stiffen = np.minimum(1.0 + (u * u).sum(axis=1, keepdims=True) * inv_l2, cap)
        vel += dt * (-w * w * stiffen * u - 2.0 * zeta * w * vel - sv * accel[t])
        u = u + dt * vel
        out[t] = u
    return out


def oracle_soft_tissue(tpl: BodyTemplate, subject: SyntheticSubject,
                       poses: list[PoseParams], frame_rate: float) -> np.ndarray:
    """Ground-truth stand-in: per-vertex damped oscillator in unposed space,
    forced by the skinned-position acceleration rotated back through the
    per-vertex blend."""
    shape = ShapeParams(subject.beta)
    T = len(poses)
    V = tpl.num_vertices
    skinned = np.empty((T, V, 3))
    blends = np.empty((T, V, 3, 3))
    for t, pose in enumerate(poses):
        unposed = unposed_body(tpl, shape, pose)
        skinned[t] = skin(tpl, unposed, shape, pose).vertices
        blends[t] = _blend_transforms(tpl, skinning_transforms(tpl, shape, pose))[:, :, :3]
    rate2 = frame_rate * frame_rate
    accel = np.zeros((T, V, 3))
    accel[2:] = (skinned[2:] - 2 * skinned[1:-1] + skinned[:-2]) * rate2
    # rotate world acceleration into each vertex's unposed frame
    unposed_accel = np.linalg.solve(blends, accel[..., None])[..., 0]
    # flesh far from the bone resonates lower than the subject's base rate,
    # which keeps the deformation family genuinely nonlinear across vertices
    omega_v = subject.omega * (1.35 - 0.7 * _flesh_profile(tpl))
    return integrate_soft_oscillator(unposed_accel, subject.softness,
                                     omega_v, subject.zeta, 1.0 / frame_rate)


# ---- mirroring -----------------------------------------------------------------

_AXIS_FLIP = np.array([1.0, -1.0, -1.0])   # axis-angle under x -> -x reflection
_VEC_FLIP = np.array([-1.0, 1.0, 1.0])


def mirror_pose(tpl: BodyTemplate, pose: PoseParams) -> PoseParams:
    theta = np.empty_like(pose.theta)
    theta[tpl.joint_mirror] = pose.theta * _AXIS_FLIP
    return PoseParams(theta, pose.root_translation * _VEC_FLIP)


def mirror_clip(tpl: BodyTemplate, clip: MotionClip) -> MotionClip:
    name = clip.family.removesuffix("_mirrored") if clip.family.endswith("_mirrored") \
        else clip.family + "_mirrored"
    return MotionClip(family=name,
                      poses=[mirror_pose(tpl, p) for p in clip.poses],
                      frame_rate=clip.frame_rate)


def mirror_deltas(tpl: BodyTemplate, deltas: np.ndarray) -> np.ndarray:
    return deltas[:, tpl.mirror_map, :] * _VEC_FLIP


def mirror_sequence(tpl: BodyTemplate, clip: MotionClip,
                    deltas: np.ndarray) -> tuple[MotionClip, np.ndarray]:
    """Reflect a clip and its soft-tissue fields across the sagittal plane."""
    return mirror_clip(tpl, clip), mirror_deltas(tpl, deltas)


# ---- dataset -------------------------------------------------------------------

@dataclass
class SequenceRecord:
    seq_id: str
    subject_id: str
    clip: MotionClip
    deltas: np.ndarray          # (T, V, 3) ground-truth soft tissue
    split: str                  # "train" | "test"
    provenance: str = "oracle"  # "oracle" | "mirror" | "transfer"


@dataclass
class SequenceDataset:
    subjects: dict[str, SyntheticSubject]
    records: list[SequenceRecord] = field(default_factory=list)
    frame_rate: float = 60.0

    def train(self) -> list[SequenceRecord]:
        return [r for r in self.records if r.split == "train"]

    def test(self) -> list[SequenceRecord]:
        return [r for r in self.records if r.split == "test"]

    def validate(self, tpl: BodyTemplate) -> None:
        ids = set()
        for r in self.records:
            if r.deltas.shape[1] != tpl.num_vertices:
                raise DatagenError(f"{r.seq_id}: delta field does not match template")
            if not np.all(np.isfinite(r.deltas)):
                raise DatagenError(f"{r.seq_id}: non-finite soft tissue")
            if r.seq_id in ids:
                raise DatagenError(f"duplicate sequence id {r.seq_id}")
            ids.add(r.seq_id)


def build_dataset(tpl: BodyTemplate, num_subjects: int = 5,
                  families: tuple[str, ...] = FAMILIES, num_frames: int = 120,
                  frame_rate: float = 60.0, seed: int = 42) -> SequenceDataset:
    """Subjects spread along the softness axis, each performing every family
    with their own style; one family per subject held out for testing."""
    rng = np.random.default_rng(seed)
    subjects: dict[str, SyntheticSubject] = {}
    styles: dict[str, SubjectStyle] = {}
    beta0 = np.linspace(-2.5, 0.5, num_subjects)
    for i in range(num_subjects):
        beta = np.concatenate([[beta0[i]], 0.3 * rng.normal(size=tpl.num_shape - 1)])
        sid = f"s{i:02d}"
        subjects[sid] = make_subject(tpl, sid, beta)
        styles[sid] = make_style(tpl.num_joints, seed + 1000 + i)

    ds = SequenceDataset(subjects=subjects, frame_rate=frame_rate)
    for i, sid in enumerate(sorted(subjects)):
        for k, family in enumerate(families):
            clip = generate_motion(tpl, family, num_frames, frame_rate, styles[sid])
            # soft tissue responds to the true motion; the stored poses carry
            # the jitter a fit to scans would leave behind
            deltas = oracle_soft_tissue(tpl, subjects[sid], clip.poses, frame_rate)
            observed = observe_clip(clip, np.random.default_rng(seed + 7000 + i * 97 + k))
            split = "test" if k == (i % len(families)) else "train"
            ds.records.append(SequenceRecord(
                seq_id=f"{sid}_{family}", subject_id=sid, clip=observed,
                deltas=deltas, split=split, provenance="oracle"))
    ds.validate(tpl)
    return ds


def augment_mirror(tpl: BodyTemplate, ds: SequenceDataset) -> SequenceDataset:
    """Append a mirrored copy of every training sequence."""
    out = SequenceDataset(subjects=ds.subjects, records=list(ds.records),
                          frame_rate=ds.frame_rate)
    for r in ds.records:
        if r.split != "train":
            continue
        clip, deltas = mirror_sequence(tpl, r.clip, r.deltas)
        out.records.append(SequenceRecord(
            seq_id=r.seq_id + "_mirrored", subject_id=r.subject_id, clip=clip,
            deltas=deltas, split="train", provenance="mirror"))
    return out


# ---- motion transfer ------------------------------------------------------------

def train_subject_regressor(tpl: BodyTemplate, ds: SequenceDataset, pose_ae,
                            soft_ae, subject_id: str, epochs: int = 300,
                            seed: int = 0):
    """Subject-specific regressor fitted on that subject's training sequences."""
    from .motion import build_descriptors
    from .regressor import (RegressorTrainOptions, build_regressor,
                            train_regressor)

    own = [r for r in ds.train() if r.subject_id == subject_id]
    if not own:
        raise DatagenError(f"subject {subject_id} has no training sequences")
    subject = ds.subjects[subject_id]
    sequences = []
    for r in own:
        seq = build_descriptors(pose_ae, r.clip.poses, r.clip.frame_rate)
        sequences.append({"descriptors": seq.descriptor_matrix(),
                          "beta": subject.beta,
                          "latents": soft_ae.encode(r.deltas)})
    model = build_regressor(sequences[0]["descriptors"].shape[1],
                            subject.beta.size, soft_ae.latent_dim, seed=seed)
    train_regressor(model, sequences, RegressorTrainOptions(epochs=epochs, seed=seed))
    return model


def motion_transfer(tpl: BodyTemplate, ds: SequenceDataset, pose_ae, soft_ae,
                    source: SequenceRecord, target_subject_id: str,
                    subject_model=None, epochs: int = 300, seed: int = 0) -> SequenceRecord:
    """Re-synthesize one subject's motion on another subject.

    Trains (or reuses) the target's subject-specific regressor and drives it
    with the source sequence's motion descriptors, which carries the motion
    but not the target's own timing style.
    """
    from .motion import build_descriptors
    from .regressor import predict_latents

    if subject_model is None:
        subject_model = train_subject_regressor(tpl, ds, pose_ae, soft_ae,
                                                target_subject_id, epochs, seed)
    seq = build_descriptors(pose_ae, source.clip.poses, source.clip.frame_rate)
    latents = predict_latents(subject_model, seq, ds.subjects[target_subject_id].beta)
    deltas = soft_ae.decode(latents)
    return SequenceRecord(
        seq_id=f"{target_subject_id}_{source.seq_id}_transfer",
        subject_id=target_subject_id, clip=source.clip, deltas=deltas,
        split="train", provenance="transfer")


def augment_transfer(tpl: BodyTemplate, ds: SequenceDataset, pose_ae, soft_ae,
                     epochs: int = 300, seed: int = 0) -> SequenceDataset:
    """Full cross product: every subject re-performs every other subject's
    training motions via its subject-specific regressor."""
    out = SequenceDataset(subjects=ds.subjects, records=list(ds.records),
                          frame_rate=ds.frame_rate)
    sources = [r for r in ds.train() if r.provenance == "oracle"]
    for i, sid in enumerate(sorted(ds.subjects)):
        model = train_subject_regressor(tpl, ds, pose_ae, soft_ae, sid,
                                        epochs=epochs, seed=seed + i)
        for src in sources:
            if src.subject_id == sid:
                continue
            out.records.append(motion_transfer(tpl, ds, pose_ae, soft_ae, src,
                                               sid, subject_model=model))
    return out


# ---- sequence and dataset containers -------------------------------------------

def _atomic_write(path: str, data: bytes) -> None:
    d = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=d)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_record(rec: SequenceRecord, directory: str | os.PathLike) -> None:
    directory = os.fspath(directory)
    T = rec.clip.num_frames
    theta = np.stack([p.theta for p in rec.clip.poses])
    trans = np.stack([p.root_translation for p in rec.clip.poses])
    fields = {"theta": theta, "root_translation": trans, "deltas": rec.deltas}
    manifest = {
        "format": "softdyn-sequence-v1",
        "seq_id": rec.seq_id,
        "subject_id": rec.subject_id,
        "family": rec.clip.family,
        "frames": T,
        "frame_rate": rec.clip.frame_rate,
        "split": rec.split,
        "provenance": rec.provenance,
        "blob_order": [{"name": k, "shape": list(v.shape)} for k, v in fields.items()],
        "dtype": "<f8",
    }
    blob = b"".join(fields[k].astype("<f8").tobytes() for k in ("theta", "root_translation", "deltas"))
    _atomic_write(os.path.join(directory, f"{rec.seq_id}.bin"), blob)
    _atomic_write(os.path.join(directory, f"{rec.seq_id}.json"),
                  (json.dumps(manifest) + "\n").encode())


def load_record(directory: str | os.PathLike, seq_id: str) -> SequenceRecord:
    directory = os.fspath(directory)
    with open(os.path.join(directory, f"{seq_id}.json"), "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    raw = np.fromfile(os.path.join(directory, f"{seq_id}.bin"), dtype="<f8")
    arrays = {}
    offset = 0
    for entry in manifest["blob_order"]:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape))
        arrays[entry["name"]] = raw[offset:offset + n].reshape(shape)
        offset += n
    poses = [PoseParams(arrays["theta"][t], arrays["root_translation"][t])
             for t in range(manifest["frames"])]
    clip = MotionClip(family=manifest["family"], poses=poses,
                      frame_rate=manifest["frame_rate"])
    return SequenceRecord(seq_id=manifest["seq_id"], subject_id=manifest["subject_id"],
                          clip=clip, deltas=arrays["deltas"], split=manifest["split"],
                          provenance=manifest["provenance"])


def save_dataset(ds: SequenceDataset, directory: str | os.PathLike) -> None:
    directory = os.fspath(directory)
    os.makedirs(directory, exist_ok=True)
    manifest = {
        "format": "softdyn-dataset-v1",
        "frame_rate": ds.frame_rate,
        "subjects": [{
            "id": s.subject_id, "beta": s.beta.tolist(),
            "omega": s.omega, "zeta": s.zeta,
        } for s in ds.subjects.values()],
        "sequences": [r.seq_id for r in ds.records],
    }
    soft = {s.subject_id: s.softness for s in ds.subjects.values()}
    blob = b"".join(soft[k].astype("<f8").tobytes() for k in sorted(soft))
    _atomic_write(os.path.join(directory, "softness.bin"), blob)
    for rec in ds.records:
        save_record(rec, directory)
    _atomic_write(os.path.join(directory, "dataset.json"),
                  (json.dumps(manifest, indent=1) + "\n").encode())


def load_dataset(directory: str | os.PathLike) -> SequenceDataset:
    directory = os.fspath(directory)
    with open(os.path.join(directory, "dataset.json"), "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    raw = np.fromfile(os.path.join(directory, "softness.bin"), dtype="<f8")
    n = len(manifest["subjects"])
    per = raw.size // n if n else 0
    softness = {}
    for i, sid in enumerate(sorted(s["id"] for s in manifest["subjects"])):
        softness[sid] = raw[i * per:(i + 1) * per]
    subjects = {}
    for s in manifest["subjects"]:
        subjects[s["id"]] = SyntheticSubject(
            subject_id=s["id"], beta=np.array(s["beta"]),
            softness=softness[s["id"]], omega=s["omega"], zeta=s["zeta"])
    ds = SequenceDataset(subjects=subjects, frame_rate=manifest["frame_rate"])
    for seq_id in manifest["sequences"]:
        ds.records.append(load_record(directory, seq_id))
    return ds
