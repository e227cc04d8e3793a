"""Metrics, the shape-generalization ablation, and report assembly.

Reports are emitted as JSON and CSV (byte-stable given seeds) plus rendered
PNG figures alongside.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .bodymodel import BodyTemplate, ShapeParams
from .datagen import (FAMILIES, SequenceDataset, augment_mirror,
                      augment_transfer, build_dataset, generate_motion,
                      pose_corpus)
from .motion import build_descriptors
from .posespace import PoseAE, PoseTrainOptions, train_pose_ae
from .regressor import (Pipeline, RegressorTrainOptions, build_regressor,
                        predict_latents, train_regressor)
from .subspace import (AeSpec, PcaModel, SoftTissueAE, TrainOptions,
                       build_soft_ae, fit_pca, pca_reconstruct, train_soft_ae)

BETA1_GRID = (-2.5, -2.0, -1.5, -1.0, -0.5, 0.0, 0.5)

ABLATION_MODES = ("full", "no_deshape", "no_transfer", "neither")


def recon_error_mm(reconstructed: np.ndarray, reference: np.ndarray) -> float:
    """Mean per-vertex Euclidean error over vertices and frames, millimeters."""
    rec = np.asarray(reconstructed).reshape(-1, 3)
    ref = np.asarray(reference).reshape(-1, 3)
    return float(np.linalg.norm(rec - ref, axis=1).mean() * 1000.0)


def mean_vertex_speed(deltas: np.ndarray, frame_rate: float) -> float:
    """Frame-rate-scaled mean per-vertex displacement change, m/s."""
    d = np.asarray(deltas)
    if d.shape[0] < 2:
        return 0.0
    return float(np.linalg.norm(d[1:] - d[:-1], axis=2).mean() * frame_rate)


def dataset_hash(ds: SequenceDataset) -> str:
    h = hashlib.sha256()
    for r in sorted(ds.records, key=lambda r: r.seq_id):
        h.update(r.seq_id.encode())
        h.update(r.deltas.tobytes())
    return h.hexdigest()


# ---- report --------------------------------------------------------------------

@dataclass
class EvalReport:
    config: dict
    recon_rows: list[dict] = field(default_factory=list)   # method, latent_dim, split, error_mm
    speed_curves: dict[str, list[dict]] = field(default_factory=dict)  # mode -> [{beta1, speed}]
    runtimes: dict[str, float] = field(default_factory=dict)

    def validate(self):
        for row in self.recon_rows:
            if not np.isfinite(row["error_mm"]):
                raise ValueError(f"non-finite recon error in {row}")
        for mode, curve in self.speed_curves.items():
            for pt in curve:
                if not np.isfinite(pt["speed"]):
                    raise ValueError(f"non-finite speed in {mode}")

    def curve_range(self, mode: str) -> float:
        speeds = [pt["speed"] for pt in self.speed_curves[mode]]
        return max(speeds) - min(speeds)

    def to_json(self) -> str:
        # wall-clock timings are written to a sibling file so report bytes
        # are reproducible given seeds
        payload = {
            "config": self.config,
            "reconstruction": self.recon_rows,
            "speed_curves": self.speed_curves,
        }
        return json.dumps(payload, sort_keys=True, indent=1) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["table", "method_or_mode", "latent_dim_or_beta1", "split", "value"])
        for row in self.recon_rows:
            w.writerow(["reconstruction_mm", row["method"], row["latent_dim"],
                        row["split"], f"{row['error_mm']:.9g}"])
        for mode in sorted(self.speed_curves):
            for pt in self.speed_curves[mode]:
                w.writerow(["speed_m_per_s", mode, f"{pt['beta1']:.9g}", "eval",
                            f"{pt['speed']:.9g}"])
        return buf.getvalue()

    def save(self, out_dir: str | os.PathLike, stem: str = "report",
             figures: bool = True) -> list[str]:
        out_dir = os.fspath(out_dir)
        os.makedirs(out_dir, exist_ok=True)
        paths = []
        jp = os.path.join(out_dir, f"{stem}.json")
        with open(jp, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())
        paths.append(jp)
        cp = os.path.join(out_dir, f"{stem}.csv")
        with open(cp, "w", encoding="utf-8") as fh:
            fh.write(self.to_csv())
        paths.append(cp)
        if self.runtimes:
            with open(os.path.join(out_dir, f"{stem}_timings.json"), "w",
                      encoding="utf-8") as fh:
                json.dump({"runtimes_ms": self.runtimes}, fh, sort_keys=True, indent=1)
                fh.write("\n")
        if figures:
            paths.extend(render_figures(self, out_dir, stem))
        return paths


def render_figures(report: EvalReport, out_dir: str | os.PathLike,
                   stem: str = "report") -> list[str]:
    """Speed-curve and reconstruction-bar figures next to the tabular output."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = os.fspath(out_dir)
    paths = []
    meta = {"Software": "softdyn"}  # drop version strings for stable bytes

    if report.speed_curves:
        fig, ax = plt.subplots(figsize=(5.4, 3.4))
        for mode in sorted(report.speed_curves):
            curve = report.speed_curves[mode]
            ax.plot([pt["beta1"] for pt in curve], [pt["speed"] for pt in curve],
                    marker="o", label=mode)
        ax.set_xlabel("first shape coefficient")
        ax.set_ylabel("mean vertex speed (m/s)")
        ax.legend(fontsize=8)
        ax.spines["top"].set_visible(False)
        ax.spines["right"].set_visible(False)
        fig.tight_layout()
        p = os.path.join(out_dir, f"{stem}_speed.png")
        fig.savefig(p, dpi=110, metadata=meta)
        plt.close(fig)
        paths.append(p)

    if report.recon_rows:
        dims = sorted({row["latent_dim"] for row in report.recon_rows})
        methods = sorted({row["method"] for row in report.recon_rows})
        fig, ax = plt.subplots(figsize=(4.6, 3.2))
        width = 0.8 / max(len(methods), 1)
        for i, method in enumerate(methods):
            xs, ys = [], []
            for j, d in enumerate(dims):
                rows = [r for r in report.recon_rows
                        if r["method"] == method and r["latent_dim"] == d]
                if rows:
                    xs.append(j + i * width)
                    ys.append(rows[0]["error_mm"])
            ax.bar(xs, ys, width=width, label=method)
        ax.set_xticks([j + width / 2 for j in range(len(dims))])
        ax.set_xticklabels([str(d) for d in dims])
        ax.set_xlabel("latent dimension")
        ax.set_ylabel("error (mm)")
        ax.legend(fontsize=8)
        fig.tight_layout()
        p = os.path.join(out_dir, f"{stem}_recon.png")
        fig.savefig(p, dpi=110, metadata=meta)
        plt.close(fig)
        paths.append(p)
    return paths


# ---- pipeline assembly -----------------------------------------------------------

@dataclass
class DeskConfig:
    """One bundle of knobs for desk-scale experiments."""

    num_vertices: int = 500
    num_joints: int = 24
    num_subjects: int = 5
    families: tuple = FAMILIES
    eval_family: str = "run"   # only used when no test split is supplied
    num_frames: int = 100
    frame_rate: float = 60.0
    latent_dim: int = 25
    seed: int = 42
    pose_epochs: int = 8
    subspace_epochs: int = 40
    lambda_norm: float = 50.0
    regressor_epochs: int = 60
    transfer_epochs: int = 300
    mirror: bool = True

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v)
                for k, v in self.__dict__.items()}


def sequence_entries(ds: SequenceDataset, pose_ae: PoseAE | None,
                     soft_ae: SoftTissueAE, records) -> list[dict]:
    out = []
    for r in records:
        seq = build_descriptors(pose_ae, r.clip.poses, r.clip.frame_rate)
        out.append({"descriptors": seq.descriptor_matrix(),
                    "beta": ds.subjects[r.subject_id].beta,
                    "latents": soft_ae.encode(r.deltas),
                    "record": r, "seq": seq})
    return out


def train_mode_regressor(tpl: BodyTemplate, ds: SequenceDataset,
                         pose_ae: PoseAE | None, soft_ae: SoftTissueAE,
                         cfg: DeskConfig, seed_shift: int = 0):
    entries = sequence_entries(ds, pose_ae, soft_ae, ds.train())
    model = build_regressor(entries[0]["descriptors"].shape[1],
                            entries[0]["beta"].size, soft_ae.latent_dim,
                            seed=cfg.seed + 77 + seed_shift,
                            pose_ae_hash=pose_ae.content_hash() if pose_ae else "",
                            soft_ae_hash=soft_ae.content_hash())
    train_regressor(model, entries,
                    RegressorTrainOptions(epochs=cfg.regressor_epochs, seed=cfg.seed))
    return model


def speed_sweep(tpl: BodyTemplate, pose_ae: PoseAE | None, soft_ae: SoftTissueAE,
                model, cfg: DeskConfig, pose_sets=None, grid=BETA1_GRID) -> list[dict]:
    """Mean vertex speed of predictions across the first-shape-coefficient
    grid, averaged over the evaluation motions.

    Defaults to one scripted clip of cfg.eval_family; pass `pose_sets` (a
    list of pose sequences, e.g. the held-out captured sequences) to average
    the curve so no single sequence's quirks dominate the statistic."""
    if pose_sets is None:
        pose_sets = [generate_motion(tpl, cfg.eval_family, cfg.num_frames,
                                     cfg.frame_rate).poses]
    seqs = [build_descriptors(pose_ae, poses, cfg.frame_rate) for poses in pose_sets]
    curve = []
    for b1 in grid:
        beta = np.zeros(tpl.num_shape)
        beta[0] = b1
        speeds = []
        for seq in seqs:
            latents = predict_latents(model, seq, beta)
            deltas = soft_ae.decode(latents)
            speeds.append(mean_vertex_speed(deltas, cfg.frame_rate))
        curve.append({"beta1": float(b1), "speed": float(np.mean(speeds))})
    return curve


def ablation_run(cfg: DeskConfig = DeskConfig(), progress=None) -> EvalReport:
    """Four-mode shape-generalization study.

    Modes: full (deshaped descriptors + transfer-augmented data),
    no_deshape (raw joint angles), no_transfer (no cross-subject synthesis),
    neither.  All modes share the template, oracle data, subspace, and seeds.
    """
    from .bodymodel import TemplateConfig, build_test_template

    def log(msg):
        if progress:
            progress(msg)

    tpl = build_test_template(TemplateConfig(num_vertices=cfg.num_vertices,
                                             num_joints=cfg.num_joints,
                                             seed=cfg.seed))
    ds = build_dataset(tpl, num_subjects=cfg.num_subjects, families=cfg.families,
                       num_frames=cfg.num_frames, frame_rate=cfg.frame_rate,
                       seed=cfg.seed)
    if cfg.mirror:
        ds = augment_mirror(tpl, ds)
    log(f"dataset ready: {len(ds.records)} sequences")

    corpus = pose_corpus(tpl, families=cfg.families, num_frames=cfg.num_frames,
                         frame_rate=cfg.frame_rate, seed=cfg.seed)
    pose_ae, _ = train_pose_ae(tpl, corpus,
                               opts=PoseTrainOptions(epochs=cfg.pose_epochs, seed=cfg.seed))
    log(f"pose autoencoder trained ({len(corpus)} poses)")

    fields = np.concatenate([r.deltas for r in ds.train()])
    pca = fit_pca(fields, min(4 * cfg.latent_dim, len(fields), fields[0].size))
    soft_ae = build_soft_ae(pca, AeSpec(latent_dim=cfg.latent_dim), seed=cfg.seed)
    train_soft_ae(soft_ae, fields, tpl.rest_mesh,
                  TrainOptions(epochs=cfg.subspace_epochs, lambda_norm=cfg.lambda_norm,
                               seed=cfg.seed))
    log("deformation subspace trained")

    ds_transfer = augment_transfer(tpl, ds, pose_ae, soft_ae,
                                   epochs=cfg.transfer_epochs, seed=cfg.seed)
    log(f"transfer augmentation: {len(ds_transfer.records)} sequences")

    report = EvalReport(config={"mode": "ablation", **cfg.to_dict(),
                                "dataset_hash": dataset_hash(ds),
                                "pose_ae_hash": pose_ae.content_hash(),
                                "soft_ae_hash": soft_ae.content_hash()})
    # sweep shapes over the held-out captured sequences (each subject's own
    # styled motion that no mode trained on), the new-subject scenario; the
    # curve averages over the whole test split to tame estimator variance
    eval_sets = [r.clip.poses for r in sorted(ds.test(), key=lambda r: r.seq_id)]

    datasets = {"full": ds_transfer, "no_deshape": ds_transfer,
                "no_transfer": ds, "neither": ds}
    encoders = {"full": pose_ae, "no_deshape": None,
                "no_transfer": pose_ae, "neither": None}
    for i, mode in enumerate(ABLATION_MODES):
        t0 = time.perf_counter()
        model = train_mode_regressor(tpl, datasets[mode], encoders[mode],
                                     soft_ae, cfg, seed_shift=i)
        report.speed_curves[mode] = speed_sweep(tpl, encoders[mode], soft_ae,
                                                model, cfg, pose_sets=eval_sets or None)
        report.runtimes[f"train_{mode}"] = (time.perf_counter() - t0) * 1000.0
        log(f"mode {mode}: range {report.curve_range(mode):.4f} m/s")
    report.validate()
    return report
