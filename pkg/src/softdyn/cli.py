"""Command-line interface.

Verbs: synth, fit, unpose, train-subspace, train-pose-ae, train-regressor,
transfer, predict, eval, ablate, serve, export.  Every command exits nonzero
on error with a one-line machine-parsable reason on stderr.  The environment
variable SOFTDYN_SEED overrides any configured seed.
"""

from __future__ import annotations

import argparse
import glob
import json
import os
import sys
import time

import numpy as np


def _seed_override(seed: int) -> int:
    env = os.environ.get("SOFTDYN_SEED")
    return int(env) if env else seed


def _parse_floats(text: str) -> np.ndarray:
    return np.array([float(x) for x in text.split(",") if x.strip() != ""])


def _load_pipeline(args):
    from .bodymodel import load_template
    from .posespace import load_pose_ae
    from .regressor import Pipeline, load_regressor
    from .subspace import load_soft_ae

    tpl = load_template(args.template)
    pose_ae = None
    epose_path = os.path.join(args.models, "pose_ae")
    if os.path.exists(epose_path + ".epose.json"):
        pose_ae = load_pose_ae(epose_path)
    soft_ae = load_soft_ae(os.path.join(args.models, f"soft_ae_k{args.latent_dim}"))
    regressor = load_regressor(os.path.join(args.models, "regressor"))
    return Pipeline(tpl=tpl, pose_ae=pose_ae, soft_ae=soft_ae, regressor=regressor)


def _dataset_motions(ds) -> dict:
    return {r.seq_id: r.clip for r in ds.records if r.provenance == "oracle"}


# ---- commands -----------------------------------------------------------------

def cmd_synth(args) -> int:
    from .bodymodel import TemplateConfig, build_test_template, save_template
    from .datagen import FAMILIES, augment_mirror, build_dataset, save_dataset

    seed = _seed_override(args.seed)
    families = tuple(args.families.split(",")) if args.families else FAMILIES
    tpl = build_test_template(TemplateConfig(num_vertices=args.vertices,
                                             num_joints=args.joints, seed=seed))
    ds = build_dataset(tpl, num_subjects=args.subjects, families=families,
                       num_frames=args.frames, frame_rate=args.rate, seed=seed)
    if args.mirror:
        ds = augment_mirror(tpl, ds)
    os.makedirs(args.out, exist_ok=True)
    save_template(tpl, os.path.join(args.out, "template"))
    save_dataset(ds, os.path.join(args.out, "data"))
    print(f"wrote template (V={tpl.num_vertices}, J={tpl.num_joints}) and "
          f"{len(ds.records)} sequences to {args.out}")
    return 0


def cmd_fit(args) -> int:
    from .bodymodel import load_template
    from .fitting import FitOptions, fit_sequence, save_fit
    from .geometry import load_mesh

    tpl = load_template(args.template)
    paths = sorted(glob.glob(os.path.join(args.scans, "*.obj")))
    if not paths:
        raise FileNotFoundError(f"no .obj scans in {args.scans}")
    scans = [load_mesh(p) for p in paths]
    opts = FitOptions(lr=args.lr, shape_steps=args.shape_steps,
                      pose_steps=args.pose_steps)
    fit = fit_sequence(tpl, scans, opts=opts)
    save_fit(fit, args.out)
    print(f"fit {len(scans)} scans: max residual {fit.residuals.max():.3e} m -> {args.out}")
    return 0


def cmd_unpose(args) -> int:
    from .bodymodel import extract_gt_displacement, load_template
    from .fitting import load_fit
    from .geometry import load_mesh

    tpl = load_template(args.template)
    fit = load_fit(args.fit)
    paths = sorted(glob.glob(os.path.join(args.scans, "*.obj")))
    if len(paths) != len(fit.thetas):
        raise ValueError(f"{len(paths)} scans but fit has {len(fit.thetas)} frames")
    deltas = np.stack([
        extract_gt_displacement(tpl, load_mesh(p), fit.beta, fit.thetas[t])
        for t, p in enumerate(paths)
    ])
    os.makedirs(args.out, exist_ok=True)
    manifest = {"format": "softdyn-displacements-v1",
                "shape": list(deltas.shape), "dtype": "<f8"}
    deltas.astype("<f8").tofile(os.path.join(args.out, "deltas.bin"))
    with open(os.path.join(args.out, "deltas.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh)
        fh.write("\n")
    print(f"extracted soft tissue for {len(paths)} scans -> {args.out}")
    return 0


def cmd_train_subspace(args) -> int:
    from .bodymodel import load_template
    from .datagen import load_dataset
    from .subspace import (AeSpec, TrainOptions, build_soft_ae, fit_pca,
                           save_pca, save_soft_ae, train_soft_ae)

    seed = _seed_override(args.seed)
    tpl = load_template(args.template)
    ds = load_dataset(args.data)
    fields = np.concatenate([r.deltas for r in ds.train()])
    os.makedirs(args.out, exist_ok=True)
    for k in [int(x) for x in args.latent_dims.split(",")]:
        pca = fit_pca(fields, min(4 * k, len(fields), fields[0].size))
        save_pca(pca, os.path.join(args.out, f"pca_k{k}"))
        ae = build_soft_ae(pca, AeSpec(latent_dim=k), seed=seed)
        hist = train_soft_ae(ae, fields, tpl.rest_mesh,
                             TrainOptions(epochs=args.epochs, lambda_norm=args.lambda_norm,
                                          seed=seed))
        save_soft_ae(ae, os.path.join(args.out, f"soft_ae_k{k}"))
        print(f"latent {k}: {args.epochs} epochs, final loss {hist.loss[-1]:.6f}")
    return 0


def cmd_train_pose_ae(args) -> int:
    from .bodymodel import load_template
    from .datagen import load_dataset, pose_corpus
    from .posespace import PoseTrainOptions, save_pose_ae, train_pose_ae

    seed = _seed_override(args.seed)
    tpl = load_template(args.template)
    if args.styles > 0:
        # clean generated corpus across many synthetic actors; static poses
        # don't need soft-tissue capture, so this can be large and noise-free
        ds = load_dataset(args.data)
        poses = pose_corpus(tpl, num_styles=args.styles,
                            frame_rate=ds.frame_rate, seed=seed,
                            stride=args.stride)
    else:
        ds = load_dataset(args.data)
        poses = [p for r in ds.train() for p in r.clip.poses[::args.stride]]
    ae, hist = train_pose_ae(tpl, poses,
                             opts=PoseTrainOptions(epochs=args.epochs, seed=seed))
    os.makedirs(args.out, exist_ok=True)
    save_pose_ae(ae, os.path.join(args.out, "pose_ae"))
    print(f"pose AE: {len(poses)} poses, {args.epochs} epochs, "
          f"final loss {hist.loss[-1]:.6f}")
    return 0


def cmd_transfer(args) -> int:
    from .bodymodel import load_template
    from .datagen import augment_transfer, load_dataset, save_dataset
    from .posespace import load_pose_ae
    from .subspace import load_soft_ae

    seed = _seed_override(args.seed)
    tpl = load_template(args.template)
    ds = load_dataset(args.data)
    pose_ae = load_pose_ae(os.path.join(args.models, "pose_ae"))
    soft_ae = load_soft_ae(os.path.join(args.models, f"soft_ae_k{args.latent_dim}"))
    out = augment_transfer(tpl, ds, pose_ae, soft_ae, epochs=args.epochs, seed=seed)
    save_dataset(out, args.out)
    added = len(out.records) - len(ds.records)
    print(f"transfer: +{added} sequences -> {args.out}")
    return 0


def cmd_train_regressor(args) -> int:
    from .bodymodel import load_template
    from .datagen import load_dataset
    from .posespace import load_pose_ae
    from .regressor import (RegressorTrainOptions, build_regressor,
                            save_regressor, train_regressor)
    from .subspace import load_soft_ae
    from .evalreport import sequence_entries

    seed = _seed_override(args.seed)
    tpl = load_template(args.template)
    ds = load_dataset(args.data)
    pose_ae = None
    if not args.raw_pose:
        pose_ae = load_pose_ae(os.path.join(args.models, "pose_ae"))
    soft_ae = load_soft_ae(os.path.join(args.models, f"soft_ae_k{args.latent_dim}"))
    entries = sequence_entries(ds, pose_ae, soft_ae, ds.train())
    model = build_regressor(entries[0]["descriptors"].shape[1],
                            entries[0]["beta"].size, soft_ae.latent_dim, seed=seed,
                            pose_ae_hash=pose_ae.content_hash() if pose_ae else "",
                            soft_ae_hash=soft_ae.content_hash())
    hist = train_regressor(model, entries,
                           RegressorTrainOptions(epochs=args.epochs, seed=seed))
    os.makedirs(args.out, exist_ok=True)
    save_regressor(model, os.path.join(args.out, "regressor"))
    print(f"regressor: {len(entries)} sequences, {args.epochs} epochs, "
          f"final loss {hist.loss[-1]:.6f}")
    return 0


def cmd_predict(args) -> int:
    from .bodymodel import ShapeParams
    from .datagen import generate_motion, load_record
    from .geometry import save_mesh
    from .regressor import predict_sequence

    pipe = _load_pipeline(args)
    beta = ShapeParams(_parse_floats(args.beta))
    if args.motion:
        directory, seq_id = os.path.split(args.motion)
        rec = load_record(directory, seq_id.removesuffix(".json"))
        poses, rate = rec.clip.poses, rec.clip.frame_rate
    else:
        clip = generate_motion(pipe.tpl, args.family, args.frames, args.rate)
        poses, rate = clip.poses, clip.frame_rate
    meshes, deltas = predict_sequence(pipe, beta, poses, rate)
    os.makedirs(args.out, exist_ok=True)
    for t, mesh in enumerate(meshes):
        save_mesh(mesh, os.path.join(args.out, f"frame_{t:04d}.obj"))
    deltas.astype("<f8").tofile(os.path.join(args.out, "deltas.bin"))
    with open(os.path.join(args.out, "deltas.json"), "w", encoding="utf-8") as fh:
        json.dump({"format": "softdyn-displacements-v1",
                   "shape": list(deltas.shape), "dtype": "<f8"}, fh)
        fh.write("\n")
    print(f"predicted {len(meshes)} frames -> {args.out}")
    return 0


def cmd_eval(args) -> int:
    from .bodymodel import load_template
    from .datagen import load_dataset
    from .evalreport import (EvalReport, dataset_hash, mean_vertex_speed,
                             recon_error_mm, speed_sweep, DeskConfig)
    from .posespace import load_pose_ae
    from .regressor import load_regressor, predict_latents
    from .subspace import (PcaModel, load_pca, load_soft_ae, pca_reconstruct)
    from .motion import build_descriptors

    seed = _seed_override(args.seed)
    tpl = load_template(args.template)
    ds = load_dataset(args.data)
    pose_ae = load_pose_ae(os.path.join(args.models, "pose_ae"))
    test_fields = np.concatenate([r.deltas for r in ds.test()])
    report = EvalReport(config={"mode": "eval", "seed": seed,
                                "dataset_hash": dataset_hash(ds),
                                "latent_dims": [int(x) for x in args.latent_dims.split(",")]})
    for k in report.config["latent_dims"]:
        pca = load_pca(os.path.join(args.models, f"pca_k{k}"))
        pca_k = PcaModel(mean=pca.mean, basis=pca.basis[:k],
                         singular_values=pca.singular_values[:k])
        soft_ae = load_soft_ae(os.path.join(args.models, f"soft_ae_k{k}"))
        report.recon_rows.append({
            "method": "pca", "latent_dim": k, "split": "test",
            "error_mm": recon_error_mm(pca_reconstruct(pca_k, test_fields), test_fields)})
        report.recon_rows.append({
            "method": "ae", "latent_dim": k, "split": "test",
            "error_mm": recon_error_mm(soft_ae.reconstruct(test_fields), test_fields)})

    soft_ae = load_soft_ae(os.path.join(args.models, f"soft_ae_k{args.latent_dim}"))
    regressor = load_regressor(os.path.join(args.models, "regressor"))
    report.config["model_hashes"] = {
        "pose_ae": pose_ae.content_hash(),
        "soft_ae": soft_ae.content_hash(),
        "regressor": regressor.net.content_hash(),
    }
    cfg = DeskConfig(num_frames=args.frames, frame_rate=ds.frame_rate,
                     num_vertices=tpl.num_vertices, num_joints=tpl.num_joints)
    enc = None if regressor.pose_ae_hash == "" else pose_ae
    eval_sets = [r.clip.poses for r in sorted(ds.test(), key=lambda r: r.seq_id)]
    report.speed_curves["pipeline"] = speed_sweep(tpl, enc, soft_ae, regressor, cfg,
                                                  pose_sets=eval_sets or None)

    # informational: pose-code sensitivity to extremity vs large joints
    from .posespace import sensitivity_report
    probe_poses = [r.clip.poses[i] for r in ds.test()[:2] for i in (0, 10)]
    report.config["pose_code_sensitivity"] = sensitivity_report(pose_ae, probe_poses)

    # per-frame runtime of the pose-encode + regress + decode path
    test_rec = ds.test()[0] if ds.test() else ds.records[0]
    t0 = time.perf_counter()
    seq = build_descriptors(enc, test_rec.clip.poses, test_rec.clip.frame_rate)
    latents = predict_latents(regressor, seq, ds.subjects[test_rec.subject_id].beta)
    soft_ae.decode(latents)
    elapsed = (time.perf_counter() - t0) * 1000.0
    report.runtimes["pipeline_ms_per_frame"] = elapsed / test_rec.clip.num_frames

    report.validate()
    paths = report.save(args.out, stem="report", figures=not args.no_figures)
    print(f"report written: {', '.join(os.path.basename(p) for p in paths)}")
    return 0


def cmd_ablate(args) -> int:
    from .evalreport import ablation_run, DeskConfig

    cfg_kwargs = {}
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            cfg_kwargs = json.load(fh)
    if "families" in cfg_kwargs:
        cfg_kwargs["families"] = tuple(cfg_kwargs["families"])
    cfg = DeskConfig(**cfg_kwargs)
    cfg.seed = _seed_override(cfg.seed)
    report = ablation_run(cfg, progress=lambda m: print(m, flush=True))
    paths = report.save(args.out, stem="ablation", figures=not args.no_figures)
    for mode in report.speed_curves:
        print(f"{mode}: speed range {report.curve_range(mode):.4f} m/s")
    print(f"report written: {', '.join(os.path.basename(p) for p in paths)}")
    return 0


def cmd_serve(args) -> int:
    from .datagen import load_dataset
    from .service import SoftDynService, serve

    pipe = _load_pipeline(args)
    ds = load_dataset(args.data)
    service = SoftDynService(pipe, _dataset_motions(ds))
    server = serve(service, port=args.port, host=args.host)
    print(f"serving on http://{args.host}:{args.port} (Ctrl-C to stop)")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        server.shutdown()
    return 0


def cmd_export(args) -> int:
    import shutil

    pipe = _load_pipeline(args)  # validates that everything loads
    os.makedirs(args.out, exist_ok=True)
    copied = []
    for name in ("template.json", "template.bin"):
        src = args.template + name.removeprefix("template")
        shutil.copy2(src, os.path.join(args.out, name))
        copied.append(name)
    for fn in os.listdir(args.models):
        shutil.copy2(os.path.join(args.models, fn), os.path.join(args.out, fn))
        copied.append(fn)
    manifest = {"format": "softdyn-bundle-v1", "latent_dim": args.latent_dim,
                "files": sorted(copied)}
    with open(os.path.join(args.out, "bundle.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1)
        fh.write("\n")
    print(f"bundle with {len(copied)} files -> {args.out}")
    return 0


# ---- parser ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="softdyn",
                                description="soft-tissue dynamics for parametric bodies")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate template and synthetic dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--vertices", type=int, default=500)
    s.add_argument("--joints", type=int, default=24)
    s.add_argument("--subjects", type=int, default=5)
    s.add_argument("--families", default="")
    s.add_argument("--frames", type=int, default=120)
    s.add_argument("--rate", type=float, default=60.0)
    s.add_argument("--seed", type=int, default=42)
    s.add_argument("--mirror", action=argparse.BooleanOptionalAction, default=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("fit", help="recover shape and pose from scans")
    s.add_argument("--template", required=True)
    s.add_argument("--scans", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--lr", type=float, default=1e-2)
    s.add_argument("--shape-steps", type=int, default=400)
    s.add_argument("--pose-steps", type=int, default=150)
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("unpose", help="extract soft-tissue displacements from scans")
    s.add_argument("--template", required=True)
    s.add_argument("--scans", required=True)
    s.add_argument("--fit", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_unpose)

    s = sub.add_parser("train-subspace", help="fit PCA and train the deformation autoencoder")
    s.add_argument("--data", required=True)
    s.add_argument("--template", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--latent-dims", default="25,50")
    s.add_argument("--epochs", type=int, default=40)
    s.add_argument("--lambda-norm", type=float, default=50.0)
    s.add_argument("--seed", type=int, default=42)
    s.set_defaults(func=cmd_train_subspace)

    s = sub.add_parser("train-pose-ae", help="train the pose disentanglement autoencoder")
    s.add_argument("--data", required=True)
    s.add_argument("--template", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--epochs", type=int, default=8)
    s.add_argument("--styles", type=int, default=20,
                   help="synthetic actors in the generated pose corpus; 0 uses dataset poses")
    s.add_argument("--stride", type=int, default=4)
    s.add_argument("--seed", type=int, default=42)
    s.set_defaults(func=cmd_train_pose_ae)

    s = sub.add_parser("transfer", help="augment the dataset by cross-subject motion transfer")
    s.add_argument("--data", required=True)
    s.add_argument("--template", required=True)
    s.add_argument("--models", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--latent-dim", type=int, default=25)
    s.add_argument("--epochs", type=int, default=300)
    s.add_argument("--seed", type=int, default=42)
    s.set_defaults(func=cmd_transfer)

    s = sub.add_parser("train-regressor", help="train the recurrent soft-tissue regressor")
    s.add_argument("--data", required=True)
    s.add_argument("--template", required=True)
    s.add_argument("--models", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--latent-dim", type=int, default=25)
    s.add_argument("--epochs", type=int, default=60)
    s.add_argument("--raw-pose", action="store_true",
                   help="feed raw joint angles instead of the disentangled code")
    s.add_argument("--seed", type=int, default=42)
    s.set_defaults(func=cmd_train_regressor)

    s = sub.add_parser("predict", help="animate a shape through the trained pipeline")
    s.add_argument("--template", required=True)
    s.add_argument("--models", required=True)
    s.add_argument("--beta", required=True, help="comma-separated shape coefficients")
    s.add_argument("--motion", default="", help="sequence container path")
    s.add_argument("--family", default="run")
    s.add_argument("--frames", type=int, default=120)
    s.add_argument("--rate", type=float, default=60.0)
    s.add_argument("--latent-dim", type=int, default=25)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("eval", help="reconstruction and shape-generalization report")
    s.add_argument("--data", required=True)
    s.add_argument("--template", required=True)
    s.add_argument("--models", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--latent-dims", default="25,50")
    s.add_argument("--latent-dim", type=int, default=25)
    s.add_argument("--frames", type=int, default=120)
    s.add_argument("--seed", type=int, default=42)
    s.add_argument("--no-figures", action="store_true")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("ablate", help="four-mode disentanglement ablation study")
    s.add_argument("--out", required=True)
    s.add_argument("--config", default="", help="JSON file of DeskConfig overrides")
    s.add_argument("--no-figures", action="store_true")
    s.set_defaults(func=cmd_ablate)

    s = sub.add_parser("serve", help="run the interactive exploration service")
    s.add_argument("--data", required=True)
    s.add_argument("--template", required=True)
    s.add_argument("--models", required=True)
    s.add_argument("--latent-dim", type=int, default=25)
    s.add_argument("--port", type=int, default=8787)
    s.add_argument("--host", default="127.0.0.1")
    s.set_defaults(func=cmd_serve)

    s = sub.add_parser("export", help="bundle template and models for deployment")
    s.add_argument("--template", required=True)
    s.add_argument("--models", required=True)
    s.add_argument("--latent-dim", type=int, default=25)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_export)

    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # one-line machine-parsable failure
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
