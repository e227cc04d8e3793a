import numpy as np
import pytest

from softdyn.bodymodel import TemplateConfig, build_test_template
from softdyn.datagen import build_dataset
from softdyn.evalreport import sequence_entries
from softdyn.posespace import PoseTrainOptions, train_pose_ae
from softdyn.regressor import (Pipeline, RegressorTrainOptions, build_regressor,
                               train_regressor)
from softdyn.subspace import AeSpec, build_soft_ae, fit_pca


@pytest.fixture(scope="session")
def mini_pipeline():
    """A small but genuinely trained pipeline shared across test modules."""
    tpl = build_test_template(TemplateConfig(num_vertices=120, num_joints=9, seed=4))
    ds = build_dataset(tpl, num_subjects=3, families=("walk", "run", "squat"),
                       num_frames=48, seed=11)
    corpus = [p for r in ds.train() for p in r.clip.poses[::3]]
    pose_ae, _ = train_pose_ae(tpl, corpus, opts=PoseTrainOptions(epochs=6, seed=0))
    fields = np.concatenate([r.deltas for r in ds.train()])
    pca = fit_pca(fields, 32)
    soft_ae = build_soft_ae(pca, AeSpec(latent_dim=8, dropout=0.0), seed=2)
    entries = sequence_entries(ds, pose_ae, soft_ae, ds.train())
    model = build_regressor(entries[0]["descriptors"].shape[1], 10, 8, seed=3,
                            pose_ae_hash=pose_ae.content_hash(),
                            soft_ae_hash=soft_ae.content_hash())
    train_regressor(model, entries, RegressorTrainOptions(epochs=40, seed=0))
    pipe = Pipeline(tpl=tpl, pose_ae=pose_ae, soft_ae=soft_ae, regressor=model)
    return pipe, ds
