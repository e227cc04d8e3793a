import json
import os

import numpy as np
import pytest

from softdyn.evalreport import (EvalReport, dataset_hash, mean_vertex_speed,
                                recon_error_mm, render_figures)


class TestReconError:
    def test_perfect_reconstruction_zero(self):
        x = np.random.default_rng(0).normal(size=(4, 10, 3))
        assert recon_error_mm(x, x) == 0.0

    def test_known_offset(self):
        ref = np.zeros((2, 5, 3))
        rec = ref.copy()
        rec[..., 0] = 0.001  # 1 mm along x everywhere
        assert recon_error_mm(rec, ref) == pytest.approx(1.0)

    def test_full_rank_pca_near_zero_on_training_data(self):
        from softdyn.subspace import fit_pca, pca_reconstruct

        rng = np.random.default_rng(1)
        X = rng.normal(size=(12, 30))
        pca = fit_pca(X, 12)
        err = recon_error_mm(pca_reconstruct(pca, X.reshape(12, 10, 3)),
                             X.reshape(12, 10, 3))
        assert err < 1e-9


class TestMeanVertexSpeed:
    def test_constant_deltas_zero(self):
        d = np.tile(np.random.default_rng(2).normal(size=(1, 6, 3)), (5, 1, 1))
        assert mean_vertex_speed(d, 60.0) == 0.0

    def test_alternating_single_vertex(self):
        # one vertex flips between +d and -d at 60 fps: every frame step moves
        # it by 2|d|, so the per-vertex mean is 2|d|*60/V
        d = np.zeros((4, 5, 3))
        vec = np.array([0.001, 0.002, -0.001])
        for t in range(4):
            d[t, 2] = vec if t % 2 == 0 else -vec
        expected = 2 * np.linalg.norm(vec) * 60.0 / 5
        assert mean_vertex_speed(d, 60.0) == pytest.approx(expected)

    def test_single_frame_zero(self):
        assert mean_vertex_speed(np.zeros((1, 4, 3)), 60.0) == 0.0

    def test_soft_vs_stiff_ordering(self, mini_pipeline):
        pipe, ds = mini_pipeline
        soft = [r for r in ds.records if r.subject_id == "s00" and r.provenance == "oracle"]
        stiff = [r for r in ds.records if r.subject_id == "s02" and r.provenance == "oracle"]
        v_soft = np.mean([mean_vertex_speed(r.deltas, 60.0) for r in soft])
        v_stiff = np.mean([mean_vertex_speed(r.deltas, 60.0) for r in stiff])
        assert v_soft > v_stiff


class TestEvalReport:
    def make_report(self):
        return EvalReport(
            config={"seed": 1, "note": "test"},
            recon_rows=[
                {"method": "pca", "latent_dim": 25, "split": "test", "error_mm": 1.5},
                {"method": "ae", "latent_dim": 25, "split": "test", "error_mm": 1.2},
            ],
            speed_curves={"full": [{"beta1": -2.5, "speed": 0.2},
                                   {"beta1": 0.5, "speed": 0.05}]},
            runtimes={"pipeline_ms_per_frame": 3.2},
        )

    def test_json_csv_exclude_wall_clock(self):
        r = self.make_report()
        assert "runtimes" not in r.to_json()
        assert "runtime" not in r.to_csv()

    def test_curve_range(self):
        r = self.make_report()
        assert r.curve_range("full") == pytest.approx(0.15)

    def test_save_writes_reports_and_figures(self, tmp_path):
        r = self.make_report()
        paths = r.save(tmp_path, stem="t")
        names = {os.path.basename(p) for p in paths}
        assert {"t.json", "t.csv", "t_speed.png", "t_recon.png"} <= names
        assert (tmp_path / "t_timings.json").exists()
        loaded = json.loads((tmp_path / "t.json").read_text())
        assert loaded["config"]["seed"] == 1

    def test_report_bytes_reproducible(self, tmp_path):
        a = self.make_report().save(tmp_path / "a", stem="r")
        b = self.make_report().save(tmp_path / "b", stem="r")
        for pa, pb in zip(a, b):
            assert open(pa, "rb").read() == open(pb, "rb").read(), pa

    def test_validate_rejects_non_finite(self):
        r = self.make_report()
        r.recon_rows[0]["error_mm"] = float("nan")
        with pytest.raises(ValueError):
            r.validate()


class TestDatasetHash:
    def test_stable_and_sensitive(self, mini_pipeline):
        pipe, ds = mini_pipeline
        h1 = dataset_hash(ds)
        h2 = dataset_hash(ds)
        assert h1 == h2
        import copy

        ds2 = copy.copy(ds)
        ds2.records = list(ds.records)
        import dataclasses

        mutated = dataclasses.replace(ds.records[0],
                                      deltas=ds.records[0].deltas + 1e-9)
        ds2.records[0] = mutated
        assert dataset_hash(ds2) != h1
