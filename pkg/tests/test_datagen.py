import numpy as np
import pytest

from softdyn.bodymodel import TemplateConfig, build_test_template
from softdyn.datagen import (FAMILIES, DatagenError, SubjectStyle, build_dataset,
                             generate_motion, integrate_soft_oscillator,
                             load_dataset, make_style, make_subject,
                             mirror_sequence, oracle_soft_tissue, save_dataset,
                             softness_scalar)


@pytest.fixture(scope="module")
def tpl():
    return build_test_template(TemplateConfig(num_vertices=500, num_joints=24, seed=1))


class TestSubjects:
    def test_softness_endpoints(self):
        assert softness_scalar(np.array([-2.5])) == pytest.approx(1.0)
        assert softness_scalar(np.array([0.5])) == pytest.approx(0.1)
        assert softness_scalar(np.array([5.0])) == 0.0  # clamped

    def test_subject_fields(self, tpl):
        s = make_subject(tpl, "a", np.array([-2.0] + [0.0] * 9))
        assert s.softness.shape == (500,)
        assert 0 <= s.softness.min() and s.softness.max() <= 1
        assert s.omega > 0 and 0 < s.zeta <= 2


class TestScriptedMotions:
    def test_deterministic(self, tpl):
        a = generate_motion(tpl, "walk", 40, 60.0)
        b = generate_motion(tpl, "walk", 40, 60.0)
        for pa, pb in zip(a.poses, b.poses):
            assert pa.theta.tobytes() == pb.theta.tobytes()

    def test_jump_root_height_is_exact_parabola_in_flight(self, tpl):
        # second differences of a quadratic sampled uniformly are constant;
        # flight spans tau in [0.42, 1.02) s, i.e. frames 26..61 at 60 fps
        clip = generate_motion(tpl, "jump", 120, 60.0)
        y = np.array([p.root_translation[1] for p in clip.poses])
        flight = y[27:61]
        dd = np.diff(flight, n=2)
        assert np.abs(dd - dd[0]).max() < 1e-12
        assert dd[0] < 0  # gravity curves the arc downward

    def test_styles_differ_between_subjects(self, tpl):
        s1 = make_style(24, seed=100)
        s2 = make_style(24, seed=101)
        a = generate_motion(tpl, "walk", 30, 60.0, s1)
        b = generate_motion(tpl, "walk", 30, 60.0, s2)
        diff = max(np.abs(pa.theta - pb.theta).max() for pa, pb in zip(a.poses, b.poses))
        assert diff > 1e-3

    def test_style_offsets_touch_only_extremities(self):
        style = make_style(24, seed=3)
        body = [j for j in range(24) if j not in {10, 11, 15, 20, 21, 22, 23}]
        assert np.abs(style.joint_offsets[body]).max() == 0
        ext = sorted({10, 11, 15, 20, 21, 22, 23})
        assert (np.abs(style.joint_offsets[ext]) <= 0.18).all()
        assert np.abs(style.joint_offsets[ext]).max() > 0.01


class TestOracle:
    def test_static_pose_no_soft_tissue(self, tpl):
        subj = make_subject(tpl, "a", np.array([-2.5] + [0.0] * 9))
        clip = generate_motion(tpl, "walk", 1, 60.0)
        poses = [clip.poses[0]] * 30
        d = oracle_soft_tissue(tpl, subj, poses, 60.0)
        assert np.abs(d).max() < 1e-12

    def test_zero_softness_no_soft_tissue(self, tpl):
        subj = make_subject(tpl, "a", np.array([10.0] + [0.0] * 9))  # clamps to 0
        assert subj.softness.max() == 0.0
        clip = generate_motion(tpl, "run", 40, 60.0)
        d = oracle_soft_tissue(tpl, subj, clip.poses, 60.0)
        assert np.abs(d).max() < 1e-12

    def test_sinusoidal_forcing_matches_closed_form(self):
        # analytic steady state of u'' + 2 z w u' + w^2 u = -s A sin(W t);
        # amplitude kept small so the stiffening term is negligible
        omega, zeta, soft, A, W, rate = 10.0, 0.3, 0.7, 0.5, 5.0, 60.0
        T = int(30 * rate)
        t = np.arange(T) / rate
        accel = np.zeros((T, 1, 3))
        accel[:, 0, 0] = A * np.sin(W * t)
        out = integrate_soft_oscillator(accel, np.array([soft]), omega, zeta, 1.0 / rate)
        measured = np.abs(out[-int(4 * rate):, 0, 0]).max()
        expected = soft * A / np.sqrt((omega**2 - W**2) ** 2 + (2 * zeta * omega * W) ** 2)
        assert abs(measured - expected) / expected < 0.05

    def test_unstable_config_rejected(self):
        with pytest.raises(DatagenError, match="unstable"):
            integrate_soft_oscillator(np.zeros((2, 1, 3)), np.array([1.0]), 200.0, 0.5, 1 / 60)

    def test_soft_subject_moves_more(self, tpl):
        clip = generate_motion(tpl, "run", 60, 60.0)
        soft = make_subject(tpl, "a", np.array([-2.5] + [0.0] * 9))
        stiff = make_subject(tpl, "b", np.array([0.5] + [0.0] * 9))
        d_soft = oracle_soft_tissue(tpl, soft, clip.poses, 60.0)
        d_stiff = oracle_soft_tissue(tpl, stiff, clip.poses, 60.0)

        def speed(d):
            return np.linalg.norm(np.diff(d, axis=0), axis=2).mean() * 60

        assert speed(d_soft) > 2 * speed(d_stiff)


class TestMirroring:
    def test_involution_exact(self, tpl):
        style = make_style(24, seed=5)
        clip = generate_motion(tpl, "walk", 20, 60.0, style)
        subj = make_subject(tpl, "a", np.array([-1.0] + [0.0] * 9))
        deltas = oracle_soft_tissue(tpl, subj, clip.poses, 60.0)
        m1, d1 = mirror_sequence(tpl, clip, deltas)
        m2, d2 = mirror_sequence(tpl, m1, d1)
        assert m2.family == clip.family
        for pa, pb in zip(clip.poses, m2.poses):
            assert pa.theta.tobytes() == pb.theta.tobytes()
            assert pa.root_translation.tobytes() == pb.root_translation.tobytes()
        assert deltas.tobytes() == d2.tobytes()

    def test_left_arm_raise_becomes_right(self, tpl):
        clip = generate_motion(tpl, "arm_raise_l", 20, 60.0)
        mirrored, _ = mirror_sequence(tpl, clip, np.zeros((20, 500, 3)))
        th = clip.poses[10].theta
        mth = mirrored.poses[10].theta
        # joint 16 = left shoulder, 17 = right shoulder
        assert np.abs(th[16]).sum() > 0.1 and np.abs(th[17]).sum() < 1e-12
        assert np.abs(mth[17]).sum() > 0.1 and np.abs(mth[16]).sum() < 1e-12

    def test_delta_magnitudes_preserved(self, tpl):
        rng = np.random.default_rng(0)
        deltas = rng.normal(size=(5, 500, 3))
        clip = generate_motion(tpl, "sway", 5, 60.0)
        _, md = mirror_sequence(tpl, clip, deltas)
        orig = np.linalg.norm(deltas, axis=2)
        got = np.linalg.norm(md, axis=2)[:, tpl.mirror_map]
        np.testing.assert_allclose(got, orig, atol=1e-15)


class TestDataset:
    def test_build_deterministic_and_split_disjoint(self, tpl):
        a = build_dataset(tpl, num_subjects=2, families=("walk", "jump"), num_frames=30, seed=9)
        b = build_dataset(tpl, num_subjects=2, families=("walk", "jump"), num_frames=30, seed=9)
        assert [r.seq_id for r in a.records] == [r.seq_id for r in b.records]
        assert all(x.deltas.tobytes() == y.deltas.tobytes()
                   for x, y in zip(a.records, b.records))
        train_ids = {r.seq_id for r in a.train()}
        test_ids = {r.seq_id for r in a.test()}
        assert train_ids and test_ids and not (train_ids & test_ids)

    def test_all_generated_data_finite(self, tpl):
        ds = build_dataset(tpl, num_subjects=2, families=FAMILIES[:4], num_frames=40, seed=2)
        ds.validate(tpl)  # raises on NaN/inf or shape problems

    def test_save_load_round_trip(self, tpl, tmp_path):
        ds = build_dataset(tpl, num_subjects=2, families=("walk",), num_frames=20, seed=3)
        save_dataset(ds, tmp_path / "data")
        back = load_dataset(tmp_path / "data")
        assert sorted(back.subjects) == sorted(ds.subjects)
        for ra, rb in zip(ds.records, back.records):
            assert ra.seq_id == rb.seq_id and ra.split == rb.split
            assert ra.deltas.tobytes() == rb.deltas.tobytes()
            assert all(pa.theta.tobytes() == pb.theta.tobytes()
                       for pa, pb in zip(ra.clip.poses, rb.clip.poses))
        s = ds.subjects["s00"]
        b = back.subjects["s00"]
        assert s.softness.tobytes() == b.softness.tobytes()
        assert s.omega == b.omega
