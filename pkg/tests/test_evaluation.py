import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dynavo.dataset_io import Trajectory
from dynavo.evaluation import (EvaluationError, associate_trajectories, ate, evaluate_files, rpe,
                               umeyama_align)
from dynavo.geometry import PoseSE3, so3_exp

from oracles import ate_bruteforce, pose_matrix, rpe_bruteforce


def random_trajectory(rng, n=40, t0=100.0):
    poses, pos, rot = [], np.zeros(3), PoseSE3()
    for k in range(n):
        pos = pos + rng.normal(scale=0.05, size=3)
        rot = rot @ PoseSE3(so3_exp(rng.normal(scale=0.05, size=3)))
        poses.append((t0 + k / 30, PoseSE3(rot.rotation, pos)))
    return Trajectory(poses)


def perturbed(traj, rng, sigma=0.01):
    return Trajectory([(t, p @ PoseSE3(so3_exp(rng.normal(scale=sigma, size=3)), rng.normal(scale=sigma, size=3)))
                       for t, p in traj])


def rigid(rng):
    axis = rng.normal(size=3)
    return PoseSE3(so3_exp(axis / np.linalg.norm(axis) * rng.uniform(0, np.pi)), rng.uniform(-3, 3, 3))


# ---------------------------------------------------------------- association and alignment

def test_identical_timestamps_pair_fully(rng):
    gt = random_trajectory(rng, 10)
    assert len(associate_trajectories(gt, gt)) == 10


def test_shifted_beyond_tolerance_errors(rng):
    gt = random_trajectory(rng, 10)
    est = Trajectory([(t + 0.5, p) for t, p in gt])
    with pytest.raises(EvaluationError):
        ate(est, Trajectory([(t, p) for t, p in gt][:5]))
    with pytest.raises(EvaluationError):
        associate_trajectories(Trajectory([(t + 100, p) for t, p in gt]), gt)


def test_umeyama_identity_and_constructed():
    rng = np.random.default_rng(3)
    P = rng.normal(size=(12, 3))
    pairs = [(PoseSE3(translation=p), PoseSE3(translation=p)) for p in P]
    R, t = umeyama_align(pairs)
    np.testing.assert_allclose(R, np.eye(3), atol=1e-12)
    np.testing.assert_allclose(t, 0, atol=1e-12)
    T = PoseSE3(so3_exp([0, 0, np.radians(30)]), [0.4, -1.0, 2.0])
    R, t = umeyama_align([(PoseSE3(translation=p), PoseSE3(translation=T.apply(p))) for p in P])
    np.testing.assert_allclose(R, T.R, atol=1e-9)
    np.testing.assert_allclose(t, T.translation, atol=1e-9)


def test_umeyama_degenerate():
    two = [(PoseSE3(translation=[k, 0, 0]), PoseSE3(translation=[k, 0, 0])) for k in range(2)]
    with pytest.raises(EvaluationError):
        umeyama_align(two)
    line = [(PoseSE3(translation=[k, 0, 0]), PoseSE3(translation=[k, 0, 0])) for k in range(5)]
    with pytest.raises(EvaluationError):
        umeyama_align(line)


# ---------------------------------------------------------------- ATE

def test_ate_self_and_offset(rng):
    gt = random_trajectory(rng)
    a = ate(gt, gt)
    assert a.rmse == 0.0 and a.std == 0.0
    shifted = gt.transformed(PoseSE3(translation=[1.0, -2.0, 0.5]))
    assert ate(shifted, gt).rmse < 1e-9


def test_ate_five_pose_replay():
    gt = Trajectory([(float(k), PoseSE3(translation=p)) for k, p in
                     enumerate([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 1], [0.5, 0.2, 0.3]])])
    est = Trajectory([(float(k), PoseSE3(translation=p)) for k, p in
                      enumerate([[0.1, 0, 0], [1, 0.1, 0], [1, 1, -0.1], [0, 1.05, 1], [0.5, 0.2, 0.4]])])
    a = ate(est, gt)
    rmse, std = ate_bruteforce([(pose_matrix(p), pose_matrix(q)) for (_, p), (_, q) in zip(est, gt)])
    assert abs(a.rmse - rmse) < 1e-12 and abs(a.std - std) < 1e-12


@settings(max_examples=25)
@given(st.integers(0, 2**31 - 1))
def test_ate_rigid_invariance_and_definition(seed):
    rng = np.random.default_rng(seed)
    gt = random_trajectory(rng, 20)
    est = perturbed(gt, rng)
    a = ate(est, gt)
    b = ate(est.transformed(rigid(rng)), gt)
    assert abs(a.rmse - b.rmse) < 1e-9
    e = a.per_frame_errors
    assert abs(a.rmse ** 2 - (e.mean() ** 2 + e.var())) < 1e-9


# ---------------------------------------------------------------- RPE

def test_rpe_self_zero(rng):
    gt = random_trajectory(rng)
    r = rpe(gt, gt)
    assert r.trans_rmse == 0.0 and r.rot_rmse == 0.0


def test_rpe_constant_step_offset(rng):
    gt = random_trajectory(rng, 30)
    poses = [gt[0]]
    for (t0, q0), (t1, q1) in zip(gt, list(gt)[1:]):
        step = (q0.inverse() @ q1) @ PoseSE3(translation=[0.01, 0, 0])
        poses.append((t1, poses[-1][1] @ step))
    r = rpe(Trajectory(poses), gt)
    assert abs(r.trans_rmse - 0.01) < 1e-9 and r.trans_std < 1e-9


def test_rpe_single_rotation_error():
    gt = Trajectory([(k / 30, PoseSE3(translation=[0.1 * k, 0, 0])) for k in range(11)])
    # poses from index 5 on carry an extra 5 degree yaw: exactly one of the 10 steps rotates wrongly
    yaw = so3_exp([0, 0, np.radians(5)])
    est = Trajectory([(t, PoseSE3(yaw, p.translation) if k >= 5 else p) for k, (t, p) in enumerate(gt)])
    r = rpe(est, gt)
    assert abs(r.rot_rmse - 5 / np.sqrt(10)) < 1e-9


def test_rpe_insufficient_pairs():
    one = Trajectory([(0.0, PoseSE3())])
    with pytest.raises(EvaluationError):
        rpe(one, one)


@settings(max_examples=25)
@given(st.integers(0, 2**31 - 1))
def test_rpe_global_transform_invariance(seed):
    rng = np.random.default_rng(seed)
    gt = random_trajectory(rng, 20)
    est = perturbed(gt, rng)
    base = rpe(est, gt)
    for moved in (rpe(est.transformed(rigid(rng)), gt), rpe(est, gt.transformed(rigid(rng)))):
        assert abs(moved.trans_rmse - base.trans_rmse) < 1e-9
        assert abs(moved.rot_rmse - base.rot_rmse) < 1e-9


def test_rpe_matches_bruteforce(rng):
    gt = random_trajectory(rng, 25)
    est = perturbed(gt, rng, 0.02)
    r = rpe(est, gt, delta=2)
    ref = rpe_bruteforce([(pose_matrix(p), pose_matrix(q)) for (_, p), (_, q) in zip(est, gt)], delta=2)
    np.testing.assert_allclose([r.trans_rmse, r.trans_std, r.rot_rmse, r.rot_std], ref, atol=1e-9)


# ---------------------------------------------------------------- reports

def test_reports_written(tmp_path, rng):
    gt = random_trajectory(rng)
    row = evaluate_files(perturbed(gt, rng), gt, tmp_path, "demo")
    with open(tmp_path / "metrics.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert rows[0]["sequence"] == "demo" and rows[0]["rpe_delta_frames"] == "1"
    assert abs(float(rows[0]["ate_rmse"]) - row["ate_rmse"]) < 1e-8
    svg = (tmp_path / "trajectory.svg").read_text()
    assert svg.startswith("<svg") and "polyline" in svg and "<line" in svg
