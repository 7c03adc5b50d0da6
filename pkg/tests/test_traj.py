import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dslr.geometry import Pose
from dslr.traj import (AssociationError, Trajectory, associate, ate, drift, format_tum, parse_tum, read_tum, rpe,
                       write_tum)


def _walk(n=40, seed=0, dt=0.1):
    rng = np.random.default_rng(seed)
    yaw = np.cumsum(rng.normal(0, 0.05, n))
    xy = np.cumsum(np.c_[np.cos(yaw), np.sin(yaw)] * 0.5, axis=0)
    return Trajectory.from_poses(Pose.from_xyz_yaw(x, y, 0.1 * np.sin(k), a, timestamp=k * dt)
                                 for k, ((x, y), a) in enumerate(zip(xy, yaw)))


def _shifted(traj, offsets):
    return Trajectory(traj.timestamps, traj.translations + offsets, traj.rotations)


def _random_pose(rng):
    q = rng.normal(size=4)
    return Pose(q / np.linalg.norm(q), rng.normal(size=3) * 5)


def test_tum_round_trip_is_bit_exact(tmp_path):
    t = _walk()
    write_tum(tmp_path / "t.txt", t, header="walk")
    back = read_tum(tmp_path / "t.txt")
    for a, b in ((t.timestamps, back.timestamps), (t.translations, back.translations), (t.rotations, back.rotations)):
        assert np.array_equal(a, b)
    assert format_tum(back, header="walk") == (tmp_path / "t.txt").read_text()


def test_tum_parse_errors():
    with pytest.raises(ValueError, match=":2:"):
        parse_tum("# c\n0 1 2 3\n")
    with pytest.raises(ValueError):
        parse_tum("1 0 0 0 0 0 0 1\n0 0 0 0 0 0 0 1\n")
    with pytest.raises(ValueError):
        parse_tum("0 0 0 0 0 0 0 2\n")


def test_association_cases():
    t = _walk(10)
    assert np.array_equal(associate(t, t), np.c_[np.arange(10), np.arange(10)])
    late = Trajectory(t.timestamps + 1.0, t.translations, t.rotations)
    with pytest.raises(AssociationError):
        associate(late, t)
    jitter = np.random.default_rng(0).uniform(-0.009, 0.009, 10)
    near = Trajectory(t.timestamps + jitter, t.translations, t.rotations)
    assert len(associate(near, t, max_dt=0.01)) == 10


def test_association_uses_each_pose_once():
    a = Trajectory([0.0, 0.01], np.zeros((2, 3)), np.tile([0, 0, 0, 1.0], (2, 1)))
    b = Trajectory([0.005], np.zeros((1, 3)), [[0, 0, 0, 1.0]])
    assert associate(a, b).tolist() == [[0, 0]]


def test_ate_examples():
    gt = _walk()
    assert ate(gt, gt) < 1e-12 and ate(gt, gt, align=False) == 0.0
    off = np.array([0.3, -0.4, 0.0])
    assert ate(_shifted(gt, off), gt, align=False) == pytest.approx(0.5)
    moved = gt.transformed(_random_pose(np.random.default_rng(1)))
    assert ate(moved, gt) < 1e-9
    with pytest.raises(ValueError):
        ate(Trajectory.from_poses(gt.poses()[:2]), gt)


def test_rpe_examples():
    gt = _walk()
    assert rpe(gt, gt) == (0.0, 0.0)
    tr, rot = rpe(gt.transformed(_random_pose(np.random.default_rng(2))), gt)
    assert tr < 1e-9 and rot < 1e-6
    with pytest.raises(ValueError):
        rpe(gt, gt, delta=len(gt))


def test_rpe_forward_bias():
    gt = Trajectory.from_poses(Pose.from_xyz_yaw(k * 1.0, 0, timestamp=k) for k in range(20))
    est = Trajectory.from_poses(Pose.from_xyz_yaw(k * 1.1, 0, timestamp=k) for k in range(20))
    tr, rot = rpe(est, gt)
    assert tr == pytest.approx(0.1) and rot == 0.0


def test_drift_arithmetic_series():
    gt = _walk(51)
    errs = np.linspace(0, 2.0, 51)
    est = _shifted(gt, np.c_[errs, np.zeros(51), np.zeros(51)])
    assert drift(est, gt) == pytest.approx(1.0)
    assert drift(_shifted(gt, [0, 0, 0.7]), gt) == pytest.approx(0.7)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.0, 2.0))
def test_ate_and_drift_properties(seed, scale):
    rng = np.random.default_rng(seed)
    gt = _walk(25, seed)
    est = _shifted(gt, rng.normal(size=(25, 3)) * scale)
    raw = ate(est, gt, align=False)
    assert ate(est, gt) <= raw + 1e-12
    # drift is the mean and unaligned ATE the RMS of the same residual norms
    assert drift(est, gt) <= raw + 1e-12


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_rpe_invariant_to_global_motion(seed):
    rng = np.random.default_rng(seed)
    gt = _walk(20, seed)
    est = _shifted(gt, rng.normal(size=(20, 3)) * 0.2)
    a = rpe(est, gt, delta=2)
    b = rpe(est.transformed(_random_pose(rng)), gt, delta=2)
    assert b[0] == pytest.approx(a[0], abs=1e-9) and b[1] == pytest.approx(a[1], abs=1e-6)
