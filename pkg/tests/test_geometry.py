import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dslr.geometry import (Pose, compose, inverse, matrix_to_quat, quat_to_matrix, relative, rotation_angle_deg,
                           transform_points, translation_distance)

finite = st.floats(-50, 50, allow_nan=False)


@st.composite
def poses(draw):
    q = np.array([draw(st.floats(-1, 1)) for _ in range(4)])
    if np.linalg.norm(q) < 1e-3:
        q = np.array([0.0, 0.0, 0.0, 1.0])
    q = q / np.linalg.norm(q)
    return Pose(q, [draw(finite) for _ in range(3)])


def test_identity_pose_leaves_points():
    xyz = np.random.default_rng(0).normal(size=(10, 3))
    assert np.array_equal(transform_points(xyz, Pose()), xyz)


def test_translation_moves_origin():
    assert np.allclose(transform_points([[0, 0, 0]], Pose(translation=[1, 0, 0])), [[1, 0, 0]])


def test_non_unit_quaternion_rejected():
    with pytest.raises(ValueError):
        Pose([0, 0, 0, 2.0])


def test_yaw_quarter_turn():
    p = Pose.from_xyz_yaw(0, 0, yaw=np.pi / 2)
    assert np.allclose(transform_points([[1, 0, 0]], p), [[0, 1, 0]])
    assert rotation_angle_deg(p) == pytest.approx(90.0)


@given(poses())
def test_transform_then_inverse_recovers_points(p):
    xyz = np.random.default_rng(1).normal(size=(20, 3)) * 10
    back = transform_points(transform_points(xyz, p), inverse(p))
    assert np.allclose(back, xyz, atol=1e-9 * (1 + np.abs(p.translation).max()))


@given(poses(), poses(), poses())
def test_compose_is_associative(a, b, c):
    left = compose(compose(a, b), c)
    right = compose(a, compose(b, c))
    assert np.allclose(left.matrix, right.matrix, atol=1e-9)
    assert np.allclose(left.translation, right.translation, atol=1e-9)


@given(poses())
def test_relative_to_self_is_identity(p):
    r = relative(p, p)
    assert translation_distance(r) < 1e-9
    assert rotation_angle_deg(r) < 1e-6


@given(poses())
def test_matrix_quaternion_round_trip(p):
    q = matrix_to_quat(quat_to_matrix(p.rotation))
    assert min(np.abs(q - p.rotation).max(), np.abs(q + p.rotation).max()) < 1e-9


@settings(max_examples=50)
@given(poses(), poses())
def test_compose_matches_matrix_product(a, b):
    def h(p):
        m = np.eye(4)
        m[:3, :3], m[:3, 3] = p.matrix, p.translation
        return m
    c = compose(a, b)
    assert np.allclose(h(c), h(a) @ h(b), atol=1e-9)
