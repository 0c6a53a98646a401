import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nullrefill.kinematics import (
    ChainModel,
    KinematicsError,
    forward_kinematics,
    frame_transforms,
    geometric_jacobian,
    link_transforms,
    ur10e_like,
)

angles = st.lists(st.floats(-math.pi, math.pi), min_size=6, max_size=6)


def oracle_pose(rows, q):
    """Independent product Rz(theta) Tz(d) Tx(a) Rx(alpha), one joint at a time."""
    T = np.eye(4)
    for (a, alpha, d, off), qi in zip(rows, q):
        th = qi + off
        Rz = np.array([[math.cos(th), -math.sin(th), 0, 0],
                       [math.sin(th), math.cos(th), 0, 0],
                       [0, 0, 1, 0],
                       [0, 0, 0, 1]])
        Tz = np.eye(4)
        Tz[2, 3] = d
        Tx = np.eye(4)
        Tx[0, 3] = a
        Rx = np.array([[1, 0, 0, 0],
                       [0, math.cos(alpha), -math.sin(alpha), 0],
                       [0, math.sin(alpha), math.cos(alpha), 0],
                       [0, 0, 0, 1]])
        T = T @ Rz @ Tz @ Tx @ Rx
    return T


def test_single_link_zero_configuration():
    chain = ChainModel.from_rows([(2.0, 0.0, 0.0, 0.0)])
    p, R = forward_kinematics(chain, [0.0])
    np.testing.assert_allclose(p, [2.0, 0.0, 0.0], atol=1e-15)
    np.testing.assert_allclose(R, np.eye(3), atol=1e-15)


def test_planar_two_link_right_angle():
    chain = ChainModel.from_rows([(1.0, 0.0, 0.0, 0.0), (1.0, 0.0, 0.0, 0.0)])
    p, _ = forward_kinematics(chain, [math.pi / 2, 0.0])
    np.testing.assert_allclose(p, [0.0, 2.0, 0.0], atol=1e-15)


def test_single_link_jacobian_is_unit_lever():
    chain = ChainModel.from_rows([(1.0, 0.0, 0.0, 0.0)])
    J = geometric_jacobian(chain, [0.0])
    np.testing.assert_allclose(J[:, 0], [0, 1, 0, 0, 0, 1], atol=1e-15)


def test_scale_multiplies_lengths_only():
    base, big = ur10e_like(), ur10e_like(40.0)
    q = np.array([-0.48, 0.98, -1.03, 1.04, -0.96, 2.5])
    p1, R1 = forward_kinematics(base, q)
    p40, R40 = forward_kinematics(big, q)
    np.testing.assert_allclose(p40, 40.0 * p1, rtol=1e-13)
    np.testing.assert_allclose(R40, R1, atol=1e-15)


def test_dimension_mismatch_raises():
    with pytest.raises(KinematicsError):
        forward_kinematics(ur10e_like(), np.zeros(5))
    with pytest.raises(KinematicsError):
        geometric_jacobian(ur10e_like(), np.zeros(7))


def test_malformed_rows_rejected():
    with pytest.raises(KinematicsError):
        ChainModel.from_rows([(1.0, 0.0, 0.0)])
    with pytest.raises(KinematicsError):
        ChainModel.from_rows([(float("nan"), 0.0, 0.0, 0.0)])
    with pytest.raises(KinematicsError):
        ChainModel(())


@settings(max_examples=100, deadline=None)
@given(angles)
def test_pose_matches_independent_product(q):
    chain = ur10e_like()
    T = oracle_pose(chain.dh_rows(), q)
    p, R = forward_kinematics(chain, q)
    np.testing.assert_allclose(p, T[:3, 3], atol=1e-12)
    np.testing.assert_allclose(R, T[:3, :3], atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(angles)
def test_translational_jacobian_matches_finite_differences(q):
    chain = ur10e_like()
    q = np.array(q)
    J = geometric_jacobian(chain, q)
    h = 1e-6
    for i in range(chain.n):
        e = np.zeros(chain.n)
        e[i] = h
        fd = (forward_kinematics(chain, q + e)[0] - forward_kinematics(chain, q - e)[0]) / (2 * h)
        assert np.abs(J[:3, i] - fd).max() <= 1e-6


@settings(max_examples=50, deadline=None)
@given(angles)
def test_rotation_blocks_orthonormal(q):
    chain = ur10e_like()
    for T in list(link_transforms(chain, q)) + list(frame_transforms(chain, q)):
        R = T[:3, :3]
        assert np.abs(R @ R.T - np.eye(3)).max() <= 1e-12
        np.testing.assert_array_equal(T[3], [0, 0, 0, 1])


@settings(max_examples=30, deadline=None)
@given(angles)
def test_jacobian_is_linear_map(q):
    J = geometric_jacobian(ur10e_like(), q)
    np.testing.assert_array_equal(J @ np.zeros(6), np.zeros(6))
