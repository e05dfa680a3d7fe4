import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from rotensemble.errors import InvalidInputError
from rotensemble.euler import (
    WINDOW_ALPHA_LEFT,
    WINDOW_ALPHA_RIGHT,
    WINDOW_BETA,
    WINDOW_GAMMA_LEFT,
    WINDOW_GAMMA_RIGHT,
    Branch,
    EulerOrder,
    angle_branch_2d,
    atan2_branch,
    decode_branch,
    euler_branch,
    euler_select,
    euler_to_quat,
    euler_to_rot,
    trapezoid,
)
from rotensemble.so3 import dist_rot, quat_to_rot, sample_uniform_rot

from .conftest import angles

S = np.sqrt(2) / 2
WINDOWS = [WINDOW_ALPHA_LEFT, WINDOW_ALPHA_RIGHT, WINDOW_BETA, WINDOW_GAMMA_LEFT, WINDOW_GAMMA_RIGHT]


def test_euler_examples():
    np.testing.assert_allclose(euler_to_quat([0, 0, 0]), [1, 0, 0, 0])
    np.testing.assert_allclose(euler_to_quat([np.pi / 2, 0, 0]), [S, S, 0, 0], atol=1e-15)
    np.testing.assert_allclose(euler_to_quat([0, 0, np.pi], EulerOrder.XZY), [0, 0, 1, 0], atol=1e-15)
    assert euler_to_rot([0, np.pi / 2, 0])[2, 0] == pytest.approx(-1)
    np.testing.assert_allclose(euler_to_rot([2 * np.pi] * 3), np.eye(3), atol=1e-14)


@given(angles, angles, angles)
def test_euler_matches_scipy_extrinsic(a, b, g):
    np.testing.assert_allclose(euler_to_rot([a, b, g]), Rotation.from_euler("xyz", [a, b, g]).as_matrix(), atol=1e-12)
    np.testing.assert_allclose(
        euler_to_rot([a, b, g], EulerOrder.XZY), Rotation.from_euler("xzy", [a, b, g]).as_matrix(), atol=1e-12
    )
    q = euler_to_quat([a, b, g])
    assert abs(np.linalg.norm(q) - 1) <= 1e-12
    assert np.array_equal(euler_to_rot([a, b, g]), quat_to_rot(q, check=False))


def test_atan2_branches():
    assert atan2_branch(0, 1, Branch.LEFT) == 0
    assert atan2_branch(-1e-9, 1, Branch.LEFT) == pytest.approx(-1e-9)
    assert atan2_branch(-1e-9, 1, Branch.RIGHT) == pytest.approx(2 * np.pi - 1e-9)
    assert atan2_branch(1, -1, Branch.RIGHT) == pytest.approx(3 * np.pi / 4)
    assert atan2_branch(0, -1, Branch.LEFT) == pytest.approx(np.pi)
    assert atan2_branch(-0.0, -1, Branch.LEFT) == pytest.approx(np.pi)
    with pytest.raises(InvalidInputError):
        atan2_branch(0, 0, Branch.LEFT)


@given(st.floats(-np.pi, np.pi), st.sampled_from(list(Branch)))
def test_atan2_branch_ranges(t, branch):
    y, x = np.sin(t), np.cos(t)
    r = atan2_branch(y, x, branch)
    lo, hi = (-np.pi, np.pi) if branch is Branch.LEFT else (0, 2 * np.pi)
    assert lo <= r <= hi
    assert abs(np.exp(1j * r) - np.exp(1j * np.arctan2(y, x))) < 1e-12


def rot2(t):
    return np.array([[np.cos(t), -np.sin(t)], [np.sin(t), np.cos(t)]])


def test_angle_branch_examples():
    assert angle_branch_2d(rot2(0), 1) == 0
    assert angle_branch_2d(rot2(np.pi), 2) == pytest.approx(np.pi)
    assert angle_branch_2d(np.array([[-1.0, 0], [0, -1]]), 1) == pytest.approx(0)


def test_angle_branches_cover_and_are_continuous():
    t = np.linspace(-np.pi, np.pi, 20001)
    M = np.stack([rot2(x) for x in t])
    f1, f2 = angle_branch_2d(M, 1), angle_branch_2d(M, 2)
    ok = lambda f: np.abs(np.exp(1j * f) - np.exp(1j * t)) < 1e-9  # noqa: E731
    assert np.all(ok(f1) | ok(f2))
    # continuity on the circle, including the wrap from -pi to pi
    for f in (f1, f2):
        assert np.abs(np.diff(f)).max() < 0.01
        assert abs(f[0] - f[-1]) < 1e-9


@pytest.mark.parametrize("window", WINDOWS)
def test_window_algebra(window):
    a1, a2, a3, a4 = window.knots
    x = np.linspace(a1 - 1, a4 + 1, 10_000)
    w = window(x)
    assert np.all((w >= 0) & (w <= 1))
    assert np.all(w[(x >= a2) & (x <= a3)] == 1)
    assert np.all(w[(x <= a1) | (x >= a4)] == 0)
    assert np.abs(np.diff(w)).max() <= (x[1] - x[0]) / min(a2 - a1, a4 - a3) + 1e-12


def test_trapezoid_rejects_bad_knots():
    with pytest.raises(InvalidInputError):
        trapezoid(1, 0, 2, 3)


def test_branch_examples():
    ang, w = euler_branch(1, np.eye(3))
    np.testing.assert_allclose(ang, 0, atol=1e-15)
    assert w == 1
    assert euler_branch(2, np.eye(3))[1] == 0
    gimbal = euler_to_rot([0.3, np.pi / 2, -0.2])
    ang, w = euler_branch(1, gimbal)
    assert w == 0
    np.testing.assert_array_equal(ang, 0)


def test_select_examples():
    idx, ang = euler_select(np.eye(3))
    assert idx == 1
    np.testing.assert_allclose(ang, 0, atol=1e-15)
    assert euler_select(np.diag([-1.0, -1, 1]))[0] in (2, 4)
    assert euler_select(euler_to_rot([0.4, np.pi / 2, 1.1]))[0] in (3, 4)
    assert euler_select(euler_to_rot([0.4, -np.pi / 2, 1.1]))[0] in (3, 4)


def test_coverage_and_weight_one_exactness(rng):
    R = quat_to_rot(sample_uniform_rot(rng, 1_000_000), check=False)
    idx, ang = euler_select(R)
    err = np.empty(len(R))
    for i in range(1, 5):
        m = idx == i
        err[m] = dist_rot(R[m], decode_branch(i, ang[m]))
        a, w = euler_branch(i, R)
        full = w == 1
        assert dist_rot(R[full], decode_branch(i, a[full])).max() <= 1e-7
    assert err.max() <= 1e-7


def test_gimbal_locked_inputs_covered(rng):
    a = rng.uniform(-np.pi, np.pi, (2000, 3))
    a[:1000, 1], a[1000:, 1] = np.pi / 2, -np.pi / 2
    R = euler_to_rot(a)
    idx, ang = euler_select(R)
    for i in range(1, 5):
        m = idx == i
        if m.any():
            assert dist_rot(R[m], decode_branch(i, ang[m])).max() <= 1e-7


def test_branches_lipschitz_at_sampling_scale(rng):
    q = sample_uniform_rot(rng, 100_000)
    step = rng.standard_normal((100_000, 4))
    q2 = q + 2e-5 * step / np.linalg.norm(step, axis=1, keepdims=True)
    q2 /= np.linalg.norm(q2, axis=1, keepdims=True)
    R, R2 = quat_to_rot(q), quat_to_rot(q2)
    d = dist_rot(R, R2)
    keep = d > 1e-9
    for i in range(1, 5):
        delta = np.linalg.norm(euler_branch(i, R)[0] - euler_branch(i, R2)[0], axis=1)
        assert np.max(delta[keep] / d[keep]) <= 100


def test_gimbal_distance_identity():
    phi = np.linspace(0, np.pi / 2, 101)
    for theta in (-2.0, 0.0, 0.7, 3.0):
        R = euler_to_rot(np.stack([np.full_like(phi, theta), phi, np.full_like(phi, theta)], axis=1))
        d = dist_rot(R, euler_to_rot([0, np.pi / 2, 0]))
        np.testing.assert_allclose(d, np.pi / 2 - phi, atol=1e-9)
