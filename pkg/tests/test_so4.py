import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import special_ortho_group

from rotensemble.errors import NotARotationError
from rotensemble.so3 import qmul
from rotensemble.so4 import (
    associate_matrix,
    block_rotation4,
    compose_pairs,
    decompose_rot4,
    dist4,
    dist4_pairs,
    identity_left_map,
    inverse_pair,
    pair_branch,
    region_mask4,
    rotation_angles4,
    rqq,
    sample_pairs,
    sample_rot4,
)

from .conftest import unit_quats

ONE = np.array([1.0, 0, 0, 0])
I_ = np.array([0, 1.0, 0, 0])


def eigen_angles(A):
    """Oracle: the two plane angles as sorted eigenvalue arguments, |theta| >= |phi|."""
    ang = np.abs(np.angle(np.linalg.eigvals(A)))
    ang = np.sort(ang, axis=-1)[..., ::-1]
    # eigenvalues come in conjugate pairs: take one of each pair
    return ang[..., 0], ang[..., 2]


def test_rqq_examples():
    np.testing.assert_array_equal(rqq((ONE, ONE)), np.eye(4))
    np.testing.assert_array_equal(rqq((-ONE, -ONE)), np.eye(4))
    A = rqq((I_, ONE))
    for k in range(4):
        np.testing.assert_allclose(A[:, k], qmul(I_, np.eye(4)[k]), atol=0)


def test_rqq_is_the_sandwich(rng):
    qL, qR = sample_pairs(rng, 1000)
    A = rqq((qL, qR))
    for k in range(4):
        e = np.broadcast_to(np.eye(4)[k], qL.shape)
        np.testing.assert_allclose(A[:, :, k], qmul(qmul(qL, e), qR), atol=1e-12)


def test_associate_matrix_examples(rng):
    M = associate_matrix(np.eye(4))
    expected = np.zeros((4, 4))
    expected[0, 0] = 1
    np.testing.assert_allclose(M, expected, atol=1e-15)
    np.testing.assert_array_equal(associate_matrix(np.zeros((4, 4))), 0)
    A = sample_rot4(rng, 1000)
    M = associate_matrix(A)
    sv = np.linalg.svd(M, compute_uv=False)
    np.testing.assert_allclose(sv[:, 0], 1, atol=1e-9)
    assert sv[:, 1:].max() <= 1e-9
    np.testing.assert_allclose(np.linalg.norm(M, axis=(1, 2)), 1, atol=1e-9)


def test_associate_matrix_is_outer_product(rng):
    qL, qR = sample_pairs(rng, 1000)
    np.testing.assert_allclose(associate_matrix(rqq((qL, qR))), qL[:, :, None] * qR[:, None, :], atol=1e-12)


def test_decompose_examples():
    qL, qR = decompose_rot4(np.eye(4))
    np.testing.assert_allclose(qL, ONE)
    np.testing.assert_allclose(qR, ONE)
    qL, qR = decompose_rot4(rqq((I_, I_)))
    s = np.sign(qL[1])
    np.testing.assert_allclose(s * qL, I_, atol=1e-15)
    np.testing.assert_allclose(s * qR, I_, atol=1e-15)


def test_round_trip_haar(rng):
    A = sample_rot4(rng, 100_000)
    qL, qR = decompose_rot4(A)
    assert np.abs(rqq((qL, qR)) - A).max() <= 1e-9
    # sign rule: largest-magnitude component of qL is positive
    lead = qL[np.arange(len(qL)), np.argmax(np.abs(qL), axis=1)]
    assert np.all(lead > 0)


def test_decompose_inverts_rqq_up_to_joint_sign(rng):
    qL, qR = sample_pairs(rng, 10_000)
    bL, bR = decompose_rot4(rqq((qL, qR)))
    s = np.sign(np.sum(bL * qL, axis=1))[:, None]
    np.testing.assert_allclose(s * bL, qL, atol=1e-9)
    np.testing.assert_allclose(s * bR, qR, atol=1e-9)


def test_decompose_rejects_non_rotations(rng):
    A = sample_rot4(rng)
    with pytest.raises(NotARotationError):
        decompose_rot4(A + 1e-3)
    with pytest.raises(NotARotationError):
        decompose_rot4(np.diag([1.0, 1, 1, -1]))


def test_homomorphism(rng):
    p1, p2 = sample_pairs(rng, 1000), sample_pairs(rng, 1000)
    np.testing.assert_allclose(rqq(p1) @ rqq(p2), rqq(compose_pairs(p1, p2)), atol=1e-9)
    np.testing.assert_allclose(rqq(inverse_pair(p1)), np.swapaxes(rqq(p1), 1, 2), atol=1e-12)


def test_haar_sampling_via_pairs(rng):
    # first moments of a Haar rotation of R^4: E[A] = 0, E[tr(A)^2] = 1
    A = sample_rot4(rng, 200_000)
    assert np.abs(A.mean(axis=0)).max() <= 0.01
    assert abs((np.trace(A, axis1=1, axis2=2) ** 2).mean() - 1) <= 0.02


def test_dist4_examples():
    assert dist4_pairs((ONE, ONE), (ONE, ONE)) == 0
    assert dist4_pairs((ONE, ONE), (I_, I_)) == pytest.approx(np.pi)
    assert dist4_pairs((ONE, ONE), (I_, ONE)) == pytest.approx(np.pi)


def test_dist4_properties(rng):
    a, b, c = (sample_pairs(rng, 10_000) for _ in range(3))
    dab = dist4_pairs(a, b)
    np.testing.assert_allclose(dab, dist4_pairs(b, a), atol=1e-12)
    np.testing.assert_allclose(dab, dist4_pairs((-a[0], -a[1]), b), atol=1e-12)
    np.testing.assert_allclose(dab, dist4_pairs(compose_pairs(c, a), compose_pairs(c, b)), atol=1e-9)
    assert np.all((dab >= 0) & (dab <= 2 * np.pi + 1e-12))
    # same value from matrices via the plane angles of the relative rotation
    np.testing.assert_allclose(dab[:1000], dist4(rqq((a[0][:1000], a[1][:1000])), rqq((b[0][:1000], b[1][:1000]))), atol=1e-7)


def test_angles_examples():
    np.testing.assert_allclose(rotation_angles4(np.eye(4)), (0, 0), atol=1e-15)
    np.testing.assert_allclose(rotation_angles4(block_rotation4(1.3, 0.0)), (1.3, 0.0), atol=1e-12)
    np.testing.assert_allclose(rotation_angles4(block_rotation4(2.0, 0.5)), (2.0, 0.5), atol=1e-12)
    np.testing.assert_allclose(rotation_angles4(block_rotation4(2.0, -0.5)), (2.0, -0.5), atol=1e-12)


@given(st.floats(0, np.pi), st.floats(-1, 1))
def test_angles_of_blocks(theta, frac):
    phi = frac * theta
    t, p = rotation_angles4(block_rotation4(theta, phi))
    assert 0 <= t <= np.pi + 1e-12 and abs(p) <= t + 1e-12
    assert abs(t - theta) <= 1e-7 and abs(abs(p) - abs(phi)) <= 1e-7


def test_dist4_matches_eigen_oracle(rng):
    theta = rng.uniform(0, np.pi, 1000)
    phi = rng.uniform(-1, 1, 1000) * theta
    Q = special_ortho_group.rvs(4, size=1000, random_state=np.random.default_rng(5))
    A = Q @ block_rotation4(theta, phi) @ np.swapaxes(Q, 1, 2)
    t_or, p_or = eigen_angles(A)
    t, p = rotation_angles4(A)
    np.testing.assert_allclose(t, t_or, atol=1e-7)
    np.testing.assert_allclose(np.abs(p), p_or, atol=1e-7)
    np.testing.assert_allclose(dist4(np.broadcast_to(np.eye(4), A.shape), A), t_or + p_or, atol=1e-7)


def test_identity_left_map(rng):
    q = np.array([0.6, 0, 0.8, 0])
    out = identity_left_map((ONE, q))
    np.testing.assert_allclose(out[0], ONE)
    np.testing.assert_allclose(out[1], q)
    assert dist4_pairs((ONE, q), out) == 0
    out = identity_left_map((I_, ONE))
    np.testing.assert_allclose(out[1], I_)
    assert dist4_pairs((I_, ONE), out) == pytest.approx(np.pi)
    p = sample_pairs(rng, 1_000_000)
    d = dist4_pairs(p, identity_left_map(p))
    assert d.max() <= np.pi + 1e-9
    assert abs(np.degrees(d.mean()) - np.degrees(np.pi / 2 + 2 / np.pi)) <= 0.5
    flipped = identity_left_map((-p[0][:1000], -p[1][:1000]))
    np.testing.assert_allclose(flipped[1], identity_left_map((p[0][:1000], p[1][:1000]))[1], atol=0)


def test_pair_branches_cover(rng):
    p = sample_pairs(rng, 1_000_000)
    A = rqq(p)
    covered = np.zeros(len(A), dtype=bool)
    for i in range(1, 5):
        out = pair_branch(i, p)
        mask = region_mask4(i, p)
        err = np.abs(rqq(out)[mask] - A[mask]).max(axis=(1, 2))
        assert err.max(initial=0) <= 1e-7
        covered |= mask
        neg = pair_branch(i, (-p[0][:1000], -p[1][:1000]))
        np.testing.assert_allclose(neg[0], out[0][:1000], atol=0)
        np.testing.assert_allclose(neg[1], out[1][:1000], atol=1e-15)
    assert covered.all()


def test_pair_branch_examples():
    out = pair_branch(1, (ONE, ONE))
    np.testing.assert_allclose(out[0], ONE)
    np.testing.assert_allclose(out[1], ONE)
    p = (I_, np.array([0.6, 0.8, 0, 0]))
    np.testing.assert_allclose(rqq(pair_branch(2, p)), rqq(p), atol=1e-12)


def test_region_mask_examples():
    assert [bool(region_mask4(i, (ONE, ONE))) for i in range(1, 5)] == [True, False, False, False]
    half = np.full(4, 0.5)
    assert all(region_mask4(i, (half, ONE)) for i in range(1, 5))
    q = np.array([0.9, 0.1, 0.1, 0.1])
    assert region_mask4(1, (q / np.linalg.norm(q), ONE))


@given(unit_quats, unit_quats)
def test_some_region_always_holds(a, b):
    assert any(region_mask4(i, (a, b)) for i in range(1, 5))
