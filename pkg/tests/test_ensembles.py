import numpy as np
import pytest
from hypothesis import given

from rotensemble.ensembles import (
    analytic_ensemble_batch,
    analytic_ensemble_convert,
    quat_branch,
    quat_branch_q,
    quat_region,
    quat_region_q,
)
from rotensemble.errors import InvalidInputError
from rotensemble.euler import euler_to_rot
from rotensemble.so3 import dist_rot, quat_to_rot, sample_uniform_rot, zrot_path

from .conftest import unit_quats


def test_branch_examples():
    np.testing.assert_allclose(quat_branch(1, np.eye(3)), [1, 0, 0, 0])
    np.testing.assert_allclose(quat_branch_q(1, [0.6, 0.8, 0, 0]), [0.6, 0.8, 0, 0])
    q = np.array([0.3, 0.954, 0, 0])
    expected = np.array([0.7, 0.5724, 0, 0]) / np.hypot(0.7, 0.5724)
    np.testing.assert_allclose(quat_branch_q(1, q), expected, atol=1e-15)


def test_region_examples():
    assert [bool(quat_region(i, np.eye(3))) for i in range(1, 5)] == [True, False, False, False]
    half_x = quat_to_rot([0, 1, 0, 0])
    assert [bool(quat_region(i, half_x)) for i in range(1, 5)] == [False, True, False, False]
    assert all(quat_region_q(i, [0.5] * 4) for i in range(1, 5))


def test_bad_index():
    with pytest.raises(InvalidInputError):
        quat_branch_q(5, [1, 0, 0, 0])


def test_convert_examples():
    out, reports = analytic_ensemble_convert(np.eye(3))
    assert next(r for r in reports if r.in_region).index == 1
    np.testing.assert_allclose(out, [1, 0, 0, 0])
    out, reports = analytic_ensemble_convert(zrot_path(0.5))
    assert next(r for r in reports if r.in_region).index == 4
    np.testing.assert_allclose(np.abs(out), [0, 0, 0, 1], atol=1e-15)
    for r in reports:
        assert not r.in_region or r.error <= 1e-7


@given(unit_quats)
def test_branches_even_in_q(q):
    for i in range(1, 5):
        assert np.array_equal(quat_branch_q(i, q), quat_branch_q(i, -q))


def test_antipodal_identity_bulk(rng):
    q = sample_uniform_rot(rng, 100_000)
    for i in range(1, 5):
        assert np.array_equal(quat_branch_q(i, q), quat_branch_q(i, -q))


def test_total_coverage(rng):
    R = quat_to_rot(sample_uniform_rot(rng, 1_000_000), check=False)
    g = np.linspace(-np.pi, np.pi, 50)
    A, B, C = np.meshgrid(g, g / 2, g, indexing="ij")
    R = np.concatenate([R, euler_to_rot(np.stack([A, B, C], -1).reshape(-1, 3))])
    sel, outs, region, errs = analytic_ensemble_batch(R)
    assert region.any(axis=1).all()
    assert np.where(region, errs, 0).max() <= 1e-7
    assert errs[np.arange(len(R)), sel - 1].max() <= 1e-7


def test_case_boundaries_agree():
    # evaluate both sides of the |c| = 1/2 case boundary: the bent formula must equal q there
    rng = np.random.default_rng(3)
    for i in range(4):
        rest = rng.standard_normal((10_000, 3))
        rest *= np.sqrt(0.75) / np.linalg.norm(rest, axis=1, keepdims=True)
        for c in (0.5, -0.5):
            q = np.insert(rest, i, c, axis=1)
            below = np.insert(rest, i, np.nextafter(c, 0), axis=1)
            np.testing.assert_allclose(quat_branch_q(i + 1, q), np.sign(c) * q, atol=1e-15)
            np.testing.assert_allclose(quat_branch_q(i + 1, below), np.sign(c) * q, atol=1e-9)


def test_branches_lipschitz(rng):
    q = sample_uniform_rot(rng, 100_000)
    step = rng.standard_normal((100_000, 4))
    q2 = q + 2e-5 * step / np.linalg.norm(step, axis=1, keepdims=True)
    q2 /= np.linalg.norm(q2, axis=1, keepdims=True)
    d = dist_rot(quat_to_rot(q), quat_to_rot(q2))
    for i in range(1, 5):
        delta = np.linalg.norm(quat_branch(i, quat_to_rot(q)) - quat_branch(i, quat_to_rot(q2)), axis=1)
        assert np.max(delta / d) <= 100
