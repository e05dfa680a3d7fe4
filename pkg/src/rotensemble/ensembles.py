"""The analytic four-branch quaternion ensemble and branch selection.

Branch ``i`` watches quaternion component ``i`` (w, x, y, z). Where that
component has magnitude at least 1/2 the branch returns the quaternion itself
(sign-fixed), elsewhere it bends continuously towards the basis quaternion so
that ``f_i(q) == f_i(-q)``; it is therefore a continuous function of the
rotation. Since ``max(w^2, x^2, y^2, z^2) >= 1/4`` every rotation lies in the
exact region of some branch.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .so3 import dist_rot, quat_to_rot, rot_to_quat_canonical

REGION_THRESHOLD = 0.5


def _check_index(i):
    if i not in (1, 2, 3, 4):
        raise InvalidInputError(f"branch index must be in 1..4, got {i}")


def quat_branch_q(i: int, q):
    """Branch ``i`` evaluated on quaternion(s) ``q``; even in ``q``."""
    _check_index(i)
    q = np.asarray(q, dtype=float)
    c = q[..., i - 1]
    bent = 2.0 * c[..., None] * q
    bent[..., i - 1] = np.where(c >= 0, 1.0 - c, 1.0 + c)
    with np.errstate(invalid="ignore", divide="ignore"):
        # only zero at c = +-1, where the identity case is taken below
        bent /= np.linalg.norm(bent, axis=-1, keepdims=True)
    out = np.where((c >= REGION_THRESHOLD)[..., None], q, bent)
    return np.where((c < -REGION_THRESHOLD)[..., None], -q, out)


def quat_branch(i: int, R):
    return quat_branch_q(i, rot_to_quat_canonical(R))


def quat_region_q(i: int, q):
    _check_index(i)
    return np.abs(np.asarray(q, dtype=float)[..., i - 1]) >= REGION_THRESHOLD


def quat_region(i: int, R):
    return quat_region_q(i, rot_to_quat_canonical(R))


@dataclass(frozen=True)
class BranchReport:
    index: int
    output: np.ndarray
    in_region: bool
    error: float


def analytic_ensemble_convert(R):
    """Convert one rotation matrix; returns the selected quaternion and all four reports.

    The lowest-index branch whose region contains ``R`` is selected.
    """
    R = np.asarray(R, dtype=float)
    q = rot_to_quat_canonical(R)
    reports = []
    for i in range(1, 5):
        out = quat_branch_q(i, q)
        err = float(dist_rot(R, quat_to_rot(out, check=False)))
        reports.append(BranchReport(i, out, bool(quat_region_q(i, q)), err))
    chosen = next(r for r in reports if r.in_region)
    return chosen.output, reports


def analytic_ensemble_batch(R):
    """Vectorized sweep: ``(selected index, outputs (N,4,4), in_region (N,4), errors (N,4))``."""
    R = np.asarray(R, dtype=float)
    q = rot_to_quat_canonical(R)
    outs = np.stack([quat_branch_q(i, q) for i in range(1, 5)], axis=-2)
    region = np.stack([quat_region_q(i, q) for i in range(1, 5)], axis=-1)
    errs = dist_rot(R[..., None, :, :], quat_to_rot(outs, check=False))
    selected = np.argmax(region, axis=-1) + 1
    return selected, outs, region, errs
