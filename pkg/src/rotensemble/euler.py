"""Extrinsic Euler angles (x-y-z and x-z-y orders) and the mixed four-branch ensemble.

The matrices are *defined* through quaternions: ``R_xyz = quat_to_rot(Q_xyz)``
with ``Q_xyz = q_z(gamma) q_y(beta) q_x(alpha)``, and ``R_xzy`` likewise with
``Q_xzy = q_y(gamma) q_z(beta) q_x(alpha)``. From that composition

    R_xyz[2, 0] = -sin(beta)              R_xzy[1, 0] = sin(beta)
    R_xyz[2, 1:] = cos(beta) (sin a, cos a)   R_xzy[1, 1:] = cos(beta) (cos a, -sin a)
    R_xyz[:2, 0] = cos(beta) (cos g, sin g)   R_xzy[::2, 0] = cos(beta) (cos g, -sin g)

which fixes the angle-extraction formulas used by the branches below.
"""
from __future__ import annotations

import enum

import numpy as np

from .errors import InvalidInputError
from .so3 import qmul, quat_to_rot

TWO_PI = 2.0 * np.pi
GIMBAL_TOL = 1e-9


class EulerOrder(enum.Enum):
    XYZ = "xyz"
    XZY = "xzy"


class Branch(enum.Enum):
    LEFT = "left"    # principal value in (-pi, pi]
    RIGHT = "right"  # principal value in [0, 2 pi)


def _elemental(axis: int, angle):
    angle = np.asarray(angle, dtype=float)
    q = np.zeros(angle.shape + (4,))
    q[..., 0] = np.cos(angle / 2)
    q[..., 1 + axis] = np.sin(angle / 2)
    return q


def euler_to_quat(angles, order: EulerOrder = EulerOrder.XYZ):
    """Quaternion of extrinsic Euler angles ``(..., 3)`` = ``(alpha, beta, gamma)``."""
    angles = np.asarray(angles, dtype=float)
    a, b, g = angles[..., 0], angles[..., 1], angles[..., 2]
    order = EulerOrder(order)
    if order is EulerOrder.XYZ:
        return qmul(qmul(_elemental(2, g), _elemental(1, b)), _elemental(0, a))
    return qmul(qmul(_elemental(1, g), _elemental(2, b)), _elemental(0, a))


def euler_to_rot(angles, order: EulerOrder = EulerOrder.XYZ):
    return quat_to_rot(euler_to_quat(angles, order), check=False)


# --------------------------------------------------------------------------
# two principal branches of atan2


def atan2_branch(y, x, branch: Branch):
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    if np.any((y == 0) & (x == 0)):
        raise InvalidInputError("atan2 of (0, 0) is undefined")
    return _atan2_branch(y, x, Branch(branch))


def _atan2_branch(y, x, branch: Branch):
    r = np.arctan2(y, x) + 0.0
    if branch is Branch.LEFT:
        return np.where(r <= -np.pi, r + TWO_PI, r)
    r = np.where(r < 0, r + TWO_PI, r)
    return np.where(r >= TWO_PI, 0.0, r)


def angle_branch_2d(M, branch: int):
    """One of two continuous angle read-outs of a 2x2 rotation ``[[a, -b], [b, a]]``.

    Branch 1 is correct for ``a >= -1/2``, branch 2 for ``a <= 1/2``; both are
    continuous on the whole circle because each folds back in its wrong region.
    """
    M = np.asarray(M, dtype=float)
    a, b = M[..., 0, 0], M[..., 1, 0]
    if branch == 1:
        return np.where(a < -0.5, TWO_PI - 2 * _atan2_branch(b, a, Branch.RIGHT),
                        _atan2_branch(b, a, Branch.LEFT))
    if branch == 2:
        return np.where(a <= 0.5, _atan2_branch(b, a, Branch.RIGHT),
                        np.pi - 2 * _atan2_branch(b, a, Branch.LEFT))
    raise InvalidInputError(f"branch must be 1 or 2, got {branch}")


# --------------------------------------------------------------------------
# trapezoid windows


def trapezoid(a1: float, a2: float, a3: float, a4: float):
    """Piecewise-linear bump: 0 up to a1, ramps to 1 on [a2, a3], back to 0 at a4."""
    if not a1 < a2 <= a3 < a4:
        raise InvalidInputError("trapezoid needs a1 < a2 <= a3 < a4")

    def window(x):
        x = np.asarray(x, dtype=float)
        up = (x - a1) / (a2 - a1)
        down = (a4 - x) / (a4 - a3)
        return np.clip(np.minimum(up, down), 0.0, 1.0)

    window.knots = (a1, a2, a3, a4)
    return window


P = np.pi
WINDOW_ALPHA_LEFT = trapezoid(-2 * P / 3, -P / 2, P / 2, 2 * P / 3)
WINDOW_ALPHA_RIGHT = trapezoid(P / 3, P / 2, 3 * P / 2, 5 * P / 3)
WINDOW_BETA = trapezoid(-P / 3, -P / 4, P / 4, P / 3)
WINDOW_GAMMA_LEFT = trapezoid(-5 * P / 6, -3 * P / 4, 3 * P / 4, 5 * P / 6)
WINDOW_GAMMA_RIGHT = trapezoid(P / 6, P / 4, 7 * P / 4, 11 * P / 6)

BRANCH_ORDER = {1: EulerOrder.XYZ, 2: EulerOrder.XYZ, 3: EulerOrder.XZY, 4: EulerOrder.XZY}


# --------------------------------------------------------------------------
# the four blended branches


def euler_branch(i: int, M):
    """Continuous Euler read-out number ``i`` of rotation(s) ``M``.

    Returns ``(angles, weight)``: raw angles times the window product
    ``weight`` in [0, 1]. Branches 1, 2 decode with x-y-z order, 3, 4 with
    x-z-y. Where ``weight == 1`` the angles decode exactly to ``M``; outside
    the windows the output fades to (0, 0, 0) so every branch is continuous
    on all of SO(3).
    """
    M = np.asarray(M, dtype=float)
    if i in (1, 2):
        s = M[..., 2, 0]
        gimbal = np.abs(s) >= 1.0 - GIMBAL_TOL
        beta = -np.arcsin(np.clip(s, -1.0, 1.0))
        y, x = np.where(gimbal, 0.0, M[..., 2, 1]), np.where(gimbal, 1.0, M[..., 2, 2])
        gy, gx = np.where(gimbal, 0.0, M[..., 1, 0]), np.where(gimbal, 1.0, M[..., 0, 0])
        gamma = np.where(gimbal, np.pi, _atan2_branch(gy, gx, Branch.LEFT))
        wg = WINDOW_GAMMA_LEFT(gamma)
        if i == 1:
            alpha = np.where(gimbal, np.pi, _atan2_branch(y, x, Branch.LEFT))
            wa = WINDOW_ALPHA_LEFT(alpha)
        else:
            alpha = np.where(gimbal, 0.0, _atan2_branch(y, x, Branch.RIGHT))
            wa = WINDOW_ALPHA_RIGHT(alpha)
    elif i in (3, 4):
        s = M[..., 1, 0]
        gimbal = np.abs(s) >= 1.0 - GIMBAL_TOL
        beta = np.arcsin(np.clip(s, -1.0, 1.0))
        y, x = np.where(gimbal, 0.0, -M[..., 1, 2]), np.where(gimbal, 1.0, M[..., 1, 1])
        gy, gx = np.where(gimbal, 0.0, -M[..., 2, 0]), np.where(gimbal, 1.0, M[..., 0, 0])
        gamma = np.where(gimbal, 0.0, _atan2_branch(gy, gx, Branch.RIGHT))
        wg = WINDOW_GAMMA_RIGHT(gamma)
        if i == 3:
            alpha = np.where(gimbal, np.pi, _atan2_branch(y, x, Branch.LEFT))
            wa = WINDOW_ALPHA_LEFT(alpha)
        else:
            alpha = np.where(gimbal, 0.0, _atan2_branch(y, x, Branch.RIGHT))
            wa = WINDOW_ALPHA_RIGHT(alpha)
    else:
        raise InvalidInputError(f"branch index must be in 1..4, got {i}")
    weight = wa * WINDOW_BETA(beta) * wg
    angles = np.stack([alpha, beta, gamma], axis=-1) * weight[..., None]
    return angles, weight


def decode_branch(i: int, angles):
    return euler_to_rot(angles, BRANCH_ORDER[i])


def euler_select(M):
    """Index of a branch that is exact for ``M``, with its angles.

    Let ``m`` be the largest of ``+-M11, +-M21, +-M31``. If it is attained by
    ``M11`` or ``+-M21`` an x-y-z branch applies (1 if ``M33 >= 0`` else 2);
    otherwise an x-z-y branch (3 if ``M22 >= 0`` else 4). Ties go to the
    x-y-z side and to the lower index.
    """
    M = np.asarray(M, dtype=float)
    m11, m21, m31 = M[..., 0, 0], M[..., 1, 0], M[..., 2, 0]
    xyz_side = np.maximum(np.maximum(m11, m21), -m21) >= np.maximum(np.maximum(-m11, m31), -m31)
    idx = np.where(xyz_side, np.where(M[..., 2, 2] >= 0, 1, 2), np.where(M[..., 1, 1] >= 0, 3, 4))
    angles = np.zeros(M.shape[:-2] + (3,))
    for i in range(1, 5):
        sel = idx == i
        if np.any(sel):
            angles[sel] = euler_branch(i, M[sel])[0]
    return idx, angles
