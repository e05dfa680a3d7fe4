"""4D rotations as pairs of unit quaternions.

``rqq(qL, qR)`` is the rotation ``p -> qL p qR`` of R^4 = H. Every 4D rotation
arises this way from exactly two pairs, ``(qL, qR)`` and ``(-qL, -qR)``; the
pair is read off the rank-one associate matrix.
"""
from __future__ import annotations

import numpy as np

from .ensembles import quat_branch_q
from .errors import InvalidInputError, NotARotationError
from .so3 import geodesic_quat, qconj, qmul, sample_uniform_rot

ROT4_TOL = 1e-6


def _pair(p):
    qL, qR = p
    return np.asarray(qL, dtype=float), np.asarray(qR, dtype=float)


def left_matrix(q):
    """Matrix of ``p -> q p``."""
    a, b, c, d = np.moveaxis(np.asarray(q, dtype=float), -1, 0)
    return np.stack(
        [
            np.stack([a, -b, -c, -d], -1),
            np.stack([b, a, -d, c], -1),
            np.stack([c, d, a, -b], -1),
            np.stack([d, -c, b, a], -1),
        ],
        -2,
    )


def right_matrix(q):
    """Matrix of ``p -> p q``."""
    e, f, g, h = np.moveaxis(np.asarray(q, dtype=float), -1, 0)
    return np.stack(
        [
            np.stack([e, -f, -g, -h], -1),
            np.stack([f, e, h, -g], -1),
            np.stack([g, -h, e, f], -1),
            np.stack([h, g, -f, e], -1),
        ],
        -2,
    )


def rqq(p):
    qL, qR = _pair(p)
    return left_matrix(qL) @ right_matrix(qR)


def associate_matrix(A):
    """Linear rearrangement of a 4x4 matrix that is ``qL qR^T`` when ``A = rqq(qL, qR)``."""
    A = np.asarray(A, dtype=float)
    if A.shape[-2:] != (4, 4):
        raise InvalidInputError(f"expected (..., 4, 4), got {A.shape}")
    a = {(r + 1) * 10 + (c + 1): A[..., r, c] for r in range(4) for c in range(4)}
    rows = [
        [a[11] + a[22] + a[33] + a[44], a[21] - a[12] - a[43] + a[34],
         a[31] + a[42] - a[13] - a[24], a[41] - a[32] + a[23] - a[14]],
        [a[21] - a[12] + a[43] - a[34], -a[11] - a[22] + a[33] + a[44],
         a[41] - a[32] - a[23] + a[14], -a[31] - a[42] - a[13] - a[24]],
        [a[31] - a[42] - a[13] + a[24], -a[41] - a[32] - a[23] - a[14],
         -a[11] + a[22] - a[33] + a[44], a[21] + a[12] - a[43] - a[34]],
        [a[41] + a[32] - a[23] - a[14], a[31] - a[42] + a[13] - a[24],
         -a[21] - a[12] - a[43] - a[34], -a[11] + a[22] + a[33] - a[44]],
    ]
    return np.stack([np.stack(r, -1) for r in rows], -2) / 4.0


def check_rot4(A, tol: float = ROT4_TOL):
    A = np.asarray(A, dtype=float)
    if A.shape[-2:] != (4, 4):
        raise InvalidInputError(f"expected (..., 4, 4), got {A.shape}")
    ortho = np.abs(np.swapaxes(A, -1, -2) @ A - np.eye(4)).max(axis=(-1, -2))
    det = np.linalg.det(A)
    if np.any(ortho > tol) or np.any(np.abs(det - 1) > tol):
        raise NotARotationError(
            f"not a 4D rotation: orthogonality residual {np.max(ortho):.3g}, det {np.min(det):.6g}"
        )
    return A


def decompose_rot4(A, check: bool = True):
    """Quaternion pair ``(qL, qR)`` with ``rqq(qL, qR) == A``.

    The right factor is the largest-norm row of the associate matrix, the left
    one is ``M @ qR``. Of the two valid pairs the one whose largest-magnitude
    ``qL`` component (first on ties) is positive is returned.
    """
    A = np.asarray(A, dtype=float)
    if check:
        check_rot4(A)
    M = associate_matrix(A)
    k = np.argmax(np.linalg.norm(M, axis=-1), axis=-1)
    row = np.take_along_axis(M, k[..., None, None], axis=-2)[..., 0, :]
    qR = row / np.linalg.norm(row, axis=-1, keepdims=True)
    qL = np.einsum("...ij,...j->...i", M, qR)
    qL = qL / np.linalg.norm(qL, axis=-1, keepdims=True)
    if check:
        resid = np.abs(M - qL[..., :, None] * qR[..., None, :]).max(axis=(-1, -2))
        if np.any(resid > ROT4_TOL):
            raise NotARotationError(f"associate matrix is not rank one (residual {resid.max():.3g})")
    lead = np.take_along_axis(qL, np.argmax(np.abs(qL), axis=-1)[..., None], axis=-1)
    s = np.where(lead < 0, -1.0, 1.0)
    return qL * s, qR * s


def compose_pairs(p1, p2):
    """Pair of ``rqq(p1) @ rqq(p2)``."""
    a, b = _pair(p1)
    c, d = _pair(p2)
    return qmul(a, c), qmul(d, b)


def inverse_pair(p):
    qL, qR = _pair(p)
    return qconj(qL), qconj(qR)


def dist4_pairs(p1, p2):
    """Sum of the absolute plane angles of the relative rotation, from quaternions alone."""
    l1, r1 = _pair(p1)
    l2, r2 = _pair(p2)
    dL = geodesic_quat(l1, l2)
    dR = geodesic_quat(r1, r2)
    return np.minimum(dL + dR, 2 * np.pi - dL - dR) + np.abs(dL - dR)


def rotation_angles4(A, check: bool = True):
    """Plane angles ``(theta, phi)`` with ``theta`` in [0, pi] and ``|phi| <= theta``.

    ``phi`` is signed: it is negative when the two planes turn in opposite
    senses relative to the orientation in which ``theta`` is non-negative.
    """
    return pair_angles(decompose_rot4(A, check=check))


def pair_angles(p):
    qL, qR = _pair(p)
    one = np.array([1.0, 0, 0, 0])
    dL = geodesic_quat(one, qL)
    dR = geodesic_quat(one, qR)
    near = dL + dR <= np.pi
    theta = np.where(near, dL + dR, 2 * np.pi - dL - dR)
    phi = np.where(near, dL - dR, dR - dL)
    return theta, phi


def dist4(A1, A2):
    """``|theta| + |phi|`` of ``A2 A1^T``."""
    theta, phi = rotation_angles4(np.asarray(A2) @ np.swapaxes(np.asarray(A1), -1, -2))
    return theta + np.abs(phi)


def block_rotation4(theta, phi):
    """``diag(Rot2(theta), Rot2(phi))``."""
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    A = np.zeros(np.broadcast(theta, phi).shape + (4, 4))
    ct, st, cp, sp = np.cos(theta), np.sin(theta), np.cos(phi), np.sin(phi)
    A[..., 0, 0], A[..., 0, 1], A[..., 1, 0], A[..., 1, 1] = ct, -st, st, ct
    A[..., 2, 2], A[..., 2, 3], A[..., 3, 2], A[..., 3, 3] = cp, -sp, sp, cp
    return A


def sample_pairs(rng, size=None):
    """Haar-uniform 4D rotations as independent uniform pairs of unit quaternions."""
    return sample_uniform_rot(rng, size), sample_uniform_rot(rng, size)


def sample_rot4(rng, size=None):
    return rqq(sample_pairs(rng, size))


# --------------------------------------------------------------------------
# continuous maps SO(4) -> S^3 x S^3


def identity_left_map(p):
    """``(qL, qR) -> (1, qL qR)``: continuous on SO(4), error at most pi."""
    qL, qR = _pair(p)
    prod = qmul(qL, qR)
    one = np.zeros_like(prod)
    one[..., 0] = 1.0
    return one, prod


def pair_branch(i: int, p):
    """Branch ``i`` of the four-map ensemble: ``(f_i(qL), conj(f_i(qL)) qL qR)``."""
    qL, qR = _pair(p)
    fl = quat_branch_q(i, qL)
    return fl, qmul(qconj(fl), qmul(qL, qR))


_BASIS = np.eye(4)


def region_mask4(i: int, p):
    """Whether ``pair_branch(i, p)`` is exact: ``|Re(qL e_i)| >= 1/2`` for ``e = (1, i, j, k)``."""
    if i not in (1, 2, 3, 4):
        raise InvalidInputError(f"branch index must be in 1..4, got {i}")
    qL, _ = _pair(p)
    return np.abs(qmul(qL, _BASIS[i - 1])[..., 0]) >= 0.5
