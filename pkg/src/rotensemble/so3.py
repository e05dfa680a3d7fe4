"""Quaternions, 3D rotation matrices, their metrics, and uniform sampling.

Conventions
-----------
- Quaternions are ``(w, x, y, z)`` arrays with the scalar part first; every
  function broadcasts over leading batch axes (``(..., 4)`` and ``(..., 3, 3)``).
- ``quat_to_rot`` is the 2:1 covering map; ``q`` and ``-q`` give the same matrix.
- Distances are angles in radians: ``dist_rot``/``dist_quat`` in ``[0, pi]`` on
  SO(3), ``geodesic_quat`` is the great-circle distance on the 3-sphere.

Canonical conversion
--------------------
``rot_to_quat_canonical`` returns the preimage with ``w >= 0``. When the trace
is within ``1e-6`` of ``-1`` the closed-form branch is replaced by the
largest-diagonal method. In that branch the sign still makes ``w`` positive when
``|w| > 1e-12``; for exact half turns (``w`` numerically zero) the
largest-magnitude component is made positive instead, so the half turn about
``z`` maps to ``(0, 0, 0, 1)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import InvalidInputError

UNIT_TOL = 1e-6
ORTHO_TOL = 1e-9
TRACE_EPS = 1e-6
HALF_TURN_W_TOL = 1e-12


# --------------------------------------------------------------------------
# quaternion algebra


def qmul(p, q):
    """Hamilton product ``p q``."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    pw, px, py, pz = np.moveaxis(p, -1, 0)
    qw, qx, qy, qz = np.moveaxis(q, -1, 0)
    return np.stack(
        [
            pw * qw - px * qx - py * qy - pz * qz,
            pw * qx + px * qw + py * qz - pz * qy,
            pw * qy - px * qz + py * qw + pz * qx,
            pw * qz + px * qy - py * qx + pz * qw,
        ],
        axis=-1,
    )


def qconj(q):
    q = np.asarray(q, dtype=float)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def qdot(p, q):
    return np.sum(np.asarray(p, dtype=float) * np.asarray(q, dtype=float), axis=-1)


def qnorm(q):
    return np.linalg.norm(np.asarray(q, dtype=float), axis=-1)


def normalize(q, eps: float = 1e-12):
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(n < eps):
        raise InvalidInputError("cannot normalize a (near-)zero vector")
    return q / n


def _check_unit(q, tol=UNIT_TOL):
    if not np.all(np.isfinite(q)) or np.any(np.abs(qnorm(q) - 1.0) > tol):
        raise InvalidInputError("expected unit quaternion(s)")


def check_rot3(M, tol=ORTHO_TOL):
    """Raise unless every matrix in ``M`` is orthogonal with determinant 1."""
    M = np.asarray(M, dtype=float)
    if M.shape[-2:] != (3, 3) or not np.all(np.isfinite(M)):
        raise InvalidInputError("expected 3x3 rotation matrices")
    eye = np.eye(3)
    resid = np.abs(np.swapaxes(M, -1, -2) @ M - eye).max(axis=(-1, -2))
    if np.any(resid > tol) or np.any(np.abs(np.linalg.det(M) - 1.0) > tol):
        raise InvalidInputError("matrix is not a rotation (orthogonality/determinant check failed)")


# --------------------------------------------------------------------------
# conversions


def quat_to_rot(q, check: bool = True):
    """Rotation matrix of a unit quaternion (the covering map S^3 -> SO(3))."""
    q = np.asarray(q, dtype=float)
    if check:
        _check_unit(q)
    w, x, y, z = np.moveaxis(q, -1, 0)
    rows = [
        [1 - 2 * y * y - 2 * z * z, 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * x * x - 2 * z * z, 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * x * x - 2 * y * y],
    ]
    return np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)


def rot_to_quat_canonical(M, check: bool = True):
    """Canonical quaternion of a rotation matrix, ties broken towards ``w >= 0``."""
    M = np.asarray(M, dtype=float)
    if check:
        check_rot3(M)
    batch = M.shape[:-2]
    M = M.reshape(-1, 3, 3)
    out = np.empty((M.shape[0], 4))
    tr = np.trace(M, axis1=-2, axis2=-1)

    main = tr > -1.0 + TRACE_EPS
    if np.any(main):
        m = M[main]
        t = np.sqrt(1.0 + tr[main])
        q = np.stack(
            [
                t / 2,
                (m[:, 2, 1] - m[:, 1, 2]) / (2 * t),
                (m[:, 0, 2] - m[:, 2, 0]) / (2 * t),
                (m[:, 1, 0] - m[:, 0, 1]) / (2 * t),
            ],
            axis=-1,
        )
        out[main] = q / np.linalg.norm(q, axis=-1, keepdims=True)

    fb = ~main
    if np.any(fb):
        out[fb] = _largest_diagonal(M[fb])
    return out.reshape(*batch, 4)


def _largest_diagonal(M):
    d = np.stack([M[:, 0, 0], M[:, 1, 1], M[:, 2, 2]], axis=-1)
    k = np.argmax(d, axis=-1)
    q = np.empty((M.shape[0], 4))
    for axis in range(3):
        sel = k == axis
        if not np.any(sel):
            continue
        m = M[sel]
        i, j, l = axis, (axis + 1) % 3, (axis + 2) % 3
        s = np.sqrt(np.maximum(1.0 + m[:, i, i] - m[:, j, j] - m[:, l, l], 0.0))
        qi = s / 2
        w = (m[:, l, j] - m[:, j, l]) / (2 * s)
        qj = (m[:, j, i] + m[:, i, j]) / (2 * s)
        ql = (m[:, l, i] + m[:, i, l]) / (2 * s)
        r = np.empty((m.shape[0], 4))
        r[:, 0] = w
        r[:, 1 + i] = qi
        r[:, 1 + j] = qj
        r[:, 1 + l] = ql
        q[sel] = r
    q /= np.linalg.norm(q, axis=-1, keepdims=True)

    w_clear = np.abs(q[:, 0]) > HALF_TURN_W_TOL
    sign = np.where(w_clear, np.sign(q[:, 0]), 1.0)
    idx = np.argmax(np.abs(q), axis=-1)
    lead = q[np.arange(q.shape[0]), idx]
    sign = np.where(w_clear, sign, np.where(lead < 0, -1.0, 1.0))
    return q * sign[:, None]


def axis_angle_to_quat(axis, angle):
    axis = np.asarray(axis, dtype=float)
    angle = np.asarray(angle, dtype=float)
    axis = axis / np.linalg.norm(axis, axis=-1, keepdims=True)
    h = angle[..., None] / 2
    return np.concatenate([np.cos(h), np.sin(h) * axis], axis=-1)


# --------------------------------------------------------------------------
# metrics


def dist_rot(R1, R2):
    """Angle of the relative rotation ``R2 R1^T``.

    Evaluated as ``atan2(|axial part|, (tr - 1) / 2)``, which equals
    ``acos((tr - 1) / 2)`` on rotations but stays accurate near 0 and pi and
    can never produce NaN.
    """
    R1 = np.asarray(R1, dtype=float)
    R2 = np.asarray(R2, dtype=float)
    A = R2 @ np.swapaxes(R1, -1, -2)
    c = (np.trace(A, axis1=-2, axis2=-1) - 1.0) / 2.0
    ax = np.stack(
        [A[..., 2, 1] - A[..., 1, 2], A[..., 0, 2] - A[..., 2, 0], A[..., 1, 0] - A[..., 0, 1]],
        axis=-1,
    )
    s = np.linalg.norm(ax, axis=-1) / 2.0
    return np.arctan2(s, c)


def rotation_angle(R):
    return dist_rot(np.eye(3), R)


def _rel(p, q):
    r = qmul(qconj(p), q)
    return r[..., 0], np.linalg.norm(r[..., 1:], axis=-1)


def dist_quat(p, q):
    """Rotation distance between the rotations of unit quaternions, ``2 acos|p.q|``."""
    w, s = _rel(p, q)
    return 2.0 * np.arctan2(s, np.abs(w))


def geodesic_quat(p, q):
    """Great-circle distance ``acos(p.q)`` on the 3-sphere."""
    w, s = _rel(p, q)
    return np.arctan2(s, w)


# --------------------------------------------------------------------------
# the z-axis loop and its lift


def zrot_path(t):
    """Rotation about ``z`` by ``2 pi t``; a loop in SO(3) for ``t`` in [0, 1]."""
    t = np.asarray(t, dtype=float)
    c, s = np.cos(2 * np.pi * t), np.sin(2 * np.pi * t)
    z, o = np.zeros_like(t), np.ones_like(t)
    return np.stack(
        [np.stack([c, -s, z], -1), np.stack([s, c, z], -1), np.stack([z, z, o], -1)], axis=-2
    )


def zrot_lift(t):
    """Lift of ``zrot_path`` to the 3-sphere starting at 1; ends at -1."""
    t = np.asarray(t, dtype=float)
    z = np.zeros_like(t)
    return np.stack([np.cos(np.pi * t), z, z, np.sin(np.pi * t)], axis=-1)


@dataclass(frozen=True)
class WitnessResult:
    t0: float
    error: float
    found: bool
    message: str = ""

    @property
    def rotation(self):
        return zrot_path(self.t0)


def witness_search(
    f: Callable[[np.ndarray], np.ndarray],
    tol: float = 1e-3,
    grid: int = 4096,
    bisect_steps: int = 60,
) -> WitnessResult:
    """Find a rotation on the z-axis loop where ``f`` is off by a half turn.

    ``f`` maps a batch of rotation matrices ``(N, 3, 3)`` to quaternions
    ``(N, 4)``. Along the loop ``v(t) = lift(t) . f(path(t))`` satisfies
    ``v(0) = -v(1)``, so a continuous ``f`` has a zero of ``v`` where the
    rotation error is exactly pi. The zero is bracketed on a uniform grid and
    refined by bisection. If the bracketed sign change turns out to be a jump
    (``f`` discontinuous), ``found`` is False and no witness is claimed.
    """
    ts = np.linspace(0.0, 1.0, grid)

    def v(t):
        t = np.atleast_1d(t)
        return np.sum(zrot_lift(t) * np.asarray(f(zrot_path(t)), dtype=float), axis=-1)

    def err(t):
        t = np.atleast_1d(t)
        return float(dist_quat(zrot_lift(t), np.asarray(f(zrot_path(t)), dtype=float))[0])

    vals = v(ts)
    zeros = np.flatnonzero(vals == 0.0)
    if zeros.size:
        t0 = float(ts[zeros[0]])
    else:
        flips = np.flatnonzero(np.sign(vals[:-1]) != np.sign(vals[1:]))
        if flips.size == 0:
            return WitnessResult(float("nan"), float("nan"), False, "no sign change at grid resolution")
        k = flips[0]
        lo, hi, vlo = ts[k], ts[k + 1], vals[k]
        for _ in range(bisect_steps):
            mid = 0.5 * (lo + hi)
            vm = v(mid)[0]
            if vm == 0.0:
                lo = hi = mid
                break
            if np.sign(vm) == np.sign(vlo):
                lo, vlo = mid, vm
            else:
                hi = mid
        t0 = lo if abs(v(lo)[0]) <= abs(v(hi)[0]) else hi
    e = err(t0)
    if e >= np.pi - tol:
        return WitnessResult(float(t0), e, True)
    return WitnessResult(
        float(t0), e, False, "sign change of v is a jump discontinuity of f, not a zero crossing"
    )


# --------------------------------------------------------------------------
# random rotations


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based (Philox) generator; split it with ``split_rng``."""
    return np.random.Generator(np.random.Philox(seed))


def split_rng(rng: np.random.Generator, n: int) -> list[np.random.Generator]:
    return rng.spawn(n)


def sample_uniform_rot(rng: np.random.Generator, size: int | None = None):
    """Haar-uniform rotations as unit quaternions (normalized Gaussian 4-vectors)."""
    n = 1 if size is None else int(size)
    q = rng.standard_normal((n, 4))
    norms = np.linalg.norm(q, axis=-1)
    bad = norms < 1e-12
    while np.any(bad):
        q[bad] = rng.standard_normal((int(bad.sum()), 4))
        norms = np.linalg.norm(q, axis=-1)
        bad = norms < 1e-12
    q /= norms[:, None]
    return q[0] if size is None else q


def sample_naive_axis_angle(rng: np.random.Generator, size: int | None = None):
    """Uniform axis on the sphere and uniform angle in [0, pi]; *not* Haar-uniform."""
    n = 1 if size is None else int(size)
    axis = rng.standard_normal((n, 3))
    axis /= np.linalg.norm(axis, axis=-1, keepdims=True)
    angle = rng.uniform(0.0, np.pi, n)
    q = axis_angle_to_quat(axis, angle)
    return q[0] if size is None else q
