"""Rotation representation heads: decode maps, penalties, error kernels and their gradients.

Every function here is batched over a leading axis ``N``. Errors are computed
in forms with bounded derivatives (``atan2`` of sine and cosine parts) so the
gradients stay finite at zero error and at half turns.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from ..errors import DegenerateRepresentationError, InvalidInputError
from ..euler import EulerOrder, euler_to_quat, euler_to_rot
from ..so3 import qconj, qmul, quat_to_rot, rot_to_quat_canonical, sample_uniform_rot
from ..so4 import left_matrix, right_matrix
from ..symmetry import FiniteRotationGroup

NORM_FLOOR = 1e-12
DEGENERATE_TOL = 1e-6


class HeadKind(enum.Enum):
    QUAT = "quat"
    EULER_XYZ = "euler-xyz"
    EULER_XZY = "euler-xzy"
    SIX_D = "6d"
    FIVE_D = "5d"
    QUAT_PAIR = "quatpair"


RAW_DIM = {
    HeadKind.QUAT: 4,
    HeadKind.EULER_XYZ: 3,
    HeadKind.EULER_XZY: 3,
    HeadKind.SIX_D: 6,
    HeadKind.FIVE_D: 5,
    HeadKind.QUAT_PAIR: 8,
}

EULER_ORDER = {HeadKind.EULER_XYZ: EulerOrder.XYZ, HeadKind.EULER_XZY: EulerOrder.XZY}
# (alpha axis, beta axis, gamma axis); the quaternion is e(gamma) e(beta) e(alpha)
EULER_AXES = {HeadKind.EULER_XYZ: (0, 1, 2), HeadKind.EULER_XZY: (0, 2, 1)}


class Metric(enum.Enum):
    D = "d"
    DG = "dG"
    D4 = "d4"


LOSS_MAX = {Metric.D: np.pi, Metric.DG: np.pi, Metric.D4: 2 * np.pi}


@dataclass
class Targets:
    """A batch of ground-truth rotations in whichever forms the heads need."""

    quat: np.ndarray | None = None  # (N, 4)
    mat: np.ndarray | None = None   # (N, 3, 3)
    pair: tuple | None = None       # ((N, 4), (N, 4))

    def __len__(self):
        for x in (self.quat, self.mat):
            if x is not None:
                return len(x)
        return len(self.pair[0])

    def take(self, idx) -> "Targets":
        return Targets(
            None if self.quat is None else self.quat[idx],
            None if self.mat is None else self.mat[idx],
            None if self.pair is None else (self.pair[0][idx], self.pair[1][idx]),
        )

    @staticmethod
    def concat(a: "Targets", b: "Targets") -> "Targets":
        cat = lambda x, y: None if x is None else np.concatenate([x, y])  # noqa: E731
        pair = None if a.pair is None else (cat(a.pair[0], b.pair[0]), cat(a.pair[1], b.pair[1]))
        return Targets(cat(a.quat, b.quat), cat(a.mat, b.mat), pair)


def _norm(x):
    return np.maximum(np.linalg.norm(x, axis=-1), NORM_FLOOR)


# --------------------------------------------------------------------------
# continuous 6D / 5D maps


def gram_schmidt(u, v):
    """Columns ``b1, b2, b1 x b2`` from two 3-vectors; returns ``(R, cache)``."""
    nu = _norm(u)
    b1 = u / nu[..., None]
    proj = np.sum(b1 * v, axis=-1)
    w = v - proj[..., None] * b1
    nw = _norm(w)
    b2 = w / nw[..., None]
    b3 = np.cross(b1, b2)
    R = np.stack([b1, b2, b3], axis=-1)
    return R, (b1, b2, v, nu, nw, proj)


def gram_schmidt_backward(cache, dR):
    b1, b2, v, nu, nw, proj = cache
    db1, db2, db3 = dR[..., :, 0], dR[..., :, 1], dR[..., :, 2]
    db1 = db1 + np.cross(b2, db3)
    db2 = db2 + np.cross(db3, b1)
    dw = (db2 - b2 * np.sum(b2 * db2, -1, keepdims=True)) / nw[..., None]
    b1dw = np.sum(b1 * dw, -1, keepdims=True)
    dv = dw - b1 * b1dw
    db1 = db1 - proj[..., None] * dw - b1dw * v
    du = (db1 - b1 * np.sum(b1 * db1, -1, keepdims=True)) / nu[..., None]
    return du, dv


def fived_to_sixd(raw):
    """Lift ``(x1, x2, y)`` to ``(u, v)`` by inverse stereographic projection of ``y``.

    ``y`` is unprojected to ``s`` on the 3-sphere; the first coordinate of
    ``s`` completes ``u`` and the other three, rescaled to unit length, form
    ``v``. In closed form ``v = y / |y|`` and ``u3 = (|y|^2 - 1) / (2 |y|)``.
    """
    raw = np.asarray(raw, dtype=float)
    y = raw[..., 2:]
    r = _norm(y)
    u = np.concatenate([raw[..., :2], ((r * r - 1) / (2 * r))[..., None]], axis=-1)
    v = y / r[..., None]
    return u, v


def fived_backward(raw, du, dv):
    y = raw[..., 2:]
    r = _norm(y)
    v = y / r[..., None]
    dy = (du[..., 2] * (0.5 + 0.5 / (r * r)))[..., None] * v
    dy = dy + (dv - v * np.sum(v * dv, -1, keepdims=True)) / r[..., None]
    return np.concatenate([du[..., :2], dy], axis=-1)


def sixd_from_rot(R):
    R = np.asarray(R, dtype=float)
    return np.concatenate([R[..., :, 0], R[..., :, 1]], axis=-1)


def fived_from_rot(R):
    R = np.asarray(R, dtype=float)
    c = R[..., 2, 0]
    r = c + np.sqrt(c * c + 1)
    return np.concatenate([R[..., :2, 0], R[..., :, 1] * r[..., None]], axis=-1)


# --------------------------------------------------------------------------
# decode


def decode_head(kind: HeadKind, raw):
    """Rotation encoded by a raw head output.

    Quaternion heads give unit quaternions, Euler/5D/6D heads give rotation
    matrices, pair heads give a ``(qL, qR)`` tuple.
    """
    kind = HeadKind(kind)
    raw = np.asarray(raw, dtype=float)
    if raw.shape[-1] != RAW_DIM[kind]:
        raise InvalidInputError(f"{kind.value} head expects {RAW_DIM[kind]} values, got {raw.shape[-1]}")
    if not np.all(np.isfinite(raw)):
        raise InvalidInputError("raw head output is not finite")
    if kind is HeadKind.QUAT:
        return _unit(raw, "quaternion")
    if kind in EULER_ORDER:
        return euler_to_rot(raw, EULER_ORDER[kind])
    if kind is HeadKind.QUAT_PAIR:
        return _unit(raw[..., :4], "left quaternion"), _unit(raw[..., 4:], "right quaternion")
    if kind is HeadKind.FIVE_D:
        if np.any(np.linalg.norm(raw[..., 2:], axis=-1) < DEGENERATE_TOL):
            raise DegenerateRepresentationError("5D vector projects to the pole")
        u, v = fived_to_sixd(raw)
    else:
        u, v = raw[..., :3], raw[..., 3:]
    nu = np.linalg.norm(u, axis=-1)
    nv = np.linalg.norm(v, axis=-1)
    if np.any(nu < DEGENERATE_TOL) or np.any(nv < DEGENERATE_TOL):
        raise DegenerateRepresentationError("6D vector has a (near) zero half")
    b1 = u / nu[..., None]
    if np.any(np.linalg.norm(v - np.sum(b1 * v, -1, keepdims=True) * b1, axis=-1) < DEGENERATE_TOL):
        raise DegenerateRepresentationError("6D halves are (nearly) parallel")
    return gram_schmidt(u, v)[0]


def _unit(q, what):
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(n < DEGENERATE_TOL):
        raise DegenerateRepresentationError(f"{what} has (near) zero norm")
    return q / n


# --------------------------------------------------------------------------
# penalty


def _log_norm_sq(x):
    n = _norm(x)
    ln = np.log(n)
    return ln * ln, (2 * ln / (n * n))[..., None] * x


def _sixd_penalty(u, v):
    pu, gu = _log_norm_sq(u)
    pv, gv = _log_norm_sq(v)
    dot = np.sum(u * v, -1)
    return pu + pv + dot * dot, gu + 2 * dot[..., None] * v, gv + 2 * dot[..., None] * u


def penalty_and_grad(kind: HeadKind, raw):
    """Penalty keeping raw outputs away from the decode singularities, and its gradient."""
    kind = HeadKind(kind)
    raw = np.asarray(raw, dtype=float)
    if kind is HeadKind.QUAT:
        return _log_norm_sq(raw)
    if kind in EULER_ORDER:
        return np.zeros(raw.shape[:-1]), np.zeros_like(raw)
    if kind is HeadKind.QUAT_PAIR:
        pl, gl = _log_norm_sq(raw[..., :4])
        pr, gr = _log_norm_sq(raw[..., 4:])
        return pl + pr, np.concatenate([gl, gr], axis=-1)
    if kind is HeadKind.SIX_D:
        p, gu, gv = _sixd_penalty(raw[..., :3], raw[..., 3:])
        return p, np.concatenate([gu, gv], axis=-1)
    u, v = fived_to_sixd(raw)
    p, gu, gv = _sixd_penalty(u, v)
    return p, fived_backward(raw, gu, gv)


def penalty(kind: HeadKind, raw):
    return penalty_and_grad(kind, raw)[0]


# --------------------------------------------------------------------------
# error kernels


def _half_angle(r, signed: bool):
    """Angle of quaternion ``r`` (any norm) from +-1 (``signed=False``) or from +1.

    Returns ``atan2(|vec r|, |Re r|)`` or ``atan2(|vec r|, Re r)`` and its gradient.
    """
    w = r[..., 0]
    vec = r[..., 1:]
    s = np.linalg.norm(vec, axis=-1)
    c = w if signed else np.abs(w)
    den = np.maximum(s * s + c * c, NORM_FLOOR**2)
    ang = np.arctan2(s, c)
    dc = -s / den
    ds = c / den
    grad = np.empty_like(r)
    grad[..., 0] = dc if signed else dc * np.sign(w)
    grad[..., 1:] = (ds / np.where(s > 0, s, 1.0))[..., None] * vec
    return ang, grad


def _group_quats(group: FiniteRotationGroup | None):
    """Group elements up to sign (enough for sign-blind distances)."""
    if group is None:
        return np.array([[1.0, 0, 0, 0]])
    el = group.elements
    lead = np.argmax(np.abs(el) > 1e-12, axis=-1)
    keep = np.take_along_axis(el, lead[:, None], axis=-1)[:, 0] > 0
    return el[keep]


def _quat_rel_error(t, q, group):
    """``min_g 2 * angle(conj(t) q g)`` and its gradient w.r.t. ``q`` (any norm)."""
    Lt = left_matrix(qconj(t))
    r = np.einsum("nij,nj->ni", Lt, q)
    gs = _group_quats(group)
    rg = qmul(r[:, None, :], gs[None])
    ang, grad = _half_angle(rg, signed=False)
    k = np.argmin(ang, axis=-1)
    idx = np.arange(len(r))
    err = 2 * ang[idx, k]
    g_rg = 2 * grad[idx, k]
    Rg = right_matrix(gs)[k]
    g_r = np.einsum("nji,nj->ni", Rg, g_rg)
    return err, np.einsum("nji,nj->ni", Lt, g_r)


_EYE3 = np.eye(3)


def _matrix_rel_error(T, R, group):
    """``min_g dist(T, R M_g)`` and its gradient w.r.t. ``R``."""
    gs = _group_quats(group)
    Mg = quat_to_rot(gs, check=False)
    P = np.einsum("nji,njk->nik", T, R)
    Pg = np.einsum("nij,gjk->ngik", P, Mg)
    tr = np.trace(Pg, axis1=-2, axis2=-1)
    ax = np.stack(
        [Pg[..., 2, 1] - Pg[..., 1, 2], Pg[..., 0, 2] - Pg[..., 2, 0], Pg[..., 1, 0] - Pg[..., 0, 1]],
        axis=-1,
    )
    c = (tr - 1) / 2
    s = np.linalg.norm(ax, axis=-1) / 2
    ang = np.arctan2(s, c)
    k = np.argmin(ang, axis=-1)
    idx = np.arange(len(T))
    c, s, ax = c[idx, k], s[idx, k], ax[idx, k]
    den = np.maximum(s * s + c * c, NORM_FLOOR**2)
    dc = -s / den
    ds = c / den
    a = ax / np.maximum(2 * s, NORM_FLOOR)[..., None] * (ds / 2)[..., None]
    dP = (dc / 2)[:, None, None] * _EYE3
    dP[:, 2, 1] += a[:, 0]
    dP[:, 1, 2] -= a[:, 0]
    dP[:, 0, 2] += a[:, 1]
    dP[:, 2, 0] -= a[:, 1]
    dP[:, 1, 0] += a[:, 2]
    dP[:, 0, 1] -= a[:, 2]
    # P_g = T^T R M_g  =>  dR = T dP_g M_g^T
    dR = np.einsum("nij,njk,nlk->nil", T, dP, Mg[k])
    return ang[idx, k], dR


def _elemental(axis, angle):
    q = np.zeros(angle.shape + (4,))
    q[..., 0] = np.cos(angle / 2)
    q[..., 1 + axis] = np.sin(angle / 2)
    return q


def _elemental_d(axis, angle):
    q = np.zeros(angle.shape + (4,))
    q[..., 0] = -0.5 * np.sin(angle / 2)
    q[..., 1 + axis] = 0.5 * np.cos(angle / 2)
    return q


def euler_quat_and_jacobian(kind: HeadKind, angles):
    """Quaternion of Euler angles and its derivatives ``(N, 3, 4)`` w.r.t. each angle."""
    ax_a, ax_b, ax_g = EULER_AXES[kind]
    a, b, g = angles[..., 0], angles[..., 1], angles[..., 2]
    ea, eb, eg = _elemental(ax_a, a), _elemental(ax_b, b), _elemental(ax_g, g)
    q = qmul(qmul(eg, eb), ea)
    dq = np.stack(
        [
            qmul(qmul(eg, eb), _elemental_d(ax_a, a)),
            qmul(qmul(eg, _elemental_d(ax_b, b)), ea),
            qmul(qmul(_elemental_d(ax_g, g), eb), ea),
        ],
        axis=-2,
    )
    return q, dq


def _pair_error(tL, tR, raw):
    """``d4`` between the target pair and the (unnormalized) raw pair, with gradient."""
    rl = np.einsum("nij,nj->ni", left_matrix(qconj(tL)), raw[:, :4])
    rr = np.einsum("nij,nj->ni", left_matrix(qconj(tR)), raw[:, 4:])
    dL, gL = _half_angle(rl, signed=True)
    dR, gR = _half_angle(rr, signed=True)
    near = dL + dR <= np.pi
    g_sum = np.where(near, 1.0, -1.0)
    g_diff = np.sign(dL - dR)
    err = np.where(near, dL + dR, 2 * np.pi - dL - dR) + np.abs(dL - dR)
    gl = (g_sum + g_diff)[:, None] * np.einsum("nji,nj->ni", left_matrix(qconj(tL)), gL)
    gr = (g_sum - g_diff)[:, None] * np.einsum("nji,nj->ni", left_matrix(qconj(tR)), gR)
    return err, np.concatenate([gl, gr], axis=-1)


def head_error(kind: HeadKind, raw, targets: Targets, metric: Metric = Metric.D,
               group: FiniteRotationGroup | None = None):
    """Per-sample error of a raw head output against the targets, and ``d err / d raw``."""
    kind = HeadKind(kind)
    metric = Metric(metric)
    raw = np.asarray(raw, dtype=float)
    if metric is Metric.D4 or kind is HeadKind.QUAT_PAIR:
        if kind is not HeadKind.QUAT_PAIR or metric is not Metric.D4:
            raise InvalidInputError("the d4 metric goes with quaternion-pair heads only")
        return _pair_error(targets.pair[0], targets.pair[1], raw)
    if metric is Metric.D:
        group = None
    elif group is None:
        raise InvalidInputError("the quotient metric needs a symmetry group")
    if kind is HeadKind.QUAT:
        return _quat_rel_error(targets.quat, raw, group)
    if kind in EULER_ORDER:
        q, dq = euler_quat_and_jacobian(kind, raw)
        err, gq = _quat_rel_error(targets.quat, q, group)
        return err, np.einsum("nkj,nj->nk", dq, gq)
    if kind is HeadKind.SIX_D:
        R, cache = gram_schmidt(raw[:, :3], raw[:, 3:])
        err, dR = _matrix_rel_error(targets.mat, R, group)
        du, dv = gram_schmidt_backward(cache, dR)
        return err, np.concatenate([du, dv], axis=-1)
    u, v = fived_to_sixd(raw)
    R, cache = gram_schmidt(u, v)
    err, dR = _matrix_rel_error(targets.mat, R, group)
    du, dv = gram_schmidt_backward(cache, dR)
    return err, fived_backward(raw, du, dv)


# --------------------------------------------------------------------------
# initial output bias


def init_bias(kind: HeadKind, rng: np.random.Generator) -> np.ndarray:
    """Raw vector representing a random rotation, used as the head's initial bias."""
    kind = HeadKind(kind)
    if kind in EULER_ORDER:
        return np.array([rng.uniform(-np.pi, np.pi), rng.uniform(-np.pi / 4, np.pi / 4),
                         rng.uniform(-np.pi, np.pi)])
    if kind is HeadKind.QUAT:
        return sample_uniform_rot(rng)
    if kind is HeadKind.QUAT_PAIR:
        return np.concatenate([sample_uniform_rot(rng), sample_uniform_rot(rng)])
    R = quat_to_rot(sample_uniform_rot(rng), check=False)
    return sixd_from_rot(R) if kind is HeadKind.SIX_D else fived_from_rot(R)


def head_to_quat(kind: HeadKind, raw):
    """Quaternion of a 3D head output (batched); used for witness searches."""
    kind = HeadKind(kind)
    raw = np.asarray(raw, dtype=float)
    if kind is HeadKind.QUAT:
        return raw / _norm(raw)[..., None]
    if kind in EULER_ORDER:
        return euler_to_quat(raw, EULER_ORDER[kind])
    if kind is HeadKind.SIX_D:
        R = gram_schmidt(raw[..., :3], raw[..., 3:])[0]
    elif kind is HeadKind.FIVE_D:
        R = gram_schmidt(*fived_to_sixd(raw))[0]
    else:
        raise InvalidInputError("pair heads have no single quaternion")
    return rot_to_quat_canonical(R, check=False)
