"""Finite rotation groups stored as their binary double covers, and the quotient metric.

A group ``G`` of order ``|G|`` is kept as the ``2|G|`` unit quaternions that
cover it (at most 120), so distances to a coset are brute-force minima.
Cyclic and dihedral groups use ``z`` as the main axis; dihedral half-turn axes
lie in the x-y plane.
"""
from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import InvalidInputError
from .so3 import dist_quat, qmul, rot_to_quat_canonical

SQ2 = np.sqrt(2.0) / 2
PHI_HALF = (np.sqrt(5.0) + 1) / 4
PHI_INV_HALF = (np.sqrt(5.0) - 1) / 4


class GroupKind(enum.Enum):
    C = "C"
    D = "D"
    T = "T"
    O = "O"
    I = "I"


ORDER = {GroupKind.T: 12, GroupKind.O: 24, GroupKind.I: 60}


@dataclass(frozen=True, eq=False)
class FiniteRotationGroup:
    kind: GroupKind
    n: int
    elements: np.ndarray = field(repr=False)

    @property
    def order(self) -> int:
        return len(self.elements) // 2

    @property
    def name(self) -> str:
        return f"{self.kind.value}{self.n}" if self.kind in (GroupKind.C, GroupKind.D) else self.kind.value

    @property
    def has_half_turn(self) -> bool:
        return not (self.kind is GroupKind.C and self.n % 2 == 1)


def _signed_perms(values, even_only=False):
    base = list(values)
    out = set()
    for perm in itertools.permutations(range(4)):
        if even_only and _parity(perm):
            continue
        arranged = [base[p] for p in perm]
        nz = [k for k in range(4) if arranged[k] != 0]
        for signs in itertools.product((1.0, -1.0), repeat=len(nz)):
            v = list(arranged)
            for k, s in zip(nz, signs):
                v[k] = s * v[k]
            out.add(tuple(v))
    return [list(v) for v in sorted(out)]


def _parity(perm) -> int:
    perm = list(perm)
    swaps = 0
    for a in range(len(perm)):
        while perm[a] != a:
            b = perm[a]
            perm[a], perm[b] = perm[b], perm[a]
            swaps += 1
    return swaps % 2


def build_group(kind, n: int | None = None) -> FiniteRotationGroup:
    kind = GroupKind(kind)
    if kind in (GroupKind.C, GroupKind.D):
        if n is None or int(n) != n or n < 1:
            raise InvalidInputError(f"{kind.value}n needs a positive integer n, got {n!r}")
        n = int(n)
        k = np.arange(2 * n) * np.pi / n
        z = np.zeros_like(k)
        els = [np.stack([np.cos(k), z, z, np.sin(k)], axis=-1)]
        if kind is GroupKind.D:
            els.append(np.stack([z, np.cos(k), np.sin(k), z], axis=-1))
        return FiniteRotationGroup(kind, n, np.concatenate(els))
    if n is not None:
        raise InvalidInputError(f"group {kind.value} takes no n")
    els = _signed_perms([1.0, 0.0, 0.0, 0.0])
    els += [list(s) for s in itertools.product((0.5, -0.5), repeat=4)]
    if kind is GroupKind.O:
        els += _signed_perms([SQ2, SQ2, 0.0, 0.0])
    if kind is GroupKind.I:
        els += _signed_perms([0.0, PHI_HALF, 0.5, PHI_INV_HALF], even_only=True)
    return FiniteRotationGroup(kind, 0, np.array(els))


def parse_group(spec: str) -> FiniteRotationGroup:
    """``"c4"``, ``"d2"``, ``"t"``, ``"o"``, ``"i"`` (case-insensitive)."""
    s = spec.strip().upper()
    if s[:1] in ("C", "D") and len(s) > 1:
        return build_group(s[0], int(s[1:]))
    return build_group(s)


def trivial_group() -> FiniteRotationGroup:
    return build_group("C", 1)


# --------------------------------------------------------------------------
# quotient metric


def _max_abs_dot(s, r, G):
    """max over g in G-hat of |s . (r g)|, plus the maximizing index."""
    s, r = np.broadcast_arrays(np.asarray(s, dtype=float), np.asarray(r, dtype=float))
    rg = qmul(r[..., None, :], G.elements)
    dots = np.abs(np.sum(np.asarray(s, dtype=float)[..., None, :] * rg, axis=-1))
    k = np.argmax(dots, axis=-1)
    return np.take_along_axis(dots, k[..., None], axis=-1)[..., 0], k, rg


def dist_quotient(s, r, G: FiniteRotationGroup):
    """Distance from rotation ``s`` to the coset ``r G``: ``min_g 2 d_Q(s, r g)``."""
    _, k, rg = _max_abs_dot(s, r, G)
    best = np.take_along_axis(rg, k[..., None, None], axis=-2)[..., 0, :]
    return dist_quat(s, best)


def coset_equal(R1, R2, G: FiniteRotationGroup, tol: float = 1e-7):
    return dist_quotient(rot_to_quat_canonical(R1), rot_to_quat_canonical(R2), G) <= tol


# --------------------------------------------------------------------------
# worst-case error bounds


class GroupBound(NamedTuple):
    value: float
    conjectured: bool


def bound_for_group(G: FiniteRotationGroup) -> GroupBound:
    """Smallest possible maximum error of a continuous map SO(3)/G -> SO(3)."""
    if G.kind is GroupKind.C:
        if G.n == 1:
            return GroupBound(0.0, False)
        return GroupBound(np.pi, not G.has_half_turn)
    if G.kind is GroupKind.D:
        return GroupBound(float(np.arccos(-np.sin(np.pi / (2 * G.n)) ** 2)), False)
    if G.kind is GroupKind.T:
        return GroupBound(np.pi / 2, False)
    if G.kind is GroupKind.O:
        return GroupBound(float(np.arccos((2 * np.sqrt(2) - 1) / 4)), False)
    return GroupBound(float(np.arccos((3 * np.sqrt(5) - 1) / 8)), False)


def witness_quaternions(G: FiniteRotationGroup) -> np.ndarray:
    """The three group elements whose equal-dot conditions pin down the worst case."""
    n = G.n
    if G.kind is GroupKind.C:
        return np.array([[-1.0, 0, 0, 0], [np.cos(np.pi / n), 0, 0, np.sin(np.pi / n)]])
    if G.kind is GroupKind.D:
        return np.array(
            [
                [np.cos(np.pi / n), 0, 0, np.sin(np.pi / n)],
                [0, 1.0, 0, 0],
                [0, np.cos(np.pi / n), np.sin(np.pi / n), 0],
            ]
        )
    if G.kind is GroupKind.T:
        return np.array([[0.5, 0.5, 0.5, 0.5], [0.5, 0.5, 0.5, -0.5], [0.5, 0.5, -0.5, 0.5]])
    if G.kind is GroupKind.O:
        return np.array([[SQ2, SQ2, 0, 0], [SQ2, 0, SQ2, 0], [0.5, 0.5, 0.5, 0.5]])
    return np.array(
        [
            [PHI_HALF, 0.5, 0, PHI_INV_HALF],
            [PHI_HALF, PHI_INV_HALF, 0.5, 0],
            [PHI_HALF, 0, PHI_INV_HALF, 0.5],
        ]
    )


class SingularWitnessSystem(RuntimeError):
    pass


def certify_bound(G: FiniteRotationGroup):
    """Solve ``u.1 = u.q1 = u.q2 = u.q3`` on the unit sphere and evaluate the coset distance.

    Returns ``(u, achieved)`` where ``achieved = min_g 2 acos(u . g)``. For
    cyclic groups the system is rank 2 and any unit solution gives the same value.
    """
    qs = witness_quaternions(G)
    A = np.array([1.0, 0, 0, 0]) - qs
    _, sv, vt = np.linalg.svd(A)
    expected_rank = 2 if G.kind is GroupKind.C else 3
    rank = int(np.sum(sv > 1e-9))
    if rank != expected_rank:
        raise SingularWitnessSystem(
            f"{G.name}: linear system has rank {rank}, expected {expected_rank}"
        )
    u = vt[-1]
    lead = np.argmax(np.abs(u))
    u = u * np.sign(u[lead])
    dots = np.clip(G.elements @ u, -1.0, 1.0)
    achieved = float(2 * np.arccos(dots.max()))
    return u, achieved
