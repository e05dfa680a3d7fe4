"""Searches for inputs on which a trained network must be badly wrong.

Random test sets rarely land on the thin sets where a continuous predictor
is forced into its worst error, so these routines look for them directly:

* ``witness_single``: bisection along the z-axis loop (one quaternion head).
* ``common_zero_witness``: a rotation ``q`` with ``q . f_i(q) = 0`` for every
  head, where all (up to three) heads are off by a half turn at once.
* ``symmetric_witness``: for a single head on a symmetric input, a rotation
  ``p`` with ``conj(f(p)) p = +-u``, the certified worst relative rotation,
  where the quotient error equals the group's bound.
* ``refine_max_error``: derivative-free hill climbing on the error itself.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares

from ..so3 import WitnessResult, qconj, qmul, quat_to_rot, sample_uniform_rot, witness_search
from ..symmetry import FiniteRotationGroup, certify_bound
from .ensemble import EnsembleModel, selected_errors
from .heads import Targets, head_to_quat
from .train import errors_on


def _targets_from_quats(q) -> Targets:
    q = np.atleast_2d(q)
    return Targets(quat=q, mat=quat_to_rot(q, check=False))


def head_quats(model: EnsembleModel, task, q):
    """Quaternion output of every head at rotations ``q``: shape ``(N, n, 4)``."""
    t = _targets_from_quats(q)
    raws, _ = model.split(model(task.inputs_for(t)))
    return np.stack([head_to_quat(k, r) for k, r in zip(model.heads, raws)], axis=1)


def single_head_fn(model: EnsembleModel, task, head: int = 0):
    def f(R):
        raws, _ = model.split(model(task.inputs_for(Targets(mat=np.asarray(R)))))
        return head_to_quat(model.heads[head], raws[head])

    return f


def witness_single(model: EnsembleModel, task, **kwargs) -> WitnessResult:
    return witness_search(single_head_fn(model, task), **kwargs)


@dataclass(frozen=True)
class Witness:
    q: np.ndarray          # unit quaternion of the input rotation
    residual: float        # norm of the defining equations at q
    head_errors: np.ndarray
    error: float           # error of the classifier-selected head


def _solve(residual_fn, batch_residual_fn, rng, candidates: int, starts: int):
    q0 = sample_uniform_rot(rng, candidates)
    r0 = np.linalg.norm(batch_residual_fn(q0), axis=-1)
    best = None
    for k in np.argsort(r0)[:starts]:
        sol = least_squares(
            lambda x: np.append(residual_fn(x), x @ x - 1.0),
            q0[k], method="trf", xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=2000,
        )
        q = sol.x / np.linalg.norm(sol.x)
        res = float(np.linalg.norm(residual_fn(q)))
        if best is None or res < best[1]:
            best = (q, res)
    return best


def _report(model, task, q, res):
    t = _targets_from_quats(q)
    sel, errs = selected_errors(model, model(task.inputs_for(t)), t, task.metric, task.group)
    return Witness(q, res, errs[0], float(sel[0]))


def _zero_on_arcs(f, a, B, grid: int, steps: int):
    """First zero of an odd ``f`` on each half great circle from ``a`` to ``-a`` through ``B[k]``."""
    ts = np.linspace(0.0, 1.0, grid)
    arc = lambda t, b: np.cos(np.pi * t)[..., None] * a + np.sin(np.pi * t)[..., None] * b  # noqa: E731
    P = arc(ts[None, :], B[:, None, :])
    vals = f(P.reshape(-1, 4)).reshape(len(B), grid)
    change = np.signbit(vals[:, :-1]) != np.signbit(vals[:, 1:])
    change |= vals[:, :-1] == 0
    k = np.argmax(change, axis=1)
    lo, hi = ts[k], ts[k + 1]
    vlo = vals[np.arange(len(B)), k]
    for _ in range(steps):
        mid = 0.5 * (lo + hi)
        vm = f(arc(mid, B))
        same = np.signbit(vm) == np.signbit(vlo)
        lo = np.where(same, mid, lo)
        vlo = np.where(same, vm, vlo)
        hi = np.where(same, hi, mid)
    return arc(0.5 * (lo + hi), B)


def nested_zero(fs, basis, grid: int = 48, steps: int = 40):
    """Common zero of up to ``len(basis) - 1`` odd functions on the unit sphere of ``span(basis)``.

    ``fs`` are vectorized odd functions ``(N, 4) -> (N,)``. The first one is
    solved along half circles from ``basis[0]`` through the equator spanned
    by the remaining basis vectors; composing the others with that solution
    gives odd functions on the equator, handled recursively. Each level
    takes the first sign change on its grid, so the result is a true common
    zero only where those first crossings move continuously; callers check
    the residual.
    """
    basis = np.asarray(basis, dtype=float)
    if not fs:
        return basis[0]
    a, f1, rest = basis[0], fs[0], fs[1:]
    if not rest:
        return _zero_on_arcs(f1, a, basis[1][None], grid, steps)[0]
    lifted = [lambda B, f=f: f(_zero_on_arcs(f1, a, B, grid, steps)) for f in rest]
    b = nested_zero(lifted, basis[1:], grid, steps)
    return _zero_on_arcs(f1, a, b[None], grid, steps)[0]


def common_zero_witness(model: EnsembleModel, task, rng, tries: int = 8, tol: float = 1e-6,
                        grid: int = 48, steps: int = 40) -> Witness:
    """Rotation where every head (at most three) is off by a half turn.

    Each ``v_i(q) = q . f_i(q)`` is odd on the 3-sphere, so up to three of
    them have a common zero. It is located by ``nested_zero`` in randomly
    oriented frames until the residual ``max |v_i|`` is below ``tol``; the
    best attempt is returned either way.
    """
    if model.n > 3:
        raise ValueError("a common zero is only guaranteed for at most three heads")

    def head_fn(i):
        return lambda q: np.einsum("nk,nk->n", q, head_quats(model, task, q)[:, i])

    fs = [head_fn(i) for i in range(model.n)]
    best = None
    for _ in range(tries):
        basis, _ = np.linalg.qr(rng.standard_normal((4, 4)))
        q = nested_zero(fs, basis.T, grid, steps)
        q = q / np.linalg.norm(q)
        res = float(max(abs(f(q[None])[0]) for f in fs))
        if best is None or res < best[1]:
            best = (q, res)
        if res <= tol:
            break
    return _report(model, task, *best)


def symmetric_witness(model: EnsembleModel, task, group: FiniteRotationGroup, rng,
                      candidates: int = 20_000, starts: int = 8) -> Witness:
    """Rotation ``p`` where a single head's relative rotation ``conj(f(p)) p`` is the certified worst one.

    The residual ``w w^T - u u^T`` with ``w = conj(f(p)) p`` ignores the sign
    of the head's quaternion, so any sign convention for ``f`` works.
    """
    u, _ = certify_bound(group)
    uu = np.outer(u, u)

    def batch_res(p):
        p = p / np.linalg.norm(p, axis=-1, keepdims=True)
        s = head_quats(model, task, p)[:, 0]
        w = qmul(qconj(s), p)
        return (w[:, :, None] * w[:, None, :] - uu).reshape(len(p), 16)

    def res(x):
        return batch_res(x[None])[0]

    q, r = _solve(res, batch_res, rng, candidates, starts)
    return _report(model, task, q, r)


def sample_near(q, radius: float, n: int, rng):
    """``n`` rotations within angle ``radius`` of ``q`` (uniform axis, uniform angle)."""
    axis = rng.standard_normal((n, 3))
    axis /= np.linalg.norm(axis, axis=1, keepdims=True)
    ang = rng.uniform(0.0, radius, n)
    d = np.concatenate([np.cos(ang / 2)[:, None], np.sin(ang / 2)[:, None] * axis], axis=1)
    return qmul(np.asarray(q)[None], d)


def errors_near(model: EnsembleModel, task, q, radius: float, n: int, rng):
    return errors_on(model, task, _targets_from_quats(sample_near(q, radius, n, rng)))


# --------------------------------------------------------------------------
# hill climbing


def _renormalize(x):
    x = x.reshape(len(x), -1, 4)
    x = x / np.linalg.norm(x, axis=-1, keepdims=True)
    return x.reshape(len(x), -1)


def refine_max_error(err_fn, starts, rng, steps: int = 300, scale: float = 0.05,
                     shrink: float = 0.7, patience: int = 10):
    """Greedy random-perturbation ascent of ``err_fn`` from each start.

    ``starts`` is ``(K, 4m)``: ``m`` unit quaternions per point (one for 3D
    rotations, two for 4D pairs). Returns ``(points, errors)`` after ``steps``
    rounds; each point's step size shrinks after ``patience`` failed proposals.
    """
    x = _renormalize(np.array(starts, dtype=float))
    e = err_fn(x)
    sigma = np.full(len(x), float(scale))
    fails = np.zeros(len(x), dtype=int)
    for _ in range(steps):
        prop = _renormalize(x + sigma[:, None] * rng.standard_normal(x.shape))
        ep = err_fn(prop)
        better = ep > e
        x[better], e[better] = prop[better], ep[better]
        fails = np.where(better, 0, fails + 1)
        stuck = fails >= patience
        sigma[stuck] *= shrink
        fails[stuck] = 0
    return x, e


def pair_error_fn(model: EnsembleModel, task):
    def f(x):
        t = Targets(pair=(x[:, :4], x[:, 4:]))
        return errors_on(model, task, t)

    return f


def quat_error_fn(model: EnsembleModel, task):
    def f(x):
        return errors_on(model, task, _targets_from_quats(x))

    return f
