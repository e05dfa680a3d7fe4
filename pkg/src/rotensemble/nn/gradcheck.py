"""Finite-difference validation of the hand-written backward passes."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ensemble import EnsembleModel, batch_loss


@dataclass
class GradCheck:
    max_rel_error: float
    probes: int
    skipped: int     # probes whose step crossed a kink (ReLU, max, argmin switch)


def directional_check(loss_fn, grad_fn, params, rng, probes: int = 1000, step: float = 1e-5,
                      kink_tol: float = 1e-3) -> GradCheck:
    """Compare ``grad . d`` with central differences along random unit directions ``d``.

    ``loss_fn()`` and ``grad_fn()`` read the current values of ``params``
    (which are perturbed in place and restored). A probe is skipped when the
    central differences at ``step`` and ``step / 2`` disagree by more than
    ``kink_tol`` relative, which happens only when the step straddles a
    non-differentiable point.
    """
    grads = grad_fn()
    worst, skipped = 0.0, 0
    for _ in range(probes):
        dirs = [rng.standard_normal(p.shape) for p in params]
        scale = np.sqrt(sum(float(np.sum(d * d)) for d in dirs))
        dirs = [d / scale for d in dirs]
        analytic = sum(float(np.sum(g * d)) for g, d in zip(grads, dirs))

        def central(h):
            for p, d in zip(params, dirs):
                p += h * d
            up = loss_fn()
            for p, d in zip(params, dirs):
                p -= 2 * h * d
            down = loss_fn()
            for p, d in zip(params, dirs):
                p += h * d
            return (up - down) / (2 * h)

        n1, n2 = central(step), central(step / 2)
        if abs(n1 - n2) > kink_tol * max(abs(n1), abs(n2), 1e-8):
            skipped += 1
            continue
        rel = abs(analytic - n1) / max(abs(analytic), abs(n1), 1e-8)
        worst = max(worst, rel)
    return GradCheck(worst, probes, skipped)


def check_model(model: EnsembleModel, x, targets, metric, group=None, penalty_weight: float = 0.0,
                region=None, rng=None, probes: int = 200) -> GradCheck:
    """Directional gradient check of the full training loss w.r.t. every model parameter."""
    def loss():
        out = model(x)
        return batch_loss(model, out, targets, metric, group, penalty_weight, region)[0]

    def grad():
        out, cache = model.forward(x)
        return model.backward(cache, batch_loss(model, out, targets, metric, group, penalty_weight, region)[2])

    return directional_check(loss, grad, model.params, rng, probes)
