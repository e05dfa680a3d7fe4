"""Self-selecting ensembles: shared trunk, one output block per head plus a classifier."""
from __future__ import annotations

import numpy as np

from ..errors import InvalidInputError
from ..so4 import region_mask4
from ..symmetry import FiniteRotationGroup
from .dense import DenseNet
from .heads import (
    LOSS_MAX,
    RAW_DIM,
    HeadKind,
    Metric,
    Targets,
    decode_head,
    head_error,
    init_bias,
    penalty_and_grad,
)


class EnsembleModel:
    """``n`` regression heads and (for ``n > 1``) an ``n``-way classifier.

    Everything up to the last linear layer is shared, so the heads and the
    classifier are just column blocks of one output matrix. An optional
    ``encoder`` (anything with ``params``/``forward``/``backward`` and
    ``out_dim``) maps raw inputs to the trunk's input features.
    """

    def __init__(self, in_dim: int, hidden, heads, rng=None, encoder=None):
        self.heads = [HeadKind(h) for h in heads]
        if not self.heads:
            raise InvalidInputError("an ensemble needs at least one head")
        self.encoder = encoder
        feat = encoder.out_dim if encoder is not None else int(in_dim)
        self.in_dim = int(in_dim)
        self.hidden = [int(h) for h in hidden]
        self.slices = []
        start = 0
        for h in self.heads:
            self.slices.append(slice(start, start + RAW_DIM[h]))
            start += RAW_DIM[h]
        self.cls_slice = slice(start, start + self.n) if self.n > 1 else None
        self.out_dim = start + (self.n if self.n > 1 else 0)
        self.net = DenseNet([feat, *self.hidden, self.out_dim], rng)

    @property
    def n(self) -> int:
        return len(self.heads)

    @property
    def params(self):
        enc = self.encoder.params if self.encoder is not None else []
        return enc + self.net.params

    def forward(self, x):
        if self.encoder is not None:
            feat, enc_cache = self.encoder.forward(x)
        else:
            feat, enc_cache = x, None
        out, cache = self.net.forward(feat)
        return out, (enc_cache, cache)

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, cache, dout):
        enc_cache, net_cache = cache
        grads, dfeat = self.net.backward(net_cache, dout)
        if self.encoder is None:
            return grads
        return self.encoder.backward(enc_cache, dfeat) + grads

    def split(self, out):
        """Raw head outputs (list) and classifier scores (``None`` for one head)."""
        raws = [out[:, s] for s in self.slices]
        cls = out[:, self.cls_slice] if self.cls_slice is not None else None
        return raws, cls


def init_model(model: EnsembleModel, rng: np.random.Generator) -> EnsembleModel:
    """Zero last layer; classifier bias ``1/n``; each head's bias encodes a random rotation."""
    W, b = model.net.weights[-1], model.net.biases[-1]
    W[...] = 0.0
    for kind, s in zip(model.heads, model.slices):
        b[s] = init_bias(kind, rng)
    if model.cls_slice is not None:
        b[model.cls_slice] = 1.0 / model.n
    return model


# --------------------------------------------------------------------------
# loss


def ensemble_loss(errs, g, loss_max: float):
    """Per-sample ``sum_i relu(g_i) err_i + relu(1 - sum_i g_i) loss_max`` and its gradients.

    ``errs`` and ``g`` have shape ``(N, n)``. With ``g is None`` (a single head)
    the loss is the error itself. Returns ``(loss, d loss/d errs, d loss/d g)``.
    """
    errs = np.asarray(errs, dtype=float)
    if g is None:
        return errs[:, 0], np.ones_like(errs), None
    g = np.asarray(g, dtype=float)
    pos = g > 0
    gp = np.where(pos, g, 0.0)
    slack = 1.0 - g.sum(axis=1)
    short = slack > 0
    loss = np.sum(gp * errs, axis=1) + np.where(short, slack, 0.0) * loss_max
    d_err = gp
    d_g = np.where(pos, errs, 0.0) - np.where(short, loss_max, 0.0)[:, None]
    return loss, d_err, d_g


def region_supervised_loss_4d(targets: Targets, raw, i: int):
    """Loss of head ``i``: its d4 error where the target lies in branch ``i``'s region, else 2 pi."""
    err, _ = head_error(HeadKind.QUAT_PAIR, raw, targets, Metric.D4)
    return np.where(region_mask4(i, targets.pair), err, 2 * np.pi)


def region_masks(targets: Targets, n: int):
    """``(N, n)`` membership in the four branch regions, by left quaternion."""
    if n != 4:
        raise InvalidInputError("region supervision needs exactly four heads")
    return np.stack([region_mask4(i, targets.pair) for i in range(1, 5)], axis=-1)


def batch_loss(model: EnsembleModel, out, targets: Targets, metric: Metric,
               group: FiniteRotationGroup | None = None, penalty_weight: float = 0.0,
               region=None):
    """Mean training loss over the batch, per-sample losses and ``d mean / d out``.

    ``region`` (optional ``(N, n)`` bool) pins head ``i``'s error to the
    maximum wherever the mask is false, with zero gradient to that head.
    """
    metric = Metric(metric)
    N = out.shape[0]
    raws, cls = model.split(out)
    errs = np.empty((N, model.n))
    derr_draw = []
    for k, (kind, raw) in enumerate(zip(model.heads, raws)):
        e, d = head_error(kind, raw, targets, metric, group)
        if region is not None:
            e = np.where(region[:, k], e, LOSS_MAX[metric])
            d = np.where(region[:, k, None], d, 0.0)
        errs[:, k] = e
        derr_draw.append(d)
    loss, d_err, d_g = ensemble_loss(errs, cls, LOSS_MAX[metric])
    dout = np.zeros_like(out)
    for k, s in enumerate(model.slices):
        dout[:, s] = d_err[:, k, None] * derr_draw[k]
    if d_g is not None:
        dout[:, model.cls_slice] = d_g
    per_sample = loss.copy()
    if penalty_weight:
        for kind, s, raw in zip(model.heads, model.slices, raws):
            p, gp = penalty_and_grad(kind, raw)
            per_sample += penalty_weight * p
            dout[:, s] += penalty_weight * gp
    return per_sample.mean(), per_sample, dout / N


# --------------------------------------------------------------------------
# prediction


def select_head(cls, n: int):
    """Index of the head with the largest classifier score, lowest index on ties."""
    if cls is None:
        return None
    return np.argmax(cls, axis=1)


def _family(kind: HeadKind) -> str:
    if kind is HeadKind.QUAT:
        return "quat"
    if kind is HeadKind.QUAT_PAIR:
        return "pair"
    return "matrix"


def ensemble_predict(model: EnsembleModel, x):
    """Selected head index and its decoded rotation for each input.

    Heads must share an output form (all quaternion, all pair, or all
    matrix-valued such as mixed Euler orders).
    """
    out = model(x)
    raws, cls = model.split(out)
    k = select_head(cls, model.n)
    if k is None:
        return np.zeros(len(out), dtype=int), decode_head(model.heads[0], raws[0])
    families = {_family(h) for h in model.heads}
    if len(families) != 1:
        raise InvalidInputError("heads decode to different rotation forms")
    family = families.pop()
    N = len(out)
    if family == "pair":
        result = (np.empty((N, 4)), np.empty((N, 4)))
    else:
        result = np.empty((N, 4) if family == "quat" else (N, 3, 3))
    for h, (kind, raw) in enumerate(zip(model.heads, raws)):
        sel = k == h
        if not np.any(sel):
            continue
        dec = decode_head(kind, raw[sel])
        if family == "pair":
            result[0][sel], result[1][sel] = dec
        else:
            result[sel] = dec
    return k, result


def selected_errors(model: EnsembleModel, out, targets: Targets, metric: Metric,
                    group: FiniteRotationGroup | None = None):
    """Error of the classifier-selected head, plus all head errors ``(N, n)``."""
    raws, cls = model.split(out)
    errs = np.stack([head_error(k, r, targets, metric, group)[0] for k, r in zip(model.heads, raws)], axis=1)
    k = select_head(cls, model.n)
    if k is None:
        return errs[:, 0], errs
    return errs[np.arange(len(out)), k], errs
