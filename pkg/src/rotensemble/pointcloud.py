"""Synthetic point clouds with controlled rotational symmetry, and a permutation-invariant encoder."""
from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import InvalidInputError
from .nn.dense import glorot_uniform
from .nn.heads import Metric, Targets
from .so3 import make_rng, quat_to_rot, sample_uniform_rot
from .symmetry import FiniteRotationGroup, build_group

MIN_SPACING = 1e-3
SET_MATCH_TOL = 1e-9


def normalize_cloud(points):
    """Scale and shift so the bounding sphere of the axis-aligned bounding box is the unit sphere."""
    points = np.asarray(points, dtype=float)
    lo, hi = points.min(axis=0), points.max(axis=0)
    radius = np.linalg.norm(hi - lo) / 2
    if radius == 0:
        raise InvalidInputError("cannot normalize a cloud with a single distinct point")
    return (points - (lo + hi) / 2) / radius


def set_distance(a, b) -> float:
    """Largest nearest-neighbour distance between two equal-size point sets (0 iff equal as sets)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        return np.inf
    d_ab, _ = cKDTree(b).query(a)
    d_ba, _ = cKDTree(a).query(b)
    return float(max(d_ab.max(), d_ba.max()))


def is_invariant(points, R, tol: float = SET_MATCH_TOL) -> bool:
    points = np.asarray(points, dtype=float)
    return set_distance(points @ np.asarray(R).T, points) <= tol


def make_base_cloud(seed: int, n: int, max_tries: int = 100_000):
    """Reproducible asymmetric cloud of ``n`` points, normalized.

    Points are drawn uniformly from the unit ball and rejected if closer than
    ``MIN_SPACING`` to an accepted point. The result is checked against all
    23 non-identity rotations of the cube group.
    """
    if n < 16:
        raise InvalidInputError("a base cloud needs at least 16 points")
    rng = make_rng(seed)
    pts = []
    tries = 0
    while len(pts) < n:
        tries += 1
        if tries > max_tries:
            raise InvalidInputError(f"rejection sampling gave up after {max_tries} draws")
        p = rng.uniform(-1.0, 1.0, 3)
        if p @ p > 1.0:
            continue
        if pts and np.min(np.linalg.norm(np.asarray(pts) - p, axis=1)) < MIN_SPACING:
            continue
        pts.append(p)
    cloud = normalize_cloud(np.asarray(pts))
    for R in quat_to_rot(build_group("O").elements[1:], check=False):
        if np.allclose(R, np.eye(3)):
            continue
        if is_invariant(cloud, R, 1e-6):
            raise InvalidInputError("base cloud came out symmetric; use another seed")
    return cloud


def _affine(R, t):
    return np.hstack([np.asarray(R, dtype=float), np.asarray(t, dtype=float)[:, None]])


D2_TRANSFORMS = (
    _affine(np.diag([1.0, 1, 1]), [0.5, 0.5, 0.5]),
    _affine(np.diag([1.0, -1, -1]), [0.5, -0.5, -0.5]),
    _affine(np.diag([-1.0, 1, -1]), [-0.5, 0.5, -0.5]),
    _affine(np.diag([-1.0, -1, 1]), [-0.5, -0.5, 0.5]),
)

PLAIN_TRANSFORMS = tuple(_affine(np.eye(3), t[:, 3]) for t in D2_TRANSFORMS)


def build_symmetric_cloud(base, transforms=D2_TRANSFORMS, normalize: bool = True):
    """Union of affinely transformed copies of ``base`` (``3x4`` matrices ``[R | t]``).

    The default transforms are a half turn about each axis composed with a
    matching shift, so the union is invariant under the Klein four-group.
    """
    base = np.asarray(base, dtype=float)
    copies = [base @ T[:, :3].T + T[:, 3] for T in np.asarray(transforms, dtype=float)]
    cloud = np.concatenate(copies)
    return normalize_cloud(cloud) if normalize else cloud


# --------------------------------------------------------------------------
# text format


def dumps_cloud(points) -> str:
    points = np.asarray(points, dtype=float)
    buf = io.StringIO()
    buf.write(f"{len(points)}\n")
    for p in points:
        buf.write(" ".join(repr(float(c)) for c in p) + "\n")
    return buf.getvalue()


def loads_cloud(text: str):
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise InvalidInputError("empty cloud file")
    count = int(lines[0])
    pts = np.array([[float(c) for c in ln.split()] for ln in lines[1:]])
    if pts.shape != (count, 3):
        raise InvalidInputError(f"header says {count} points, body has shape {pts.shape}")
    return pts


# --------------------------------------------------------------------------
# encoder


class PointEncoder:
    """Shared per-point layers, max-pool, then a global feature appended to every point.

    ``x`` has shape ``(B, P, 3)``. Local layers map each point to ``local[-1]``
    features; their max over points goes through ``relu(pooled @ Wg)`` (no
    bias) and is concatenated to each point's features; more shared layers
    and a final max over points give the cloud feature. Every point-wise step
    is row-independent and pooling ignores order, so the output does not
    depend on the order of the points.
    """

    def __init__(self, local=(3, 64, 64), post=(128, 128), rng=None):
        self.local = [int(s) for s in local]
        self.post = [int(s) for s in post]
        c = self.local[-1]
        rng = rng if rng is not None else make_rng(0)
        self.local_W = [glorot_uniform(rng, a, b) for a, b in zip(self.local[:-1], self.local[1:])]
        self.local_b = [np.zeros(b) for b in self.local[1:]]
        self.Wg = glorot_uniform(rng, c, c)
        sizes = [2 * c, *self.post]
        self.post_W = [glorot_uniform(rng, a, b) for a, b in zip(sizes[:-1], sizes[1:])]
        self.post_b = [np.zeros(b) for b in sizes[1:]]

    @property
    def out_dim(self) -> int:
        return self.post[-1]

    @property
    def params(self):
        out = []
        for W, b in zip(self.local_W, self.local_b):
            out += [W, b]
        out.append(self.Wg)
        for W, b in zip(self.post_W, self.post_b):
            out += [W, b]
        return out

    def forward(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 2:
            x = x[None]
        B, P, _ = x.shape
        c = self.local[-1]
        h = x.reshape(B * P, -1)
        local_acts = [h]
        for W, b in zip(self.local_W, self.local_b):
            h = np.maximum(h @ W + b, 0.0)
            local_acts.append(h)
        hb = h.reshape(B, P, c)
        idx1 = np.argmax(hb, axis=1)
        pooled = np.take_along_axis(hb, idx1[:, None, :], axis=1)[:, 0]
        gpre = pooled @ self.Wg
        g = np.maximum(gpre, 0.0)
        W0 = self.post_W[0]
        h = h @ W0[:c] + np.repeat(g @ W0[c:], P, axis=0) + self.post_b[0]
        h = np.maximum(h, 0.0)
        post_acts = [h]
        for W, b in zip(self.post_W[1:], self.post_b[1:]):
            h = np.maximum(h @ W + b, 0.0)
            post_acts.append(h)
        hb2 = h.reshape(B, P, -1)
        idx2 = np.argmax(hb2, axis=1)
        feat = np.take_along_axis(hb2, idx2[:, None, :], axis=1)[:, 0]
        cache = (B, P, local_acts, idx1, pooled, gpre, g, post_acts, idx2)
        return feat, cache

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, cache, dfeat):
        B, P, local_acts, idx1, pooled, gpre, g, post_acts, idx2 = cache
        c = self.local[-1]
        d = np.zeros((B, P, dfeat.shape[1]))
        np.put_along_axis(d, idx2[:, None, :], dfeat[:, None, :], axis=1)
        d = d.reshape(B * P, -1)
        post_grads = []
        for k in range(len(self.post_W) - 1, 0, -1):
            d = d * (post_acts[k] > 0)
            post_grads = [post_acts[k - 1].T @ d, d.sum(axis=0)] + post_grads
            d = d @ self.post_W[k].T
        d = d * (post_acts[0] > 0)
        # first post layer: input is [local feature, global feature]
        W0 = self.post_W[0]
        h_local = local_acts[-1]
        d_b0 = d.sum(axis=0)
        d_sum = d.reshape(B, P, -1).sum(axis=1)
        d_W0 = np.vstack([h_local.T @ d, g.T @ d_sum])
        post_grads = [d_W0, d_b0] + post_grads
        d_local = d @ W0[:c].T
        d_g = d_sum @ W0[c:].T
        d_gpre = d_g * (gpre > 0)
        d_Wg = pooled.T @ d_gpre
        d_pooled = d_gpre @ self.Wg.T
        dl = d_local.reshape(B, P, c)
        scatter = np.zeros((B, P, c))
        np.put_along_axis(scatter, idx1[:, None, :], d_pooled[:, None, :], axis=1)
        d = (dl + scatter).reshape(B * P, c)
        local_grads = []
        for k in range(len(self.local_W) - 1, -1, -1):
            d = d * (local_acts[k + 1] > 0)
            local_grads = [local_acts[k].T @ d, d.sum(axis=0)] + local_grads
            d = d @ self.local_W[k].T
        return local_grads + [d_Wg] + post_grads


# --------------------------------------------------------------------------
# training task


@dataclass(frozen=True)
class NoiseSchedule:
    """Zero noise until ``start``, a linear ramp to ``sigma`` at ``end``, then constant."""

    start: int = 0
    end: int = 0
    sigma: float = 0.0

    def __call__(self, iteration: int) -> float:
        if iteration < self.start or self.sigma == 0:
            return 0.0
        if iteration >= self.end:
            return self.sigma
        return self.sigma * (iteration - self.start) / (self.end - self.start)


@dataclass
class PointCloudTask:
    """Estimate ``R`` from the rotated (and noisy) cloud ``R X``."""

    cloud: np.ndarray
    group: FiniteRotationGroup | None = None
    noise: NoiseSchedule = NoiseSchedule()

    @property
    def metric(self) -> Metric:
        return Metric.D if self.group is None else Metric.DG

    @property
    def in_dim(self) -> int:
        return 3

    def inputs(self, R, sigma: float = 0.0, rng=None):
        x = np.einsum("nij,pj->npi", R, self.cloud)
        if sigma > 0:
            x = x + rng.normal(scale=sigma, size=x.shape)
        return x

    def sample_targets(self, rng, m: int) -> Targets:
        q = sample_uniform_rot(rng, m)
        return Targets(quat=q, mat=quat_to_rot(q, check=False))

    def inputs_for(self, targets: Targets):
        return self.inputs(targets.mat)

    def sample(self, rng, m: int, iteration: int = 0):
        t = self.sample_targets(rng, m)
        return self.inputs(t.mat, self.noise(iteration), rng), t


def sample_task_batch(task: PointCloudTask, rng, iteration: int, m: int = 8):
    return task.sample(rng, m, iteration)
