"""Training loops for the rotation-conversion and point-cloud tasks."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidInputError, TrainingDiverged
from ..pointcloud import (
    D2_TRANSFORMS,
    PLAIN_TRANSFORMS,
    NoiseSchedule,
    PointCloudTask,
    PointEncoder,
    build_symmetric_cloud,
    make_base_cloud,
)
from ..so3 import make_rng, quat_to_rot, sample_uniform_rot
from ..so4 import identity_left_map, rqq, sample_pairs
from ..symmetry import build_group
from .dense import Adam
from .ensemble import EnsembleModel, batch_loss, init_model, region_masks, selected_errors
from .heads import HeadKind, Metric, Targets

N_QUANTILES = 1000


# --------------------------------------------------------------------------
# tasks


class Mat3Task:
    """Rotation matrix (flattened, 9 inputs) to a 3D rotation representation."""

    metric = Metric.D
    group = None
    in_dim = 9

    def inputs(self, R):
        return np.asarray(R).reshape(len(R), 9)

    def sample(self, rng, m: int, iteration: int = 0):
        t = self.sample_targets(rng, m)
        return self.inputs_for(t), t

    def sample_targets(self, rng, m: int) -> Targets:
        q = sample_uniform_rot(rng, m)
        return Targets(quat=q, mat=quat_to_rot(q, check=False))

    def inputs_for(self, targets: Targets):
        return self.inputs(targets.mat)


class Mat4Task:
    """4D rotation matrix (flattened, 16 inputs) to a pair of quaternions."""

    metric = Metric.D4
    group = None
    in_dim = 16

    def inputs(self, pair):
        A = rqq(pair)
        return A.reshape(len(A), 16)

    def sample(self, rng, m: int, iteration: int = 0):
        t = self.sample_targets(rng, m)
        return self.inputs_for(t), t

    def sample_targets(self, rng, m: int) -> Targets:
        return Targets(pair=sample_pairs(rng, m))

    def inputs_for(self, targets: Targets):
        return self.inputs(targets.pair)


# --------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class PenaltySchedule:
    """Constant ``weight`` until ``hold``, linear decay to 0 at ``end``, then off."""

    weight: float = 0.0
    hold: int = 0
    end: int = 0

    def __call__(self, iteration: int) -> float:
        if self.weight == 0 or iteration >= self.end:
            return 0.0
        if iteration < self.hold:
            return self.weight
        return self.weight * (self.end - iteration) / (self.end - self.hold)

    @classmethod
    def parse(cls, text: str) -> "PenaltySchedule":
        """``"weight,hold,end"``, or ``"off"``."""
        if text in ("", "off", "none", "0"):
            return cls()
        w, h, e = text.split(",")
        return cls(float(w), int(h), int(e))


@dataclass(frozen=True)
class TrainConfig:
    task: str = "mat3"                   # mat3 | mat4 | pointcloud
    rep: str = "quat"                    # head kind, or euler-mix (x-y-z twice, x-z-y twice)
    heads: int = 1
    hidden: tuple = (64, 64, 64)
    iters: int = 50_000
    batch: int = 256
    lr: float = 1e-3
    lr_final: float = 1e-5
    decay_start: float = 0.5             # fraction of iters after which lr decays geometrically
    seed: int = 0
    penalty: PenaltySchedule = PenaltySchedule()
    hard_mining: bool = False
    supervision: str = "standard"        # standard | region | identity-left
    region_iters: int = 0                # region supervision phase length (4 heads, mat4)
    # point-cloud settings
    symmetric: bool = True               # D2-symmetric layout vs plain translated copies
    cloud_points: int = 16               # points in the base cloud (the task cloud has 4x)
    cloud_seed: int = 0
    noise_start: int = 0
    noise_end: int = 0
    noise_sigma: float = 0.0
    encoder_local: tuple = (3, 64, 64)
    encoder_post: tuple = (128, 128)
    # evaluation
    eval_samples: int = 100_000
    eval_seed: int = 12345

    def head_kinds(self) -> list[HeadKind]:
        if self.rep == "euler-mix":
            if self.heads != 4:
                raise InvalidInputError("euler-mix uses exactly four heads")
            return [HeadKind.EULER_XYZ] * 2 + [HeadKind.EULER_XZY] * 2
        try:
            return [HeadKind(self.rep)] * self.heads
        except ValueError:
            raise InvalidInputError(f"unknown representation {self.rep!r}") from None

    def validate(self):
        if self.heads < 1:
            raise InvalidInputError("at least one head is required")
        if self.task not in ("mat3", "mat4", "pointcloud"):
            raise InvalidInputError(f"unknown task {self.task!r}")
        kinds = self.head_kinds()
        pair = [k is HeadKind.QUAT_PAIR for k in kinds]
        if (self.task == "mat4") != all(pair) or any(pair) != all(pair):
            raise InvalidInputError("mat4 goes with quatpair heads and only with them")
        if self.supervision not in ("standard", "region", "identity-left"):
            raise InvalidInputError(f"unknown supervision {self.supervision!r}")
        if self.supervision != "standard" and self.task != "mat4":
            raise InvalidInputError("region and identity-left supervision are for mat4")
        if self.supervision == "region" and self.heads != 4:
            raise InvalidInputError("region supervision needs four heads")
        if self.supervision == "identity-left" and self.heads != 1:
            raise InvalidInputError("identity-left supervision trains a single head")
        if self.iters < 1 or self.batch < 2:
            raise InvalidInputError("iters >= 1 and batch >= 2 required")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if isinstance(d.get("penalty"), dict):
            d["penalty"] = PenaltySchedule(**d["penalty"])
        for k in ("hidden", "encoder_local", "encoder_post"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


def make_task(config: TrainConfig):
    if config.task == "mat3":
        return Mat3Task()
    if config.task == "mat4":
        return Mat4Task()
    base = make_base_cloud(config.cloud_seed, config.cloud_points)
    cloud = build_symmetric_cloud(base, D2_TRANSFORMS if config.symmetric else PLAIN_TRANSFORMS)
    group = build_group("D", 2) if config.symmetric else None
    noise = NoiseSchedule(config.noise_start, config.noise_end, config.noise_sigma)
    return PointCloudTask(cloud, group, noise)


def standardize_trunk_input(model: EnsembleModel, x, min_std: float = 1e-6) -> EnsembleModel:
    """Fold a per-feature standardization of the encoder output into the trunk's first layer.

    Max-pooled cloud features change little with rotation, so at the default
    scale the trunk sees nearly constant inputs and its ReLUs die early.
    Rescaling by statistics of ``x`` makes the trunk input zero-mean and
    unit-variance at initialization; the network stays a plain MLP. Features
    that are (nearly) constant on ``x`` are only centred, not rescaled.
    """
    feat = model.encoder(x) if model.encoder is not None else np.asarray(x)
    mean, std = feat.mean(axis=0), feat.std(axis=0)
    std = np.where(std > min_std, std, 1.0)
    W, b = model.net.weights[0], model.net.biases[0]
    W /= std[:, None]
    b -= mean @ W
    return model


def make_model(config: TrainConfig, rng) -> EnsembleModel:
    encoder = None
    if config.task == "pointcloud":
        encoder = PointEncoder(config.encoder_local, config.encoder_post, rng)
    task_dim = {"mat3": 9, "mat4": 16, "pointcloud": 3}[config.task]
    model = EnsembleModel(task_dim, config.hidden, config.head_kinds(), rng, encoder)
    if encoder is not None:
        x, _ = make_task(config).sample(rng, 256)
        standardize_trunk_input(model, x)
    return init_model(model, rng)


# --------------------------------------------------------------------------
# training


def lr_at(config: TrainConfig, it: int) -> float:
    start = int(config.decay_start * config.iters)
    if it < start or config.lr_final >= config.lr:
        return config.lr
    frac = (it - start) / max(config.iters - start, 1)
    return config.lr * (config.lr_final / config.lr) ** frac


@dataclass
class ErrorSummary:
    mean: float
    max: float
    levels: np.ndarray
    quantiles: np.ndarray

    @classmethod
    def of(cls, errors) -> "ErrorSummary":
        errors = np.asarray(errors, dtype=float)
        levels = np.linspace(0.0, 1.0, N_QUANTILES)
        # quantiles of log-error equal log of error quantiles (monotone map)
        return cls(float(errors.mean()), float(errors.max()), levels, np.quantile(errors, levels))


@dataclass
class TrainResult:
    model: EnsembleModel
    config: TrainConfig
    summary: ErrorSummary
    history: list = field(default_factory=list)  # (iteration, mean loss) every log_every


def _train_targets(config: TrainConfig, targets: Targets) -> Targets:
    if config.supervision == "identity-left":
        return Targets(pair=identity_left_map(targets.pair))
    return targets


def train(config: TrainConfig, log_every: int = 1000, progress=None) -> TrainResult:
    """Train the configured ensemble; deterministic given ``config.seed``."""
    config.validate()
    rng = make_rng(config.seed)
    init_rng, data_rng = rng.spawn(2)
    task = make_task(config)
    model = make_model(config, init_rng)
    opt = Adam(model.params, lr=config.lr)
    metric = task.metric
    group = task.group
    half = config.batch // 2
    kept = None
    history = []
    running = 0.0
    for it in range(config.iters):
        if kept is None:
            x, targets = task.sample(data_rng, config.batch, it)
        else:
            x_new, t_new = task.sample(data_rng, config.batch - half, it)
            x = np.concatenate([kept[0], x_new])
            targets = Targets.concat(kept[1], t_new)
        tt = _train_targets(config, targets)
        region = None
        if config.supervision == "region" and it < config.region_iters:
            region = region_masks(tt, model.n)
        out, cache = model.forward(x)
        loss, per_sample, dout = batch_loss(model, out, tt, metric, group, config.penalty(it), region)
        if not np.isfinite(loss):
            raise TrainingDiverged(f"loss became {loss} at iteration {it}; last logged {history[-3:]}")
        grads = model.backward(cache, dout)
        opt.step(grads, lr_at(config, it))
        if config.hard_mining:
            worst = np.argsort(-per_sample, kind="stable")[:half]
            kept = (x[worst], targets.take(worst))
        running += loss
        if (it + 1) % log_every == 0:
            history.append((it + 1, running / log_every))
            if progress is not None:
                progress(it + 1, running / log_every)
            running = 0.0
    errors = evaluate(model, task, config.eval_samples, make_rng(config.eval_seed))
    return TrainResult(model, config, ErrorSummary.of(errors), history)


def evaluate(model: EnsembleModel, task, n: int, rng, chunk: int = 4096, return_targets: bool = False):
    """Errors (radians) of the classifier-selected heads on ``n`` fresh Haar samples, noise-free."""
    if isinstance(task, PointCloudTask):
        chunk = min(chunk, 512)
    errs = []
    parts = []
    for start in range(0, n, chunk):
        targets = task.sample_targets(rng, min(chunk, n - start))
        errs.append(errors_on(model, task, targets))
        parts.append(targets)
    errs = np.concatenate(errs)
    if not return_targets:
        return errs
    t = parts[0]
    for p in parts[1:]:
        t = Targets.concat(t, p)
    return errs, t


def errors_on(model: EnsembleModel, task, targets: Targets, chunk: int = 4096):
    """Selected-head errors for given targets (noise-free inputs)."""
    if isinstance(task, PointCloudTask):
        chunk = min(chunk, 512)
    out = []
    for start in range(0, len(targets), chunk):
        t = targets.take(slice(start, start + chunk))
        out.append(selected_errors(model, model(task.inputs_for(t)), t, task.metric, task.group)[0])
    return np.concatenate(out)
