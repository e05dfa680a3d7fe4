"""A small fully connected network with hand-written backprop, and Adam."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class DenseNet:
    """Rectified-linear hidden layers, identity output layer.

    ``sizes = [in, h1, ..., out]``. Parameters are exposed as a flat list
    ``[W0, b0, W1, b1, ...]`` (declaration order) so optimizers and
    checkpoints can treat every module the same way.
    """

    def __init__(self, sizes, rng: np.random.Generator | None = None):
        self.sizes = [int(s) for s in sizes]
        if len(self.sizes) < 2:
            raise ValueError("a DenseNet needs at least an input and an output size")
        self.weights = []
        self.biases = []
        for a, b in zip(self.sizes[:-1], self.sizes[1:]):
            self.weights.append(glorot_uniform(rng, a, b) if rng is not None else np.zeros((a, b)))
            self.biases.append(np.zeros(b))

    @property
    def params(self) -> list[np.ndarray]:
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def forward(self, x):
        """Returns ``(output, cache)``; ``x`` has shape ``(N, in)``."""
        acts = [x]
        h = x
        last = len(self.weights) - 1
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ W + b
            if k < last:
                h = np.maximum(h, 0.0)
            acts.append(h)
        return h, acts

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, acts, dout):
        """Gradients in ``params`` order, plus the gradient w.r.t. the input."""
        grads = [None] * (2 * len(self.weights))
        d = dout
        for k in range(len(self.weights) - 1, -1, -1):
            if k < len(self.weights) - 1:
                d = d * (acts[k + 1] > 0)
            grads[2 * k] = acts[k].T @ d
            grads[2 * k + 1] = d.sum(axis=0)
            d = d @ self.weights[k].T
        return grads, d


@dataclass
class Adam:
    """Adam with bias correction, updating the given arrays in place."""

    params: list
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def __post_init__(self):
        if not self.m:
            self.m = [np.zeros_like(p) for p in self.params]
            self.v = [np.zeros_like(p) for p in self.params]

    def step(self, grads, lr: float | None = None):
        self.t += 1
        lr = self.lr if lr is None else lr
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def adam_step(params, grads, state: Adam | None = None, lr: float = 1e-3) -> Adam:
    """Functional wrapper: creates the optimizer state on first use."""
    if state is None:
        state = Adam(list(params), lr=lr)
    state.step(grads, lr)
    return state
