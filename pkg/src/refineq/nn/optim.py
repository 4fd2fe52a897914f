"""Named parameters and the Adam optimizer.

Defaults follow the training setup used throughout the repo: lr=0.001,
beta1=0.9, beta2=0.999. Weights initialize uniform with a fan-in-scaled
bound, biases to zero (LSTM forget gates to 1.0, see rnn.init_lstm).
"""

from __future__ import annotations

import math

import numpy as np

from .tensor import Tensor


class NonFiniteGradient(RuntimeError):
    """A gradient contained NaN/inf; training must stop rather than corrupt state."""


class Parameter:
    """A named tensor with per-parameter Adam state."""

    def __init__(self, name: str, data):
        self.name = name
        self.t = Tensor(np.array(data, dtype=np.float64))
        self.m: np.ndarray | None = None  # first-moment buffer
        self.v: np.ndarray | None = None  # second-moment buffer
        self.step = 0

    @property
    def data(self) -> np.ndarray:
        return self.t.data

    @property
    def grad(self) -> np.ndarray | None:
        return self.t.grad

    def zero_grad(self) -> None:
        self.t.grad = None

    def copy(self) -> "Parameter":
        return Parameter(self.name, self.data.copy())

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.data.shape})"


def uniform_init(rng: np.random.Generator, shape, scale: float | None = None) -> np.ndarray:
    """Uniform init; the default bound sqrt(3/fan_in) keeps activations O(1)
    at any width (the classic fixed +-0.08 bound is this rule evaluated at
    ~1000 hidden units; desk-scale networks stall under it)."""
    if scale is None:
        fan_in = shape[-1] if isinstance(shape, tuple) else int(shape)
        scale = math.sqrt(3.0 / fan_in)
    return rng.uniform(-scale, scale, size=shape)


def adam_step(params: list[Parameter], lr: float = 0.001,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """Bias-corrected Adam update; parameters with no gradient are untouched."""
    for p in params:
        g = p.t.grad
        if g is None:
            continue
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient for parameter {p.name!r}")
        if p.m is None:
            p.m = np.zeros_like(p.data)
            p.v = np.zeros_like(p.data)
        p.step += 1
        p.m = beta1 * p.m + (1.0 - beta1) * g
        p.v = beta2 * p.v + (1.0 - beta2) * g * g
        m_hat = p.m / (1.0 - beta1 ** p.step)
        v_hat = p.v / (1.0 - beta2 ** p.step)
        p.t.data -= lr * m_hat / (np.sqrt(v_hat) + eps)


def zero_grads(params: list[Parameter]) -> None:
    for p in params:
        p.zero_grad()


def grad_global_norm(params: list[Parameter]) -> float:
    total = 0.0
    for p in params:
        if p.t.grad is not None:
            total += float((p.t.grad ** 2).sum())
    return float(np.sqrt(total))


def clip_global_norm(params: list[Parameter], max_norm: float) -> float:
    """Rescale all gradients jointly so their global norm is at most max_norm."""
    norm = grad_global_norm(params)
    if norm > max_norm and norm > 0.0:
        factor = max_norm / norm
        for p in params:
            if p.t.grad is not None:
                p.t.grad *= factor
    return norm
