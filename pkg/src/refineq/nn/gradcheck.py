"""Finite-difference verification of taped gradients.

``grad_check`` takes a builder returning (params, loss_fn), runs one taped
backward, then perturbs parameter coordinates with central differences and
reports the worst relative disagreement. With ``max_coords`` set, a random
subset of coordinates per parameter is checked (needed to keep whole-network
sweeps fast); with it unset, every coordinate is swept.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .optim import Parameter, zero_grads
from .tensor import Tape, no_tape


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_param: str
    coords_checked: int

    def __str__(self) -> str:
        return (f"grad_check: max relative error {self.max_rel_error:.3e} "
                f"at {self.worst_param!r} over {self.coords_checked} coordinates")


def _rel_err(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-6)


def grad_check(builder, fd_step: float = 1e-4,
               max_coords: int | None = None,
               rng: np.random.Generator | None = None) -> GradCheckReport:
    """Compare taped gradients against central finite differences.

    ``builder()`` must return ``(params, loss_fn)`` where ``loss_fn()``
    evaluates the scalar loss from the current parameter values.
    """
    params, loss_fn = builder()
    params = list(params)
    zero_grads(params)
    with Tape() as tape:
        loss = loss_fn()
    tape.backward(loss)
    analytic = {p.name: (np.zeros_like(p.data) if p.t.grad is None else p.t.grad.copy())
                for p in params}

    if rng is None:
        rng = np.random.default_rng(0)
    worst = 0.0
    worst_param = ""
    checked = 0
    for p in params:
        flat = p.data.reshape(-1)
        n = flat.size
        if max_coords is not None and n > max_coords:
            coords = rng.choice(n, size=max_coords, replace=False)
        else:
            coords = range(n)
        for idx in coords:
            orig = flat[idx]
            flat[idx] = orig + fd_step
            with no_tape():
                up = loss_fn().item()
            flat[idx] = orig - fd_step
            with no_tape():
                down = loss_fn().item()
            flat[idx] = orig
            fd = (up - down) / (2.0 * fd_step)
            err = _rel_err(analytic[p.name].reshape(-1)[idx], fd)
            checked += 1
            if err > worst:
                worst = err
                worst_param = p.name
    return GradCheckReport(worst, worst_param, checked)
