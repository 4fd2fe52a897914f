"""LSTM cells, sequence runners, and the bidirectional wrapper.

Gate equations are the standard ones (input/forget/output gates sigmoid,
cell candidate tanh, h = o * tanh(c)), with gate order [i, f, g, o] in the
stacked weight matrices. The whole cell (and the whole unrolled sequence in
``lstm_run``) is a single taped op with a hand-derived backward pass; the
finite-difference harness in gradcheck.py keeps it honest.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .optim import Parameter, uniform_init
from .tensor import ShapeError, Tensor, _acc, _tape


@dataclass
class LstmWeights:
    w: Parameter  # (4H, input_dim)
    u: Parameter  # (4H, H)
    b: Parameter  # (4H,), forget-gate slice initialized to 1.0

    @property
    def hidden(self) -> int:
        return self.u.data.shape[1]

    @property
    def input_dim(self) -> int:
        return self.w.data.shape[1]

    def params(self) -> list[Parameter]:
        return [self.w, self.u, self.b]


def init_lstm(rng: np.random.Generator, name: str, input_dim: int, hidden: int) -> LstmWeights:
    b = np.zeros(4 * hidden)
    b[hidden:2 * hidden] = 1.0  # forget-gate bias
    return LstmWeights(
        w=Parameter(f"{name}.w", uniform_init(rng, (4 * hidden, input_dim))),
        u=Parameter(f"{name}.u", uniform_init(rng, (4 * hidden, hidden))),
        b=Parameter(f"{name}.b", b),
    )


def _check_dims(w: LstmWeights, x: Tensor, h_prev: Tensor, c_prev: Tensor) -> None:
    h = w.hidden
    if x.data.shape != (w.input_dim,):
        raise ShapeError(f"lstm: input shape {x.data.shape}, weights expect ({w.input_dim},)")
    if h_prev.data.shape != (h,) or c_prev.data.shape != (h,):
        raise ShapeError(
            f"lstm: state shapes {h_prev.data.shape}/{c_prev.data.shape}, weights expect ({h},)")


def _step(w, u, b, xd, hd, cd, hidden):
    z = w @ xd + u @ hd + b
    i = 1.0 / (1.0 + np.exp(-z[:hidden]))
    f = 1.0 / (1.0 + np.exp(-z[hidden:2 * hidden]))
    g = np.tanh(z[2 * hidden:3 * hidden])
    o = 1.0 / (1.0 + np.exp(-z[3 * hidden:]))
    c = f * cd + i * g
    tc = np.tanh(c)
    h = o * tc
    return i, f, g, o, c, tc, h


def _step_back(cache, dh, dc_in, w, u):
    xd, hd, cd, i, f, g, o, tc = cache
    do = dh * tc
    dc = dc_in + dh * o * (1.0 - tc * tc)
    dz = np.concatenate([
        dc * g * i * (1.0 - i),
        dc * cd * f * (1.0 - f),
        dc * i * (1.0 - g * g),
        do * o * (1.0 - o),
    ])
    return dz, w.T @ dz, u.T @ dz, dc * f, np.outer(dz, xd), np.outer(dz, hd)


def lstm_cell(x: Tensor, h_prev: Tensor, c_prev: Tensor, weights: LstmWeights) -> tuple[Tensor, Tensor]:
    """One LSTM step; returns (h, c) as a single fused taped op."""
    _check_dims(weights, x, h_prev, c_prev)
    hidden = weights.hidden
    wd, ud, bd = weights.w.data, weights.u.data, weights.b.data
    xd, hd, cd = x.data, h_prev.data, c_prev.data
    i, f, g, o, c, tc, h = _step(wd, ud, bd, xd, hd, cd, hidden)
    h_out, c_out = Tensor(h), Tensor(c)

    tp = _tape()
    if tp is not None:
        cache = (xd, hd, cd, i, f, g, o, tc)

        def bw():
            dh = h_out.grad if h_out.grad is not None else np.zeros(hidden)
            dc_in = c_out.grad if c_out.grad is not None else np.zeros(hidden)
            dz, dx, dh_prev, dc_prev, dw, du = _step_back(cache, dh, dc_in, wd, ud)
            _acc(weights.w.t, dw)
            _acc(weights.u.t, du)
            _acc(weights.b.t, dz)
            _acc(x, dx)
            _acc(h_prev, dh_prev)
            _acc(c_prev, dc_prev)

        tp.record(bw)
    return h_out, c_out


def lstm_run(xs: list[Tensor], weights: LstmWeights,
             h0: Tensor | None = None, c0: Tensor | None = None
             ) -> tuple[list[Tensor], Tensor]:
    """Unroll an LSTM over a sequence; returns (per-step h list, final c).

    The whole unroll is one taped op with its own BPTT loop, which keeps the
    per-step bookkeeping out of the tape.
    """
    if not xs:
        raise ValueError("lstm_run: empty sequence")
    hidden = weights.hidden
    wd, ud, bd = weights.w.data, weights.u.data, weights.b.data
    hd = h0.data if h0 is not None else np.zeros(hidden)
    cd = c0.data if c0 is not None else np.zeros(hidden)
    if hd.shape != (hidden,) or cd.shape != (hidden,):
        raise ShapeError(f"lstm_run: state shapes {hd.shape}/{cd.shape}, expect ({hidden},)")

    caches = []
    hs: list[Tensor] = []
    for x in xs:
        if x.data.shape != (weights.input_dim,):
            raise ShapeError(
                f"lstm_run: input shape {x.data.shape}, weights expect ({weights.input_dim},)")
        xd = x.data
        i, f, g, o, c, tc, h = _step(wd, ud, bd, xd, hd, cd, hidden)
        caches.append((xd, hd, cd, i, f, g, o, tc))
        hd, cd = h, c
        hs.append(Tensor(h))
    c_final = Tensor(cd)

    tp = _tape()
    if tp is not None:
        def bw():
            dw = np.zeros_like(wd)
            du = np.zeros_like(ud)
            db = np.zeros_like(bd)
            gh_carry = np.zeros(hidden)
            gc_carry = c_final.grad if c_final.grad is not None else np.zeros(hidden)
            touched = False
            for t in range(len(xs) - 1, -1, -1):
                dh = gh_carry if hs[t].grad is None else gh_carry + hs[t].grad
                if not touched and not dh.any() and not gc_carry.any():
                    continue  # nothing has flowed back yet
                touched = True
                dz, dx, dh_prev, dc_prev, dw_t, du_t = _step_back(caches[t], dh, gc_carry, wd, ud)
                dw += dw_t
                du += du_t
                db += dz
                _acc(xs[t], dx)
                gh_carry, gc_carry = dh_prev, dc_prev
            if touched:
                _acc(weights.w.t, dw)
                _acc(weights.u.t, du)
                _acc(weights.b.t, db)
                if h0 is not None:
                    _acc(h0, gh_carry)
                if c0 is not None:
                    _acc(c0, gc_carry)

        tp.record(bw)
    return hs, c_final


def bilstm(xs: list[Tensor], fwd: LstmWeights, bwd: LstmWeights
           ) -> tuple[list[Tensor], tuple[Tensor, Tensor]]:
    """Bidirectional LSTM: per-step [h_fwd ; h_bwd] plus the two final h states.

    Returns (outputs, (h_fwd_final, h_bwd_final)); outputs[t] is a Tensor of
    size fwd.hidden + bwd.hidden.
    """
    if not xs:
        raise ValueError("bilstm: empty sequence")
    from .tensor import concat

    hs_f, _ = lstm_run(xs, fwd)
    hs_b_rev, _ = lstm_run(list(reversed(xs)), bwd)
    hs_b = list(reversed(hs_b_rev))
    outs = [concat([hf, hb]) for hf, hb in zip(hs_f, hs_b)]
    return outs, (hs_f[-1], hs_b[0])
