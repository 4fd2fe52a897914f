"""Dense float64 tensors with taped reverse-mode gradients.

A ``Tape`` records one backward closure per operation, in execution order.
``Tape.backward`` seeds the loss gradient and replays the closures in reverse,
accumulating (never overwriting) gradients into every input tensor, so shared
subexpressions and tied weights come out right for free.

Ops only record when a tape is active; inside ``no_tape()`` (or with no tape
at all) they are plain numpy forward computations.
"""

from __future__ import annotations

import numpy as np

PROB_FLOOR = 1e-9  # floor applied inside log/cross_entropy to dodge -inf


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


_TAPES: list["Tape | None"] = []


def _tape() -> "Tape | None":
    return _TAPES[-1] if _TAPES else None


class Tape:
    """Records backward closures; replays them once each, in reverse order."""

    def __init__(self):
        self._records: list = []

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.pop()
        return False

    def record(self, backward_fn) -> None:
        self._records.append(backward_fn)

    def __len__(self) -> int:
        return len(self._records)

    def backward(self, loss: "Tensor") -> None:
        if loss.data.shape != ():
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.data.shape}")
        loss.grad = np.ones(())
        for fn in reversed(self._records):
            fn()


class no_tape:
    """Context manager that suspends recording (pure forward computation)."""

    def __enter__(self):
        _TAPES.append(None)
        return self

    def __exit__(self, *exc):
        _TAPES.pop()
        return False


class Tensor:
    """A dense float64 array plus an optional same-shape gradient buffer."""

    __slots__ = ("data", "grad")

    def __init__(self, data):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape})"

    # Light operator sugar; the module-level functions are the real API.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _acc(t: Tensor, g: np.ndarray) -> None:
    """Accumulate ``g`` into ``t.grad``, allocating on first touch."""
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def custom_op(inputs: list[Tensor], out_data: np.ndarray, backward_fn) -> Tensor:
    """Build an op from raw pieces.

    ``backward_fn(out_grad)`` must accumulate into the inputs itself (via
    ``accumulate``). Exists for fused kernels (LSTM) and for tests that need
    deliberately broken gradients.
    """
    out = Tensor(out_data)
    tp = _tape()
    if tp is not None:
        def bw():
            if out.grad is not None:
                backward_fn(out.grad)
        tp.record(bw)
    return out


# re-export for custom_op users
accumulate = _acc


def _record(out: Tensor, backward_fn) -> Tensor:
    tp = _tape()
    if tp is not None:
        def bw():
            if out.grad is not None:
                backward_fn(out.grad)
        tp.record(bw)
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"add: shapes {a.data.shape} vs {b.data.shape}")
    out = Tensor(a.data + b.data)

    def bw(g):
        _acc(a, g)
        _acc(b, g)

    return _record(out, bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"sub: shapes {a.data.shape} vs {b.data.shape}")
    out = Tensor(a.data - b.data)

    def bw(g):
        _acc(a, g)
        _acc(b, -g)

    return _record(out, bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"mul: shapes {a.data.shape} vs {b.data.shape}")
    out = Tensor(a.data * b.data)
    ad, bd = a.data, b.data

    def bw(g):
        _acc(a, g * bd)
        _acc(b, g * ad)

    return _record(out, bw)


def scale(a: Tensor, s: float) -> Tensor:
    out = Tensor(a.data * s)

    def bw(g):
        _acc(a, g * s)

    return _record(out, bw)


def add_scalar(a: Tensor, s: float) -> Tensor:
    out = Tensor(a.data + s)

    def bw(g):
        _acc(a, g)

    return _record(out, bw)


def add_n(tensors: list[Tensor]) -> Tensor:
    """Sum of same-shape tensors as a single op."""
    if not tensors:
        raise ValueError("add_n: empty input")
    shape = tensors[0].data.shape
    for t in tensors[1:]:
        if t.data.shape != shape:
            raise ShapeError(f"add_n: shapes {shape} vs {t.data.shape}")
    out = Tensor(sum(t.data for t in tensors))

    def bw(g):
        for t in tensors:
            _acc(t, g)

    return _record(out, bw)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    ad, bd = a.data, b.data
    if ad.ndim == 0 or bd.ndim == 0 or ad.ndim > 2 or bd.ndim > 2:
        raise ShapeError(f"matmul: shapes {ad.shape} vs {bd.shape}")
    if ad.shape[-1] != (bd.shape[0] if bd.ndim > 0 else None):
        raise ShapeError(f"matmul: shapes {ad.shape} vs {bd.shape}")
    out = Tensor(ad @ bd)

    def bw(g):
        if ad.ndim == 2 and bd.ndim == 2:
            _acc(a, g @ bd.T)
            _acc(b, ad.T @ g)
        elif ad.ndim == 2 and bd.ndim == 1:
            _acc(a, np.outer(g, bd))
            _acc(b, ad.T @ g)
        elif ad.ndim == 1 and bd.ndim == 2:
            _acc(a, bd @ g)
            _acc(b, np.outer(ad, g))
        else:  # 1-D dot
            _acc(a, g * bd)
            _acc(b, g * ad)

    return _record(out, bw)


def dot(a: Tensor, b: Tensor) -> Tensor:
    return matmul(a, b)


def affine(w: Tensor, x: Tensor, b: Tensor) -> Tensor:
    """Fused w @ x + b for a 2-D weight and 1-D input."""
    wd, xd, bd = w.data, x.data, b.data
    if wd.ndim != 2 or xd.ndim != 1 or wd.shape[1] != xd.shape[0] or bd.shape != (wd.shape[0],):
        raise ShapeError(f"affine: shapes {wd.shape}, {xd.shape}, {bd.shape}")
    out = Tensor(wd @ xd + bd)

    def bw(g):
        _acc(w, np.outer(g, xd))
        _acc(x, wd.T @ g)
        _acc(b, g)

    return _record(out, bw)


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    out = Tensor(y)

    def bw(g):
        _acc(a, g * (1.0 - y * y))

    return _record(out, bw)


def sigmoid(a: Tensor) -> Tensor:
    y = 1.0 / (1.0 + np.exp(-a.data))
    out = Tensor(y)

    def bw(g):
        _acc(a, g * y * (1.0 - y))

    return _record(out, bw)


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    out = Tensor(y)

    def bw(g):
        _acc(a, g * y)

    return _record(out, bw)


def log(a: Tensor) -> Tensor:
    """Natural log with a PROB_FLOOR floor on the argument."""
    clipped = np.maximum(a.data, PROB_FLOOR)
    out = Tensor(np.log(clipped))

    def bw(g):
        _acc(a, g / clipped)

    return _record(out, bw)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y)

    def bw(g):
        s = (g * y).sum(axis=axis, keepdims=True)
        _acc(a, y * (g - s))

    return _record(out, bw)


def concat(tensors: list[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ValueError("concat: empty input")
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    sizes = [t.data.shape[axis] for t in tensors]

    def bw(g):
        start = 0
        for t, size in zip(tensors, sizes):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(start, start + size)
            _acc(t, g[tuple(idx)])
            start += size

    return _record(out, bw)


def stack(tensors: list[Tensor]) -> Tensor:
    """Stack same-shape tensors along a new leading axis."""
    if not tensors:
        raise ValueError("stack: empty input")
    shape = tensors[0].data.shape
    for t in tensors[1:]:
        if t.data.shape != shape:
            raise ShapeError(f"stack: shapes {shape} vs {t.data.shape}")
    out = Tensor(np.stack([t.data for t in tensors]))

    def bw(g):
        for i, t in enumerate(tensors):
            _acc(t, g[i])

    return _record(out, bw)


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice [start, start+length) along ``axis``."""
    if start < 0 or start + length > a.data.shape[axis]:
        raise ShapeError(
            f"narrow: [{start}, {start + length}) out of range for axis {axis} of {a.data.shape}")
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    out = Tensor(a.data[idx])

    def bw(g):
        if a.grad is None:
            a.grad = np.zeros_like(a.data)
        a.grad[idx] += g

    return _record(out, bw)


def pick(a: Tensor, index: int) -> Tensor:
    """Scalar component ``a[index]`` of a 1-D tensor."""
    if a.data.ndim != 1:
        raise ShapeError(f"pick: need 1-D tensor, got {a.data.shape}")
    if not 0 <= index < a.data.shape[0]:
        raise IndexError(f"pick: index {index} out of range for {a.data.shape}")
    out = Tensor(a.data[index])

    def bw(g):
        if a.grad is None:
            a.grad = np.zeros_like(a.data)
        a.grad[index] += g

    return _record(out, bw)


def take_row(a: Tensor, index: int) -> Tensor:
    """Row ``a[index]`` of a 2-D tensor (embedding lookup)."""
    if a.data.ndim != 2:
        raise ShapeError(f"take_row: need 2-D tensor, got {a.data.shape}")
    if not 0 <= index < a.data.shape[0]:
        raise IndexError(f"take_row: row {index} out of range for {a.data.shape}")
    out = Tensor(a.data[index])

    def bw(g):
        if a.grad is None:
            a.grad = np.zeros_like(a.data)
        a.grad[index] += g

    return _record(out, bw)


def tsum(a: Tensor) -> Tensor:
    out = Tensor(a.data.sum())

    def bw(g):
        _acc(a, np.full_like(a.data, float(g)))

    return _record(out, bw)


def tmean(a: Tensor) -> Tensor:
    n = a.data.size
    out = Tensor(a.data.mean())

    def bw(g):
        _acc(a, np.full_like(a.data, float(g) / n))

    return _record(out, bw)


def minimum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise min; ties route the gradient to ``a``."""
    if a.data.shape != b.data.shape:
        raise ShapeError(f"minimum: shapes {a.data.shape} vs {b.data.shape}")
    take_a = a.data <= b.data
    out = Tensor(np.where(take_a, a.data, b.data))

    def bw(g):
        _acc(a, g * take_a)
        _acc(b, g * ~take_a)

    return _record(out, bw)


def clip(a: Tensor, lo: float | None, hi: float | None) -> Tensor:
    """Clamp to [lo, hi]; gradient passes through inside the interval."""
    low = -np.inf if lo is None else lo
    high = np.inf if hi is None else hi
    inside = (a.data >= low) & (a.data <= high)
    out = Tensor(np.clip(a.data, low, high))

    def bw(g):
        _acc(a, g * inside)

    return _record(out, bw)


def cross_entropy(dist: Tensor, target: int) -> Tensor:
    """-log(dist[target]) for a 1-D probability vector, floored at PROB_FLOOR."""
    if dist.data.ndim != 1:
        raise ShapeError(f"cross_entropy: need 1-D distribution, got {dist.data.shape}")
    total = dist.data.sum()
    if abs(total - 1.0) > 1e-5:
        raise ValueError(f"cross_entropy: distribution sums to {total!r}, not 1")
    if not 0 <= target < dist.data.shape[0]:
        raise IndexError(f"cross_entropy: target {target} out of range for {dist.data.shape}")
    p = max(float(dist.data[target]), PROB_FLOOR)
    out = Tensor(-np.log(p))

    def bw(g):
        if dist.grad is None:
            dist.grad = np.zeros_like(dist.data)
        dist.grad[target] -= float(g) / p

    return _record(out, bw)
