"""Reverse-mode differentiation over an explicitly recorded op list.

Ops executed inside ``with Tape() as tape:`` are appended to the tape when
any input requires a gradient; ``tape.backward(loss)`` walks the list in
reverse. Outside a tape ops only compute values. Everything is float64 and
batch size is one, so broadcasting is limited to a bias row.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

DEBUG = False

_STACK: list["Tape"] = []


class ShapeMismatch(ValueError):
    pass


class Tensor:
    __slots__ = ("value", "grad", "requires_grad")

    def __init__(self, value, requires_grad: bool = False):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.value.shape}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.value)


class Tape:
    def __init__(self):
        self.ops: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self.leaves: dict[str, Tensor] = {}

    def __enter__(self) -> "Tape":
        _STACK.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _STACK.remove(self)

    def backward(self, loss: Tensor) -> None:
        if loss.value.size != 1:
            raise ShapeMismatch("backward needs a scalar loss")
        loss.grad = np.ones_like(loss.value)
        for out, parents, fn in reversed(self.ops):
            g = out.grad
            if g is None:
                continue
            for p, pg in zip(parents, fn(g)):
                if pg is None or not p.requires_grad:
                    continue
                p.grad = pg if p.grad is None else p.grad + pg

    def leaf_grads(self) -> dict[str, np.ndarray]:
        return {name: (t.grad if t.grad is not None else np.zeros_like(t.value))
                for name, t in self.leaves.items()}


def active_tape() -> Tape | None:
    return _STACK[-1] if _STACK else None


def const(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _out(value: np.ndarray, parents: tuple[Tensor, ...], backward: Callable) -> Tensor:
    if DEBUG and not np.all(np.isfinite(value)):
        raise FloatingPointError("non-finite value produced")
    tape = active_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        out = Tensor(value, requires_grad=True)
        tape.ops.append((out, parents, backward))
        return out
    return Tensor(value)


# -- elementwise / linear ---------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape == b.shape:
        return _out(a.value + b.value, (a, b), lambda g: (g, g))
    if b.value.ndim == 1 and a.value.ndim == 2 and a.shape[1] == b.shape[0]:
        return _out(a.value + b.value, (a, b), lambda g: (g, g.sum(axis=0)))
    raise ShapeMismatch(f"add {a.shape} + {b.shape}")


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeMismatch(f"sub {a.shape} - {b.shape}")
    return _out(a.value - b.value, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeMismatch(f"mul {a.shape} * {b.shape}")
    av, bv = a.value, b.value
    return _out(av * bv, (a, b), lambda g: (g * bv, g * av))


def mul_row(a: Tensor, v: Tensor) -> Tensor:
    """Row-broadcast product of an (n, m) matrix with an (m,) vector."""
    if a.value.ndim != 2 or v.value.shape != (a.shape[1],):
        raise ShapeMismatch(f"mul_row {a.shape} * {v.shape}")
    av, vv = a.value, v.value
    return _out(av * vv, (a, v), lambda g: (g * vv, (g * av).sum(axis=0)))


def layer_norm(x: Tensor, blocks: int = 1, eps: float = 1e-5) -> Tensor:
    """Standardize each row within ``blocks`` equal column groups (no affine part)."""
    n, m = x.shape
    if m % blocks:
        raise ShapeMismatch(f"layer_norm: {m} columns not divisible into {blocks} blocks")
    xv = x.value.reshape(n, blocks, m // blocks)
    mu = xv.mean(axis=2, keepdims=True)
    inv = 1.0 / np.sqrt(xv.var(axis=2, keepdims=True) + eps)
    y = (xv - mu) * inv

    def back(g):
        g = g.reshape(y.shape)
        dx = inv * (g - g.mean(axis=2, keepdims=True) - y * (g * y).mean(axis=2, keepdims=True))
        return (dx.reshape(n, m),)

    return _out(y.reshape(n, m), (x,), back)


def scale(a: Tensor, c: float) -> Tensor:
    return _out(a.value * c, (a,), lambda g: (g * c,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    av, bv = a.value, b.value
    if av.shape[-1] != bv.shape[0]:
        raise ShapeMismatch(f"matmul {av.shape} @ {bv.shape}")

    def back(g):
        if av.ndim == 2 and bv.ndim == 2:
            return g @ bv.T, av.T @ g
        if av.ndim == 2:
            return np.outer(g, bv), av.T @ g
        if bv.ndim == 2:
            return bv @ g, np.outer(av, g)
        return g * bv, g * av

    return _out(av @ bv, (a, b), back)


def matmul_t(a: Tensor, b: Tensor) -> Tensor:
    """``a @ b.T`` for two matrices with equal column counts."""
    av, bv = a.value, b.value
    if av.ndim != 2 or bv.ndim != 2 or av.shape[1] != bv.shape[1]:
        raise ShapeMismatch(f"matmul_t {av.shape} @ {bv.shape}.T")
    return _out(av @ bv.T, (a, b), lambda g: (g @ bv, g.T @ av))


def cmatmul(m: np.ndarray, x: Tensor) -> Tensor:
    """Constant matrix times tensor, e.g. an incidence matrix aggregating messages."""
    if m.shape[1] != x.shape[0]:
        raise ShapeMismatch(f"cmatmul {m.shape} @ {x.shape}")
    return _out(m @ x.value, (x,), lambda g: (m.T @ g,))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.value)
    return _out(y, (x,), lambda g: (g * (1.0 - y * y),))


def sigmoid(x: Tensor) -> Tensor:
    y = 0.5 * (1.0 + np.tanh(0.5 * x.value))
    return _out(y, (x,), lambda g: (g * y * (1.0 - y),))


def relu(x: Tensor) -> Tensor:
    on = x.value > 0
    return _out(x.value * on, (x,), lambda g: (g * on,))


ACTIVATIONS = {"relu": relu, "tanh": tanh, "sigmoid": sigmoid, None: None, "none": None}


# -- shape ops --------------------------------------------------------------

def concat(ts: Sequence[Tensor], axis: int = 0) -> Tensor:
    ts = tuple(ts)
    sizes = [t.value.shape[axis] for t in ts]
    cuts = np.cumsum(sizes)[:-1]
    return _out(np.concatenate([t.value for t in ts], axis=axis), ts,
                lambda g: tuple(np.split(g, cuts, axis=axis)))


def take(x: Tensor, idx) -> Tensor:
    """Rows ``idx`` of a matrix (or entries of a vector); repeats allowed."""
    idx = np.asarray(idx, dtype=np.int64)
    shape = x.value.shape

    def back(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)

    return _out(x.value[idx], (x,), back)


def put_rows(x: Tensor, idx, y: Tensor) -> Tensor:
    """Copy of ``x`` with rows ``idx`` (distinct) replaced by ``y``."""
    idx = np.asarray(idx, dtype=np.int64)
    v = x.value.copy()
    v[idx] = y.value

    def back(g):
        gx = g.copy()
        gx[idx] = 0.0
        return gx, g[idx]

    return _out(v, (x, y), back)


def cols(x: Tensor, start: int, stop: int) -> Tensor:
    shape = x.value.shape

    def back(g):
        out = np.zeros(shape)
        out[:, start:stop] = g
        return (out,)

    return _out(x.value[:, start:stop], (x,), back)


def tile_rows(v: Tensor, n: int) -> Tensor:
    """Stack ``n`` copies of a vector into an ``n x d`` matrix."""
    row = v.value.reshape(-1)
    return _out(np.tile(row, (n, 1)), (v,), lambda g: (g.sum(axis=0).reshape(v.value.shape),))


def reshape(x: Tensor, shape) -> Tensor:
    old = x.value.shape
    return _out(x.value.reshape(shape), (x,), lambda g: (g.reshape(old),))


def mean_rows(x: Tensor) -> Tensor:
    n = x.value.shape[0]
    return _out(x.value.mean(axis=0), (x,), lambda g: (np.broadcast_to(g / n, x.value.shape),))


def sum_all(x: Tensor) -> Tensor:
    return _out(np.asarray(x.value.sum()), (x,), lambda g: (np.full(x.value.shape, float(g)),))


def stack(scalars: Sequence[Tensor]) -> Tensor:
    ts = tuple(scalars)
    return _out(np.array([float(t.value) for t in ts]), ts,
                lambda g: tuple(np.asarray(gi) for gi in g))


def dot_const(x: Tensor, w: np.ndarray) -> Tensor:
    w = np.asarray(w, dtype=np.float64)
    return _out(np.asarray(x.value @ w), (x,), lambda g: (float(g) * w,))


# -- losses -----------------------------------------------------------------

def _lse(v: np.ndarray) -> tuple[float, np.ndarray]:
    m = v.max()
    e = np.exp(v - m)
    s = e.sum()
    return m + np.log(s), e / s


def logsumexp(x: Tensor) -> Tensor:
    val, p = _lse(x.value)
    return _out(np.asarray(val), (x,), lambda g: (float(g) * p,))


def log_prob(scores: Tensor, valid, target) -> Tensor:
    """log of the softmax mass on ``target`` cells, normalised over ``valid``.

    ``scores`` is a flat vector; both index arrays address it and ``target``
    must be a subset of ``valid``. Cells outside ``valid`` act as -inf logits.
    """
    valid = np.asarray(valid, dtype=np.int64)
    target = np.asarray(target, dtype=np.int64)
    sv = scores.value
    lse_v, pv = _lse(sv[valid])
    lse_t, pt = _lse(sv[target])
    shape = sv.shape

    def back(g):
        out = np.zeros(shape)
        np.add.at(out, target, pt)
        np.add.at(out, valid, -pv)
        return (float(g) * out,)

    return _out(np.asarray(lse_t - lse_v), (scores,), back)


def bce_logits_sum(logits: Tensor, targets) -> Tensor:
    """Sum of binary cross-entropies of sigmoid(logits) against 0/1 targets."""
    z = logits.value
    t = np.asarray(targets, dtype=np.float64).reshape(z.shape)
    loss = np.maximum(z, 0) - z * t + np.log1p(np.exp(-np.abs(z)))
    p = 0.5 * (1.0 + np.tanh(0.5 * z))
    return _out(np.asarray(loss.sum()), (logits,), lambda g: (float(g) * (p - t),))
