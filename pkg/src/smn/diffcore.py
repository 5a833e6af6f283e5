"""Tape-based reverse-mode autodiff over dense float64 matrices.

Everything is a 2-D matrix (scalars are 1x1). Ops executed inside a
``with Tape() as tape:`` block are recorded; ``tape.backward(loss)``
replays the records in exact reverse order and accumulates gradients
additively into each tensor's ``grad`` buffer. Outside a tape, ops run
eagerly without recording (inference mode).
"""
from __future__ import annotations

import math
import threading

import numpy as np
from scipy.special import erf

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


class ShapeError(ValueError):
    pass


class NonFiniteError(ArithmeticError):
    pass


class TapeError(RuntimeError):
    pass


_tls = threading.local()


def _active_tape():
    return getattr(_tls, "tape", None)


class Tape:
    """Ordered record of ops; one tape per training thread."""

    def __init__(self):
        self.records = []  # (out_tensor, [(in_tensor, grad_fn), ...])
        self._closed = False
        self._prev = None

    def __enter__(self):
        self._prev = _active_tape()
        _tls.tape = self
        return self

    def __exit__(self, exc_type, exc, tb):
        _tls.tape = self._prev
        return False

    def record(self, name, out, in_grads):
        if self._closed:
            raise TapeError("cannot record onto a cleared/consumed tape")
        self.records.append((name, out, in_grads))

    def backward(self, root: "DTensor", seed: np.ndarray | None = None):
        """Backpropagate from root; seed defaults to ones (sum-of-entries)."""
        if self._closed:
            raise TapeError("backward on a cleared/consumed tape")
        if seed is None:
            seed = np.ones_like(root.values)
        else:
            seed = np.asarray(seed, dtype=np.float64)
            if seed.shape != root.values.shape:
                raise ShapeError(f"seed shape {seed.shape} != root shape {root.values.shape}")
        root._accum(seed)
        with np.errstate(all="ignore"):
            for name, out, in_grads in reversed(self.records):
                g = out.grad
                if g is None:
                    continue
                for tensor, grad_fn in in_grads:
                    gn = grad_fn(g)
                    if not np.all(np.isfinite(gn)):
                        raise NonFiniteError(
                            f"non-finite gradient flowing through op '{name}'")
                    tensor._accum(gn)
        self._closed = True

    def clear(self):
        self.records.clear()
        self._closed = True


class DTensor:
    """Dense float64 matrix with a same-shape gradient accumulator."""

    __slots__ = ("values", "grad", "requires_grad", "_needs_grad")

    def __init__(self, values, requires_grad: bool = False, _needs_grad: bool | None = None):
        v = np.asarray(values, dtype=np.float64)
        if v.ndim == 0:
            v = v.reshape(1, 1)
        elif v.ndim == 1:
            v = v.reshape(1, -1)
        elif v.ndim != 2:
            raise ShapeError(f"DTensor must be at most 2-D, got shape {v.shape}")
        self.values = v
        self.grad = None
        self.requires_grad = requires_grad
        self._needs_grad = requires_grad if _needs_grad is None else _needs_grad

    @staticmethod
    def param(values) -> "DTensor":
        return DTensor(values, requires_grad=True)

    @staticmethod
    def const(values) -> "DTensor":
        return DTensor(values, requires_grad=False)

    @property
    def shape(self):
        return self.values.shape

    def item(self) -> float:
        if self.values.size != 1:
            raise ShapeError(f"item() on non-scalar shape {self.values.shape}")
        return float(self.values[0, 0])

    def zero_grad(self):
        self.grad = None

    def _accum(self, g: np.ndarray):
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad += g

    def __repr__(self):
        return f"DTensor(shape={self.values.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return hadamard(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return neg(self)


def _check_finite(name: str, values: np.ndarray):
    if not np.all(np.isfinite(values)):
        raise NonFiniteError(f"non-finite values produced by op '{name}'")


def _make(name: str, values: np.ndarray, in_grads) -> DTensor:
    """Build the op output, check finiteness, record on the active tape."""
    _check_finite(name, values)
    live = [(t, fn) for t, fn in in_grads if t._needs_grad]
    out = DTensor(values, _needs_grad=bool(live))
    tape = _active_tape()
    if tape is not None and live:
        tape.record(name, out, live)
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    if g.shape == shape:
        return g
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _coerce(x) -> DTensor:
    return x if isinstance(x, DTensor) else DTensor.const(x)


# ---------------------------------------------------------------------------
# linear-algebra ops


def matmul(a: DTensor, b: DTensor) -> DTensor:
    a, b = _coerce(a), _coerce(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shapes {a.shape} x {b.shape}")
    with np.errstate(all="ignore"):
        out = a.values @ b.values
    return _make("matmul", out, [
        (a, lambda g, bv=b.values: g @ bv.T),
        (b, lambda g, av=a.values: av.T @ g),
    ])


def const_matmul(m, x: DTensor) -> DTensor:
    """m @ x where m is a constant dense or scipy-sparse matrix."""
    with np.errstate(all="ignore"):
        out = m @ x.values
    return _make("const_matmul", np.asarray(out), [
        (x, lambda g, mt=m.T: np.asarray(mt @ g)),
    ])


def add(a, b) -> DTensor:
    a, b = _coerce(a), _coerce(b)
    with np.errstate(all="ignore"):
        out = a.values + b.values
    return _make("add", out, [
        (a, lambda g, s=a.shape: _unbroadcast(g, s)),
        (b, lambda g, s=b.shape: _unbroadcast(g, s)),
    ])


def sub(a, b) -> DTensor:
    a, b = _coerce(a), _coerce(b)
    with np.errstate(all="ignore"):
        out = a.values - b.values
    return _make("sub", out, [
        (a, lambda g, s=a.shape: _unbroadcast(g, s)),
        (b, lambda g, s=b.shape: -_unbroadcast(g, s)),
    ])


def hadamard(a, b) -> DTensor:
    a, b = _coerce(a), _coerce(b)
    with np.errstate(all="ignore"):
        out = a.values * b.values
    return _make("hadamard", out, [
        (a, lambda g, bv=b.values, s=a.shape: _unbroadcast(g * bv, s)),
        (b, lambda g, av=a.values, s=b.shape: _unbroadcast(g * av, s)),
    ])


def divide(a, b) -> DTensor:
    a, b = _coerce(a), _coerce(b)
    with np.errstate(all="ignore"):
        out = a.values / b.values
    return _make("divide", out, [
        (a, lambda g, bv=b.values, s=a.shape: _unbroadcast(g / bv, s)),
        (b, lambda g, av=a.values, bv=b.values, s=b.shape:
            _unbroadcast(-g * av / (bv * bv), s)),
    ])


def scale(x: DTensor, c: float) -> DTensor:
    c = float(c)
    with np.errstate(all="ignore"):
        out = x.values * c
    return _make("scale", out, [(x, lambda g: g * c)])


def neg(x: DTensor) -> DTensor:
    return _make("neg", -x.values, [(x, lambda g: -g)])


def transpose(x: DTensor) -> DTensor:
    return _make("transpose", x.values.T.copy(), [(x, lambda g: g.T)])


def row_sum(x: DTensor) -> DTensor:
    """(N, M) -> (N, 1), sum of each row."""
    out = x.values.sum(axis=1, keepdims=True)
    return _make("row_sum", out, [
        (x, lambda g, s=x.shape: np.broadcast_to(g, s).copy()),
    ])


def sum_all(x: DTensor) -> DTensor:
    out = np.array([[x.values.sum()]])
    return _make("sum_all", out, [
        (x, lambda g, s=x.shape: np.full(s, g[0, 0])),
    ])


def mean_rows(x: DTensor) -> DTensor:
    """(N, M) -> (1, M), arithmetic mean over rows."""
    n = x.shape[0]
    out = x.values.mean(axis=0, keepdims=True)
    return _make("mean_rows", out, [
        (x, lambda g, s=x.shape: np.broadcast_to(g / n, s).copy()),
    ])


def gather_rows(x: DTensor, indices) -> DTensor:
    idx = np.asarray(indices, dtype=np.intp)

    def back(g, s=x.shape, ix=idx):
        full = np.zeros(s)
        np.add.at(full, ix, g)
        return full

    return _make("gather_rows", x.values[idx], [(x, back)])


# ---------------------------------------------------------------------------
# elementwise nonlinearities


def relu(x: DTensor) -> DTensor:
    out = np.maximum(x.values, 0.0)
    return _make("relu", out, [
        (x, lambda g, v=x.values: g * (v > 0.0)),
    ])


def leaky_relu(x: DTensor, slope: float = 0.2) -> DTensor:
    v = x.values
    out = np.where(v > 0.0, v, slope * v)
    return _make("leaky_relu", out, [
        (x, lambda g, v=v: g * np.where(v > 0.0, 1.0, slope)),
    ])


def sigmoid(x: DTensor) -> DTensor:
    with np.errstate(all="ignore"):
        out = 1.0 / (1.0 + np.exp(-x.values))
    return _make("sigmoid", out, [
        (x, lambda g, o=out: g * o * (1.0 - o)),
    ])


def gelu(x: DTensor) -> DTensor:
    """Exact Gaussian-CDF form x * Phi(x), not the tanh approximation."""
    v = x.values
    phi_cdf = 0.5 * (1.0 + erf(v * _INV_SQRT2))
    out = v * phi_cdf

    def back(g, v=v, cdf=phi_cdf):
        pdf = _INV_SQRT2PI * np.exp(-0.5 * v * v)
        return g * (cdf + v * pdf)

    return _make("gelu", out, [(x, back)])


def exp(x: DTensor) -> DTensor:
    with np.errstate(all="ignore"):
        out = np.exp(x.values)
    return _make("exp", out, [
        (x, lambda g, o=out: g * o),
    ])


def absolute(x: DTensor) -> DTensor:
    """|x| with subgradient 0 at 0."""
    out = np.abs(x.values)
    return _make("absolute", out, [
        (x, lambda g, v=x.values: g * np.sign(v)),
    ])


# ---------------------------------------------------------------------------
# special ops


def ste_mask_apply(w: DTensor, mask) -> DTensor:
    """Forward w * mask; backward passes the upstream gradient to w unchanged.

    The binary mask is a constant and is never differentiated; the
    straight-through rule treats d(w*mask)/dw as 1 entrywise, so the
    gradient delivered to w is bitwise independent of the mask.
    """
    m = np.asarray(mask, dtype=np.float64)
    if m.ndim == 1:
        m = m.reshape(1, -1)
    if m.shape != w.shape:
        raise ShapeError(f"mask shape {m.shape} != tensor shape {w.shape}")
    if not np.all((m == 0.0) | (m == 1.0)):
        raise ValueError("mask entries must be 0 or 1")
    return _make("ste_mask_apply", w.values * m, [(w, lambda g: g)])


def huber_loss(pred: DTensor, target: float, delta: float) -> DTensor:
    """Scalar Huber loss: 0.5 r^2 for |r| <= delta, else delta(|r| - delta/2)."""
    if delta <= 0.0:
        raise ValueError("huber delta must be positive")
    r = pred.values - float(target)
    a = np.abs(r)
    out = np.where(a <= delta, 0.5 * r * r, delta * (a - 0.5 * delta))
    return _make("huber", out, [
        (pred, lambda g, r=r: g * np.clip(r, -delta, delta)),
    ])
