"""A small reverse-mode differentiation engine over dense 2-D float64 arrays.

Only the primitives the network needs are provided. Batches of graph signals
are stored sample-major, i.e. a batch of ``B`` poses with ``N`` joints and ``F``
features is a ``(B*N, F)`` tensor; ``graph_matmul`` and the ``block_*``
primitives apply per-sample operations to that layout.
"""

from __future__ import annotations

import contextlib
import math
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf

_GRAD_ENABLED = True
_SQRT2 = math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


class ShapeError(ValueError):
    def __init__(self, op: str, *shapes):
        super().__init__(f"{op}: incompatible shapes {' and '.join(str(s) for s in shapes)}")


@contextlib.contextmanager
def no_grad():
    """Disable graph recording (evaluation mode)."""
    global _GRAD_ENABLED
    prev, _GRAD_ENABLED = _GRAD_ENABLED, False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise ValueError(f"Tensor data must be at most 2-D, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(arr) if requires_grad else None
        self._parents: tuple = ()
        self._backward: Callable | None = None
        self.op = "leaf"

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data[0, 0])

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad[...] = 0.0

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self, grad=None) -> None:
        """Accumulate d(self)/d(leaf) into every reachable ``requires_grad`` tensor."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed needs a scalar (1x1) tensor")
            grad = np.ones_like(self.data)
        order = _topological(self)
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += grad
        for node in reversed(order):
            if node._backward is None or node.grad is None:
                continue
            pgrads = node._backward(node.grad)
            for parent, g in zip(node._parents, pgrads):
                if g is None or not parent.requires_grad:
                    continue
                if parent.grad is None:
                    # intermediate nodes get their buffer on first use
                    parent.grad = np.array(g, dtype=np.float64, copy=True)
                else:
                    parent.grad += g


def _topological(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: Sequence[Tensor], backward, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.op = op
    needs = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out.requires_grad = needs
    out.grad = None
    if needs:
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == shape:
        return g
    return g.sum(axis=0, keepdims=True)


def _check_broadcast(op, a, b):
    if a.shape == b.shape:
        return
    if a.shape[1] == b.shape[1] and (a.shape[0] == 1 or b.shape[0] == 1):
        return
    raise ShapeError(op, a.shape, b.shape)


# ---------------------------------------------------------------- arithmetic

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)
    return _result(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)
    return _result(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    """Elementwise product; one operand may be a 1 x cols row vector."""
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)
    return _result(a.data * b.data, (a, b),
                   lambda g: (_unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
                              _unbroadcast(g * a.data, b.shape) if b.requires_grad else None), "mul")


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    return _result(a.data * c, (a,), lambda g: (g * c,), "scale")


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    return _result(a.data @ b.data, (a, b),
                   lambda g: (g @ b.data.T if a.requires_grad else None,
                              a.data.T @ g if b.requires_grad else None), "matmul")


def transpose(a) -> Tensor:
    a = as_tensor(a)
    return _result(a.data.T.copy(), (a,), lambda g: (g.T,), "transpose")


def concat_cols(parts: Sequence) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    rows = {p.shape[0] for p in parts}
    if len(rows) != 1:
        raise ShapeError("concat_cols", *[p.shape for p in parts])
    edges = np.cumsum([0] + [p.shape[1] for p in parts])

    def back(g):
        return tuple(g[:, edges[k]:edges[k + 1]] for k in range(len(parts)))
    return _result(np.concatenate([p.data for p in parts], axis=1), parts, back, "concat_cols")


def slice_cols(a, start: int, stop: int) -> Tensor:
    a = as_tensor(a)
    if not 0 <= start <= stop <= a.shape[1]:
        raise ShapeError("slice_cols", a.shape, (start, stop))

    def back(g):
        full = np.zeros_like(a.data)
        full[:, start:stop] = g
        return (full,)
    return _result(a.data[:, start:stop].copy(), (a,), back, "slice_cols")


def reshape(a, rows: int, cols: int) -> Tensor:
    """Row-major reshape."""
    a = as_tensor(a)
    if rows * cols != a.data.size:
        raise ShapeError("reshape", a.shape, (rows, cols))
    return _result(a.data.reshape(rows, cols).copy(), (a,),
                   lambda g: (g.reshape(a.shape),), "reshape")


def tile_rows(a, reps: int) -> Tensor:
    """Stack ``reps`` copies of ``a`` vertically."""
    a = as_tensor(a)
    r, c = a.shape
    return _result(np.tile(a.data, (reps, 1)), (a,),
                   lambda g: (g.reshape(reps, r, c).sum(axis=0),), "tile_rows")


def sum(a) -> Tensor:  # noqa: A001 - mirrors the numpy name on purpose
    a = as_tensor(a)
    return _result(np.array([[a.data.sum()]]), (a,),
                   lambda g: (np.full_like(a.data, g[0, 0]),), "sum")


def mean(a) -> Tensor:
    a = as_tensor(a)
    n = a.data.size
    return _result(np.array([[a.data.mean()]]), (a,),
                   lambda g: (np.full_like(a.data, g[0, 0] / n),), "mean")


def abs(a) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    # subgradient 0 at exactly 0
    return _result(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),), "abs")


def square(a) -> Tensor:
    a = as_tensor(a)
    return _result(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,), "square")


# ------------------------------------------------------------- nonlinearities

def gelu(a) -> Tensor:
    """Exact GELU ``x * Phi(x)``."""
    a = as_tensor(a)
    x = a.data
    cdf = 0.5 * (1.0 + erf(x / _SQRT2))
    pdf = _INV_SQRT2PI * np.exp(-0.5 * x * x)
    return _result(x * cdf, (a,), lambda g: (g * (cdf + x * pdf),), "gelu")


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _result(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def softmax_rows(a) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)

    def back(g):
        return (p * (g - np.sum(g * p, axis=1, keepdims=True)),)
    return _result(p, (a,), back, "softmax_rows")


def dropout(a, rate: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: survivors are scaled by ``1/(1-rate)``."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    a = as_tensor(a)
    if not training or rate == 0.0:
        return a
    if rng is None:
        raise ValueError("dropout in training mode needs a seeded generator")
    mask = (rng.random(a.shape) >= rate) / (1.0 - rate)
    return _result(a.data * mask, (a,), lambda g: (g * mask,), "dropout")


# -------------------------------------------------------------- normalization

def _standardize(x: np.ndarray, axis: int, eps: float):
    mu = x.mean(axis=axis, keepdims=True)
    xc = x - mu
    var = np.mean(xc * xc, axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    return xc * inv, inv, mu, var


def _standardize_back(g, xhat, inv, axis):
    return inv * (g - g.mean(axis=axis, keepdims=True)
                  - xhat * np.mean(g * xhat, axis=axis, keepdims=True))


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Per-row standardization (population variance) followed by ``gain``/``bias``."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    F = x.shape[1]
    if gain.shape != (1, F) or bias.shape != (1, F):
        raise ShapeError("layer_norm", x.shape, gain.shape, bias.shape)
    xhat, inv, _, _ = _standardize(x.data, 1, eps)

    def back(g):
        gx = g * gain.data
        return (_standardize_back(gx, xhat, inv, 1),
                np.sum(g * xhat, axis=0, keepdims=True),
                np.sum(g, axis=0, keepdims=True))
    return _result(xhat * gain.data + bias.data, (x, gain, bias), back, "layer_norm")


def batch_norm(x, gain, bias, eps: float = 1e-5, training: bool = True,
               running: tuple[np.ndarray, np.ndarray] | None = None) -> tuple[Tensor, np.ndarray, np.ndarray]:
    """Per-column standardization over all rows of the batch.

    Returns ``(out, batch_mean, batch_var)``; in evaluation mode ``running``
    (mean, var) replaces the batch statistics and no statistics are differentiated.
    """
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    F = x.shape[1]
    if gain.shape != (1, F) or bias.shape != (1, F):
        raise ShapeError("batch_norm", x.shape, gain.shape, bias.shape)
    if training:
        xhat, inv, mu, var = _standardize(x.data, 0, eps)

        def back(g):
            gx = g * gain.data
            return (_standardize_back(gx, xhat, inv, 0),
                    np.sum(g * xhat, axis=0, keepdims=True),
                    np.sum(g, axis=0, keepdims=True))
    else:
        mu, var = running
        inv = 1.0 / np.sqrt(var + eps)
        xhat = (x.data - mu) * inv

        def back(g):
            return (g * gain.data * inv,
                    np.sum(g * xhat, axis=0, keepdims=True),
                    np.sum(g, axis=0, keepdims=True))
    out = _result(xhat * gain.data + bias.data, (x, gain, bias), back, "batch_norm")
    return out, mu, var


# ------------------------------------------------------- per-sample primitives

def graph_matmul(A, H) -> Tensor:
    """Left-multiply every ``N``-row block of ``H`` by the shared ``N x N`` matrix ``A``."""
    A, H = as_tensor(A), as_tensor(H)
    n = A.shape[0]
    if A.shape[1] != n or H.shape[0] % n:
        raise ShapeError("graph_matmul", A.shape, H.shape)
    b, f = H.shape[0] // n, H.shape[1]
    H3 = H.data.reshape(b, n, f)
    out = (A.data @ H3).reshape(b * n, f)

    def back(g):
        G3 = g.reshape(b, n, f)
        gH = (A.data.T @ G3).reshape(b * n, f)
        gA = None
        if A.requires_grad:
            # sum_b G_b H_b^T as one (n, b*f) x (b*f, n) product
            gA = G3.transpose(1, 0, 2).reshape(n, b * f) @ H3.transpose(1, 0, 2).reshape(n, b * f).T
        return gA, gH
    return _result(out, (A, H), back, "graph_matmul")


def block_matmul(P, V, n: int) -> Tensor:
    """Per-sample ``P_b @ V_b`` with ``P`` stacked as ``(B*n, n)`` and ``V`` as ``(B*n, F)``."""
    P, V = as_tensor(P), as_tensor(V)
    if P.shape[1] != n or P.shape[0] % n or V.shape[0] != P.shape[0]:
        raise ShapeError("block_matmul", P.shape, V.shape)
    b, f = P.shape[0] // n, V.shape[1]
    P3, V3 = P.data.reshape(b, n, n), V.data.reshape(b, n, f)

    def back(g):
        G3 = g.reshape(b, n, f)
        return ((G3 @ V3.transpose(0, 2, 1)).reshape(b * n, n),
                (P3.transpose(0, 2, 1) @ G3).reshape(b * n, f))
    return _result((P3 @ V3).reshape(b * n, f), (P, V), back, "block_matmul")


def block_matmul_nt(X, Y, n: int) -> Tensor:
    """Per-sample ``X_b @ Y_b^T``, giving a ``(B*n, n)`` stack of ``n x n`` blocks."""
    X, Y = as_tensor(X), as_tensor(Y)
    if X.shape != Y.shape or X.shape[0] % n:
        raise ShapeError("block_matmul_nt", X.shape, Y.shape)
    b, d = X.shape[0] // n, X.shape[1]
    X3, Y3 = X.data.reshape(b, n, d), Y.data.reshape(b, n, d)

    def back(g):
        G3 = g.reshape(b, n, n)
        return ((G3 @ Y3).reshape(b * n, d),
                (G3.transpose(0, 2, 1) @ X3).reshape(b * n, d))
    return _result((X3 @ Y3.transpose(0, 2, 1)).reshape(b * n, n), (X, Y), back, "block_matmul_nt")
