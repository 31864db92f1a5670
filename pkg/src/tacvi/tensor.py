"""Dense float64 matrices with a reverse-mode tape.

Every value is a 2-D ``Matrix``. Operations run eagerly on numpy arrays; while
a :class:`Tape` is active, any op touching a matrix that requires gradients is
recorded, and :meth:`Tape.backward` replays the records in reverse.

    with Tape() as tape:
        loss = mean(square(matmul(x, w)))
    grads = tape.backward(loss)
"""
from __future__ import annotations

import numpy as np

from tacvi import kernels

PROB_EPS = 1e-7


class ShapeError(ValueError):
    pass


class DomainError(ValueError):
    pass


class Matrix:
    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise ShapeError(f"Matrix needs 2-D data, got {arr.ndim}-D")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def rows(self):
        return self.data.shape[0]

    @property
    def cols(self):
        return self.data.shape[1]

    def item(self):
        if self.data.size != 1:
            raise ShapeError(f"item() on {self.shape} matrix")
        return float(self.data[0, 0])

    def numpy(self):
        return self.data

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Matrix{tag}({self.rows}x{self.cols})"

    def __add__(self, other):
        return add(self, _lift(other, self))

    def __radd__(self, other):
        return add(_lift(other, self), self)

    def __sub__(self, other):
        return sub(self, _lift(other, self))

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)


def _lift(x, like):
    if isinstance(x, Matrix):
        return x
    return Matrix(np.full(like.shape, float(x)))


def _name(m):
    return m.name or f"{m.rows}x{m.cols}"


# ---------------------------------------------------------------------------
# tape

class _Node:
    __slots__ = ("out", "inputs", "vjp")

    def __init__(self, out, inputs, vjp):
        self.out = out
        self.inputs = inputs
        self.vjp = vjp


_active = []


class Tape:
    """Records primitive ops in execution order (a valid topological order)."""

    def __init__(self):
        self.nodes = []

    def __enter__(self):
        _active.append(self)
        return self

    def __exit__(self, *exc):
        _active.remove(self)
        return False

    def __len__(self):
        return len(self.nodes)

    def backward(self, output, params=None):
        """Gradient of the scalar ``output`` w.r.t. every leaf requiring grad.

        Returns ``{id(leaf): grad}`` and also stores each leaf's ``.grad``.
        When ``params`` is given, any of them not reached gets a zero gradient.
        """
        if output.shape != (1, 1):
            raise ShapeError(f"backward needs a 1x1 output, got {output.shape}")
        produced = {id(node.out) for node in self.nodes}
        adj = {id(output): np.ones((1, 1))}
        leaves = {}
        if output.requires_grad and id(output) not in produced:
            leaves[id(output)] = output
        for node in reversed(self.nodes):
            g = adj.pop(id(node.out), None)
            if g is None:
                continue
            for inp, gi in zip(node.inputs, node.vjp(g)):
                if gi is None or not inp.requires_grad:
                    continue
                key = id(inp)
                adj[key] = adj[key] + gi if key in adj else gi
                if key not in produced:
                    leaves[key] = inp
        grads = {}
        for key, leaf in leaves.items():
            leaf.grad = adj[key]
            grads[key] = leaf.grad
        for p in params or ():
            if id(p) not in grads:
                p.grad = np.zeros_like(p.data)
                grads[id(p)] = p.grad
        return grads


def backward(tape, output, params=None):
    return tape.backward(output, params)


def _record(out_data, inputs, vjp):
    tape = _active[-1] if _active else None
    needs = tape is not None and any(m.requires_grad for m in inputs)
    out = Matrix(out_data, requires_grad=needs)
    if needs:
        tape.nodes.append(_Node(out, inputs, vjp))
    return out


def detach(a):
    return Matrix(a.data)


# ---------------------------------------------------------------------------
# primitives

def matmul(a, b):
    if a.cols != b.rows:
        raise ShapeError(f"matmul: {_name(a)} {a.shape} x {_name(b)} {b.shape}")
    A, B = a.data, b.data
    return _record(A @ B, (a, b), lambda g: (g @ B.T, A.T @ g))


def _check_same(op, a, b):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def add(a, b):
    """Elementwise add; ``b`` may also be a 1 x cols row vector (bias)."""
    if b.rows == 1 and a.rows != 1 and a.cols == b.cols:
        return _record(a.data + b.data, (a, b),
                       lambda g: (g, g.sum(axis=0, keepdims=True)))
    _check_same("add", a, b)
    return _record(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b):
    _check_same("sub", a, b)
    return _record(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b):
    _check_same("mul", a, b)
    A, B = a.data, b.data
    return _record(A * B, (a, b), lambda g: (g * B, g * A))


def scale(a, s):
    s = float(s)
    return _record(a.data * s, (a,), lambda g: (g * s,))


def shift(a, c):
    return _record(a.data + float(c), (a,), lambda g: (g,))


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.clip(x, -700, 700)))


def sigmoid(a):
    y = _sigmoid(a.data)
    return _record(y, (a,), lambda g: (g * y * (1.0 - y),))


def relu(a):
    pos = a.data > 0
    return _record(np.where(pos, a.data, 0.0), (a,), lambda g: (g * pos,))


def tanh(a):
    y = np.tanh(a.data)
    return _record(y, (a,), lambda g: (g * (1.0 - y * y),))


def softplus(a):
    x = a.data
    y = np.logaddexp(0.0, x)
    return _record(y, (a,), lambda g: (g * _sigmoid(x),))


def log(a):
    x = a.data
    if np.any(x <= 0):
        raise DomainError("log of non-positive entry")
    return _record(np.log(x), (a,), lambda g: (g / x,))


def square(a):
    x = a.data
    return _record(x * x, (a,), lambda g: (2.0 * g * x,))


def clamp(a, lo, hi):
    x = a.data
    inside = (x >= lo) & (x <= hi)
    return _record(np.clip(x, lo, hi), (a,), lambda g: (g * inside,))


def row_softmax(v):
    x = v.data
    e = np.exp(x - x.max(axis=1, keepdims=True))
    y = e / e.sum(axis=1, keepdims=True)

    def vjp(g):
        return (y * (g - (g * y).sum(axis=1, keepdims=True)),)

    return _record(y, (v,), vjp)


def total(a):
    return _record(np.array([[a.data.sum()]]), (a,),
                   lambda g: (np.full(a.shape, g[0, 0]),))


def mean(a):
    n = a.data.size
    return _record(np.array([[a.data.sum() / n]]), (a,),
                   lambda g: (np.full(a.shape, g[0, 0] / n),))


def weighted_sum(mats, w):
    """sum_l w[0, l] * mats[l] with a differentiable 1 x m weight row."""
    if w.shape != (1, len(mats)):
        raise ShapeError(f"weighted_sum: weights {w.shape} for {len(mats)} matrices")
    for m in mats[1:]:
        _check_same("weighted_sum", mats[0], m)
    wv = w.data[0]
    out = sum(wv[l] * m.data for l, m in enumerate(mats))

    def vjp(g):
        gw = np.array([[float((g * m.data).sum()) for m in mats]])
        return tuple(wv[l] * g for l in range(len(mats))) + (gw,)

    return _record(out, tuple(mats) + (w,), vjp)


def row_weighted_sum(mats, weights):
    """sum_l weights[:, l, None] * mats[l] with constant per-row weights (n x m)."""
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (mats[0].rows, len(mats)):
        raise ShapeError(f"row_weighted_sum: weights {weights.shape}")
    for m in mats[1:]:
        _check_same("row_weighted_sum", mats[0], m)
    out = sum(weights[:, l:l + 1] * m.data for l, m in enumerate(mats))
    return _record(out, tuple(mats),
                   lambda g: tuple(weights[:, l:l + 1] * g for l in range(len(mats))))


def select_rows(mask, a, b):
    """Row i from ``a`` where mask[i] else from ``b``."""
    _check_same("select_rows", a, b)
    keep = np.asarray(mask, dtype=bool).reshape(-1, 1)
    if keep.shape[0] != a.rows:
        raise ShapeError(f"select_rows: mask of {keep.shape[0]} rows for {a.shape}")
    return _record(np.where(keep, a.data, b.data), (a, b),
                   lambda g: (g * keep, g * ~keep))


# ---------------------------------------------------------------------------
# fused losses (kernels backed)

def masked_bce(pred, y, weight):
    """-(1/(n*c)) sum [y log p + (1-y) log(1-p)] * weight with p clamped."""
    Y = np.ascontiguousarray(y.data if isinstance(y, Matrix) else y, dtype=np.float64)
    W = np.ascontiguousarray(weight.data if isinstance(weight, Matrix) else weight,
                             dtype=np.float64)
    if pred.shape != Y.shape or W.shape != Y.shape:
        raise ShapeError(f"masked_bce: pred {pred.shape}, y {Y.shape}, weight {W.shape}")
    P = np.ascontiguousarray(pred.data)
    val, grad = kernels.masked_bce(P, Y, W, PROB_EPS)
    return _record(np.array([[val]]), (pred,), lambda g: (g[0, 0] * grad,))


def compression(p, q, row_weight):
    """(1/(2*n*d)) sum [q^2 - log q^2 + p^2 - 1] * row_weight[i]."""
    _check_same("compression", p, q)
    w = np.ascontiguousarray(row_weight, dtype=np.float64).reshape(-1)
    if w.shape[0] != p.rows:
        raise ShapeError(f"compression: weight length {w.shape[0]} for {p.rows} rows")
    Q = np.ascontiguousarray(q.data)
    if np.any(Q <= 0):
        raise DomainError("compression: scale entries must be positive")
    val, gp, gq = kernels.compression(np.ascontiguousarray(p.data), Q, w)
    return _record(np.array([[val]]), (p, q),
                   lambda g: (g[0, 0] * gp, g[0, 0] * gq))


def row_sq_error(pred, target, row_weight):
    """sum_i row_weight[i] * ||pred_i - target_i||^2 (no normalisation)."""
    _check_same("row_sq_error", pred, target)
    w = np.ascontiguousarray(row_weight, dtype=np.float64).reshape(-1)
    val, gp, gt = kernels.row_sq_error(np.ascontiguousarray(pred.data),
                                       np.ascontiguousarray(target.data), w)
    return _record(np.array([[val]]), (pred, target),
                   lambda g: (g[0, 0] * gp, g[0, 0] * gt))
