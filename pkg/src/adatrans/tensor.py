"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

Every differentiable quantity in the package is a :class:`Tensor`.  Graphs are
built dynamically by calling the primitive functions below; :meth:`Tensor.backward`
walks the recorded graph once in reverse topological order.

Shape rules are deliberately narrow: ``matmul`` handles matrix-matrix and
matrix-vector products, and the elementwise binary ops accept equal shapes or
numpy-style broadcasting of a trailing vector / singleton column (for bias rows
and per-example scalars).
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor", "ShapeError", "constant", "parameter",
    "matmul", "add", "sub", "mul", "sigmoid", "tanh", "relu", "exp", "log",
    "sum", "mean", "l2_norm", "unit_normalize", "concat", "slice_", "sq_l2_distance",
    "logsumexp", "clip", "eval_graph", "grad_check", "PRIMITIVES",
]

NORM_FLOOR = 1e-12


class ShapeError(ValueError):
    """Raised when a primitive receives operands with incompatible shapes."""

    def __init__(self, op: str, *shapes):
        self.op = op
        self.shapes = shapes
        super().__init__(f"{op}: incompatible shapes {', '.join(str(s) for s in shapes)}")


class Tensor:
    """Node of the computation graph.

    ``value`` and ``grad`` are float64 numpy arrays of identical shape.  Leaf
    tensors created with ``requires_grad=True`` are trainable parameters or
    differentiable inputs; ``op`` names the primitive that produced a node.
    """

    __slots__ = ("value", "grad", "requires_grad", "op", "parents", "_backward")

    def __init__(self, value, requires_grad: bool = False, op: str = "leaf",
                 parents: tuple = (), backward: Callable | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = np.zeros(self.value.shape)
        self.requires_grad = requires_grad
        self.op = op
        self.parents = parents
        self._backward = backward

    @property
    def shape(self) -> tuple:
        return self.value.shape

    @property
    def size(self) -> int:
        return self.value.size

    def __repr__(self) -> str:
        return f"Tensor(op={self.op}, shape={self.shape})"

    def zero_grad(self) -> None:
        self.grad = np.zeros(self.value.shape)

    def item(self) -> float:
        return float(self.value.reshape(-1)[0])

    def backward(self) -> None:
        """Accumulate d(self)/d(node) into ``grad`` of every reachable node.

        Gradients are computed fresh for this call and then *added* to the
        stored buffers, so two calls without a reset double every gradient.
        """
        if self.value.size != 1:
            raise ValueError(f"backward() needs a scalar output, got shape {self.shape}")
        order = _topological_order(self)
        local = {id(self): np.ones(self.shape)}
        for node in reversed(order):
            g = local.pop(id(node), None)
            if g is None:
                continue
            node.grad += g
            if node._backward is None:
                continue
            for parent, pg in zip(node.parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in local:
                    local[key] = local[key] + pg
                else:
                    local[key] = pg

    # operator sugar; each maps onto one primitive
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _topological_order(root: Tensor) -> list[Tensor]:
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
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def constant(value) -> Tensor:
    return Tensor(value, requires_grad=False)


def parameter(value) -> Tensor:
    return Tensor(value, requires_grad=True)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(value, op: str, parents: tuple, backward: Callable) -> Tensor:
    if any(p.requires_grad for p in parents):
        return Tensor(value, True, op, parents, backward)
    return Tensor(value, False, op)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> tuple:
    if a.shape == b.shape:
        return a.shape
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


# -- linear primitives ------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.value.ndim not in (1, 2) or b.value.ndim not in (1, 2) or a.shape[-1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    av, bv = a.value, b.value

    def backward(g):
        if av.ndim == 2 and bv.ndim == 2:
            return g @ bv.T, av.T @ g
        if av.ndim == 2:  # matrix @ vector
            return np.outer(g, bv), av.T @ g
        if bv.ndim == 2:  # vector @ matrix
            return bv @ g, np.outer(av, g)
        return g * bv, g * av

    return _node(av @ bv, "matmul", (a, b), backward)


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("add", a, b)
    sa, sb = a.shape, b.shape
    return _node(a.value + b.value, "add", (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("sub", a, b)
    sa, sb = a.shape, b.shape
    return _node(a.value - b.value, "sub", (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("mul", a, b)
    av, bv = a.value, b.value
    return _node(av * bv, "mul", (a, b),
                 lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)))


# -- elementwise nonlinearities ---------------------------------------------

def sigmoid(x) -> Tensor:
    x = _as_tensor(x)
    v = x.value
    # split on sign so exp never overflows
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return _node(out, "sigmoid", (x,), lambda g: (g * out * (1.0 - out),))


def tanh(x) -> Tensor:
    x = _as_tensor(x)
    out = np.tanh(x.value)
    return _node(out, "tanh", (x,), lambda g: (g * (1.0 - out * out),))


def relu(x) -> Tensor:
    x = _as_tensor(x)
    mask = x.value > 0
    return _node(np.where(mask, x.value, 0.0), "relu", (x,), lambda g: (g * mask,))


def exp(x) -> Tensor:
    x = _as_tensor(x)
    out = np.exp(x.value)
    return _node(out, "exp", (x,), lambda g: (g * out,))


def log(x) -> Tensor:
    x = _as_tensor(x)
    v = x.value
    return _node(np.log(v), "log", (x,), lambda g: (g / v,))


def clip(x, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]; gradient is zero where the clamp is active."""
    x = _as_tensor(x)
    inside = (x.value >= lo) & (x.value <= hi)
    return _node(np.clip(x.value, lo, hi), "clip", (x,), lambda g: (g * inside,))


# -- reductions ---------------------------------------------------------------

def _expand(g: np.ndarray, shape: tuple, axis) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(g, shape)
    return np.broadcast_to(np.expand_dims(g, axis), shape)


def sum(x, axis: int | None = None) -> Tensor:  # noqa: A001 - mirrors numpy
    x = _as_tensor(x)
    shape = x.shape
    return _node(np.sum(x.value, axis=axis), "sum", (x,),
                 lambda g: (_expand(g, shape, axis).copy(),))


def mean(x, axis: int | None = None) -> Tensor:
    x = _as_tensor(x)
    shape = x.shape
    n = x.size if axis is None else shape[axis]
    return _node(np.mean(x.value, axis=axis), "mean", (x,),
                 lambda g: (_expand(g, shape, axis) / n,))


def l2_norm(x, axis: int = -1) -> Tensor:
    x = _as_tensor(x)
    v = x.value
    norm = np.sqrt(np.sum(v * v, axis=axis))
    safe = np.maximum(norm, NORM_FLOOR)

    def backward(g):
        return (np.expand_dims(g / safe, axis) * v,)

    return _node(norm, "l2_norm", (x,), backward)


def unit_normalize(x, axis: int = -1) -> Tensor:
    """x / max(||x||, 1e-12) along ``axis``."""
    x = _as_tensor(x)
    v = x.value
    norm = np.sqrt(np.sum(v * v, axis=axis, keepdims=True))
    clamped = norm < NORM_FLOOR
    denom = np.where(clamped, NORM_FLOOR, norm)
    out = v / denom

    def backward(g):
        radial = np.sum(g * out, axis=axis, keepdims=True)
        return (np.where(clamped, g / denom, (g - out * radial) / denom),)

    return _node(out, "unit_normalize", (x,), backward)


def sq_l2_distance(a, b, axis: int = -1) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError("sq_l2_distance", a.shape, b.shape)
    diff = a.value - b.value

    def backward(g):
        gd = 2.0 * np.expand_dims(g, axis) * diff
        return gd, -gd

    return _node(np.sum(diff * diff, axis=axis), "sq_l2_distance", (a, b), backward)


def logsumexp(x, axis: int = -1) -> Tensor:
    x = _as_tensor(x)
    v = x.value
    m = np.max(v, axis=axis, keepdims=True)
    shifted = np.exp(v - m)
    total = np.sum(shifted, axis=axis, keepdims=True)
    out = np.squeeze(m + np.log(total), axis=axis)
    soft = shifted / total
    return _node(out, "logsumexp", (x,), lambda g: (np.expand_dims(g, axis) * soft,))


# -- structural -----------------------------------------------------------------

def concat(xs: Sequence, axis: int = -1) -> Tensor:
    xs = [_as_tensor(x) for x in xs]
    ref = xs[0].shape
    ax = axis % len(ref)
    for x in xs[1:]:
        if len(x.shape) != len(ref) or any(
                s != r for i, (s, r) in enumerate(zip(x.shape, ref)) if i != ax):
            raise ShapeError("concat", *(t.shape for t in xs))
    bounds = np.cumsum([x.shape[ax] for x in xs])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=ax))

    return _node(np.concatenate([x.value for x in xs], axis=ax), "concat", tuple(xs), backward)


def slice_(x, start: int, stop: int, axis: int = -1) -> Tensor:
    x = _as_tensor(x)
    n = x.shape[axis]
    if not 0 <= start < stop <= n:
        raise ShapeError(f"slice[{start}:{stop}]", x.shape)
    index = [slice(None)] * x.value.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)
    shape = x.shape

    def backward(g):
        full = np.zeros(shape)
        full[index] = g
        return (full,)

    return _node(x.value[index], "slice", (x,), backward)


# -- graph evaluation and checking --------------------------------------------

def eval_graph(inputs: Sequence, program: Callable[..., Tensor]) -> Tensor:
    """Evaluate ``program`` on fresh differentiable leaves built from ``inputs``."""
    leaves = [x if isinstance(x, Tensor) else parameter(x) for x in inputs]
    return program(*leaves)


def grad_check(program: Callable[..., Tensor], point: Sequence, epsilon: float = 1e-5,
               n_coords: int | None = None, rng: np.random.Generator | None = None) -> float:
    """Max relative error between backprop and central differences.

    Error per coordinate is ``|analytic - numeric| / max(1, |analytic|)``.
    With ``n_coords`` set, that many coordinates are drawn at random across
    all inputs; otherwise every coordinate is checked.
    """
    if not 0 < epsilon <= 1e-3:
        raise ValueError("epsilon must lie in (0, 1e-3]")
    arrays = [np.array(p, dtype=np.float64) for p in point]
    leaves = [parameter(a) for a in arrays]
    out = program(*leaves)
    if out.size != 1:
        raise ValueError(f"grad_check needs a scalar program, got shape {out.shape}")
    out.backward()
    analytic = [leaf.grad.reshape(-1) for leaf in leaves]

    coords = [(i, j) for i, a in enumerate(arrays) for j in range(a.size)]
    if n_coords is not None and n_coords < len(coords):
        rng = rng if rng is not None else np.random.default_rng(0)
        picks = rng.choice(len(coords), size=n_coords, replace=False)
        coords = [coords[k] for k in sorted(picks)]

    def f(arrs):
        return program(*[constant(a) for a in arrs]).item()

    worst = 0.0
    for i, j in coords:
        flat = arrays[i].reshape(-1)
        orig = flat[j]
        flat[j] = orig + epsilon
        up = f(arrays)
        flat[j] = orig - epsilon
        down = f(arrays)
        flat[j] = orig
        numeric = (up - down) / (2.0 * epsilon)
        a = analytic[i][j]
        worst = max(worst, abs(a - numeric) / max(1.0, abs(a)))
    return worst


PRIMITIVES = (
    "matmul", "add", "sub", "mul", "sigmoid", "tanh", "relu", "exp", "log", "sum",
    "mean", "l2_norm", "unit_normalize", "concat", "slice", "sq_l2_distance", "logsumexp",
)
