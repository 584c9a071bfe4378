"""Define-by-run reverse-mode automatic differentiation over float64 arrays.

Every op builds a :class:`Node` holding its value and a backward rule that maps
the output gradient to one gradient per parent. :func:`backward` walks the
graph in reverse topological order, collecting intermediate gradients in a
local table and only accumulating into the ``grad`` of leaf variables at the
end, so calling it twice on the same graph exactly doubles every gradient.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

EPS = 1e-12


class ShapeError(ValueError):
    """Operand shapes do not conform for an op."""

    def __init__(self, op: str, *shapes):
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        joined = " vs ".join(str(s) for s in self.shapes)
        super().__init__(f"{op}: incompatible shapes {joined}")


class Node:
    __slots__ = ("value", "_grad", "parents", "backward_rule", "requires_grad", "blocked", "op")

    def __init__(self, value, parents=(), backward_rule=None, op="", requires_grad=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents = parents
        self.backward_rule = backward_rule
        self.op = op
        self.blocked = False
        if requires_grad is None:
            requires_grad = any(p.requires_grad for p in parents)
        self.requires_grad = requires_grad
        self._grad = None

    @property
    def grad(self) -> np.ndarray:
        # allocated on first use; reads as zeros until then
        if self._grad is None:
            self._grad = np.zeros_like(self.value)
        return self._grad

    @grad.setter
    def grad(self, g):
        self._grad = g

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self._grad = None

    def __repr__(self):
        return f"Node(op={self.op!r}, shape={self.shape})"

    __add__ = lambda self, o: add(self, o)
    __radd__ = lambda self, o: add(o, self)
    __sub__ = lambda self, o: sub(self, o)
    __rsub__ = lambda self, o: sub(o, self)
    __mul__ = lambda self, o: mul(self, o)
    __rmul__ = lambda self, o: mul(o, self)
    __truediv__ = lambda self, o: div(self, o)
    __matmul__ = lambda self, o: matmul(self, o)
    __neg__ = lambda self: scale(self, -1.0)


def variable(value) -> Node:
    """Leaf that collects gradients."""
    return Node(value, op="var", requires_grad=True)


def constant(value) -> Node:
    return Node(value, op="const", requires_grad=False)


def _node(x) -> Node:
    return x if isinstance(x, Node) else constant(x)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum ``g`` down to ``shape`` along broadcast axes."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_check(op, a: Node, b: Node):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


def _make(value, parents, rule, op) -> Node:
    return Node(value, parents, rule, op)


# -- elementwise binary ------------------------------------------------------

def add(a, b) -> Node:
    a, b = _node(a), _node(b)
    _broadcast_check("add", a, b)
    sa, sb = a.shape, b.shape
    ra, rb = a.requires_grad, b.requires_grad
    return _make(a.value + b.value, (a, b),
                 lambda g: (_unbroadcast(g, sa) if ra else None,
                            _unbroadcast(g, sb) if rb else None), "add")


def sub(a, b) -> Node:
    a, b = _node(a), _node(b)
    _broadcast_check("sub", a, b)
    sa, sb = a.shape, b.shape
    ra, rb = a.requires_grad, b.requires_grad
    return _make(a.value - b.value, (a, b),
                 lambda g: (_unbroadcast(g, sa) if ra else None,
                            _unbroadcast(-g, sb) if rb else None), "sub")


def mul(a, b) -> Node:
    a, b = _node(a), _node(b)
    _broadcast_check("mul", a, b)
    av, bv = a.value, b.value
    ra, rb = a.requires_grad, b.requires_grad
    return _make(av * bv, (a, b),
                 lambda g: (_unbroadcast(g * bv, av.shape) if ra else None,
                            _unbroadcast(g * av, bv.shape) if rb else None), "mul")


def div(a, b, eps: float = EPS) -> Node:
    """``a / b`` with denominators of magnitude below ``eps`` pushed out to ``±eps``."""
    a, b = _node(a), _node(b)
    _broadcast_check("div", a, b)
    av = a.value
    bv = np.where(np.abs(b.value) < eps, np.where(b.value < 0, -eps, eps), b.value)
    out = av / bv

    ra, rb = a.requires_grad, b.requires_grad

    def rule(g):
        ga = g / bv
        return (_unbroadcast(ga, av.shape) if ra else None,
                _unbroadcast(-ga * out, bv.shape) if rb else None)

    return _make(out, (a, b), rule, "div")


def mask_mul(x, mask) -> Node:
    """Multiply by a constant mask; no gradient flows into the mask."""
    x = _node(x)
    m = np.asarray(mask, dtype=np.float64)
    try:
        np.broadcast_shapes(x.shape, m.shape)
    except ValueError:
        raise ShapeError("mask_mul", x.shape, m.shape) from None
    xs = x.shape
    return _make(x.value * m, (x,), lambda g: (_unbroadcast(g * m, xs),), "mask_mul")


def scale(x, c: float) -> Node:
    x = _node(x)
    c = float(c)
    return _make(x.value * c, (x,), lambda g: (g * c,), "scale")


def matmul(a, b) -> Node:
    a, b = _node(a), _node(b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    av, bv = a.value, b.value
    ra, rb = a.requires_grad, b.requires_grad
    return _make(av @ bv, (a, b),
                 lambda g: (g @ bv.T if ra else None, av.T @ g if rb else None), "matmul")


def affine(x, W, b) -> Node:
    """``x @ W + b`` as one node (a dense layer)."""
    x, W, b = _node(x), _node(W), _node(b)
    if (x.value.ndim != 2 or W.value.ndim != 2 or x.shape[1] != W.shape[0]
            or b.shape != (W.shape[1],)):
        raise ShapeError("affine", x.shape, W.shape, b.shape)
    xv, Wv = x.value, W.value
    rx, rW, rb = x.requires_grad, W.requires_grad, b.requires_grad
    return _make(xv @ Wv + b.value, (x, W, b),
                 lambda g: (g @ Wv.T if rx else None, xv.T @ g if rW else None,
                            g.sum(axis=0) if rb else None), "affine")


# -- elementwise unary -------------------------------------------------------

def relu(x) -> Node:
    x = _node(x)
    pos = x.value > 0
    return _make(np.where(pos, x.value, 0.0), (x,), lambda g: (g * pos,), "relu")


def maximum0(x) -> Node:
    """Elementwise ``max(x, 0)``; the hinge used by the diversity loss."""
    out = relu(x)
    out.op = "max0"
    return out


def tanh(x) -> Node:
    x = _node(x)
    t = np.tanh(x.value)
    return _make(t, (x,), lambda g: (g * (1.0 - t * t),), "tanh")


def square(x) -> Node:
    x = _node(x)
    v = x.value
    return _make(v * v, (x,), lambda g: (2.0 * g * v,), "square")


def safe_sqrt(x, eps: float = EPS) -> Node:
    """``sqrt(x + eps)``; finite gradient at zero."""
    x = _node(x)
    r = np.sqrt(x.value + eps)
    return _make(r, (x,), lambda g: (g * 0.5 / r,), "sqrt")


def log_sigmoid(x, eps: float = EPS) -> Node:
    """``log(max(sigmoid(x), eps))`` computed stably."""
    x = _node(x)
    v = x.value
    out = np.maximum(-np.logaddexp(0.0, -v), np.log(eps))
    live = out > np.log(eps)
    sig_neg = 0.5 * (1.0 - np.tanh(0.5 * v))  # sigmoid(-v)
    return _make(out, (x,), lambda g: (g * sig_neg * live,), "log_sigmoid")


# -- reductions and shape ----------------------------------------------------

def sum(x, axis=None, keepdims=False) -> Node:  # noqa: A001 - mirrors numpy
    x = _node(x)
    shape = x.shape
    out = x.value.sum(axis=axis, keepdims=keepdims)

    def rule(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return _make(out, (x,), rule, "sum")


def mean(x, axis=None, keepdims=False) -> Node:
    x = _node(x)
    n = x.value.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return scale(sum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(x, shape) -> Node:
    x = _node(x)
    old = x.shape
    try:
        out = x.value.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", old, shape) from None
    return _make(out, (x,), lambda g: (g.reshape(old),), "reshape")


def concat(nodes: Sequence, axis: int = -1) -> Node:
    """Concatenate along the last axis."""
    nodes = [_node(n) for n in nodes]
    shapes = [n.shape for n in nodes]
    lead = {s[:-1] for s in shapes}
    if len(lead) != 1:
        raise ShapeError("concat", *shapes)
    sizes = [s[-1] for s in shapes]
    splits = np.cumsum(sizes)[:-1]
    out = np.concatenate([n.value for n in nodes], axis=-1)
    return _make(out, nodes, lambda g: tuple(np.split(g, splits, axis=-1)), "concat")


def pairwise_sqdist(x) -> Node:
    """Squared Euclidean distances between rows: ``(..., N, k) -> (..., N, N)``.

    Computed from the Gram matrix, clamped at zero, with an exact zero
    diagonal.
    """
    x = _node(x)
    if x.value.ndim < 2:
        raise ShapeError("pairwise_sqdist", x.shape)
    v = x.value
    sq = np.einsum("...ik,...ik->...i", v, v)
    gram = v @ np.swapaxes(v, -1, -2)
    out = np.maximum(sq[..., :, None] + sq[..., None, :] - 2.0 * gram, 0.0)
    n = v.shape[-2]
    out[..., np.arange(n), np.arange(n)] = 0.0

    def rule(g):
        gs = g + np.swapaxes(g, -1, -2)
        return (2.0 * (gs.sum(axis=-1)[..., None] * v - gs @ v),)

    return _make(out, (x,), rule, "pairwise_sqdist")


def stop_gradient(x) -> Node:
    """Same value as ``x``; gradients are blocked at this edge."""
    x = _node(x)
    out = Node(x.value, (x,), None, "stop_gradient", requires_grad=False)
    out.blocked = True
    return out


# -- backward ----------------------------------------------------------------

def _topological(root: Node) -> list:
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
        if node.requires_grad and not node.blocked:
            for p in reversed(node.parents):
                if id(p) not in seen:
                    stack.append((p, False))
    return order


def backward(root: Node) -> None:
    """Accumulate d(root)/d(leaf) into ``.grad`` of every reachable variable."""
    if root.value.size != 1:
        raise ValueError(f"backward: root must be scalar, got shape {root.shape}")
    order = _topological(root)
    grads = {id(root): np.ones_like(root.value)}
    for node in reversed(order):
        g = grads.get(id(node))
        if g is None or node.backward_rule is None or node.blocked:
            continue
        for parent, pg in zip(node.parents, node.backward_rule(g)):
            if pg is None or not parent.requires_grad:
                continue
            prev = grads.get(id(parent))
            grads[id(parent)] = pg if prev is None else prev + pg
    for node in order:
        if node.backward_rule is None and node.requires_grad:
            g = grads.get(id(node))
            if g is not None:
                node._grad = np.array(g) if node._grad is None else node._grad + g


def grad(f: Callable[[Node], Node], x) -> np.ndarray:
    """Gradient of scalar ``f`` at ``x``."""
    v = variable(np.array(x, dtype=np.float64))
    backward(f(v))
    return v.grad


def finite_diff_check(f: Callable[[Node], Node], point, step: float = 1e-5,
                      reference: Callable[[np.ndarray], float] | None = None) -> float:
    """Max over coordinates of ``|analytic - central diff| / max(1, |analytic|)``.

    ``reference`` is the numeric function to difference; it defaults to
    ``f`` evaluated on constants. Pass a frozen surrogate when ``f`` contains
    :func:`stop_gradient`.
    """
    point = np.array(point, dtype=np.float64)
    analytic = grad(f, point)
    if reference is None:
        reference = lambda p: float(f(constant(p)).value)  # noqa: E731
    numeric = np.empty_like(point)
    flat, nflat = point.reshape(-1), numeric.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + step
        hi = reference(point)
        flat[k] = orig - step
        lo = reference(point)
        flat[k] = orig
        nflat[k] = (hi - lo) / (2 * step)
    err = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))
    return float(err.max()) if err.size else 0.0
