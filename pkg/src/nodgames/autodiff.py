"""Minimal reverse-mode automatic differentiation on numpy values.

A ``Node`` wraps a float or ndarray together with the vector-Jacobian
product needed to backpropagate through it.  The functions in this module
dispatch on input type, so the same numerical code runs either as plain
numpy (fast evaluation path) or as a taped graph (training path) depending
on whether any argument is a Node.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Node", "leaf", "value_of", "is_node", "backward",
    "add", "sub", "mul", "div", "neg", "matmul", "solve",
    "tanh", "sigmoid", "softplus", "exp", "log", "sin", "cos", "tan",
    "sqrt", "square", "relu", "vsum", "dot", "concat", "stack",
    "avec", "amat", "getitem", "transpose", "reshape",
]


class Node:
    """One vertex of the computation graph."""

    __slots__ = ("value", "grad", "_parents", "_vjp")

    # Make numpy defer to our reflected operators instead of building
    # object arrays when an ndarray meets a Node.
    __array_ufunc__ = None

    def __init__(self, value, parents=(), vjp=None):
        self.value = value
        self.grad = None
        self._parents = parents
        self._vjp = vjp

    @property
    def shape(self):
        return np.shape(self.value)

    # -- operator sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __pow__(self, p):
        return power(self, p)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def __repr__(self):
        return f"Node({self.value!r})"


def leaf(value):
    """Wrap a value as a graph leaf (a differentiable input)."""
    return Node(np.asarray(value, dtype=float) if np.ndim(value) else float(value))


def is_node(x):
    return isinstance(x, Node)


def value_of(x):
    """Underlying numeric value, whether or not ``x`` is taped."""
    return x.value if isinstance(x, Node) else x


def _any_node(*xs):
    return any(isinstance(x, Node) for x in xs)


def _unbroadcast(g, shape):
    """Reduce gradient ``g`` back to ``shape`` after numpy broadcasting."""
    if np.shape(g) == tuple(shape):
        return g
    g = np.asarray(g)
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    if shape == ():
        return float(np.sum(g))
    return g


def backward(root, seed=1.0):
    """Accumulate gradients of ``root`` into every reachable leaf's ``.grad``."""
    topo = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))

    for node in topo:
        node.grad = None
    root.grad = seed if np.ndim(root.value) else float(seed)
    for node in reversed(topo):
        if node.grad is None or node._vjp is None:
            continue
        for parent, pg in zip(node._parents, node._vjp(node.grad)):
            if pg is None:
                continue
            if parent.grad is None:
                parent.grad = pg
            else:
                parent.grad = parent.grad + pg


# -- arithmetic ----------------------------------------------------------

def add(a, b):
    if not _any_node(a, b):
        return a + b
    av, bv = value_of(a), value_of(b)
    out = av + bv
    parents, vjps = [], []
    if isinstance(a, Node):
        parents.append(a)
        vjps.append(lambda g: _unbroadcast(g, np.shape(av)))
    if isinstance(b, Node):
        parents.append(b)
        vjps.append(lambda g: _unbroadcast(g, np.shape(bv)))
    return Node(out, tuple(parents), lambda g: tuple(f(g) for f in vjps))


def sub(a, b):
    return add(a, mul(b, -1.0) if _any_node(b) else -b) if _any_node(a, b) else a - b


def mul(a, b):
    if not _any_node(a, b):
        return a * b
    av, bv = value_of(a), value_of(b)
    out = av * bv
    parents, vjps = [], []
    if isinstance(a, Node):
        parents.append(a)
        vjps.append(lambda g: _unbroadcast(g * bv, np.shape(av)))
    if isinstance(b, Node):
        parents.append(b)
        vjps.append(lambda g: _unbroadcast(g * av, np.shape(bv)))
    return Node(out, tuple(parents), lambda g: tuple(f(g) for f in vjps))


def div(a, b):
    if not _any_node(a, b):
        return a / b
    av, bv = value_of(a), value_of(b)
    out = av / bv
    parents, vjps = [], []
    if isinstance(a, Node):
        parents.append(a)
        vjps.append(lambda g: _unbroadcast(g / bv, np.shape(av)))
    if isinstance(b, Node):
        parents.append(b)
        vjps.append(lambda g: _unbroadcast(-g * av / (bv * bv), np.shape(bv)))
    return Node(out, tuple(parents), lambda g: tuple(f(g) for f in vjps))


def neg(a):
    if not isinstance(a, Node):
        return -a
    return Node(-a.value, (a,), lambda g: (-g,))


def power(a, p):
    if not isinstance(a, Node):
        return a ** p
    av = a.value
    out = av ** p
    return Node(out, (a,), lambda g: (g * p * av ** (p - 1),))


def matmul(a, b):
    if not _any_node(a, b):
        return a @ b
    av, bv = np.asarray(value_of(a)), np.asarray(value_of(b))
    out = av @ bv

    def vjp(g):
        g = np.asarray(g)
        grads = []
        if isinstance(a, Node):
            if bv.ndim == 1 and av.ndim == 2:
                ga = np.outer(g, bv)
            elif av.ndim == 1:
                ga = g @ bv.T if bv.ndim == 2 else g * bv
            else:
                ga = g @ bv.T
            grads.append(ga)
        if isinstance(b, Node):
            if av.ndim == 1:
                gb = np.outer(av, g) if bv.ndim == 2 else g * av
            elif bv.ndim == 1:
                gb = av.T @ g
            else:
                gb = av.T @ g
            grads.append(gb)
        return tuple(grads)

    parents = tuple(x for x in (a, b) if isinstance(x, Node))
    return Node(out, parents, vjp)


def solve(a, b):
    """Solve ``a x = b`` with gradients through both operands."""
    if not _any_node(a, b):
        return np.linalg.solve(a, b)
    av, bv = np.asarray(value_of(a)), np.asarray(value_of(b))
    x = np.linalg.solve(av, bv)

    def vjp(g):
        gb = np.linalg.solve(av.T, np.asarray(g))
        grads = []
        if isinstance(a, Node):
            if x.ndim == 1:
                grads.append(-np.outer(gb, x))
            else:
                grads.append(-gb @ x.T)
        if isinstance(b, Node):
            grads.append(gb)
        return tuple(grads)

    parents = tuple(v for v in (a, b) if isinstance(v, Node))
    return Node(x, parents, vjp)


# -- elementwise nonlinearities -------------------------------------------

def _unary(x, fval, dval):
    if not isinstance(x, Node):
        return fval(x)
    out = fval(x.value)
    return Node(out, (x,), lambda g, o=out, v=x.value: (g * dval(v, o),))


def tanh(x):
    return _unary(x, np.tanh, lambda v, o: 1.0 - o * o)


def sigmoid(x):
    def f(v):
        return 1.0 / (1.0 + np.exp(-v))
    return _unary(x, f, lambda v, o: o * (1.0 - o))


def softplus(x):
    def f(v):
        return np.logaddexp(0.0, v)
    return _unary(x, f, lambda v, o: 1.0 / (1.0 + np.exp(-v)))


def exp(x):
    return _unary(x, np.exp, lambda v, o: o)


def log(x):
    return _unary(x, np.log, lambda v, o: 1.0 / v)


def sin(x):
    return _unary(x, np.sin, lambda v, o: np.cos(v))


def cos(x):
    return _unary(x, np.cos, lambda v, o: -np.sin(v))


def tan(x):
    return _unary(x, np.tan, lambda v, o: 1.0 + o * o)


def sqrt(x):
    return _unary(x, np.sqrt, lambda v, o: 0.5 / o)


def square(x):
    return mul(x, x)


def relu(x):
    return _unary(x, lambda v: np.maximum(v, 0.0), lambda v, o: (np.asarray(v) > 0).astype(float) if np.ndim(v) else float(v > 0))


def vsum(x):
    if not isinstance(x, Node):
        return np.sum(x)
    v = np.asarray(x.value)
    return Node(float(np.sum(v)), (x,), lambda g: (g * np.ones_like(v),))


def dot(a, b):
    if not _any_node(a, b):
        return float(np.dot(a, b))
    return vsum(mul(a, b))


# -- structural ops --------------------------------------------------------

def getitem(x, idx):
    if not isinstance(x, Node):
        return np.asarray(x)[idx]
    v = np.asarray(x.value)
    out = v[idx]

    def vjp(g):
        full = np.zeros_like(v)
        np.add.at(full, idx, g)
        return (full,)

    return Node(out, (x,), vjp)


def concat(parts, axis=0):
    parts = list(parts)
    if not any(isinstance(p, Node) for p in parts):
        return np.concatenate([np.atleast_1d(p) for p in parts], axis=axis)
    vals = [np.atleast_1d(np.asarray(value_of(p))) for p in parts]
    out = np.concatenate(vals, axis=axis)
    sizes = [v.shape[axis] for v in vals]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        g = np.asarray(g)
        grads = []
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if isinstance(p, Node):
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                piece = g[tuple(sl)]
                if np.shape(p.value) == ():
                    piece = float(np.sum(piece))
                grads.append(piece)
        return tuple(grads)

    parents = tuple(p for p in parts if isinstance(p, Node))
    return Node(out, parents, vjp)


def stack(parts, axis=0):
    parts = list(parts)
    if not any(isinstance(p, Node) for p in parts):
        return np.stack([np.asarray(p, dtype=float) for p in parts], axis=axis)
    vals = [np.asarray(value_of(p), dtype=float) for p in parts]
    out = np.stack(vals, axis=axis)

    def vjp(g):
        slices = np.moveaxis(np.asarray(g), axis, 0)
        grads = []
        for p, piece in zip(parts, slices):
            if isinstance(p, Node):
                grads.append(float(piece) if np.shape(p.value) == () else piece)
        return tuple(grads)

    parents = tuple(p for p in parts if isinstance(p, Node))
    return Node(out, parents, vjp)


def avec(entries):
    """Assemble a vector from scalar entries (Nodes or numbers)."""
    return stack(list(entries), axis=0)


def amat(rows):
    """Assemble a matrix from nested lists of scalar entries."""
    rows = [avec(r) for r in rows]
    return stack(rows, axis=0)


def transpose(x):
    if not isinstance(x, Node):
        return np.asarray(x).T
    return Node(np.asarray(x.value).T, (x,), lambda g: (np.asarray(g).T,))


def reshape(x, shape):
    if not isinstance(x, Node):
        return np.reshape(x, shape)
    v = np.asarray(x.value)
    return Node(v.reshape(shape), (x,), lambda g: (np.asarray(g).reshape(v.shape),))
