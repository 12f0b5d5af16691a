"""A small reverse-mode differentiation tape over numpy arrays.

Only the operations needed to train an MLP VAE with the HiPPO consistency
loss are supported: add/sub/mul/neg, matmul, transpose, reshape, slicing,
sum/mean, and the elementwise functions tanh, exp, log, square, sqrt,
sigmoid and clip.

Every op also accepts plain arrays; when no argument is a :class:`Node` the
op simply returns the numpy result, so model code can be written once and
run either with or without a tape.

>>> tape = Tape()
>>> x = tape.variable(3.0)
>>> y = square(x)
>>> float(tape.backward(y)[x])
6.0
"""

from __future__ import annotations

import weakref

import numpy as np

from .core import HibboError


class MalformedTape(HibboError):
    pass


class Node:
    __slots__ = ("tape", "index", "value", "parents", "vjps", "__weakref__")

    # numpy must defer to Node's reflected operators (ndarray + Node).
    __array_ufunc__ = None

    def __init__(self, tape: Tape, value: np.ndarray, parents=(), vjps=()):
        self.tape = tape
        self.value = value
        self.parents = parents
        self.vjps = vjps
        self.index = tape._push(self)

    @property
    def shape(self):
        return self.value.shape

    @property
    def T(self):
        return transpose(self)

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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, key):
        return getitem(self, key)

    def __repr__(self):
        return f"Node(#{self.index}, shape={self.value.shape})"


class Gradients:
    """Mapping from nodes to partial derivatives of the tape output.

    Nodes that the output does not depend on get an exact zero gradient.
    """

    def __init__(self, tape: Tape, grads: dict[int, np.ndarray]):
        self._tape = tape
        self._grads = grads

    def __getitem__(self, node: Node) -> np.ndarray:
        if node.tape is not self._tape:
            raise MalformedTape("node belongs to a different tape")
        g = self._grads.get(node.index)
        return np.zeros_like(node.value) if g is None else g

    def __contains__(self, node: Node) -> bool:
        return node.tape is self._tape and node.index in self._grads


class Tape:
    """Records nodes in creation order, which is a topological order.

    Nodes are held weakly: everything an output depends on stays alive
    through ``parents``, and the tape does not form a reference cycle with
    its nodes, so a finished graph is freed as soon as it goes out of scope.
    """

    def __init__(self):
        self.nodes: list[weakref.ref] = []

    def _push(self, node: Node) -> int:
        self.nodes.append(weakref.ref(node))
        return len(self.nodes) - 1

    def variable(self, value) -> Node:
        return Node(self, np.array(value, dtype=np.float64))

    constant = variable

    def backward(self, output: Node) -> Gradients:
        if not isinstance(output, Node) or output.tape is not self:
            raise MalformedTape("output is not a node on this tape")
        if output.value.size != 1:
            raise MalformedTape(f"output must be a scalar, got shape {output.value.shape}")
        grads: dict[int, np.ndarray] = {output.index: np.ones_like(output.value)}
        for ref in reversed(self.nodes[: output.index + 1]):
            node = ref()
            if node is None:
                continue
            g = grads.get(node.index)
            if g is None:
                continue
            for parent, vjp in zip(node.parents, node.vjps):
                contrib = vjp(g)
                prev = grads.get(parent.index)
                grads[parent.index] = contrib if prev is None else prev + contrib
        return Gradients(self, grads)


def _tape_of(*args) -> Tape | None:
    for a in args:
        if isinstance(a, Node):
            return a.tape
    return None


def _lift(tape: Tape, a) -> Node:
    if isinstance(a, Node):
        if a.tape is not tape:
            raise MalformedTape("cannot mix nodes from different tapes")
        return a
    return tape.constant(a)


def _value(a):
    return a.value if isinstance(a, Node) else np.asarray(a, dtype=np.float64)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _binary(a, b, value_fn, vjp_a, vjp_b):
    tape = _tape_of(a, b)
    if tape is None:
        return value_fn(_value(a), _value(b))
    a, b = _lift(tape, a), _lift(tape, b)
    out = value_fn(a.value, b.value)
    sa, sb = a.value.shape, b.value.shape
    return Node(
        tape,
        out,
        (a, b),
        (lambda g: _unbroadcast(vjp_a(g, a.value, b.value), sa), lambda g: _unbroadcast(vjp_b(g, a.value, b.value), sb)),
    )


def _unary(a, value_fn, vjp):
    if not isinstance(a, Node):
        return value_fn(_value(a))
    out = value_fn(a.value)
    return Node(a.tape, out, (a,), (lambda g: vjp(g, a.value, out),))


def add(a, b):
    return _binary(a, b, np.add, lambda g, x, y: g, lambda g, x, y: g)


def sub(a, b):
    return _binary(a, b, np.subtract, lambda g, x, y: g, lambda g, x, y: -g)


def mul(a, b):
    return _binary(a, b, np.multiply, lambda g, x, y: g * y, lambda g, x, y: g * x)


def neg(a):
    return _unary(a, np.negative, lambda g, x, out: -g)


def matmul(a, b):
    """Matrix product of 2-d operands (or matrix-vector)."""

    def vjp_a(g, x, y):
        if y.ndim == 1:
            return np.outer(g, y)
        return g @ y.T

    def vjp_b(g, x, y):
        if x.ndim == 1:
            return np.outer(x, g)
        return x.T @ g

    return _binary(a, b, np.matmul, vjp_a, vjp_b)


def transpose(a):
    return _unary(a, np.transpose, lambda g, x, out: g.T)


def reshape(a, shape):
    return _unary(a, lambda x: np.reshape(x, shape), lambda g, x, out: np.reshape(g, x.shape))


def getitem(a, key):
    def vjp(g, x, out):
        full = np.zeros_like(x)
        np.add.at(full, key, g)
        return full

    return _unary(a, lambda x: x[key], vjp)


def sum(a, axis=None):  # noqa: A001 - mirrors numpy naming
    def vjp(g, x, out):
        if axis is None:
            return np.broadcast_to(g, x.shape).copy()
        return np.broadcast_to(np.expand_dims(g, axis), x.shape).copy()

    return _unary(a, lambda x: np.sum(x, axis=axis), vjp)


def mean(a, axis=None):
    n = _value(a).size if axis is None else _value(a).shape[axis]
    return mul(sum(a, axis=axis), 1.0 / n)


def tanh(a):
    return _unary(a, np.tanh, lambda g, x, out: g * (1.0 - out * out))


def exp(a):
    return _unary(a, np.exp, lambda g, x, out: g * out)


def log(a):
    return _unary(a, np.log, lambda g, x, out: g / x)


def square(a):
    return _unary(a, np.square, lambda g, x, out: 2.0 * g * x)


def sqrt(a):
    """Square root clamped at zero; the gradient at (or below) zero is 0."""

    def value(x):
        return np.sqrt(np.maximum(x, 0.0))

    def vjp(g, x, out):
        safe = np.where(out > 0, out, 1.0)
        return np.where(out > 0, 0.5 * g / safe, 0.0)

    return _unary(a, value, vjp)


def sigmoid(a):
    def value(x):
        return 0.5 * (1.0 + np.tanh(0.5 * x))

    return _unary(a, value, lambda g, x, out: g * out * (1.0 - out))


def clip(a, lo: float, hi: float):
    """Clamp to [lo, hi]; gradient passes only where the input is inside."""
    return _unary(a, lambda x: np.clip(x, lo, hi), lambda g, x, out: g * ((x >= lo) & (x <= hi)))
