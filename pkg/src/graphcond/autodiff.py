"""Dense reverse-mode differentiation over 2-D float64 matrices.

Expressions are immutable :class:`Node` graphs.  :func:`gradient` returns new
expressions built from the same primitive set, so the result can itself be
differentiated (gradient-of-gradient, needed for gradient matching losses).

    >>> x = var("x", (1, 1))
    >>> y = x * x * x
    >>> (dy,) = gradient(y, [x])
    >>> (d2y,) = gradient(dy, [x])
    >>> float(evaluate(d2y, {"x": np.array([[2.0]])})[0, 0])
    12.0
"""

from __future__ import annotations

import itertools

import numpy as np
import scipy.sparse as sp

_ids = itertools.count()


class ShapeError(ValueError):
    pass


class UnboundVariable(KeyError):
    pass


class Node:
    __slots__ = ("op", "inputs", "attr", "shape", "id")

    def __init__(self, op, inputs, shape, attr=None):
        self.op = op
        self.inputs = tuple(inputs)
        self.shape = tuple(int(s) for s in shape)
        self.attr = attr
        self.id = next(_ids)

    def __repr__(self):
        name = f" {self.attr!r}" if self.op == "var" else ""
        return f"Node({self.op}{name}, shape={self.shape})"

    # operator sugar
    def __add__(self, other):
        if isinstance(other, Node):
            return add(self, other)
        return addc(self, float(other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Node):
            return add(self, scale(other, -1.0))
        return addc(self, -float(other))

    def __rsub__(self, other):
        return addc(scale(self, -1.0), float(other))

    def __neg__(self):
        return scale(self, -1.0)

    def __mul__(self, other):
        if isinstance(other, Node):
            if other.shape == (1, 1) and self.shape != (1, 1):
                return smul(self, other)
            if self.shape == (1, 1) and other.shape != (1, 1):
                return smul(other, self)
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Node):
            return self * power(other, -1.0)
        return scale(self, 1.0 / float(other))

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


# ---------------------------------------------------------------------------
# constructors

def const(value) -> Node:
    value = np.atleast_2d(np.asarray(value, dtype=np.float64))
    if value.ndim != 2:
        raise ShapeError("constants must be 2-D")
    value = value.copy()
    value.flags.writeable = False
    return Node("const", (), value.shape, value)


def var(name: str, shape) -> Node:
    return Node("var", (), shape, name)


def zeros(shape) -> Node:
    return const(np.zeros(shape))


def ones(shape) -> Node:
    return const(np.ones(shape))


def _same(a, b, op):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


def matmul(a, b):
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dims {a.shape} @ {b.shape}")
    return Node("matmul", (a, b), (a.shape[0], b.shape[1]))


def add(a, b):
    _same(a, b, "add")
    return Node("add", (a, b), a.shape)


def mul(a, b):
    _same(a, b, "mul")
    return Node("mul", (a, b), a.shape)


def scale(a, c: float):
    return Node("scale", (a,), a.shape, float(c))


def addc(a, c: float):
    return Node("addc", (a,), a.shape, float(c))


def smul(a, s):
    """Multiply every entry of ``a`` by the 1x1 expression ``s``."""
    if s.shape != (1, 1):
        raise ShapeError(f"smul: scalar operand has shape {s.shape}")
    return Node("smul", (a, s), a.shape)


def sigmoid(a):
    return Node("sigmoid", (a,), a.shape)


def relu(a):
    return Node("relu", (a,), a.shape)


def step(a):
    """Indicator of ``a > 0``; derivative of relu, with zero derivative itself."""
    return Node("step", (a,), a.shape)


def exp(a):
    return Node("exp", (a,), a.shape)


def log(a):
    return Node("log", (a,), a.shape)


def power(a, p: float):
    return Node("pow", (a,), a.shape, float(p))


def transpose(a):
    return Node("transpose", (a,), (a.shape[1], a.shape[0]))


def row_sum(a):
    return Node("row_sum", (a,), (a.shape[0], 1))


def row_mean(a):
    return Node("row_mean", (a,), (a.shape[0], 1))


def col_sum(a):
    """``1^T a``: sum over rows, giving a 1 x cols row vector."""
    return Node("col_sum", (a,), (1, a.shape[1]))


def total(a):
    return Node("sum", (a,), (1, 1))


def frob_sq(a):
    return Node("frob_sq", (a,), (1, 1))


def reshape(a, shape):
    shape = tuple(shape)
    if np.prod(shape) != np.prod(a.shape):
        raise ShapeError(f"reshape: {a.shape} -> {shape}")
    return Node("reshape", (a,), shape)


def softmax(a):
    """Row-wise softmax."""
    return Node("softmax", (a,), a.shape)


def softmax_cross_entropy(logits, onehot):
    """Mean over rows of the cross-entropy between softmax(logits) and one-hot targets."""
    onehot = np.asarray(onehot, dtype=np.float64)
    if onehot.shape != logits.shape:
        raise ShapeError(f"cross-entropy: targets {onehot.shape} vs logits {logits.shape}")
    onehot = onehot.copy()
    onehot.flags.writeable = False
    return Node("xent", (logits,), (1, 1), onehot)


def spmm(matrix, a):
    """Constant (possibly sparse) matrix times expression."""
    if sp.issparse(matrix):
        matrix = sp.csr_matrix(matrix, dtype=np.float64)
    else:
        matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[1] != a.shape[0]:
        raise ShapeError(f"spmm: {matrix.shape} @ {a.shape}")
    return Node("spmm", (a,), (matrix.shape[0], a.shape[1]), matrix)


# ---------------------------------------------------------------------------
# forward rules

def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _xent(z, y):
    z = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    return np.array([[float(-(y * (z - lse)).sum() / z.shape[0])]])


_FORWARD = {
    "matmul": lambda n, a, b: a @ b,
    "add": lambda n, a, b: a + b,
    "mul": lambda n, a, b: a * b,
    "scale": lambda n, a: a * n.attr,
    "addc": lambda n, a: a + n.attr,
    "smul": lambda n, a, s: a * s[0, 0],
    "sigmoid": lambda n, a: _sigmoid(a),
    "relu": lambda n, a: np.maximum(a, 0.0),
    "step": lambda n, a: (a > 0).astype(np.float64),
    "exp": lambda n, a: np.exp(a),
    "log": lambda n, a: np.log(a),
    "pow": lambda n, a: np.power(a, n.attr),
    "transpose": lambda n, a: a.T,
    "row_sum": lambda n, a: a.sum(axis=1, keepdims=True),
    "row_mean": lambda n, a: a.mean(axis=1, keepdims=True),
    "col_sum": lambda n, a: a.sum(axis=0, keepdims=True),
    "sum": lambda n, a: np.array([[a.sum()]]),
    "frob_sq": lambda n, a: np.array([[np.vdot(a, a)]]),
    "reshape": lambda n, a: a.reshape(n.shape),
    "softmax": lambda n, a: _softmax(a),
    "xent": lambda n, a: _xent(a, n.attr),
    "spmm": lambda n, a: np.asarray(n.attr @ a),
}


def topological_order(outputs) -> list:
    order, seen = [], set()
    stack = [(o, False) for o in reversed(outputs)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if node.id in seen:
            continue
        seen.add(node.id)
        stack.append((node, True))
        for i in reversed(node.inputs):
            if i.id not in seen:
                stack.append((i, False))
    return order


class Program:
    """A fixed list of output expressions with a precomputed evaluation order."""

    def __init__(self, outputs):
        self.outputs = list(outputs)
        self.order = topological_order(self.outputs)
        self.variables = {n.attr: n.shape for n in self.order if n.op == "var"}

    def __call__(self, binding) -> list:
        values = {}
        for node in self.order:
            if node.op == "const":
                val = node.attr
            elif node.op == "var":
                try:
                    val = binding[node.attr]
                except KeyError:
                    raise UnboundVariable(node.attr) from None
                if np.shape(val) != node.shape:
                    raise ShapeError(f"variable {node.attr!r} bound with shape {np.shape(val)}, "
                                     f"expected {node.shape}")
            else:
                val = _FORWARD[node.op](node, *(values[i.id] for i in node.inputs))
            values[node.id] = val
        return [values[o.id] for o in self.outputs]


def evaluate(node, binding):
    """Value of one expression (or a list of expressions) under ``binding``."""
    if isinstance(node, Node):
        return Program([node])(binding)[0]
    return Program(node)(binding)


# ---------------------------------------------------------------------------
# reverse rules; every rule is written in the primitive set above

def _vjp(node, g):
    op, ins = node.op, node.inputs
    if op == "matmul":
        a, b = ins
        return matmul(g, transpose(b)), matmul(transpose(a), g)
    if op == "add":
        return g, g
    if op == "mul":
        a, b = ins
        return mul(g, b), mul(g, a)
    if op == "scale":
        return (scale(g, node.attr),)
    if op == "addc":
        return (g,)
    if op == "smul":
        a, s = ins
        return smul(g, s), total(mul(g, a))
    if op == "sigmoid":
        (a,) = ins
        return (mul(g, mul(node, sigmoid(scale(a, -1.0)))),)
    if op == "relu":
        return (mul(g, step(ins[0])),)
    if op == "step":
        return (None,)
    if op == "exp":
        return (mul(g, node),)
    if op == "log":
        return (mul(g, power(ins[0], -1.0)),)
    if op == "pow":
        p = node.attr
        if p == 1.0:
            return (g,)
        return (mul(g, scale(power(ins[0], p - 1.0), p)),)
    if op == "transpose":
        return (transpose(g),)
    if op == "row_sum":
        return (matmul(g, ones((1, ins[0].shape[1]))),)
    if op == "row_mean":
        m = ins[0].shape[1]
        return (matmul(scale(g, 1.0 / m), ones((1, m))),)
    if op == "col_sum":
        return (matmul(ones((ins[0].shape[0], 1)), g),)
    if op == "sum":
        return (smul(ones(ins[0].shape), g),)
    if op == "frob_sq":
        return (smul(scale(ins[0], 2.0), g),)
    if op == "reshape":
        return (reshape(g, ins[0].shape),)
    if op == "softmax":
        c = node.shape[1]
        inner = matmul(row_sum(mul(g, node)), ones((1, c)))
        return (mul(node, add(g, scale(inner, -1.0))),)
    if op == "xent":
        (z,) = ins
        resid = add(softmax(z), const(-node.attr))
        return (smul(scale(resid, 1.0 / z.shape[0]), g),)
    if op == "spmm":
        mt = node.attr.T
        return (spmm(mt.tocsr() if sp.issparse(mt) else mt, g),)
    raise NotImplementedError(op)


def gradient(output, wrt) -> list:
    """Gradient expressions of a 1x1 expression with respect to ``wrt`` nodes.

    Variables that ``output`` does not depend on get a zero constant.
    """
    if output.shape != (1, 1):
        raise ShapeError(f"gradient needs a scalar output, got shape {output.shape}")
    order = topological_order([output])
    adj = {output.id: ones((1, 1))}
    for node in reversed(order):
        g = adj.pop(node.id, None)
        if g is None or not node.inputs:
            if g is not None:
                adj[node.id] = g
            continue
        for inp, gi in zip(node.inputs, _vjp(node, g)):
            if gi is None:
                continue
            prev = adj.get(inp.id)
            adj[inp.id] = gi if prev is None else add(prev, gi)
    return [adj.get(w.id, zeros(w.shape)) for w in wrt]


def finite_diff_check(output, variable, binding, h: float = 1e-5) -> float:
    """Max relative error between the analytic gradient and central differences.

    The error per entry is ``|analytic - numeric| / max(1, |analytic|)``.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    (g,) = gradient(output, [variable])
    analytic = evaluate(g, binding)
    prog = Program([output])
    name = variable.attr
    base = np.array(binding[name], dtype=np.float64)
    numeric = np.zeros_like(base)
    b = dict(binding)
    for idx in np.ndindex(base.shape):
        up = base.copy()
        up[idx] += h
        b[name] = up
        f_up = prog(b)[0][0, 0]
        dn = base.copy()
        dn[idx] -= h
        b[name] = dn
        f_dn = prog(b)[0][0, 0]
        numeric[idx] = (f_up - f_dn) / (2 * h)
    if not (np.all(np.isfinite(analytic)) and np.all(np.isfinite(numeric))):
        raise FloatingPointError("non-finite value in finite-difference check")
    return float(np.max(np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))))
