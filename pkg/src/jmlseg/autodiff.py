"""Reverse-mode differentiation over dense float64 arrays.

Expressions are built symbolically from :class:`Node` objects and evaluated
against a mapping of input names to arrays.  Every primitive is also callable
on plain arrays, in which case it simply returns the numeric result; the loss
functions in this package rely on that to share one formula between fast
vectorised evaluation and differentiable graphs.

Subgradient conventions: ``abs'(0) = 0``; reductions and pooling route the
gradient of a tied maximum to the lowest index; ``clamp`` passes the gradient
through where ``lo <= x <= hi``.
"""
from __future__ import annotations

from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "Node", "ExprGraph", "ShapeError", "UnboundInputError", "GraphError",
    "as_tensor", "input", "constant", "evaluate", "gradient", "value_and_grad",
    "finite_difference_check", "add", "sub", "mul", "div", "neg", "abs", "exp",
    "log", "power", "clamp", "sum", "mean", "flatten", "dot", "max", "softmax", "max_pool2d",
    "transpose", "reshape", "take", "detach", "lovasz_extension", "is_symbolic",
]


class GraphError(ValueError):
    """Raised for malformed graphs or invalid requests against a graph."""


class ShapeError(GraphError):
    """Operand shapes are inconsistent for the node that consumes them."""


class UnboundInputError(GraphError, KeyError):
    """An input node has no value in the supplied bindings."""

    def __str__(self):
        return str(self.args[0]) if self.args else "unbound input"


def as_tensor(value) -> np.ndarray:
    """Convert ``value`` to a float64 array, rejecting NaN and Inf."""
    arr = np.asarray(value, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError("tensor contains non-finite values")
    return arr


class Node:
    """One operation in an expression graph.

    Nodes are immutable once built and hold no values; values live only in
    the per-call caches of :func:`evaluate` and :func:`gradient`.
    """

    __slots__ = ("op", "inputs", "attrs", "name")
    __array_priority__ = 1000

    def __init__(self, op: str, inputs: Sequence["Node"] = (), attrs: dict | None = None,
                 name: str | None = None):
        self.op = op
        self.inputs = tuple(inputs)
        self.attrs = attrs or {}
        self.name = name

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"<Node {self.op}{label}>"

    def describe(self) -> str:
        return f"{self.op}({self.name})" if self.name else self.op

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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return dot(self, other)

    def __rmatmul__(self, other):
        return dot(other, self)

    @property
    def T(self):
        return transpose(self)


def is_symbolic(*values) -> bool:
    return any(isinstance(v, Node) for v in values)


def input(name: str) -> Node:  # noqa: A001 - mirrors the graph vocabulary
    """Declare a named graph input."""
    return Node("input", name=name)


def constant(value, name: str | None = None) -> Node:
    return Node("constant", attrs={"value": as_tensor(value)}, name=name)


def _lift(value) -> Node:
    return value if isinstance(value, Node) else constant(value)


# ---------------------------------------------------------------------------
# primitive registry

_FORWARD: dict[str, Callable] = {}
_BACKWARD: dict[str, Callable] = {}


def _primitive(op, forward, backward):
    _FORWARD[op] = forward
    _BACKWARD[op] = backward


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _make(op, *operands, **attrs):
    if is_symbolic(*operands):
        return Node(op, [_lift(o) for o in operands], attrs)
    return _FORWARD[op](attrs, *[np.asarray(o, dtype=np.float64) for o in operands])


def add(a, b):
    return _make("add", a, b)


def sub(a, b):
    return _make("sub", a, b)


def mul(a, b):
    return _make("mul", a, b)


def div(a, b):
    return _make("div", a, b)


def neg(a):
    return _make("neg", a)


def abs(a):  # noqa: A001
    return _make("abs", a)


def exp(a):
    return _make("exp", a)


def log(a):
    return _make("log", a)


def power(a, exponent: float):
    return _make("pow", a, exponent=float(exponent))


def clamp(a, lo: float = -np.inf, hi: float = np.inf):
    return _make("clamp", a, lo=float(lo), hi=float(hi))


def sum(a, axis=None, keepdims: bool = False):  # noqa: A001
    return _make("sum", a, axis=axis, keepdims=keepdims)


def dot(a, b):
    """Inner product of vectors, matrix-vector or matrix-matrix product."""
    return _make("dot", a, b)


def mean(a, axis=None):
    return _make("mean", a, axis=axis)


def flatten(a, start: int = 0):
    """Merge axes ``start..end`` into one trailing axis."""
    return _make("flatten", a, start=int(start))


def max(a, axis: int | None = None):  # noqa: A001
    return _make("max", a, axis=axis)


def softmax(a, axis: int = -1):
    return _make("softmax", a, axis=axis)


def max_pool2d(a, k: int):
    """Stride-1 max pooling over the last two axes with replicate padding."""
    if k < 1 or k % 2 == 0:
        raise ValueError(f"pooling kernel must be odd and >= 1, got {k}")
    return _make("max_pool2d", a, k=int(k))


def transpose(a, axes: Sequence[int] | None = None):
    return _make("transpose", a, axes=None if axes is None else tuple(axes))


def reshape(a, shape: Sequence[int]):
    return _make("reshape", a, shape=tuple(shape))


def take(a, indices, axis: int = 0):
    return _make("take", a, indices=np.asarray(indices, dtype=np.intp), axis=axis)


def detach(a):
    """Identity whose gradient is zero."""
    return _make("detach", a)


def lovasz_extension(errors, labels):
    """Lovasz extension of the Jaccard loss along the last axis.

    ``labels`` is a constant binary array; the per-element weights derived
    from the sort order are treated as constants when differentiating.
    """
    labels = np.asarray(labels, dtype=np.float64)
    return _make("lovasz", errors, labels=labels)


# --- elementwise -----------------------------------------------------------

_primitive("add", lambda at, a, b: a + b,
           lambda at, g, out, a, b: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))
_primitive("sub", lambda at, a, b: a - b,
           lambda at, g, out, a, b: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))
_primitive("mul", lambda at, a, b: a * b,
           lambda at, g, out, a, b: (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)))
_primitive("div", lambda at, a, b: a / b,
           lambda at, g, out, a, b: (_unbroadcast(g / b, a.shape),
                                     _unbroadcast(-g * a / (b * b), b.shape)))
_primitive("neg", lambda at, a: -a, lambda at, g, out, a: (-g,))
_primitive("abs", lambda at, a: np.abs(a), lambda at, g, out, a: (g * np.sign(a),))
_primitive("exp", lambda at, a: np.exp(a), lambda at, g, out, a: (g * out,))
_primitive("log", lambda at, a: np.log(a), lambda at, g, out, a: (g / a,))
_primitive("pow", lambda at, a: np.power(a, at["exponent"]),
           lambda at, g, out, a: (g * at["exponent"] * np.power(a, at["exponent"] - 1.0),))
_primitive("clamp", lambda at, a: np.clip(a, at["lo"], at["hi"]),
           lambda at, g, out, a: (g * ((a >= at["lo"]) & (a <= at["hi"])),))
_primitive("detach", lambda at, a: a.copy(), lambda at, g, out, a: (None,))


# --- reductions ------------------------------------------------------------

def _sum_backward(at, g, out, a):
    axis = at["axis"]
    if axis is not None and not at["keepdims"]:
        g = np.expand_dims(g, axis)
    return (np.broadcast_to(g, a.shape).copy(),)


_primitive("sum", lambda at, a: np.sum(a, axis=at["axis"], keepdims=at["keepdims"]), _sum_backward)


def _mean_backward(at, g, out, a):
    axis = at["axis"]
    n = a.size if axis is None else a.shape[axis]
    if axis is not None:
        g = np.expand_dims(g, axis)
    return (np.broadcast_to(g / n, a.shape).copy(),)


_primitive("mean", lambda at, a: np.mean(a, axis=at["axis"]), _mean_backward)


def _max_backward(at, g, out, a):
    axis = at["axis"]
    grad = np.zeros_like(a)
    if axis is None:
        grad.flat[np.argmax(a)] = g
        return (grad,)
    idx = np.expand_dims(np.argmax(a, axis=axis), axis)
    np.put_along_axis(grad, idx, np.expand_dims(g, axis), axis=axis)
    return (grad,)


_primitive("max", lambda at, a: np.max(a, axis=at["axis"]), _max_backward)


def _softmax_forward(at, a):
    shifted = a - np.max(a, axis=at["axis"], keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=at["axis"], keepdims=True)


def _softmax_backward(at, g, out, a):
    return (out * (g - np.sum(g * out, axis=at["axis"], keepdims=True)),)


_primitive("softmax", _softmax_forward, _softmax_backward)


# --- linear algebra and layout ----------------------------------------------

def _dot_forward(at, a, b):
    if a.ndim not in (1, 2) or b.ndim not in (1, 2):
        raise ValueError(f"dot supports 1-D and 2-D operands, got {a.shape} and {b.shape}")
    return np.asarray(np.dot(a, b), dtype=np.float64)


def _dot_backward(at, g, out, a, b):
    if a.ndim == 1 and b.ndim == 1:
        return g * b, g * a
    if a.ndim == 2 and b.ndim == 1:
        return np.outer(g, b), a.T @ g
    if a.ndim == 1 and b.ndim == 2:
        return b @ g, np.outer(a, g)
    return g @ b.T, a.T @ g


_primitive("dot", _dot_forward, _dot_backward)


def _transpose_backward(at, g, out, a):
    axes = at["axes"]
    if axes is None:
        return (np.transpose(g),)
    return (np.transpose(g, np.argsort(axes)),)


_primitive("transpose", lambda at, a: np.transpose(a, at["axes"]), _transpose_backward)
_primitive("reshape", lambda at, a: np.reshape(a, at["shape"]),
           lambda at, g, out, a: (np.reshape(g, a.shape),))
_primitive("flatten", lambda at, a: np.reshape(a, a.shape[:at["start"]] + (-1,)),
           lambda at, g, out, a: (np.reshape(g, a.shape),))


def _take_backward(at, g, out, a):
    grad = np.zeros_like(a)
    moved = np.moveaxis(grad, at["axis"], 0)
    np.add.at(moved, at["indices"], np.moveaxis(g, at["axis"], 0))
    return (grad,)


_primitive("take", lambda at, a: np.take(a, at["indices"], axis=at["axis"]), _take_backward)


# --- pooling ---------------------------------------------------------------

def _pool_windows(a, k):
    r = k // 2
    pad = [(0, 0)] * (a.ndim - 2) + [(r, r), (r, r)]
    padded = np.pad(a, pad, mode="edge")
    win = np.lib.stride_tricks.sliding_window_view(padded, (k, k), axis=(-2, -1))
    return win.reshape(win.shape[:-2] + (k * k,))


def _pool_forward(at, a):
    if a.ndim < 2:
        raise ValueError(f"max_pool2d needs at least 2 axes, got shape {a.shape}")
    return _pool_windows(a, at["k"]).max(axis=-1)


def _pool_backward(at, g, out, a):
    k = at["k"]
    r = k // 2
    h, w = a.shape[-2:]
    arg = _pool_windows(a, k).argmax(axis=-1)
    # coordinates of the winning element in the padded frame, folded back by
    # clipping (replicate padding copies edge values)
    rows = np.arange(h).reshape(h, 1) + arg // k - r
    cols = np.arange(w).reshape(1, w) + arg % k - r
    rows = np.clip(rows, 0, h - 1)
    cols = np.clip(cols, 0, w - 1)
    grad = np.zeros(a.shape[:-2] + (h * w,))
    flat_idx = (rows * w + cols).reshape(a.shape[:-2] + (h * w,))
    lead = grad.reshape(-1, h * w)
    np.add.at(lead, (np.arange(lead.shape[0])[:, None], flat_idx.reshape(-1, h * w)),
              g.reshape(-1, h * w))
    return (lead.reshape(a.shape),)


_primitive("max_pool2d", _pool_forward, _pool_backward)


# --- Lovasz extension --------------------------------------------------------

def _lovasz_weights(errors: np.ndarray, labels: np.ndarray):
    """Sort order and Jaccard-loss increments for each row of ``errors``."""
    order = np.argsort(-errors, axis=-1, kind="stable")
    y_sorted = np.take_along_axis(labels, order, axis=-1)
    n_pos = labels.sum(axis=-1, keepdims=True)
    k = np.cumsum(np.ones_like(y_sorted), axis=-1)
    union = n_pos + np.cumsum(1.0 - y_sorted, axis=-1)
    jac = k / union
    return order, jac


def _lovasz_forward(at, errors):
    labels = np.broadcast_to(at["labels"], errors.shape)
    if errors.shape[-1] == 0:
        return np.zeros(errors.shape[:-1])
    order, jac = _lovasz_weights(errors, labels)
    m_sorted = np.take_along_axis(errors, order, axis=-1)
    # Abel summation: sum_i (m_i - m_{i+1}) * J_i equals sum_i m_i * g_i and
    # reproduces the hard Jaccard loss exactly for binary errors
    m_next = np.concatenate([m_sorted[..., 1:], np.zeros(m_sorted.shape[:-1] + (1,))], axis=-1)
    return np.sum((m_sorted - m_next) * jac, axis=-1)


def _lovasz_backward(at, g, out, errors):
    labels = np.broadcast_to(at["labels"], errors.shape)
    order, jac = _lovasz_weights(errors, labels)
    incr = np.diff(jac, axis=-1, prepend=0.0)
    grad = np.zeros_like(errors)
    np.put_along_axis(grad, order, incr, axis=-1)
    return (grad * np.expand_dims(g, -1),)


_primitive("lovasz", _lovasz_forward, _lovasz_backward)


# ---------------------------------------------------------------------------
# graphs

class ExprGraph:
    """A scalar- or tensor-valued expression rooted at ``root``.

    ``nodes`` lists every reachable node in topological order (operands
    before consumers); ``inputs`` maps input names to their nodes.
    """

    def __init__(self, root: Node):
        if not isinstance(root, Node):
            root = constant(root)
        self.root = root
        self.nodes = _toposort(root)
        self.inputs: dict[str, Node] = {}
        for node in self.nodes:
            if node.op == "input":
                other = self.inputs.get(node.name)
                if other is not None and other is not node:
                    raise GraphError(f"two distinct inputs share the name {node.name!r}")
                self.inputs[node.name] = node

    def __len__(self):
        return len(self.nodes)

    def __repr__(self):
        return f"ExprGraph({len(self.nodes)} nodes, inputs={sorted(self.inputs)})"


def _toposort(root: Node) -> list[Node]:
    order: list[Node] = []
    seen: set[int] = set()
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
        for child in reversed(node.inputs):
            if id(child) not in seen:
                stack.append((child, False))
    return order


def _as_graph(graph) -> ExprGraph:
    return graph if isinstance(graph, ExprGraph) else ExprGraph(graph)


def _forward(graph: ExprGraph, bindings: Mapping[str, object]) -> dict[int, np.ndarray]:
    values: dict[int, np.ndarray] = {}
    for node in graph.nodes:
        if node.op == "input":
            if node.name not in bindings:
                raise UnboundInputError(f"input {node.name!r} is not bound")
            values[id(node)] = as_tensor(bindings[node.name])
        elif node.op == "constant":
            values[id(node)] = node.attrs["value"]
        else:
            args = [values[id(i)] for i in node.inputs]
            try:
                with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
                    values[id(node)] = np.asarray(_FORWARD[node.op](node.attrs, *args),
                                                  dtype=np.float64)
            except ValueError as exc:
                shapes = ", ".join(str(a.shape) for a in args)
                raise ShapeError(f"node {node.describe()} rejected operands of shape "
                                 f"{shapes}: {exc}") from exc
    return values


def evaluate(graph, bindings: Mapping[str, object] | None = None) -> np.ndarray:
    """Value of the graph's root under ``bindings``."""
    graph = _as_graph(graph)
    return _forward(graph, bindings or {})[id(graph.root)]


def value_and_grad(graph, bindings: Mapping[str, object], wrt: str | Iterable[str]):
    """Root value and gradients with respect to one or several inputs.

    Returns ``(value, grad)`` where ``grad`` is an array when ``wrt`` is a
    single name and a dict keyed by name otherwise.
    """
    graph = _as_graph(graph)
    names = [wrt] if isinstance(wrt, str) else list(wrt)
    for name in names:
        if name not in bindings:
            raise UnboundInputError(f"gradient requested for unbound input {name!r}")
    values = _forward(graph, bindings)
    root_val = values[id(graph.root)]
    if root_val.size != 1:
        raise GraphError(f"gradient needs a scalar root, got shape {root_val.shape}")

    grads: dict[int, np.ndarray] = {id(graph.root): np.ones_like(root_val)}
    for node in reversed(graph.nodes):
        g = grads.get(id(node))
        if g is None or node.op in ("input", "constant"):
            continue
        args = [values[id(i)] for i in node.inputs]
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            parts = _BACKWARD[node.op](node.attrs, g, values[id(node)], *args)
        for child, part in zip(node.inputs, parts):
            if part is None:
                continue
            key = id(child)
            grads[key] = part if key not in grads else grads[key] + part

    out = {}
    for name in names:
        node = graph.inputs.get(name)
        shape = np.shape(values[id(node)]) if node is not None else np.shape(bindings[name])
        g = grads.get(id(node)) if node is not None else None
        out[name] = np.zeros(shape) if g is None else np.asarray(g).reshape(shape)
    value = root_val.reshape(())
    return (value, out[names[0]]) if isinstance(wrt, str) else (value, out)


def gradient(graph, bindings: Mapping[str, object], wrt: str | Iterable[str]):
    """Gradient of a scalar root with respect to the named input(s)."""
    return value_and_grad(graph, bindings, wrt)[1]


def finite_difference_check(graph, bindings: Mapping[str, object], wrt: str,
                            step: float = 1e-5) -> dict:
    """Compare the reverse-mode gradient with central differences.

    The relative error per coordinate uses the denominator
    ``max(|analytic|, |numeric|, 1e-8)``.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    graph = _as_graph(graph)
    analytic = np.asarray(gradient(graph, bindings, wrt), dtype=np.float64)
    base = as_tensor(bindings[wrt])
    numeric = np.zeros_like(base)
    trial = dict(bindings)
    flat = base.reshape(-1)
    for i in range(flat.size):
        plus = flat.copy()
        minus = flat.copy()
        plus[i] += step
        minus[i] -= step
        trial[wrt] = plus.reshape(base.shape)
        f_plus = float(evaluate(graph, trial))
        trial[wrt] = minus.reshape(base.shape)
        f_minus = float(evaluate(graph, trial))
        numeric.reshape(-1)[i] = (f_plus - f_minus) / (2.0 * step)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    rel = np.abs(analytic - numeric) / denom
    return {
        "analytic": analytic,
        "numeric": numeric,
        "relative_error": rel,
        "max_relative_error": float(rel.max()) if rel.size else 0.0,
    }
