"""Reverse-mode autodiff over dense 2-D float64 arrays.

Every value is a ``Node`` wrapping a 2-D ``numpy`` array. Ops build a graph of
parent references as they run; ``backward`` walks that graph in reverse
topological order. Nothing here is thread-safe: keep a graph on one thread.
"""

import numpy as np

from gcad.errors import ShapeError

COSINE_EPS = 1e-12


class Node:
    """A value in the autodiff graph.

    ``grad`` has the same shape as ``value`` and starts at zero. Leaf nodes
    (parameters, inputs) accumulate gradient across ``backward`` calls;
    interior nodes are reset on each call.
    """

    __slots__ = ("value", "grad", "parents", "op", "requires_grad", "_backward")

    def __init__(self, value, parents=(), op="leaf", requires_grad=False, backward=None):
        value = np.asarray(value, dtype=np.float64)
        if value.ndim == 0:
            value = value.reshape(1, 1)
        elif value.ndim == 1:
            value = value.reshape(1, -1)
        elif value.ndim != 2:
            raise ShapeError(op, value.shape)
        self.value = value
        self.grad = np.zeros_like(value)
        self.parents = tuple(parents)
        self.op = op
        self.requires_grad = requires_grad or any(p.requires_grad for p in self.parents)
        self._backward = backward

    @property
    def shape(self):
        return self.value.shape

    def item(self):
        if self.value.size != 1:
            raise ShapeError("item", self.value.shape)
        return float(self.value[0, 0])

    def zero_grad(self):
        self.grad = np.zeros_like(self.value)

    def __repr__(self):
        return f"Node(op={self.op}, shape={self.shape})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


def param(value):
    """Leaf node that will receive gradients."""
    return Node(np.array(value, dtype=np.float64), requires_grad=True)


def const(value):
    """Leaf node that never receives gradients."""
    if isinstance(value, Node):
        return value
    return Node(value)


def _as_node(x):
    return x if isinstance(x, Node) else Node(x)


def _sum_to(grad, shape):
    """Reduce a broadcast gradient back to ``shape``."""
    if grad.shape == shape:
        return grad
    if shape[0] == 1 and grad.shape[0] != 1:
        grad = grad.sum(axis=0, keepdims=True)
    if shape[1] == 1 and grad.shape[1] != 1:
        grad = grad.sum(axis=1, keepdims=True)
    return grad


def _broadcast_shape(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


def _accumulate(node, g):
    if node.requires_grad:
        node.grad += _sum_to(g, node.shape)


# ----------------------------------------------------------------------------
# elementwise binary


def add(a, b):
    a, b = _as_node(a), _as_node(b)
    _broadcast_shape("add", a, b)

    def backward(g):
        _accumulate(a, g)
        _accumulate(b, g)

    return Node(a.value + b.value, (a, b), "add", backward=backward)


def sub(a, b):
    a, b = _as_node(a), _as_node(b)
    _broadcast_shape("sub", a, b)

    def backward(g):
        _accumulate(a, g)
        _accumulate(b, -g)

    return Node(a.value - b.value, (a, b), "sub", backward=backward)


def mul(a, b):
    """Hadamard product (with row/column broadcasting)."""
    a, b = _as_node(a), _as_node(b)
    _broadcast_shape("mul", a, b)

    def backward(g):
        _accumulate(a, g * b.value)
        _accumulate(b, g * a.value)

    return Node(a.value * b.value, (a, b), "mul", backward=backward)


def scale(a, c):
    a = _as_node(a)
    c = float(c)

    def backward(g):
        _accumulate(a, g * c)

    return Node(a.value * c, (a,), "scale", backward=backward)


def matmul(a, b):
    a, b = _as_node(a), _as_node(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)

    def backward(g):
        if a.requires_grad:
            a.grad += g @ b.value.T
        if b.requires_grad:
            b.grad += a.value.T @ g

    return Node(a.value @ b.value, (a, b), "matmul", backward=backward)


def transpose(a):
    a = _as_node(a)

    def backward(g):
        _accumulate(a, g.T)

    return Node(a.value.T.copy(), (a,), "transpose", backward=backward)


# ----------------------------------------------------------------------------
# concatenation and indexing


def concat_rows(nodes):
    """Stack nodes vertically; all must share a column count."""
    nodes = [_as_node(n) for n in nodes]
    cols = {n.shape[1] for n in nodes}
    if len(cols) != 1:
        raise ShapeError("concat_rows", *[n.shape for n in nodes])
    bounds = np.cumsum([0] + [n.shape[0] for n in nodes])

    def backward(g):
        for n, lo, hi in zip(nodes, bounds[:-1], bounds[1:]):
            _accumulate(n, g[lo:hi])

    return Node(np.vstack([n.value for n in nodes]), nodes, "concat_rows", backward=backward)


def concat_cols(nodes):
    """Stack nodes horizontally; all must share a row count."""
    nodes = [_as_node(n) for n in nodes]
    rows = {n.shape[0] for n in nodes}
    if len(rows) != 1:
        raise ShapeError("concat_cols", *[n.shape for n in nodes])
    bounds = np.cumsum([0] + [n.shape[1] for n in nodes])

    def backward(g):
        for n, lo, hi in zip(nodes, bounds[:-1], bounds[1:]):
            _accumulate(n, g[:, lo:hi])

    return Node(np.hstack([n.value for n in nodes]), nodes, "concat_cols", backward=backward)


def gather_rows(a, idx):
    a = _as_node(a)
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise ShapeError("gather_rows", a.shape, idx.shape)

    def backward(g):
        if a.requires_grad:
            np.add.at(a.grad, idx, g)

    return Node(a.value[idx], (a,), "gather_rows", backward=backward)


def scatter_symmetric(w, src, dst, n):
    """Build an n x n symmetric matrix with entries ``w`` at (src, dst) and (dst, src).

    ``w`` is E x 1; pairs must be off-diagonal and listed once.
    """
    w = _as_node(w)
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    if w.shape != (src.size, 1) or src.shape != dst.shape:
        raise ShapeError("scatter_symmetric", w.shape, src.shape)
    out = np.zeros((n, n))
    out[src, dst] = w.value[:, 0]
    out[dst, src] = w.value[:, 0]

    def backward(g):
        if w.requires_grad:
            w.grad += (g[src, dst] + g[dst, src])[:, None]

    return Node(out, (w,), "scatter_symmetric", backward=backward)


# ----------------------------------------------------------------------------
# elementwise unary


def _unary(a, value, local_grad, op):
    a = _as_node(a)

    def backward(g):
        _accumulate(a, g * local_grad())

    return Node(value, (a,), op, backward=backward)


def sigmoid(a):
    a = _as_node(a)
    x = a.value
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _unary(a, out, lambda: out * (1.0 - out), "sigmoid")


def relu(a):
    a = _as_node(a)
    out = np.maximum(a.value, 0.0)
    return _unary(a, out, lambda: (a.value > 0).astype(np.float64), "relu")


def tanh(a):
    a = _as_node(a)
    out = np.tanh(a.value)
    return _unary(a, out, lambda: 1.0 - out * out, "tanh")


def exp(a):
    a = _as_node(a)
    out = np.exp(a.value)
    return _unary(a, out, lambda: out, "exp")


def log(a):
    a = _as_node(a)
    if np.any(a.value <= 0):
        raise ValueError("log: non-positive input")
    return _unary(a, np.log(a.value), lambda: 1.0 / a.value, "log")


def clip(a, lo, hi):
    """Clamp to [lo, hi]; gradient is zero where clamping was active."""
    a = _as_node(a)
    out = np.clip(a.value, lo, hi)
    return _unary(a, out, lambda: ((a.value >= lo) & (a.value <= hi)).astype(np.float64), "clip")


def straight_through(hard, relaxed):
    """Forward emits ``hard``; backward hands the upstream gradient to ``relaxed`` unchanged."""
    relaxed = _as_node(relaxed)
    hard = np.asarray(hard, dtype=np.float64).reshape(relaxed.shape)

    def backward(g):
        _accumulate(relaxed, g)

    return Node(hard.copy(), (relaxed,), "straight_through", backward=backward)


# ----------------------------------------------------------------------------
# reductions


def _check_axis(axis):
    if axis not in (None, 0, 1):
        raise ValueError(f"axis must be None, 0 or 1, got {axis}")


def sum(a, axis=None):
    a = _as_node(a)
    _check_axis(axis)
    out = a.value.sum(axis=axis, keepdims=True) if axis is not None else np.array([[a.value.sum()]])

    def backward(g):
        _accumulate(a, np.broadcast_to(g, a.shape))

    return Node(out, (a,), "sum", backward=backward)


def mean(a, axis=None):
    a = _as_node(a)
    _check_axis(axis)
    count = a.value.size if axis is None else a.shape[axis]
    if count == 0:
        raise ShapeError("mean", a.shape)
    return scale(sum(a, axis), 1.0 / count)


def max(a, axis=None):
    """Max reduction; ties send the gradient to the first maximal entry."""
    a = _as_node(a)
    _check_axis(axis)
    if axis is None:
        flat = int(np.argmax(a.value))
        mask = np.zeros(a.shape)
        mask.flat[flat] = 1.0
        out = np.array([[a.value.flat[flat]]])
    else:
        arg = np.argmax(a.value, axis=axis)
        mask = np.zeros(a.shape)
        if axis == 0:
            mask[arg, np.arange(a.shape[1])] = 1.0
        else:
            mask[np.arange(a.shape[0]), arg] = 1.0
        out = a.value.max(axis=axis, keepdims=True)

    def backward(g):
        _accumulate(a, mask * g)

    return Node(out, (a,), "max", backward=backward)


def logsumexp(a, axis=1):
    """Stabilised log-sum-exp along ``axis``."""
    a = _as_node(a)
    if axis not in (0, 1):
        raise ValueError("logsumexp needs axis 0 or 1")
    shift = a.value.max(axis=axis, keepdims=True)
    e = np.exp(a.value - shift)
    s = e.sum(axis=axis, keepdims=True)
    out = shift + np.log(s)
    soft = e / s

    def backward(g):
        _accumulate(a, soft * g)

    return Node(out, (a,), "logsumexp", backward=backward)


def softmax(a, axis=1):
    """Softmax along ``axis`` (``axis=1`` is the row-softmax)."""
    a = _as_node(a)
    if axis not in (0, 1):
        raise ValueError("softmax needs axis 0 or 1")
    e = np.exp(a.value - a.value.max(axis=axis, keepdims=True))
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        _accumulate(a, out * (g - inner))

    return Node(out, (a,), "softmax", backward=backward)


def row_softmax(a):
    return softmax(a, axis=1)


# ----------------------------------------------------------------------------
# composite-but-primitive ops


def row_cosine(a, b):
    """Cosine similarity of each row of ``a`` with the matching row of ``b``.

    ``b`` may be a single 1 x D row broadcast against every row of ``a``.
    Rows with norm below ``COSINE_EPS`` give similarity 0 and no gradient.
    """
    a, b = _as_node(a), _as_node(b)
    if a.shape[1] != b.shape[1] or b.shape[0] not in (1, a.shape[0]):
        raise ShapeError("row_cosine", a.shape, b.shape)
    av, bv = a.value, np.broadcast_to(b.value, a.shape)
    na = np.linalg.norm(av, axis=1, keepdims=True)
    nb = np.linalg.norm(bv, axis=1, keepdims=True)
    ok = (na >= COSINE_EPS) & (nb >= COSINE_EPS)
    denom = np.where(ok, na * nb, 1.0)
    dot = (av * bv).sum(axis=1, keepdims=True)
    cos = np.where(ok, dot / denom, 0.0)

    def backward(g):
        g = np.where(ok, g, 0.0)
        safe_na = np.where(ok, na, 1.0)
        safe_nb = np.where(ok, nb, 1.0)
        if a.requires_grad:
            ga = g * (bv / denom - cos * av / safe_na**2)
            a.grad += ga
        if b.requires_grad:
            gb = g * (av / denom - cos * bv / safe_nb**2)
            _accumulate(b, gb)

    return Node(cos, (a, b), "row_cosine", backward=backward)


def standardize(a, eps=1e-5):
    """Zero-mean, unit-variance columns computed over the rows of ``a``."""
    a = _as_node(a)
    x = a.value
    mu = x.mean(axis=0, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=0, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def backward(g):
        if a.requires_grad:
            # batch-norm style gradient without affine parameters
            gm = g.mean(axis=0, keepdims=True)
            gx = (g * xhat).mean(axis=0, keepdims=True)
            a.grad += inv * (g - gm - xhat * gx)

    return Node(xhat, (a,), "standardize", backward=backward)


# ----------------------------------------------------------------------------
# backward pass


def _topo_order(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss):
    """Propagate d(loss)/d(node) into every reachable node's ``grad``.

    Leaf gradients accumulate across calls; call ``zero_grad`` to reset.
    """
    if loss.shape != (1, 1):
        raise ShapeError("backward", loss.shape)
    order = _topo_order(loss)
    for node in order:
        if node.parents:
            node.grad = np.zeros_like(node.value)
    if loss.parents:
        loss.grad = np.ones((1, 1))
    else:
        loss.grad += 1.0
    for node in reversed(order):
        if node._backward is not None and node.requires_grad:
            node._backward(node.grad)
