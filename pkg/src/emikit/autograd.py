"""Dense float64 tensors with tape-based reverse-mode automatic differentiation.

Every operation records a backward rule on the output tensor whenever at
least one input has requires_grad set, so a forward pass implicitly builds
the tape that backward() later walks in reverse topological order.
Gradients accumulate by summation when a tensor feeds several consumers.
All data is row-major numpy float64; broadcasting is supported only to the
extent the pipeline needs it (bias rows, per-row scalars).
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class AutogradError(RuntimeError):
    """Raised on invalid tape usage (non-scalar loss, reuse, detached loss)."""


def _unbroadcast(target_shape, g):
    # collapse broadcasted axes of g by summation so it matches target_shape
    while g.ndim > len(target_shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(target_shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_grad_fn", "_done")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._grad_fn = None
        self._done = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data.copy())

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # operators delegate to the module-level ops
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

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)


class GradTape:
    """Record of one backward pass: nodes in topological order plus the
    gradient map keyed by tensor id."""

    def __init__(self, nodes, gradients):
        self.nodes = nodes
        self.gradients = gradients

    def gradient_for(self, tensor):
        return self.gradients.get(id(tensor))


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


_grad_enabled = True


class no_grad:
    """Context manager that disables tape recording (cheap evaluation)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def _make(data, parents, grad_fn):
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._grad_fn = grad_fn
    return out


def uniform_param(rng, shape, fan_in=None, requires_grad=True):
    """Parameter factory: uniform(-1/sqrt(fan_in), +1/sqrt(fan_in))."""
    if fan_in is None:
        fan_in = shape[0] if len(shape) > 1 else max(shape[0], 1)
    limit = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-limit, limit, size=shape), requires_grad=requires_grad)


def backward(loss):
    """Run reverse-mode accumulation from a scalar loss.

    Fills .grad on every requires_grad leaf reachable from the loss and
    returns the GradTape. A second call on the same loss without rebuilding
    the graph raises AutogradError.
    """
    if loss.size != 1:
        raise AutogradError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise AutogradError("loss is detached from the graph; nothing to differentiate")
    if loss._done:
        raise AutogradError("backward already ran for this loss; rebuild the graph first")
    loss._done = True

    # iterative postorder: parents precede consumers
    topo = []
    visited = set()
    stack = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))

    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topo):
        g = grads.get(id(node))
        if g is None or node._grad_fn is None:
            continue
        for parent, pg in zip(node._parents, node._grad_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            acc = grads.get(id(parent))
            grads[id(parent)] = pg if acc is None else acc + pg

    for node in topo:
        if node._grad_fn is None and node.requires_grad:
            g = grads.get(id(node))
            if g is not None:
                node.grad = g if node.grad is None else node.grad + g
    return GradTape(topo, grads)


def zero_grads(params):
    for _, p in params:
        p.grad = None


# ---------------------------------------------------------------------------
# elementwise binary ops (with unbroadcast on the backward path)

def _broadcast_check(name, a, b):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{name}: shapes {a.shape} and {b.shape} do not broadcast") from None


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_check("add", a, b)

    def grad_fn(g):
        return _unbroadcast(a.shape, g), _unbroadcast(b.shape, g)

    return _make(a.data + b.data, (a, b), grad_fn)


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_check("sub", a, b)

    def grad_fn(g):
        return _unbroadcast(a.shape, g), _unbroadcast(b.shape, -g)

    return _make(a.data - b.data, (a, b), grad_fn)


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_check("mul", a, b)

    def grad_fn(g):
        return _unbroadcast(a.shape, g * b.data), _unbroadcast(b.shape, g * a.data)

    return _make(a.data * b.data, (a, b), grad_fn)


def div(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_check("div", a, b)

    def grad_fn(g):
        ga = _unbroadcast(a.shape, g / b.data)
        gb = _unbroadcast(b.shape, -g * a.data / (b.data * b.data))
        return ga, gb

    return _make(a.data / b.data, (a, b), grad_fn)


def neg(a):
    a = _as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,))


def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions disagree: {a.shape} @ {b.shape}")

    def grad_fn(g):
        return g @ b.data.T, a.data.T @ g

    return _make(a.data @ b.data, (a, b), grad_fn)


# ---------------------------------------------------------------------------
# elementwise unary ops

def exp(a):
    a = _as_tensor(a)
    out_data = np.exp(a.data)
    return _make(out_data, (a,), lambda g: (g * out_data,))


def log(a):
    a = _as_tensor(a)
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a):
    a = _as_tensor(a)
    out_data = np.sqrt(a.data)
    return _make(out_data, (a,), lambda g: (g / (2.0 * out_data),))


def tanh(a):
    a = _as_tensor(a)
    out_data = np.tanh(a.data)
    return _make(out_data, (a,), lambda g: (g * (1.0 - out_data * out_data),))


def sigmoid(a):
    a = _as_tensor(a)
    x = a.data
    out_data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                        np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    return _make(out_data, (a,), lambda g: (g * out_data * (1.0 - out_data),))


def relu(a):
    a = _as_tensor(a)
    mask = a.data > 0
    return _make(a.data * mask, (a,), lambda g: (g * mask,))


# ---------------------------------------------------------------------------
# shape / indexing ops

def getitem(a, idx):
    a = _as_tensor(a)
    out_data = a.data[idx]

    def grad_fn(g):
        gx = np.zeros_like(a.data)
        if isinstance(idx, (list, np.ndarray)) or (
            isinstance(idx, tuple) and any(isinstance(i, (list, np.ndarray)) for i in idx)
        ):
            np.add.at(gx, idx, g)  # repeated indices must accumulate
        else:
            gx[idx] += g
        return (gx,)

    return _make(out_data, (a,), grad_fn)


def take_rows(a, indices):
    """Row gather with gradient accumulation on repeats."""
    return getitem(a, np.asarray(indices, dtype=np.intp))


def transpose(a):
    a = _as_tensor(a)
    if a.ndim != 2:
        raise ShapeError(f"transpose expects a 2-d tensor, got shape {a.shape}")
    return _make(a.data.T.copy(), (a,), lambda g: (g.T,))


def reshape(a, shape):
    a = _as_tensor(a)
    old = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def concat(tensors, axis=0):
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat of an empty list")
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def grad_fn(g):
        pieces = []
        for i in range(len(tensors)):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(offsets[i], offsets[i + 1])
            pieces.append(g[tuple(sl)])
        return tuple(pieces)

    return _make(out_data, tuple(tensors), grad_fn)


def shift_rows(a, offset):
    """out[t] = a[t - offset], zero rows at the start (offset >= 0)."""
    a = _as_tensor(a)
    if offset < 0:
        raise ShapeError("shift_rows needs a non-negative offset")
    n = a.shape[0]
    out_data = np.zeros_like(a.data)
    if offset < n:
        out_data[offset:] = a.data[: n - offset]

    def grad_fn(g):
        gx = np.zeros_like(a.data)
        if offset < n:
            gx[: n - offset] = g[offset:]
        return (gx,)

    return _make(out_data, (a,), grad_fn)


def flip_rows(a):
    a = _as_tensor(a)
    return _make(a.data[::-1].copy(), (a,), lambda g: (g[::-1],))


# ---------------------------------------------------------------------------
# reductions

def _restore_axis(g, axis, keepdims):
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return g


def sum(a, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy naming
    a = _as_tensor(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def grad_fn(g):
        g = _restore_axis(np.asarray(g), axis, keepdims)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(out_data, (a,), grad_fn)


def mean(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    out_data = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.size if axis is None else a.shape[axis]

    def grad_fn(g):
        g = _restore_axis(np.asarray(g), axis, keepdims)
        return (np.broadcast_to(g / count, a.shape).copy(),)

    return _make(out_data, (a,), grad_fn)


# ---------------------------------------------------------------------------
# composite ops used across the pipeline

def softmax_rows(x):
    """Softmax over the trailing axis, stabilized by max subtraction."""
    x = _as_tensor(x)
    m = Tensor(np.max(x.data, axis=-1, keepdims=True))  # constant shift
    e = exp(sub(x, m))
    return div(e, sum(e, axis=-1, keepdims=True))


def l2norm_rows(x, eps=1e-12):
    """Rows scaled to unit Euclidean norm."""
    x = _as_tensor(x)
    n = sqrt(add(sum(mul(x, x), axis=-1, keepdims=True), Tensor(eps)))
    return div(x, n)


def dilated_conv1d(x, kernel, dilation, bias=None):
    """Causal 1-d convolution along rows.

    x: (T, C_in), kernel: (k, C_in, C_out). Output row t combines input rows
    at offsets {t, t-d, ..., t-(k-1)d} with zero padding on the left, so the
    output length equals the input length.
    """
    x, kernel = _as_tensor(x), _as_tensor(kernel)
    if dilation < 1:
        raise ValueError(f"dilation must be a positive integer, got {dilation}")
    if kernel.ndim != 3:
        raise ShapeError(f"kernel must be (k, C_in, C_out), got shape {kernel.shape}")
    if kernel.shape[0] < 1:
        raise ValueError("kernel width must be at least 1")
    if kernel.shape[1] != x.shape[1]:
        raise ShapeError(f"conv channel mismatch: input {x.shape} vs kernel {kernel.shape}")
    out = None
    for j in range(kernel.shape[0]):
        term = matmul(shift_rows(x, j * dilation), getitem(kernel, j))
        out = term if out is None else add(out, term)
    if bias is not None:
        out = add(out, bias)
    return out
