"""A small tape-based reverse-mode differentiator over float64 ndarrays.

Every differentiable operation is a *registered primitive*: a function that
computes its forward value with numpy and hands a backward closure to
:func:`make_node`. Building a node for an op name that was never registered
raises :class:`UnregisteredPrimitiveError`, so a graph can only ever contain
operations whose vector-Jacobian products are known (and tested).

Typical use::

    w = Parameter(np.array(3.0))
    (g,) = grad(lambda: mul(w, w), [w])   # -> 6.0
"""
from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np

PRIMITIVES: dict[str, Callable] = {}

_grad_enabled = True


class UnregisteredPrimitiveError(ValueError):
    pass


def register_primitive(name: str):
    """Decorator registering ``fn`` as the primitive ``name``."""

    def deco(fn):
        if name in PRIMITIVES and PRIMITIVES[name] is not fn:
            raise ValueError(f"primitive {name!r} already registered")
        PRIMITIVES[name] = fn
        fn.primitive_name = name
        return fn

    return deco


@contextlib.contextmanager
def no_grad():
    """Evaluate primitives without recording the tape."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """Dense float64 array plus (optionally) its place on the tape."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = None
        self._parents: tuple = ()
        self._backward = None
        self.op = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self.op})"

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

    def __getitem__(self, idx):
        return getitem(self, idx)

    def backward(self, seed=None) -> None:
        """Accumulate d(self)/d(leaf) into every ``Parameter`` reachable from self.

        ``seed`` defaults to 1 and must otherwise match ``self.shape``.
        """
        if seed is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed needs a scalar output")
            seed = np.ones_like(self.data)
        seed = np.asarray(seed, dtype=np.float64)
        if seed.shape != self.data.shape:
            raise ValueError(f"seed shape {seed.shape} != output shape {self.data.shape}")
        order = _topological(self)
        grads = {id(self): seed}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if isinstance(node, Parameter):
                node.grad += g
            if node._backward is None:
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg


class Parameter(Tensor):
    """A trainable leaf. ``grad`` has the value's shape and is reset by :meth:`zero_grad`."""

    __slots__ = ("name",)

    def __init__(self, data, name: str = ""):
        super().__init__(np.array(data, dtype=np.float64), requires_grad=True)
        self.name = name
        self.grad = np.zeros_like(self.data)

    @property
    def value(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)


def _topological(root: Tensor) -> list:
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


def make_node(op: str, data, parents: Sequence[Tensor], backward) -> Tensor:
    """Wrap a primitive's forward value; refuses op names that are not registered."""
    if op not in PRIMITIVES:
        raise UnregisteredPrimitiveError(f"operation {op!r} is not a registered primitive")
    out = Tensor(data)
    out.op = op
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == tuple(shape):
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# ---------------------------------------------------------------- elementwise


@register_primitive("add")
def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return make_node("add", a.data + b.data, (a, b),
                     lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


@register_primitive("sub")
def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return make_node("sub", a.data - b.data, (a, b),
                     lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


@register_primitive("mul")
def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return make_node("mul", a.data * b.data, (a, b),
                     lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


@register_primitive("neg")
def neg(a) -> Tensor:
    a = as_tensor(a)
    return make_node("neg", -a.data, (a,), lambda g: (-g,))


@register_primitive("exp")
def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return make_node("exp", out, (a,), lambda g: (g * out,))


@register_primitive("log")
def log(a) -> Tensor:
    a = as_tensor(a)
    return make_node("log", np.log(a.data), (a,), lambda g: (g / a.data,))


@register_primitive("tanh")
def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return make_node("tanh", out, (a,), lambda g: (g * (1.0 - out * out),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


@register_primitive("sigmoid")
def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _sigmoid(a.data)
    return make_node("sigmoid", out, (a,), lambda g: (g * out * (1.0 - out),))


@register_primitive("swish")
def swish(a) -> Tensor:
    """x * sigmoid(x)."""
    a = as_tensor(a)
    s = _sigmoid(a.data)
    out = a.data * s
    return make_node("swish", out, (a,), lambda g: (g * (s + out * (1.0 - s)),))


@register_primitive("glu")
def glu(a, axis: int = -1) -> Tensor:
    """Gated linear unit: first half times sigmoid of the second half along ``axis``."""
    a = as_tensor(a)
    x, gate = np.split(a.data, 2, axis=axis)
    s = _sigmoid(gate)
    out = x * s

    def back(g):
        return (np.concatenate([g * s, g * x * s * (1.0 - s)], axis=axis),)

    return make_node("glu", out, (a,), back)


# ---------------------------------------------------------------- reductions / shape


@register_primitive("sum")
def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001 - mirrors numpy
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return make_node("sum", out, (a,), back)


@register_primitive("mean")
def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.mean(axis=axis, keepdims=keepdims)
    n = a.data.size // max(out.size, 1)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, a.shape).copy(),)

    return make_node("mean", out, (a,), back)


@register_primitive("reshape")
def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return make_node("reshape", a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


@register_primitive("transpose")
def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    inv = np.argsort(axes)
    return make_node("transpose", a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


@register_primitive("getitem")
def getitem(a, idx) -> Tensor:
    a = as_tensor(a)

    parts = idx if isinstance(idx, tuple) else (idx,)
    basic = all(isinstance(i, (slice, int)) or i is Ellipsis or i is None for i in parts)

    def back(g):
        out = np.zeros_like(a.data)
        if basic:
            out[idx] = g  # basic indexing never repeats an element
        else:
            np.add.at(out, idx, g)
        return (out,)

    return make_node("getitem", a.data[idx], (a,), back)


@register_primitive("stack")
def stack(tensors, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in ts], axis=axis)

    def back(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(ts)))

    return make_node("stack", out, ts, back)


@register_primitive("concat")
def concat(tensors, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in ts], axis=axis)
    cuts = np.cumsum([t.shape[axis] for t in ts])[:-1]
    return make_node("concat", out, ts, lambda g: tuple(np.split(g, cuts, axis=axis)))


@register_primitive("embedding")
def embedding(table, ids) -> Tensor:
    """Row gather ``table[ids]``."""
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)

    def back(g):
        out = np.zeros_like(table.data)
        np.add.at(out, ids, g)
        return (out,)

    return make_node("embedding", table.data[ids], (table,), back)


# ---------------------------------------------------------------- linear algebra


@register_primitive("matmul")
def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul operands must be at least 2-D")
    out = np.matmul(a.data, b.data)

    def back(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        if b.ndim == 2:
            # shared weight: fold the batch dims into one 2-D product
            gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return _unbroadcast(ga, a.shape), gb

    return make_node("matmul", out, (a, b), back)


def linear(x, weight, bias=None) -> Tensor:
    """``x @ weight + bias`` with ``weight`` shaped [in, out]."""
    y = matmul(x, weight)
    return y if bias is None else add(y, bias)


# ---------------------------------------------------------------- softmax family


@register_primitive("softmax")
def softmax(a, axis: int = -1, mask=None) -> Tensor:
    """Softmax along ``axis``; entries where ``mask`` is False get probability exactly 0.

    Masked scores are never read, so perturbing them cannot change the output.
    """
    a = as_tensor(a)
    x = a.data if mask is None else np.where(mask, a.data, -np.inf)
    m = np.max(x, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.exp(x - m)
    z = e.sum(axis=axis, keepdims=True)
    # a fully masked row (padding) yields zeros instead of NaN
    out = e / np.where(z > 0, z, 1.0)

    def back(g):
        return (out * (g - np.sum(g * out, axis=axis, keepdims=True)),)

    return make_node("softmax", out, (a,), back)


@register_primitive("log_softmax")
def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    m = a.data.max(axis=axis, keepdims=True)
    s = a.data - m
    out = s - np.log(np.exp(s).sum(axis=axis, keepdims=True))

    def back(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return make_node("log_softmax", out, (a,), back)


# ---------------------------------------------------------------- normalisation


def _norm_last(x: np.ndarray, eps: float):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    return xc * inv, inv


def _norm_last_backward(gxhat: np.ndarray, xhat: np.ndarray, inv: np.ndarray) -> np.ndarray:
    n = xhat.shape[-1]
    return inv / n * (n * gxhat - gxhat.sum(-1, keepdims=True)
                      - xhat * np.sum(gxhat * xhat, axis=-1, keepdims=True))


@register_primitive("layer_norm")
def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    xhat, inv = _norm_last(x.data, eps)
    out = xhat * gamma.data + beta.data

    def back(g):
        gx = _norm_last_backward(g * gamma.data, xhat, inv)
        return gx, _unbroadcast(g * xhat, gamma.shape), _unbroadcast(g, beta.shape)

    return make_node("layer_norm", out, (x, gamma, beta), back)


@register_primitive("group_norm")
def group_norm(x, gamma, beta, num_groups: int, eps: float = 1e-5) -> Tensor:
    """Per-frame group normalisation over the channel (last) axis."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    d = x.shape[-1]
    if num_groups < 1 or d % num_groups:
        raise ValueError(f"channels ({d}) not divisible by num_groups ({num_groups})")
    grouped = x.data.reshape(x.shape[:-1] + (num_groups, d // num_groups))
    xhat_g, inv = _norm_last(grouped, eps)
    xhat = xhat_g.reshape(x.shape)
    out = xhat * gamma.data + beta.data

    def back(g):
        gxhat = (g * gamma.data).reshape(grouped.shape)
        gx = _norm_last_backward(gxhat, xhat_g, inv).reshape(x.shape)
        return gx, _unbroadcast(g * xhat, gamma.shape), _unbroadcast(g, beta.shape)

    return make_node("group_norm", out, (x, gamma, beta), back)


# ---------------------------------------------------------------- convolution


@register_primitive("depthwise_conv1d")
def depthwise_conv1d(x, weight, left_pad: int, right_pad: int) -> Tensor:
    """Per-channel convolution over time.

    ``x`` is [..., T, C], ``weight`` is [K, C] and ``left_pad + right_pad == K - 1``.
    Output frame t reads input frames ``t - left_pad .. t + right_pad`` (zeros
    outside the sequence).
    """
    x, weight = as_tensor(x), as_tensor(weight)
    k = weight.shape[0]
    if left_pad + right_pad != k - 1:
        raise ValueError("left_pad + right_pad must equal kernel_size - 1")
    t = x.shape[-2]
    pad = [(0, 0)] * (x.ndim - 2) + [(left_pad, right_pad), (0, 0)]
    xp = np.pad(x.data, pad)
    out = np.zeros_like(x.data)
    for j in range(k):
        out += xp[..., j:j + t, :] * weight.data[j]

    def back(g):
        gxp = np.zeros_like(xp)
        gw = np.empty_like(weight.data)
        red = tuple(range(g.ndim - 1))
        for j in range(k):
            gxp[..., j:j + t, :] += g * weight.data[j]
            gw[j] = np.sum(g * xp[..., j:j + t, :], axis=red)
        return gxp[..., left_pad:left_pad + t, :], gw

    return make_node("depthwise_conv1d", out, (x, weight), back)


# ---------------------------------------------------------------- differentiation API


def _scalar(out) -> float:
    if isinstance(out, Tensor):
        out = out.data
    out = np.asarray(out, dtype=np.float64)
    if out.size != 1:
        raise ValueError("differentiated function must return a scalar")
    return float(out.reshape(()))


def grad(f: Callable[[], Tensor], params: Sequence[Parameter]) -> list:
    """Gradients of the scalar ``f()`` w.r.t. each parameter (reverse mode)."""
    for p in params:
        p.zero_grad()
    out = f()
    if not isinstance(out, Tensor):
        raise TypeError("f must return a Tensor built from registered primitives")
    if out.data.size != 1:
        raise ValueError("differentiated function must return a scalar")
    if out.requires_grad:
        out.backward()
    return [p.grad.copy() for p in params]


def finite_diff(f: Callable[[], Tensor], params: Sequence[Parameter], step: float = 1e-5) -> list:
    """Central-difference gradient estimate, one coordinate at a time."""
    if step <= 0:
        raise ValueError("step must be positive")
    grads = []
    with no_grad():
        for p in params:
            g = np.zeros_like(p.data)
            flat = p.data.reshape(-1)
            gflat = g.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + step
                fp = _scalar(f())
                flat[i] = orig - step
                fm = _scalar(f())
                flat[i] = orig
                gflat[i] = (fp - fm) / (2.0 * step)
            grads.append(g)
    return grads
