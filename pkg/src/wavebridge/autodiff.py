"""Minimal reverse-mode differentiation over numpy arrays.

Every op builds a ``Tensor`` node that remembers its parents and an op name.
``backward`` walks the graph in reverse topological order and applies the
rule registered for each op name. Only the vocabulary in ``RULES`` is
differentiable; anything else raises ``UnsupportedOpError``.
"""
from __future__ import annotations

import functools
from typing import Callable, Dict, Iterable, Optional, Sequence

import numpy as np
from scipy import sparse


class UnsupportedOpError(RuntimeError):
    pass


class Tensor:
    __slots__ = ("value", "grad", "parents", "op", "ctx", "requires_grad", "name")

    def __init__(self, value, parents: Sequence["Tensor"] = (), op: str = "leaf",
                 ctx=None, requires_grad: Optional[bool] = None, name: Optional[str] = None):
        self.value = value if isinstance(value, np.ndarray) else _as_float_array(value)
        self.parents = tuple(parents)
        self.op = op
        self.ctx = ctx
        self.grad: Optional[np.ndarray] = None
        if requires_grad is None:
            requires_grad = any(p.requires_grad for p in self.parents)
        self.requires_grad = requires_grad
        self.name = name

    def __repr__(self):
        return f"Tensor(op={self.op}, shape={self.shape}{', name=' + self.name if self.name else ''})"

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

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

    def __getitem__(self, idx):
        return getitem(self, idx)


def _as_float_array(value) -> np.ndarray:
    arr = np.asarray(value)
    if arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(np.float64)
    return arr


def parameter(value, name: Optional[str] = None) -> Tensor:
    return Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)


def constant(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(_as_float_array(value), requires_grad=False)


def _pair(a, b):
    """Coerce operands; bare Python numbers take the dtype of the tensor operand."""
    if isinstance(a, Tensor) and not isinstance(b, (Tensor, np.ndarray)) and np.ndim(b) == 0:
        return a, Tensor(np.asarray(b, dtype=a.value.dtype), requires_grad=False)
    if isinstance(b, Tensor) and not isinstance(a, (Tensor, np.ndarray)) and np.ndim(a) == 0:
        return Tensor(np.asarray(a, dtype=b.value.dtype), requires_grad=False), b
    return constant(a), constant(b)


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


RULES: Dict[str, Callable] = {}


def rule(name: str):
    def register(fn):
        RULES[name] = fn
        return fn
    return register


# elementwise arithmetic

def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    return Tensor(a.value + b.value, (a, b), "add")


@rule("add")
def _add_rule(node, g):
    a, b = node.parents
    return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    return Tensor(a.value - b.value, (a, b), "sub")


@rule("sub")
def _sub_rule(node, g):
    a, b = node.parents
    return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    return Tensor(a.value * b.value, (a, b), "multiply")


@rule("multiply")
def _mul_rule(node, g):
    a, b = node.parents
    return _unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    return Tensor(a.value / b.value, (a, b), "divide")


@rule("divide")
def _div_rule(node, g):
    a, b = node.parents
    return (_unbroadcast(g / b.value, a.shape),
            _unbroadcast(-g * a.value / (b.value * b.value), b.shape))


def neg(a) -> Tensor:
    a = constant(a)
    return Tensor(-a.value, (a,), "neg")


@rule("neg")
def _neg_rule(node, g):
    return (-g,)


# pointwise nonlinearities

def tanh(a) -> Tensor:
    a = constant(a)
    return Tensor(np.tanh(a.value), (a,), "tanh")


@rule("tanh")
def _tanh_rule(node, g):
    return (g * (1.0 - node.value * node.value),)


def sigmoid(a) -> Tensor:
    a = constant(a)
    # tanh form is overflow-free for large |x|
    return Tensor(0.5 + 0.5 * np.tanh(0.5 * a.value), (a,), "sigmoid")


@rule("sigmoid")
def _sigmoid_rule(node, g):
    return (g * node.value * (1.0 - node.value),)


def square(a) -> Tensor:
    a = constant(a)
    return Tensor(a.value * a.value, (a,), "square")


@rule("square")
def _square_rule(node, g):
    return (2.0 * node.parents[0].value * g,)


def absolute(a) -> Tensor:
    a = constant(a)
    return Tensor(np.abs(a.value), (a,), "abs")


@rule("abs")
def _abs_rule(node, g):
    return (np.sign(node.parents[0].value) * g,)


def log(a) -> Tensor:
    a = constant(a)
    return Tensor(np.log(a.value), (a,), "log")


@rule("log")
def _log_rule(node, g):
    return (g / node.parents[0].value,)


def sqrt(a) -> Tensor:
    a = constant(a)
    return Tensor(np.sqrt(a.value), (a,), "sqrt")


@rule("sqrt")
def _sqrt_rule(node, g):
    y = node.value
    safe = np.where(y > 0, y, 1.0)
    return (np.where(y > 0, 0.5 * g / safe, 0.0),)


def atan2(y, x) -> Tensor:
    y, x = constant(y), constant(x)
    return Tensor(np.arctan2(y.value, x.value), (y, x), "atan2")


@rule("atan2")
def _atan2_rule(node, g):
    y, x = node.parents
    r2 = x.value * x.value + y.value * y.value
    nz = r2 > 0
    inv = np.where(nz, 1.0 / np.where(nz, r2, 1.0), 0.0)
    return (_unbroadcast(g * x.value * inv, y.shape), _unbroadcast(-g * y.value * inv, x.shape))


def anti_wrap(a) -> Tensor:
    """Distance to the nearest multiple of 2*pi, in [0, pi]."""
    a = constant(a)
    wrapped = a.value - 2.0 * np.pi * np.round(a.value / (2.0 * np.pi))
    return Tensor(np.abs(wrapped), (a,), "anti_wrap", ctx=np.sign(wrapped))


@rule("anti_wrap")
def _anti_wrap_rule(node, g):
    return (node.ctx * g,)


def complex_abs(re, im) -> Tensor:
    re, im = constant(re), constant(im)
    return Tensor(np.hypot(re.value, im.value), (re, im), "complex_abs")


@rule("complex_abs")
def _complex_abs_rule(node, g):
    re, im = node.parents
    r = node.value
    nz = r > 0
    inv = np.where(nz, 1.0 / np.where(nz, r, 1.0), 0.0)
    return _unbroadcast(g * re.value * inv, re.shape), _unbroadcast(g * im.value * inv, im.shape)


# reductions and structure

def sum(a, axis=None, keepdims=False) -> Tensor:  # noqa: A001
    a = constant(a)
    return Tensor(np.sum(a.value, axis=axis, keepdims=keepdims), (a,), "sum", ctx=(axis, keepdims))


@rule("sum")
def _sum_rule(node, g):
    (a,) = node.parents
    axis, keepdims = node.ctx
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return (np.broadcast_to(g, a.shape).copy(),)


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = constant(a)
    return Tensor(np.mean(a.value, axis=axis, keepdims=keepdims), (a,), "mean", ctx=(axis, keepdims))


@rule("mean")
def _mean_rule(node, g):
    (a,) = node.parents
    axis, keepdims = node.ctx
    count = a.value.size / max(node.value.size, 1)
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return (np.broadcast_to(g / count, a.shape).copy(),)


def getitem(a, idx) -> Tensor:
    a = constant(a)
    return Tensor(a.value[idx], (a,), "getitem", ctx=idx)


@rule("getitem")
def _getitem_rule(node, g):
    (a,) = node.parents
    out = np.zeros_like(a.value)
    if _is_basic_index(node.ctx):
        out[node.ctx] = g
    else:
        np.add.at(out, node.ctx, g)
    return (out,)


def _is_basic_index(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (slice, int, type(None), type(Ellipsis))) for i in items)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [constant(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    return Tensor(np.concatenate([t.value for t in tensors], axis=axis), tensors, "concat",
                  ctx=(axis, sizes))


@rule("concat")
def _concat_rule(node, g):
    axis, sizes = node.ctx
    return tuple(np.split(g, np.cumsum(sizes)[:-1], axis=axis))


def reshape(a, shape) -> Tensor:
    a = constant(a)
    return Tensor(a.value.reshape(shape), (a,), "reshape")


@rule("reshape")
def _reshape_rule(node, g):
    return (g.reshape(node.parents[0].shape),)


# linear layers

def affine(x, weight, bias) -> Tensor:
    """``x @ weight.T + bias`` over the last axis of ``x``."""
    x, weight, bias = constant(x), constant(weight), constant(bias)
    return Tensor(x.value @ weight.value.T + bias.value, (x, weight, bias), "affine")


@rule("affine")
def _affine_rule(node, g):
    x, w, b = node.parents
    gx = g @ w.value
    g2 = g.reshape(-1, g.shape[-1])
    x2 = x.value.reshape(-1, x.shape[-1])
    return gx, g2.T @ x2, g2.sum(axis=0)


def conv1d(x, weight, bias, dilation: int = 1) -> Tensor:
    """Dilated 1-D convolution with zero 'same' padding.

    ``x`` is (batch, in_channels, length); ``weight`` is (out, in, kernel) with an
    odd kernel size.
    """
    x, weight, bias = constant(x), constant(weight), constant(bias)
    cout, cin, k = weight.shape
    if k % 2 != 1:
        raise ValueError("conv1d needs an odd kernel size")
    batch, _, length = x.shape
    pad = dilation * (k - 1) // 2
    if k == 1:
        cols = x.value
    else:
        xp = np.pad(x.value, ((0, 0), (0, 0), (pad, pad)))
        cols = np.concatenate(
            [xp[:, :, j * dilation: j * dilation + length] for j in range(k)], axis=1
        )  # (B, k*cin, L), tap-major
    w2 = weight.value.transpose(0, 2, 1).reshape(cout, k * cin)
    out = np.matmul(w2, cols) + bias.value[None, :, None]
    return Tensor(out, (x, weight, bias), "conv1d", ctx=(cols, dilation))


@rule("conv1d")
def _conv1d_rule(node, g):
    x, w, b = node.parents
    cols, dilation = node.ctx
    cout, cin, k = w.shape
    length = x.shape[2]
    gw2 = np.tensordot(g, cols, axes=([0, 2], [0, 2]))  # (cout, k*cin)
    gw = gw2.reshape(cout, k, cin).transpose(0, 2, 1)
    gb = g.sum(axis=(0, 2))
    gx = None
    if x.requires_grad:
        w2 = w.value.transpose(0, 2, 1).reshape(cout, k * cin)
        gcols = np.matmul(w2.T, g)
        if k == 1:
            gx = gcols
        else:
            pad = dilation * (k - 1) // 2
            gxp = np.zeros((x.shape[0], cin, length + 2 * pad), dtype=g.dtype)
            for j in range(k):
                gxp[:, :, j * dilation: j * dilation + length] += gcols[:, j * cin:(j + 1) * cin]
            gx = gxp[:, :, pad: pad + length]
    return gx, gw, gb


# short-time Fourier analysis

@functools.lru_cache(maxsize=32)
def frame_index(length: int, n_fft: int, hop: int) -> np.ndarray:
    """Sample index of every frame position after centered reflect padding."""
    pad = n_fft // 2
    if length <= pad:
        raise ValueError(f"signal of length {length} too short for reflect padding {pad}")
    src = np.arange(-pad, length + pad)
    src = np.where(src < 0, -src, src)
    src = np.where(src >= length, 2 * (length - 1) - src, src)
    n_frames = 1 + (length + 2 * pad - n_fft) // hop
    starts = np.arange(n_frames)[:, None] * hop
    return src[starts + np.arange(n_fft)[None, :]]


@functools.lru_cache(maxsize=32)
def _frame_scatter(length: int, n_fft: int, hop: int):
    idx = frame_index(length, n_fft, hop).ravel()
    rows = np.arange(idx.size)
    return sparse.csr_matrix((np.ones(idx.size), (rows, idx)), shape=(idx.size, length))


def stft(x, n_fft: int, hop: int, window: np.ndarray) -> Tensor:
    """Centered STFT of the last axis; output (..., frames, bins, 2) holding (re, im)."""
    x = constant(x)
    idx = frame_index(x.shape[-1], n_fft, hop)
    spec = np.fft.rfft(x.value[..., idx] * window, axis=-1)
    out = np.stack([spec.real, spec.imag], axis=-1)
    return Tensor(out, (x,), "stft", ctx=(n_fft, hop, window))


@rule("stft")
def _stft_rule(node, g):
    (x,) = node.parents
    n_fft, hop, window = node.ctx
    length = x.shape[-1]
    z = np.zeros(g.shape[:-2] + (n_fft,), dtype=np.complex128)
    z[..., : n_fft // 2 + 1] = g[..., 0] + 1j * g[..., 1]
    gframes = np.real(np.fft.ifft(z, axis=-1)) * n_fft * window  # (..., F, N)
    lead = gframes.shape[:-2]
    flat = gframes.reshape(-1, gframes.shape[-2] * n_fft)
    gx = (_frame_scatter(length, n_fft, hop).T @ flat.T).T
    return (gx.reshape(lead + (length,)),)


# reverse pass

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
        for p in node.parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(node) into ``.grad`` of every grad-requiring node."""
    if loss.value.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    order = _topological(loss)
    for node in order:
        node.grad = None
    loss.grad = np.ones_like(loss.value)
    for node in reversed(order):
        if not node.parents or node.grad is None:
            continue
        try:
            fn = RULES[node.op]
        except KeyError:
            raise UnsupportedOpError(f"no reverse rule for op {node.op!r}") from None
        grads = fn(node, node.grad)
        for parent, pg in zip(node.parents, grads):
            if not parent.requires_grad or pg is None:
                continue
            if pg.shape != parent.shape:
                pg = np.broadcast_to(pg, parent.shape)
            # rules may hand the same array to several parents; never mutate in place
            parent.grad = pg if parent.grad is None else parent.grad + pg


def grad(fn: Callable[..., Tensor], params: Iterable[Tensor]) -> list:
    """Evaluate ``fn()`` and return gradients for ``params`` (zeros if unused)."""
    params = list(params)
    loss = fn()
    for p in params:
        p.grad = None
    backward(loss)
    return [np.zeros_like(p.value) if p.grad is None else p.grad for p in params]
