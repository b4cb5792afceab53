"""Minimal N-D tensor engine with reverse-mode automatic differentiation.

Tensors wrap contiguous numpy arrays (float32 by default, NCHW layout for
image data). The graph is dynamic: every op records a backward closure on its
output, and ``backward()`` replays them in reverse topological order.
Gradients accumulate additively across fan-out. No op mutates its inputs.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible for an operation."""


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # piecewise form avoids overflow in exp for large |x|
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class Tensor:
    """N-D array of reals with an optional gradient slot.

    ``data`` is always a contiguous numpy array. ``grad`` is lazily allocated
    by the backward pass and has the same shape and dtype as ``data``.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, _parents=(), name: str = ""):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = np.ascontiguousarray(arr)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = tuple(_parents)
        self._backward = None
        self.name = name

    # -- basic introspection ------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    # -- operator sugar -----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, 1.0 / other)
        return div(self, other)

    def sum(self):
        return tsum(self)

    def mean(self):
        return tmean(self)

    # -- autodiff -----------------------------------------------------------
    def backward(self):
        """Populate grads of every requires_grad tensor reachable from self.

        Requires a scalar (single-element) tensor.
        """
        if self.data.size != 1:
            raise ValueError(
                f"backward() needs a scalar loss, got shape {self.data.shape}"
            )
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def _needs_grad(*tensors) -> bool:
    return any(t.requires_grad or t._parents for t in tensors)


def _result(data, parents, backward_fn) -> Tensor:
    out = Tensor(data)
    if _needs_grad(*parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn(out)
    return out


def _check_same_shape(a: Tensor, b: Tensor, op: str):
    if a.data.shape != b.data.shape:
        raise ShapeError(f"{op}: operand shapes {a.data.shape} and {b.data.shape} differ")


# -- elementwise ops --------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "add")

    def bk(out):
        def _backward(g):
            if a.requires_grad or a._parents:
                a._accumulate(g)
            if b.requires_grad or b._parents:
                b._accumulate(g)
        return _backward

    return _result(a.data + b.data, (a, b), bk)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "sub")

    def bk(out):
        def _backward(g):
            if a.requires_grad or a._parents:
                a._accumulate(g)
            if b.requires_grad or b._parents:
                b._accumulate(-g)
        return _backward

    return _result(a.data - b.data, (a, b), bk)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "mul")

    def bk(out):
        def _backward(g):
            if a.requires_grad or a._parents:
                a._accumulate(g * b.data)
            if b.requires_grad or b._parents:
                b._accumulate(g * a.data)
        return _backward

    return _result(a.data * b.data, (a, b), bk)


def div(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "div")

    def bk(out):
        def _backward(g):
            if a.requires_grad or a._parents:
                a._accumulate(g / b.data)
            if b.requires_grad or b._parents:
                b._accumulate(-g * a.data / (b.data * b.data))
        return _backward

    return _result(a.data / b.data, (a, b), bk)


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)

    def bk(out):
        def _backward(g):
            a._accumulate(g * s)
        return _backward

    return _result(a.data * s, (a,), bk)


def add_scalar(a: Tensor, s: float) -> Tensor:
    def bk(out):
        def _backward(g):
            a._accumulate(g)
        return _backward

    return _result(a.data + float(s), (a,), bk)


def power(a: Tensor, p: float) -> Tensor:
    """Elementwise a**p for scalar p; defined for positive a when p is fractional."""
    p = float(p)

    def bk(out):
        def _backward(g):
            a._accumulate(g * p * np.power(a.data, p - 1.0))
        return _backward

    return _result(np.power(a.data, p), (a,), bk)


def clamp_min(a: Tensor, lo: float) -> Tensor:
    lo = float(lo)
    mask = a.data > lo

    def bk(out):
        def _backward(g):
            a._accumulate(g * mask)
        return _backward

    return _result(np.maximum(a.data, lo), (a,), bk)


def absolute(a: Tensor) -> Tensor:
    """|a| with subgradient 0 at 0 (np.sign convention)."""
    sign = np.sign(a.data)

    def bk(out):
        def _backward(g):
            a._accumulate(g * sign)
        return _backward

    return _result(np.abs(a.data), (a,), bk)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def bk(out):
        def _backward(g):
            a._accumulate(g * mask)
        return _backward

    return _result(a.data * mask, (a,), bk)


def leaky_relu(a: Tensor, slope: float = 0.1) -> Tensor:
    """max(x, slope * x); subgradient at 0 follows the negative branch."""
    mask = a.data > 0
    scale = np.where(mask, 1.0, slope).astype(a.dtype)

    def bk(out):
        def _backward(g):
            a._accumulate(g * scale)
        return _backward

    return _result(a.data * scale, (a,), bk)


def sigmoid(a: Tensor) -> Tensor:
    y = _sigmoid(a.data)

    def bk(out):
        def _backward(g):
            a._accumulate(g * y * (1.0 - y))
        return _backward

    return _result(y, (a,), bk)


def softplus(a: Tensor) -> Tensor:
    """log(1 + exp(a)), computed stably; derivative is sigmoid(a)."""
    y = np.logaddexp(np.zeros((), dtype=a.dtype), a.data)

    def bk(out):
        def _backward(g):
            a._accumulate(g * _sigmoid(a.data))
        return _backward

    return _result(y.astype(a.dtype), (a,), bk)


# -- reductions -------------------------------------------------------------

def tsum(a: Tensor) -> Tensor:
    def bk(out):
        def _backward(g):
            a._accumulate(np.full_like(a.data, g.reshape(-1)[0]))
        return _backward

    return _result(np.asarray(a.data.sum(), dtype=a.dtype).reshape(()), (a,), bk)


def tmean(a: Tensor) -> Tensor:
    n = a.data.size

    def bk(out):
        def _backward(g):
            a._accumulate(np.full_like(a.data, g.reshape(-1)[0] / n))
        return _backward

    return _result(np.asarray(a.data.mean(), dtype=a.dtype).reshape(()), (a,), bk)


# -- structural ops ---------------------------------------------------------

def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate two NCHW tensors along the channel axis."""
    if a.data.ndim != 4 or b.data.ndim != 4:
        raise ShapeError("concat_channels: expects rank-4 NCHW tensors")
    if a.data.shape[0] != b.data.shape[0] or a.data.shape[2:] != b.data.shape[2:]:
        raise ShapeError(
            f"concat_channels: batch/spatial mismatch {a.data.shape} vs {b.data.shape}"
        )
    c1 = a.data.shape[1]

    def bk(out):
        def _backward(g):
            if a.requires_grad or a._parents:
                a._accumulate(g[:, :c1])
            if b.requires_grad or b._parents:
                b._accumulate(g[:, c1:])
        return _backward

    return _result(np.concatenate([a.data, b.data], axis=1), (a, b), bk)


def slice_channels(a: Tensor, c0: int, c1: int) -> Tensor:
    def bk(out):
        def _backward(g):
            full = np.zeros_like(a.data)
            full[:, c0:c1] = g
            a._accumulate(full)
        return _backward

    return _result(a.data[:, c0:c1].copy(), (a,), bk)


def upsample_nearest2(a: Tensor) -> Tensor:
    """Double H and W by replicating each value into a 2x2 block."""
    if a.data.ndim != 4:
        raise ShapeError("upsample_nearest2: expects rank-4 NCHW tensor")
    y = a.data.repeat(2, axis=2).repeat(2, axis=3)

    def bk(out):
        def _backward(g):
            n, c, h2, w2 = g.shape
            gsum = g.reshape(n, c, h2 // 2, 2, w2 // 2, 2).sum(axis=(3, 5))
            a._accumulate(gsum)
        return _backward

    return _result(y, (a,), bk)


def max_pool2d(a: Tensor) -> Tensor:
    """2x2 max pooling, stride 2; ties route gradient to the first window
    element in row-major order."""
    if a.data.ndim != 4:
        raise ShapeError("max_pool2d: expects rank-4 NCHW tensor")
    n, c, h, w = a.data.shape
    if h % 2 or w % 2:
        raise ShapeError(f"max_pool2d: spatial dims must be even, got {h}x{w}")
    win = a.data.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    win = win.reshape(n, c, h // 2, w // 2, 4)
    idx = win.argmax(axis=-1)  # first occurrence on ties
    y = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]

    def bk(out):
        def _backward(g):
            gwin = np.zeros((n, c, h // 2, w // 2, 4), dtype=g.dtype)
            np.put_along_axis(gwin, idx[..., None], g[..., None], axis=-1)
            gx = gwin.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
            a._accumulate(gx.reshape(n, c, h, w))
        return _backward

    return _result(y, (a,), bk)


def avg_pool2d(a: Tensor) -> Tensor:
    """2x2 average pooling, stride 2."""
    n, c, h, w = a.data.shape
    if h % 2 or w % 2:
        raise ShapeError(f"avg_pool2d: spatial dims must be even, got {h}x{w}")
    y = a.data.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))

    def bk(out):
        def _backward(g):
            gx = g[:, :, :, None, :, None] * np.full((1, 1, 1, 2, 1, 2), 0.25, dtype=g.dtype)
            a._accumulate(np.ascontiguousarray(np.broadcast_to(
                gx, (n, c, h // 2, 2, w // 2, 2)).reshape(n, c, h, w)))
        return _backward

    return _result(y, (a,), bk)


# -- convolution ------------------------------------------------------------

def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, padding: int):
    n, c, h, w = x.shape
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    hp, wp = x.shape[2], x.shape[3]
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    view = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    view = view[:, :, ::stride, ::stride]  # (n, c, ho, wo, kh, kw)
    col = view.transpose(0, 2, 3, 1, 4, 5).reshape(n, ho * wo, c * kh * kw)
    return np.ascontiguousarray(col), ho, wo


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """2D cross-correlation with NCHW input and OIKK weight.

    Output spatial dims: floor((H + 2*padding - K) / stride) + 1.
    """
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise ShapeError(
            f"conv2d: expects rank-4 input and weight, got {x.data.shape} and "
            f"{weight.data.shape}"
        )
    n, c, h, w = x.data.shape
    o, ci, kh, kw = weight.data.shape
    if c != ci:
        raise ShapeError(
            f"conv2d: input has {c} channels but weight {weight.data.shape} expects {ci}"
        )
    if h + 2 * padding < kh or w + 2 * padding < kw:
        raise ShapeError(
            f"conv2d: kernel {kh}x{kw} does not fit padded input "
            f"{h + 2 * padding}x{w + 2 * padding}"
        )
    col, ho, wo = _im2col(x.data, kh, kw, stride, padding)
    wmat = weight.data.reshape(o, ci * kh * kw)
    out = col @ wmat.T  # (n, ho*wo, o)
    if bias is not None:
        out = out + bias.data[None, None, :]
    y = out.transpose(0, 2, 1).reshape(n, o, ho, wo)

    def bk(outt):
        def _backward(g):
            gmat = g.reshape(n, o, ho * wo).transpose(0, 2, 1)  # (n, ho*wo, o)
            if weight.requires_grad or weight._parents:
                gw = np.einsum("npo,npk->ok", gmat, col)
                weight._accumulate(gw.reshape(o, ci, kh, kw))
            if bias is not None and (bias.requires_grad or bias._parents):
                bias._accumulate(gmat.sum(axis=(0, 1)))
            if x.requires_grad or x._parents:
                gcol = gmat @ wmat  # (n, ho*wo, ci*kh*kw)
                gcol = gcol.reshape(n, ho, wo, ci, kh, kw).transpose(0, 3, 1, 2, 4, 5)
                gx = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=g.dtype)
                for ky in range(kh):
                    for kx in range(kw):
                        gx[:, :, ky:ky + stride * ho:stride,
                           kx:kx + stride * wo:stride] += gcol[:, :, :, :, ky, kx]
                if padding:
                    gx = gx[:, :, padding:-padding, padding:-padding]
                x._accumulate(gx)
        return _backward

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _result(y, parents, bk)


# -- verification -----------------------------------------------------------

def gradient_check(f, xs, eps: float = 1e-3) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` maps a list of tensors to a scalar Tensor and must be deterministic.
    Evaluation happens in float64 regardless of the input dtype, so the
    numeric side is trustworthy at the default eps.
    """
    if isinstance(xs, Tensor):
        xs = [xs]
    xs64 = [Tensor(x.data.astype(np.float64), requires_grad=True) for x in xs]
    loss = f(xs64)
    loss.backward()
    worst = 0.0
    for x in xs64:
        analytic = x.grad if x.grad is not None else np.zeros_like(x.data)
        flat = x.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = f(xs64).item()
            flat[i] = orig - eps
            fm = f(xs64).item()
            flat[i] = orig
            numeric = (fp - fm) / (2 * eps)
            a = analytic.reshape(-1)[i]
            denom = max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, abs(a - numeric) / denom)
    return worst


def kaiming_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    """He-uniform init: U(-b, b) with b = sqrt(6 / fan_in)."""
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)
