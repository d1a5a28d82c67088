"""Differentiable operations over :class:`~hyperconformer.tensor.Tensor`.

FLOP convention (forward pass only; backward arithmetic is not counted):

* matmul: ``2*m*k*n`` per matrix product (a multiply-add is two FLOPs);
* elementwise arithmetic and nonlinearities: one FLOP per output element,
  GLU two (sigmoid and product);
* reductions (``sum``/``mean``): one FLOP per input element;
* softmax / log-softmax: four per element;
* layer norm: five per element, plus one each for gain and bias;
* depthwise conv: ``2*K`` per output element; conv2d: ``2*kh*kw*C_in`` per
  output element;
* reshapes, transposes, slices and concatenation: free.
"""

from __future__ import annotations

import math
from numbers import Number

import numpy as np
from scipy.special import erf, expit as _sigmoid

from .errors import ConfigError, ShapeError
from .tensor import Tensor, result

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _lift(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if isinstance(x, (Number, np.ndarray, list, tuple)):
        return Tensor(x)
    raise TypeError(f"cannot use {type(x).__name__} as a tensor")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (the inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    if lead:
        g = g.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _broadcast_shape(a: Tensor, b: Tensor, name: str) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{name}: cannot broadcast {a.shape} with {b.shape}") from None


# -- elementwise arithmetic ----------------------------------------------


def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    shape = _broadcast_shape(a, b, "add")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return result(a.data + b.data, (a, b), bw, math.prod(shape))


def sub(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    shape = _broadcast_shape(a, b, "sub")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return result(a.data - b.data, (a, b), bw, math.prod(shape))


def mul(a, b) -> Tensor:
    if isinstance(b, Number) and isinstance(a, Tensor):
        return scale(a, float(b))
    a, b = _lift(a), _lift(b)
    shape = _broadcast_shape(a, b, "mul")

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return result(a.data * b.data, (a, b), bw, math.prod(shape))


def div(a, b) -> Tensor:
    if isinstance(b, Number) and isinstance(a, Tensor):
        return scale(a, 1.0 / float(b))
    a, b = _lift(a), _lift(b)
    shape = _broadcast_shape(a, b, "div")

    def bw(g):
        ga = g / b.data
        return _unbroadcast(ga, a.shape), _unbroadcast(-ga * a.data / b.data, b.shape)

    return result(a.data / b.data, (a, b), bw, math.prod(shape))


def scale(a: Tensor, c: float) -> Tensor:
    """Multiply by a Python constant."""
    return result(a.data * c, (a,), lambda g: (g * c,), a.size)


# -- linear algebra and layout -------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes, batched over leading axes."""
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs operands of rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions differ for {a.shape} @ {b.shape}")
    try:
        batch = np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul: batch dimensions differ for {a.shape} @ {b.shape}") from None
    m, k = a.shape[-2:]
    n = b.shape[-1]

    def bw(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.ndim == 2 and a.ndim > 2:
            gb = a.data.reshape(-1, k).T @ g.reshape(-1, n)
        else:
            gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    flops = 2 * math.prod(batch) * m * k * n
    return result(np.matmul(a.data, b.data), (a, b), bw, flops)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    y = matmul(x, w)
    return y if b is None else add(y, b)


def transpose(a: Tensor) -> Tensor:
    """Swap the last two axes."""
    return result(np.swapaxes(a.data, -1, -2).copy(), (a,), lambda g: (np.swapaxes(g, -1, -2),))


def reshape(a: Tensor, shape) -> Tensor:
    return result(a.data.reshape(shape).copy(), (a,), lambda g: (g.reshape(a.shape),))


def _is_advanced(idx) -> bool:
    parts = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(p, (np.ndarray, list)) for p in parts)


def getitem(a: Tensor, idx) -> Tensor:
    out = np.array(a.data[idx], copy=True)
    advanced = _is_advanced(idx)

    def bw(g):
        z = np.zeros(a.shape)
        if advanced:
            np.add.at(z, idx, g)
        else:
            z[idx] += g
        return (z,)

    return result(out, (a,), bw)


def concat(ts, axis: int = -1) -> Tensor:
    ts = list(ts)
    sizes = [t.shape[axis] for t in ts]
    cuts = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, cuts, axis=axis))

    return result(np.concatenate([t.data for t in ts], axis=axis), ts, bw)


# -- reductions ----------------------------------------------------------


def _expand(g, shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(g, shape)
    if not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    def bw(g):
        return (np.array(_expand(g, a.shape, axis, keepdims)),)

    return result(a.data.sum(axis=axis, keepdims=keepdims), (a,), bw, a.size)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.size if axis is None else math.prod(
        a.shape[i] for i in (axis if isinstance(axis, tuple) else (axis,))
    )

    def bw(g):
        return (np.array(_expand(g, a.shape, axis, keepdims)) / count,)

    return result(a.data.mean(axis=axis, keepdims=keepdims), (a,), bw, a.size)


# -- nonlinearities ------------------------------------------------------


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return result(out, (a,), lambda g: (g * out,), a.size)


def log(a: Tensor) -> Tensor:
    return result(np.log(a.data), (a,), lambda g: (g / a.data,), a.size)


def sigmoid(a: Tensor) -> Tensor:
    s = _sigmoid(a.data)
    return result(s, (a,), lambda g: (g * s * (1.0 - s),), a.size)


def gelu(a: Tensor) -> Tensor:
    """Exact GELU, ``x * Phi(x)`` with the Gaussian CDF from erf."""
    x = a.data
    cdf = 0.5 * (1.0 + erf(x / _SQRT2))

    def bw(g):
        return (g * (cdf + x * _INV_SQRT_2PI * np.exp(-0.5 * x * x)),)

    return result(x * cdf, (a,), bw, a.size)


def swish(a: Tensor) -> Tensor:
    x = a.data
    s = _sigmoid(x)
    return result(x * s, (a,), lambda g: (g * (s + x * s * (1.0 - s)),), a.size)


def glu(a: Tensor, axis: int = -1) -> Tensor:
    """Gated linear unit: first half times sigmoid of the second half."""
    n = a.shape[axis]
    if n % 2:
        raise ShapeError(f"glu needs an even-length axis, got {n} in shape {a.shape}")
    u, v = np.split(a.data, 2, axis=axis)
    s = _sigmoid(v)
    out = u * s

    def bw(g):
        return (np.concatenate([g * s, g * u * s * (1.0 - s)], axis=axis),)

    return result(out, (a,), bw, 2 * out.size)


def activation(x: Tensor, kind: str, axis: int = -1) -> Tensor:
    kind = kind.lower()
    if kind == "gelu":
        return gelu(x)
    if kind == "swish":
        return swish(x)
    if kind == "glu":
        return glu(x, axis=axis)
    raise ConfigError(f"unknown activation {kind!r}; expected gelu, swish or glu")


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    if not -a.ndim <= axis < a.ndim:
        raise ShapeError(f"softmax axis {axis} out of range for shape {a.shape}")
    e = np.exp(a.data - a.data.max(axis=axis, keepdims=True))
    s = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return result(s, (a,), bw, 4 * a.size)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))

    def bw(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return result(out, (a,), bw, 4 * a.size)


def layer_norm(
    x: Tensor,
    axis: int = -1,
    gain: Tensor | None = None,
    bias: Tensor | None = None,
    eps: float = 1e-5,
) -> Tensor:
    """Normalize to zero mean and unit (population) variance along ``axis``.

    ``gain`` and ``bias`` are 1-D with the length of ``axis``.
    """
    axis = axis % x.ndim
    bshape = [1] * x.ndim
    bshape[axis] = x.shape[axis]
    mu = x.data.mean(axis=axis, keepdims=True)
    xc = x.data - mu
    rstd = 1.0 / np.sqrt((xc * xc).mean(axis=axis, keepdims=True) + eps)
    xhat = xc * rstd
    out = xhat
    gdat = None
    if gain is not None:
        gdat = gain.data.reshape(bshape)
        out = out * gdat
    if bias is not None:
        out = out + bias.data.reshape(bshape)
    other = tuple(i for i in range(x.ndim) if i != axis)

    def bw(g):
        gx_hat = g if gdat is None else g * gdat
        gx = rstd * (
            gx_hat
            - gx_hat.mean(axis=axis, keepdims=True)
            - xhat * (gx_hat * xhat).mean(axis=axis, keepdims=True)
        )
        grads = [gx]
        if gain is not None:
            grads.append((g * xhat).sum(axis=other).reshape(gain.shape))
        if bias is not None:
            grads.append(g.sum(axis=other).reshape(bias.shape))
        return tuple(grads)

    inputs = [x] + [t for t in (gain, bias) if t is not None]
    flops = x.size * (5 + (gain is not None) + (bias is not None))
    return result(out, inputs, bw, flops)


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity when ``rate`` is 0 or no generator is given."""
    if rate <= 0.0 or rng is None:
        return x
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return result(x.data * mask, (x,), lambda g: (g * mask,), x.size)


# -- convolutions --------------------------------------------------------


def conv1d_depthwise(x: Tensor, kernel: Tensor) -> Tensor:
    """Per-channel 1-D convolution over axis -2 with zero 'same' padding.

    ``x`` is ``(..., N, d)`` and ``kernel`` is ``(K, d)`` with ``K`` odd.
    Channel ``c`` of the output only depends on channel ``c`` of the input.
    """
    K, d = kernel.shape
    if K % 2 == 0:
        raise ConfigError(f"depthwise kernel size must be odd for same padding, got {K}")
    if x.shape[-1] != d:
        raise ShapeError(f"conv1d_depthwise: input {x.shape} vs kernel {kernel.shape}")
    n = x.shape[-2]
    r = (K - 1) // 2
    pad = [(0, 0)] * x.ndim
    pad[-2] = (r, r)
    xp = np.pad(x.data, pad)
    w = kernel.data
    out = np.zeros(x.shape)
    for j in range(K):
        out += xp[..., j:j + n, :] * w[j]

    def bw(g):
        gxp = np.zeros(xp.shape)
        gk = np.empty(kernel.shape)
        for j in range(K):
            gxp[..., j:j + n, :] += g * w[j]
            gk[j] = (g * xp[..., j:j + n, :]).reshape(-1, d).sum(axis=0)
        return gxp[..., r:r + n, :], gk

    return result(out, (x, kernel), bw, 2 * K * x.size)


def conv2d(x: Tensor, w: Tensor, stride: int = 2) -> Tensor:
    """Unpadded strided 2-D convolution, channels last.

    ``x`` is ``(H, W, C_in)``, ``w`` is ``(kh, kw, C_in, C_out)``; the output
    is ``((H - kh) // stride + 1, (W - kw) // stride + 1, C_out)``.
    """
    if x.ndim != 3 or w.ndim != 4 or x.shape[2] != w.shape[2]:
        raise ShapeError(f"conv2d: input {x.shape} vs weights {w.shape}")
    H, W, cin = x.shape
    kh, kw, _, cout = w.shape
    ho = (H - kh) // stride + 1
    wo = (W - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d: input {x.shape} smaller than kernel {(kh, kw)}")

    def window(i, j):
        return x.data[i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride, :]

    out = np.zeros((ho, wo, cout))
    flat = out.reshape(-1, cout)
    for i in range(kh):
        for j in range(kw):
            flat += window(i, j).reshape(-1, cin) @ w.data[i, j]

    def bw(g):
        g2 = g.reshape(-1, cout)
        gx = np.zeros(x.shape)
        gw = np.empty(w.shape)
        for i in range(kh):
            for j in range(kw):
                gw[i, j] = window(i, j).reshape(-1, cin).T @ g2
                gx[i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride, :] += (
                    g2 @ w.data[i, j].T
                ).reshape(ho, wo, cin)
        return gx, gw

    flops = 2 * ho * wo * kh * kw * cin * cout
    return result(out, (x, w), bw, flops)
