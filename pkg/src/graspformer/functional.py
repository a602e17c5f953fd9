"""Differentiable neural-network primitives built on :mod:`graspformer.tensor`.

Volumes are channel-first and unbatched: ``(C, A0, A1, A2)``.
``conv3d`` is a cross-correlation (the kernel is not flipped) and
``deconv3d`` is its exact adjoint.
"""
from __future__ import annotations

import itertools

import numpy as np

from .tensor import Tensor, _binary, as_tensor, cast, make

LAYERNORM_EPS = 1e-5
_GELU_C = float(np.sqrt(2.0 / np.pi))


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make(out, (x,), backward, "softmax")


def layernorm(x, gain, bias, axis: int = -1) -> Tensor:
    """Normalize ``x`` along ``axis`` then apply per-feature gain and bias.

    ``gain`` and ``bias`` are 1-D with the length of ``axis``.
    """
    x, gain = _binary(x, gain)
    x, bias = _binary(x, bias)
    axis = axis % x.ndim
    n = x.shape[axis]
    if gain.shape != (n,) or bias.shape != (n,):
        raise ValueError(f"layernorm params {gain.shape}/{bias.shape} do not match axis length {n}")
    bshape = [1] * x.ndim
    bshape[axis] = n
    gb, bb = gain.data.reshape(bshape), bias.data.reshape(bshape)
    mu = x.data.mean(axis=axis, keepdims=True)
    centered = x.data - mu
    inv_std = 1.0 / np.sqrt((centered**2).mean(axis=axis, keepdims=True) + LAYERNORM_EPS)
    xhat = centered * inv_std
    reduce_axes = tuple(i for i in range(x.ndim) if i != axis)

    def backward(g):
        gx = g * gb
        dx = inv_std * (gx - gx.mean(axis=axis, keepdims=True)
                        - xhat * (gx * xhat).mean(axis=axis, keepdims=True))
        return dx, (g * xhat).sum(axis=reduce_axes), g.sum(axis=reduce_axes)

    return make(xhat * gb + bb, (x, gain, bias), backward, "layernorm")


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return make(np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,), "relu")


def gelu(x) -> Tensor:
    """GELU, tanh approximation."""
    x = as_tensor(x)
    u = _GELU_C * (x.data + 0.044715 * x.data**3)
    t = np.tanh(u)
    out = 0.5 * x.data * (1.0 + t)

    def backward(g):
        du = _GELU_C * (1.0 + 3 * 0.044715 * x.data**2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x.data * (1.0 - t**2) * du),)

    return make(out, (x,), backward, "gelu")


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    out = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return make(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def softplus(x) -> Tensor:
    x = as_tensor(x)
    out = np.logaddexp(0, x.data).astype(x.dtype)
    slope = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return make(out, (x,), lambda g: (g * slope,), "softplus")


def normalize(x, axis: int = 0, fallback=(1.0, 0.0, 0.0, 0.0), eps: float = 1e-12) -> Tensor:
    """Scale every slice along ``axis`` to unit length.

    Slices with norm below ``eps`` become ``fallback`` and pass no gradient.
    """
    x = as_tensor(x)
    norm = np.sqrt((x.data**2).sum(axis=axis, keepdims=True))
    degenerate = norm < eps
    safe = np.where(degenerate, 1.0, norm)
    unit = x.data / safe
    if degenerate.any():
        fshape = [1] * x.ndim
        fshape[axis] = -1
        unit = np.where(degenerate, np.asarray(fallback, dtype=x.dtype).reshape(fshape), unit)
    unit = unit.astype(x.dtype)

    def backward(g):
        dx = (g - unit * (g * unit).sum(axis=axis, keepdims=True)) / safe
        return (np.where(degenerate, 0, dx),)

    return make(unit, (x,), backward, "normalize")


# --- 3-D convolution -------------------------------------------------------

def _out_extent(a: int, k: int, stride: int, padding: int) -> int:
    span = a + 2 * padding - k
    if span < 0 or span % stride:
        raise ValueError(f"extent {a} with kernel {k}, stride {stride}, padding {padding} "
                         "does not give an integral output extent")
    return span // stride + 1


def _window(k_offset: tuple, out_ext: tuple, stride: int) -> tuple:
    return (slice(None),) + tuple(slice(o, o + stride * (n - 1) + 1, stride)
                                  for o, n in zip(k_offset, out_ext))


def _check_kernel(x: np.ndarray, w: np.ndarray, in_axis: int) -> int:
    if w.ndim != 5 or len(set(w.shape[2:])) != 1:
        raise ValueError(f"kernel must be (Cout, Cin, k, k, k), got {w.shape}")
    if x.ndim != 4 or x.shape[0] != w.shape[in_axis]:
        raise ValueError(f"input {x.shape} does not match kernel {w.shape}")
    return w.shape[2]


def _taps(w: np.ndarray) -> np.ndarray:
    # (Cout, Cin, k, k, k) -> contiguous (k, k, k, Cout, Cin) so every offset slice is BLAS-ready
    return np.ascontiguousarray(w.transpose(2, 3, 4, 0, 1))


def _correlate(x: np.ndarray, w: np.ndarray, stride: int, padding: int) -> np.ndarray:
    k = _check_kernel(x, w, 1)
    wt = _taps(w)
    out_ext = tuple(_out_extent(a, k, stride, padding) for a in x.shape[1:])
    xp = np.pad(x, ((0, 0),) + ((padding, padding),) * 3) if padding else x
    out = np.zeros((w.shape[0], int(np.prod(out_ext))), dtype=np.result_type(x, w))
    for off in itertools.product(range(k), repeat=3):
        patch = xp[_window(off, out_ext, stride)].reshape(x.shape[0], -1)
        out += wt[off] @ patch
    return out.reshape((w.shape[0],) + out_ext)


def _correlate_adjoint(g: np.ndarray, w: np.ndarray, in_ext: tuple, stride: int, padding: int) -> np.ndarray:
    """Adjoint of :func:`_correlate` with respect to its input."""
    k = w.shape[2]
    out_ext = g.shape[1:]
    gflat = g.reshape(g.shape[0], -1)
    padded = tuple(a + 2 * padding for a in in_ext)
    gx = np.zeros((w.shape[1],) + padded, dtype=np.result_type(g, w))
    wt = np.ascontiguousarray(w.transpose(2, 3, 4, 1, 0))
    for off in itertools.product(range(k), repeat=3):
        gx[_window(off, out_ext, stride)] += (wt[off] @ gflat).reshape(
            (w.shape[1],) + out_ext)
    if padding:
        gx = gx[(slice(None),) + (slice(padding, -padding),) * 3]
    return gx


def _kernel_grad(x: np.ndarray, g: np.ndarray, k: int, stride: int, padding: int) -> np.ndarray:
    out_ext = g.shape[1:]
    xp = np.pad(x, ((0, 0),) + ((padding, padding),) * 3) if padding else x
    gflat = g.reshape(g.shape[0], -1)
    gw = np.zeros((g.shape[0], x.shape[0], k, k, k), dtype=np.result_type(x, g))
    for off in itertools.product(range(k), repeat=3):
        patch = xp[_window(off, out_ext, stride)].reshape(x.shape[0], -1)
        gw[(slice(None), slice(None)) + off] = gflat @ patch.T
    return gw


def _promote(x, kernels, bias):
    x, kernels = _binary(x, kernels)
    if bias is not None:
        bias = as_tensor(bias)
        if bias.dtype != x.dtype:
            bias = cast(bias, x.dtype)
    return x, kernels, bias


def _bias_term(out: np.ndarray, bias):
    if bias is None:
        return out
    return out + bias.data.reshape(-1, 1, 1, 1)


def conv3d(x, kernels, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlate a ``(Cin, A, A, A)`` volume with ``(Cout, Cin, k, k, k)`` kernels."""
    x, kernels, bias = _promote(x, kernels, bias)
    parents = [x, kernels] if bias is None else [x, kernels, bias]
    k = kernels.shape[2] if kernels.ndim == 5 else 0
    out = _bias_term(_correlate(x.data, kernels.data, stride, padding), bias)

    def backward(g):
        grads = [_correlate_adjoint(g, kernels.data, x.shape[1:], stride, padding) if x.requires_grad else None,
                 _kernel_grad(x.data, g, k, stride, padding) if kernels.requires_grad else None]
        if bias is not None:
            grads.append(g.sum(axis=(1, 2, 3)))
        return grads

    return make(out, parents, backward, "conv3d")


def deconv3d(x, kernels, bias=None, stride: int = 2) -> Tensor:
    """Transposed convolution of a ``(Cin, A, A, A)`` volume.

    ``kernels`` has shape ``(Cin, Cout, k, k, k)``; the result is
    ``(Cout, (A - 1) * stride + k, ...)``, i.e. ``A * stride`` when ``k == stride``.
    """
    x, kernels, bias = _promote(x, kernels, bias)
    parents = [x, kernels] if bias is None else [x, kernels, bias]
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    k = _check_kernel(x.data, kernels.data, 0)
    out_ext = tuple((a - 1) * stride + k for a in x.shape[1:])
    out = _bias_term(_correlate_adjoint(x.data, kernels.data, out_ext, stride, 0), bias)

    def backward(g):
        grads = [_correlate(g, kernels.data, stride, 0) if x.requires_grad else None,
                 _kernel_grad(g, x.data, k, stride, 0) if kernels.requires_grad else None]
        if bias is not None:
            grads.append(g.sum(axis=(1, 2, 3)))
        return grads

    return make(out, parents, backward, "deconv3d")
