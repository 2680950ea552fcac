"""Differentiable building blocks composed from the tensor primitives.

Everything here operates on float64 Tensors. Temporal ops treat the
second-to-last axis as time and the last axis as channels.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import special

from .errors import ShapeError
from .tensor import Tensor, astensor, concat, matmul, _make

_SQRT_2PI = math.sqrt(2.0 * math.pi)


def exp(a) -> Tensor:
    a = astensor(a)
    out = _make(np.exp(a.data), (a,))

    def backward():
        a._accumulate(out.grad * out.data)

    out._backward = backward if out.requires_grad else None
    return out


def log(a) -> Tensor:
    a = astensor(a)
    out = _make(np.log(a.data), (a,))

    def backward():
        a._accumulate(out.grad / a.data)

    out._backward = backward if out.requires_grad else None
    return out


def sqrt(a) -> Tensor:
    a = astensor(a)
    out = _make(np.sqrt(a.data), (a,))

    def backward():
        a._accumulate(out.grad * 0.5 / out.data)

    out._backward = backward if out.requires_grad else None
    return out


def sigmoid(a) -> Tensor:
    a = astensor(a)
    out = _make(special.expit(a.data), (a,))

    def backward():
        a._accumulate(out.grad * out.data * (1.0 - out.data))

    out._backward = backward if out.requires_grad else None
    return out


def gelu(a) -> Tensor:
    """Exact Gaussian error linear unit, x * Phi(x)."""
    a = astensor(a)
    phi_cdf = 0.5 * (1.0 + special.erf(a.data / math.sqrt(2.0)))
    out = _make(a.data * phi_cdf, (a,))

    def backward():
        pdf = np.exp(-0.5 * a.data * a.data) / _SQRT_2PI
        a._accumulate(out.grad * (phi_cdf + a.data * pdf))

    out._backward = backward if out.requires_grad else None
    return out


def clamp_min(a, floor: float) -> Tensor:
    """Elementwise max(a, floor); gradient is blocked where clamping bites."""
    a = astensor(a)
    out = _make(np.maximum(a.data, floor), (a,))

    def backward():
        a._accumulate(out.grad * (a.data >= floor))

    out._backward = backward if out.requires_grad else None
    return out


def softmax(a, axis: int = -1) -> Tensor:
    a = astensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    out = _make(y, (a,))

    def backward():
        inner = (out.grad * y).sum(axis=axis, keepdims=True)
        a._accumulate(y * (out.grad - inner))

    out._backward = backward if out.requires_grad else None
    return out


def log_softmax(a, axis: int = -1) -> Tensor:
    a = astensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = _make(shifted - lse, (a,))

    def backward():
        soft = np.exp(out.data)
        a._accumulate(out.grad - soft * out.grad.sum(axis=axis, keepdims=True))

    out._backward = backward if out.requires_grad else None
    return out


def l2_norm(a, axis: int = -1, keepdims: bool = False) -> Tensor:
    """Euclidean norm along one axis; the zero vector gets zero gradient."""
    a = astensor(a)
    norm = np.sqrt((a.data * a.data).sum(axis=axis, keepdims=True))
    data = norm if keepdims else np.squeeze(norm, axis=axis)
    out = _make(data, (a,))

    def backward():
        g = out.grad if keepdims else np.expand_dims(out.grad, axis)
        safe = np.where(norm > 0.0, norm, 1.0)
        a._accumulate(g * a.data / safe * (norm > 0.0))

    out._backward = backward if out.requires_grad else None
    return out


def layer_norm(a, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean and unit (biased) variance."""
    a, gain, bias = astensor(a), astensor(gain), astensor(bias)
    d = a.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(
            f"layer_norm gain/bias must have shape ({d},), got {gain.shape} and {bias.shape}"
        )
    mu = a.mean(axis=-1, keepdims=True)
    centered = a - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = (var + eps) ** -0.5
    return centered * inv * gain + bias


def linear(x, weight, bias=None) -> Tensor:
    """Affine map on the last axis: x @ weight (+ bias)."""
    x, weight = astensor(x), astensor(weight)
    if x.shape[-1] != weight.shape[0]:
        raise ShapeError(f"linear: input dim {x.shape[-1]} != weight rows {weight.shape[0]}")
    y = matmul(x, weight)
    return y if bias is None else y + astensor(bias)


def cosine_similarity(a, b, eps: float = 1e-8) -> Tensor:
    """Cosine of the angle between last-axis vectors, denominator floored at eps."""
    a, b = astensor(a), astensor(b)
    num = (a * b).sum(axis=-1)
    den = clamp_min(l2_norm(a) * l2_norm(b), eps)
    return num / den


def time_interp(x, t_out: int) -> Tensor:
    """Linearly resample the time axis (second to last) to ``t_out`` steps.

    Output step t reads source position t * (T_in - 1) / (t_out - 1), so both
    endpoints are preserved; a length-1 source broadcasts.
    """
    x = astensor(x)
    t_in = x.shape[-2]
    m = np.zeros((t_out, t_in))
    for t in range(t_out):
        src = 0.0 if t_out == 1 else t * (t_in - 1) / (t_out - 1)
        lo = int(math.floor(src))
        hi = min(lo + 1, t_in - 1)
        w = src - lo
        m[t, lo] += 1.0 - w
        if w > 0.0:
            m[t, hi] += w
    return matmul(Tensor(m), x)


def time_conv(x, weight, bias, stride: int) -> Tensor:
    """Strided 1-d convolution over time with zero padding.

    ``x`` is [..., T, D_in], ``weight`` is [k, D_in, D_out], ``bias`` is
    [D_out]. Output length is ceil(T / stride); total padding is
    max((out - 1) * stride + k - T, 0), split with the smaller half first.
    """
    x, weight = astensor(x), astensor(weight)
    k, d_in, _ = weight.shape
    t = x.shape[-2]
    if x.shape[-1] != d_in:
        raise ShapeError(f"time_conv: input channels {x.shape[-1]} != weight D_in {d_in}")
    t_out = -(-t // stride)
    pad_total = max((t_out - 1) * stride + k - t, 0)
    left = pad_total // 2
    right = pad_total - left
    pieces = []
    if left:
        pieces.append(Tensor(np.zeros(x.shape[:-2] + (left, d_in))))
    pieces.append(x)
    if right:
        pieces.append(Tensor(np.zeros(x.shape[:-2] + (right, d_in))))
    padded = concat(pieces, axis=-2) if len(pieces) > 1 else x
    span = (t_out - 1) * stride + 1
    y = None
    for j in range(k):
        window = padded[..., j : j + span : stride, :]
        term = matmul(window, weight[j])
        y = term if y is None else y + term
    return y + astensor(bias)
