from __future__ import annotations

import math
from typing import Optional, Union

import numpy as np
from scipy.special import erf

from .errors import DataError
from .tensor import Tensor, matmul

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Max-subtracted softmax; NaN inputs propagate to NaN outputs."""
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return Tensor.from_op(s, (x,), backward, "softmax")


def gelu(x: Tensor) -> Tensor:
    a = x.data
    cdf = 0.5 * (1.0 + erf(a / _SQRT2))

    def backward(g):
        return (g * (cdf + a * _INV_SQRT_2PI * np.exp(-0.5 * a * a)),)

    return Tensor.from_op(a * cdf, (x,), backward, "gelu")


def silu(x: Tensor) -> Tensor:
    return x.silu()


def sigmoid(x: Tensor) -> Tensor:
    return x.sigmoid()


def softplus(x: Tensor) -> Tensor:
    return x.softplus()


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    out = matmul(x, weight)
    return out + bias if bias is not None else out


def layer_norm(x: Tensor, weight: Tensor, bias: Tensor, eps: float = 1e-6) -> Tensor:
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    return centered * ((var + eps) ** -0.5) * weight + bias


def conv1d_causal(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Per-channel causal convolution.

    ``x`` is (B, L, C), ``weight`` is (C, k). Output position t sees inputs
    t-k+1..t only (left zero padding).
    """
    if x.ndim != 3:
        raise ValueError(f"conv1d_causal expects (B, L, C) input, got {x.shape}")
    channels, k = weight.shape
    if x.shape[-1] != channels:
        raise ValueError(f"conv1d_causal channel mismatch: input {x.shape[-1]} vs weight {channels}")
    length = x.shape[1]
    xp = np.pad(x.data, ((0, 0), (k - 1, 0), (0, 0)))
    w = weight.data
    out = np.zeros_like(x.data)
    for j in range(k):
        out = out + xp[:, j : j + length, :] * w[:, j]
    parents = [x, weight]
    if bias is not None:
        out = out + bias.data
        parents.append(bias)

    def backward(g):
        gxp = np.zeros_like(xp)
        gw = np.zeros_like(w)
        for j in range(k):
            gxp[:, j : j + length, :] += g * w[:, j]
            gw[:, j] = (g * xp[:, j : j + length, :]).sum(axis=(0, 1))
        grads = [gxp[:, k - 1 :, :], gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 1)))
        return grads

    return Tensor.from_op(out, parents, backward, "conv1d_causal")


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Same-padded 2D convolution, stride 1.

    ``x`` is (B, C, H, W), ``weight`` is (O, C, k, k) with odd k; padding is k // 2.
    """
    if x.ndim != 4:
        raise ValueError(f"conv2d expects (B, C, H, W) input, got {x.shape}")
    out_ch, in_ch, kh, kw = weight.shape
    if kh != kw or kh % 2 == 0:
        raise ValueError(f"conv2d needs an odd square kernel, got {kh}x{kw}")
    if x.shape[1] != in_ch:
        raise ValueError(f"conv2d channel mismatch: input {x.shape[1]} vs weight {in_ch}")
    batch, _, height, width = x.shape
    k, pad = kh, kh // 2
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = np.empty((batch, height, width, in_ch, k, k), dtype=x.data.dtype)
    for i in range(k):
        for j in range(k):
            cols[..., i, j] = xp[:, :, i : i + height, j : j + width].transpose(0, 2, 3, 1)
    cols2 = cols.reshape(batch * height * width, in_ch * k * k)
    wmat = weight.data.reshape(out_ch, in_ch * k * k)
    out = (cols2 @ wmat.T).reshape(batch, height, width, out_ch).transpose(0, 3, 1, 2)
    parents = [x, weight]
    if bias is not None:
        out = out + bias.data[None, :, None, None]
        parents.append(bias)

    def backward(g):
        gm = g.transpose(0, 2, 3, 1).reshape(-1, out_ch)
        gw = (gm.T @ cols2).reshape(weight.shape)
        gcols = (gm @ wmat).reshape(batch, height, width, in_ch, k, k)
        gxp = np.zeros_like(xp)
        for i in range(k):
            for j in range(k):
                gxp[:, :, i : i + height, j : j + width] += gcols[..., i, j].transpose(0, 3, 1, 2)
        grads = [gxp[:, :, pad : pad + height, pad : pad + width], gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    return Tensor.from_op(out, parents, backward, "conv2d")


def binary_cross_entropy_with_logits(
    logits: Tensor,
    targets: Union[np.ndarray, Tensor],
    pos_weight: float = 1.0,
) -> Tensor:
    """Mean weighted BCE; the positive term is scaled by ``pos_weight``."""
    y = targets.data if isinstance(targets, Tensor) else np.asarray(targets)
    if y.shape != logits.shape:
        raise ValueError(f"targets shape {y.shape} does not match logits {logits.shape}")
    if not np.isin(y, (0, 1)).all():
        raise DataError("labels must be 0 or 1")
    if pos_weight <= 0:
        raise ValueError(f"pos_weight must be positive, got {pos_weight}")
    y = y.astype(logits.dtype)
    positive = Tensor(y * pos_weight, dtype=logits.dtype)
    negative = Tensor(1.0 - y, dtype=logits.dtype)
    return ((-logits).softplus() * positive + logits.softplus() * negative).mean()


__all__ = [
    "binary_cross_entropy_with_logits",
    "conv1d_causal",
    "conv2d",
    "gelu",
    "layer_norm",
    "linear",
    "sigmoid",
    "silu",
    "softmax",
    "softplus",
]
