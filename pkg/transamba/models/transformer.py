from __future__ import annotations

import math
from typing import Optional, Tuple

import numpy as np

from ..core.functional import gelu, softmax
from ..core.module import LayerNorm, Linear, Module
from ..core.tensor import Tensor


class TransformerBlock(Module):
    """Pre-norm ViT block: multi-head self-attention then a 4x GELU MLP.

    ``forward`` returns the new tokens and, when ``capture`` is set, the
    post-softmax attention averaged over heads as a plain array
    (batch, L, L). A block built with ``seq_len`` rejects other lengths.
    """

    def __init__(
        self,
        d_model: int,
        heads: int,
        rng: np.random.Generator,
        seq_len: Optional[int] = None,
        mlp_ratio: int = 4,
    ):
        super().__init__()
        if d_model % heads:
            raise ValueError(f"d_model {d_model} is not divisible by {heads} heads")
        self.d_model = d_model
        self.heads = heads
        self.head_dim = d_model // heads
        self.seq_len = seq_len
        self.scale = 1.0 / math.sqrt(self.head_dim)

        self.norm1 = LayerNorm(d_model)
        self.qkv = Linear(d_model, 3 * d_model, rng)
        self.proj = Linear(d_model, d_model, rng)
        self.norm2 = LayerNorm(d_model)
        self.fc1 = Linear(d_model, mlp_ratio * d_model, rng)
        self.fc2 = Linear(mlp_ratio * d_model, d_model, rng)

    def attention(self, x: Tensor) -> Tuple[Tensor, Tensor]:
        batch, length, _ = x.shape
        qkv = self.qkv(x).reshape(batch, length, 3, self.heads, self.head_dim).transpose(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        att = softmax((q @ k.swapaxes(-1, -2)) * self.scale, axis=-1)
        out = (att @ v).transpose(0, 2, 1, 3).reshape(batch, length, self.d_model)
        return self.proj(out), att

    def forward(self, x: Tensor, capture: bool = True) -> Tuple[Tensor, Optional[np.ndarray]]:
        if x.ndim != 3 or x.shape[-1] != self.d_model:
            raise ValueError(f"TransformerBlock expects (batch, L, {self.d_model}) input, got {x.shape}")
        if self.seq_len is not None and x.shape[1] != self.seq_len:
            raise ValueError(f"sequence length {x.shape[1]} does not match the block's {self.seq_len}")
        attended, att = self.attention(self.norm1(x))
        x = x + attended
        x = x + self.fc2(gelu(self.fc1(self.norm2(x))))
        record = att.data.mean(axis=1) if capture else None
        return x, record


__all__ = ["TransformerBlock"]
