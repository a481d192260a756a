"""Cross-plane token mixing.

Patch tokens of the N planes of a volume are interleaved patch-position-major
(``k = m * N + n``), so every run of N consecutive tokens spans N distinct
planes. Class tokens never enter a cross-plane block; the contribution a
block returns has exactly zero class rows and is added to the TokenStack by
the caller.
"""

from __future__ import annotations

import numpy as np

from ..core.module import LayerNorm, Module
from ..core.tensor import Tensor, concat, zeros
from .mamba import MambaBlock
from .transformer import TransformerBlock


def interleave(patch: Tensor) -> Tensor:
    """(G, N, M, D) -> (G, M * N, D); a 3D (N, M, D) input gives G = 1."""
    if patch.ndim == 3:
        patch = patch.reshape(1, *patch.shape)
    if patch.ndim != 4:
        raise ValueError(f"interleave expects (N, M, D) or (G, N, M, D), got {patch.shape}")
    groups, planes, patches, dim = patch.shape
    return patch.transpose(0, 2, 1, 3).reshape(groups, patches * planes, dim)


def deinterleave(seq: Tensor, planes: int) -> Tensor:
    """Inverse of :func:`interleave`: (G, M * N, D) -> (G, N, M, D)."""
    if seq.ndim != 3 or seq.shape[1] % planes:
        raise ValueError(f"cannot split a sequence of shape {seq.shape} into {planes} planes")
    groups, length, dim = seq.shape
    return seq.reshape(groups, length // planes, planes, dim).transpose(0, 2, 1, 3)


def _with_zero_class_rows(patch: Tensor) -> Tensor:
    groups, planes, _, dim = patch.shape
    return concat([zeros((groups, planes, 1, dim), dtype=patch.dtype), patch], axis=2)


def _check_stack(v: Tensor, dim: int) -> None:
    if v.ndim != 4 or v.shape[-1] != dim or v.shape[2] < 2:
        raise ValueError(f"expected a TokenStack (G, N, 1 + M, {dim}), got {v.shape}")


class PatchMamba(Module):
    """Mamba over the patch tokens of a TokenStack, optionally pre-normed.

    With ``cross_plane`` the scan runs over the interleaved M * N sequence of
    each volume (the CPM block); without it each plane's M patch tokens are
    scanned on their own (in-plane Mamba). At N = 1 the two coincide.

    ``prenorm=False`` leaves the bare Mamba block between the two reshapes;
    the default applies a LayerNorm to the patch tokens first.
    """

    def __init__(
        self,
        d_model: int,
        rng: np.random.Generator,
        cross_plane: bool = True,
        d_state: int = 16,
        d_conv: int = 4,
        prenorm: bool = True,
    ):
        super().__init__()
        self.d_model = d_model
        self.cross_plane = cross_plane
        self.norm = LayerNorm(d_model) if prenorm else None
        self.mamba = MambaBlock(d_model, rng, d_state=d_state, d_conv=d_conv)

    def forward(self, v: Tensor) -> Tensor:
        _check_stack(v, self.d_model)
        groups, planes, tokens, dim = v.shape
        patch = v[:, :, 1:, :]
        if self.cross_plane:
            mixed = deinterleave(self.mamba(self._normed(interleave(patch))), planes)
        else:
            flat = patch.reshape(groups * planes, tokens - 1, dim)
            mixed = self.mamba(self._normed(flat)).reshape(groups, planes, tokens - 1, dim)
        return _with_zero_class_rows(mixed)

    def _normed(self, x: Tensor) -> Tensor:
        return x if self.norm is None else self.norm(x)


class CrossPlaneAttention(Module):
    """Self-attention over the interleaved M * N patch tokens of a volume.

    The attention baseline for cross-plane modelling; its cost grows with
    (M * N)^2. The wrapped block carries its own residual, so the
    contribution is ``block(x) - x``.
    """

    def __init__(self, d_model: int, heads: int, seq_len: int, rng: np.random.Generator):
        super().__init__()
        self.d_model = d_model
        self.block = TransformerBlock(d_model, heads, rng, seq_len=seq_len)

    def forward(self, v: Tensor) -> Tensor:
        _check_stack(v, self.d_model)
        planes = v.shape[1]
        seq = interleave(v[:, :, 1:, :])
        out, _ = self.block(seq, capture=False)
        return _with_zero_class_rows(deinterleave(out - seq, planes))


__all__ = ["CrossPlaneAttention", "PatchMamba", "deinterleave", "interleave"]
