"""The hybrid Transformer/SSM encoder.

A volume batch (G, N, H, W) is embedded plane by plane into a TokenStack
(G, N, 1 + M, D). Each of the L hybrid layers pairs a cross-plane block with
an in-plane block according to the layer design:

- ``CrossIn``:  V' = V + CP(V);  T = IP(V')
- ``InCross``:  T' = IP(V);      T = T' + CP(T')
- ``Parallel``: T' = IP(V);      T = T' + CP(V)

CP returns a contribution with zero class rows. The variant decides which
blocks exist (see :class:`~transamba.core.config.Variant`).
"""

from __future__ import annotations

import logging
from typing import List, Optional, Tuple, Union

import numpy as np

from ..core.config import LayerDesign, ModelConfig, Variant
from ..core.functional import binary_cross_entropy_with_logits, conv2d
from ..core.module import LayerNorm, Module, ModuleList, Parameter, normal_init, zeros_init
from ..core.protocol import ClassScores, EncoderOutput
from ..core.tensor import Tensor, concat, take_along_axis
from .cpm import CrossPlaneAttention, PatchMamba
from .mamba import BiSSMBlock
from .transformer import TransformerBlock

logger = logging.getLogger(__name__)


class PatchEmbed(Module):
    """Non-overlapping P x P patches projected to D, class token, positions."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        super().__init__()
        self.patch_size = config.patch_size
        self.image_size = (config.image_height, config.image_width)
        self.proj_weight = normal_init(rng, (config.patch_size**2, config.model_dim))
        self.proj_bias = zeros_init((config.model_dim,))
        self.cls_token = normal_init(rng, (1, 1, config.model_dim))
        self.pos_embed = normal_init(rng, (1, 1 + config.num_patches, config.model_dim))

    def forward(self, planes: Tensor) -> Tensor:
        if planes.ndim == 2:
            planes = planes.reshape(1, *planes.shape)
        batch, height, width = planes.shape
        p = self.patch_size
        if height % p or width % p:
            raise ValueError(f"plane extents {height}x{width} are not divisible by patch size {p}")
        if (height, width) != self.image_size:
            raise ValueError(f"expected planes of {self.image_size[0]}x{self.image_size[1]}, got {height}x{width}")
        patches = (
            planes.reshape(batch, height // p, p, width // p, p)
            .transpose(0, 1, 3, 2, 4)
            .reshape(batch, (height // p) * (width // p), p * p)
        )
        tokens = patches @ self.proj_weight + self.proj_bias
        cls = self.cls_token.expand(batch, 1, self.cls_token.shape[-1])
        return concat([cls, tokens], axis=1) + self.pos_embed


def gwrp(x: Tensor, decay: float) -> Tensor:
    """Global weighted ranking pooling over the last axis.

    Values sorted in descending order are weighted by ``decay**i`` and the
    weights normalised to sum to one: ``decay=1`` is the mean, ``decay -> 0``
    the max.
    """
    if not 0.0 < decay <= 1.0:
        raise ValueError(f"gwrp decay must be in (0, 1], got {decay}")
    order = np.argsort(-x.data, axis=-1, kind="stable")
    ranked = take_along_axis(x, order, axis=-1)
    weights = decay ** np.arange(x.shape[-1], dtype=np.float64)
    weights = Tensor(weights / weights.sum(), dtype=x.dtype)
    return (ranked * weights).sum(axis=-1)


class ClassificationHead(Module):
    """Class-token GAP logit and conv + GWRP patch logit, per plane."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator, kernel_size: int = 3):
        super().__init__()
        self.grid = config.grid_size
        self.decay = config.gwrp_decay
        self.conv_weight = normal_init(rng, (1, config.model_dim, kernel_size, kernel_size))
        self.conv_bias = zeros_init((1,))

    def forward(self, tokens: Tensor) -> Tuple[ClassScores, Tensor]:
        batch, length, dim = tokens.shape
        if length - 1 != self.grid * self.grid:
            raise ValueError(f"{length - 1} patch tokens do not form a {self.grid}x{self.grid} grid")
        y_class = tokens[:, 0, :].mean(axis=-1)
        grid = tokens[:, 1:, :].swapaxes(1, 2).reshape(batch, dim, self.grid, self.grid)
        conv_map = conv2d(grid, self.conv_weight, self.conv_bias).reshape(batch, length - 1)
        return ClassScores(y_class=y_class, y_patch=gwrp(conv_map, self.decay)), conv_map


class SSMLayer(Module):
    """Residual bidirectional SSM over all 1 + M tokens of each plane."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        super().__init__()
        self.norm = LayerNorm(config.model_dim)
        self.ssm = BiSSMBlock(
            config.model_dim,
            rng,
            d_state=config.d_state,
            d_conv=config.d_conv,
            shared_weights=config.bissm_shared,
        )

    def forward(self, x: Tensor, capture: bool = True) -> Tuple[Tensor, None]:
        return x + self.ssm(self.norm(x)), None


def compute_pos_weight(labels: Union[np.ndarray, List[int]], lo: float = 0.1, hi: float = 10.0) -> float:
    """Negative-to-positive label ratio clipped to ``[lo, hi]``."""
    labels = np.asarray(labels).reshape(-1)
    positives = int((labels == 1).sum())
    negatives = int((labels == 0).sum())
    if positives == 0:
        return float(hi)
    return float(np.clip(negatives / positives, lo, hi))


def training_loss(scores: ClassScores, labels: Union[np.ndarray, Tensor], pos_weight: float = 1.0) -> Tensor:
    """Weighted BCE of the class-token branch plus that of the patch branch."""
    return binary_cross_entropy_with_logits(
        scores.y_class, labels, pos_weight
    ) + binary_cross_entropy_with_logits(scores.y_patch, labels, pos_weight)


class Encoder(Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        variant = config.variant
        D, L = config.model_dim, config.layers
        embed_seq, cross_seq, inplane_seq, head_seq = np.random.SeedSequence(config.init_seed).spawn(4)
        cross_rngs = [np.random.default_rng(s) for s in cross_seq.spawn(L)]
        inplane_rngs = [np.random.default_rng(s) for s in inplane_seq.spawn(L)]

        self.embed = PatchEmbed(config, np.random.default_rng(embed_seq))
        self.cpm: Optional[ModuleList] = None
        self.mamba: Optional[ModuleList] = None
        self.cross_sa: Optional[ModuleList] = None
        self.xformer: Optional[ModuleList] = None
        self.bissm: Optional[ModuleList] = None
        mamba_kw = dict(d_state=config.d_state, d_conv=config.d_conv, prenorm=config.mamba_prenorm)
        if variant in (Variant.V3, Variant.V4):
            self.cpm = ModuleList(PatchMamba(D, rng, cross_plane=True, **mamba_kw) for rng in cross_rngs)
        elif variant == Variant.V2:
            self.mamba = ModuleList(PatchMamba(D, rng, cross_plane=False, **mamba_kw) for rng in cross_rngs)
        elif variant == Variant.V5:
            seq_len = config.num_patches * config.planes
            self.cross_sa = ModuleList(
                CrossPlaneAttention(D, config.heads, seq_len, rng) for rng in cross_rngs
            )
        if variant.has_attention:
            tokens = 1 + config.num_patches
            self.xformer = ModuleList(TransformerBlock(D, config.heads, rng, seq_len=tokens) for rng in inplane_rngs)
        else:
            self.bissm = ModuleList(SSMLayer(config, rng) for rng in inplane_rngs)
        self.head = ClassificationHead(config, np.random.default_rng(head_seq))
        logger.debug(f"Built {variant.value}/{config.layer_design.value} encoder with {self.num_parameters()} parameters")

    @property
    def cross_blocks(self) -> Optional[ModuleList]:
        return self.cpm or self.mamba or self.cross_sa

    @property
    def inplane_blocks(self) -> ModuleList:
        return self.xformer or self.bissm

    def hybrid_layer(self, layer: int, v: Tensor, capture: bool = True) -> Tuple[Tensor, Optional[np.ndarray]]:
        """One hybrid layer on a TokenStack (G, N, 1 + M, D).

        Returns the new stack and the head-averaged in-plane attention
        (G, N, 1 + M, 1 + M), or ``None`` for attention-free variants.
        """
        groups, planes, tokens, dim = v.shape
        cross = self.cross_blocks[layer] if self.cross_blocks is not None else None
        inplane = self.inplane_blocks[layer]

        def run_inplane(x: Tensor) -> Tuple[Tensor, Optional[np.ndarray]]:
            out, att = inplane(x.reshape(groups * planes, tokens, dim), capture=capture)
            out = out.reshape(groups, planes, tokens, dim)
            if att is not None:
                att = att.reshape(groups, planes, tokens, tokens)
            return out, att

        design = self.config.layer_design
        if cross is None:
            return run_inplane(v)
        if design == LayerDesign.CROSS_IN:
            return run_inplane(v + cross(v))
        t, att = run_inplane(v)
        if design == LayerDesign.IN_CROSS:
            return t + cross(t), att
        return t + cross(v), att

    def forward(self, volumes: Union[Tensor, np.ndarray], capture_attention: bool = True) -> EncoderOutput:
        x = volumes if isinstance(volumes, Tensor) else Tensor(volumes)
        if x.ndim == 3:
            x = x.reshape(1, *x.shape)
        if x.ndim != 4:
            raise ValueError(f"encoder expects volumes (G, N, H, W), got {x.shape}")
        groups, planes, height, width = x.shape
        tokens = self.embed(x.reshape(groups * planes, height, width))
        v = tokens.reshape(groups, planes, tokens.shape[1], tokens.shape[2])

        capture = capture_attention and self.config.variant.has_attention
        attention: Optional[List[np.ndarray]] = [] if capture else None
        for layer in range(self.config.layers):
            v, att = self.hybrid_layer(layer, v, capture=capture)
            if attention is not None:
                attention.append(att)

        flat = v.reshape(groups * planes, v.shape[2], v.shape[3])
        scores, conv_map = self.head(flat)
        return EncoderOutput(
            scores=scores,
            patch_logits=conv_map.data.reshape(groups, planes, -1).copy(),
            attention=attention,
            tokens=v,
        )


__all__ = [
    "ClassificationHead",
    "Encoder",
    "PatchEmbed",
    "SSMLayer",
    "compute_pos_weight",
    "gwrp",
    "training_loss",
]
