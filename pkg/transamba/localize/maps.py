"""Localization maps from class-to-patch attention or patch-token CAMs."""

from __future__ import annotations

import logging
import math
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np
from scipy import ndimage

from ..core.config import ModelConfig
from ..core.protocol import AttentionRecord, EncoderOutput
from ..utils.modality import save_pgm

logger = logging.getLogger(__name__)

LayerAttention = Union[np.ndarray, Sequence[AttentionRecord]]


def _layer_matrices(layer: int, entry: LayerAttention) -> np.ndarray:
    if isinstance(entry, np.ndarray):
        if entry.ndim != 3 or entry.shape[1] != entry.shape[2]:
            raise ValueError(f"layer {layer}: expected (N, 1 + M, 1 + M) attention, got {entry.shape}")
        return entry
    records = list(entry)
    if not records:
        raise ValueError(f"layer {layer} has no attention records")
    planes = sorted(r.plane for r in records)
    if planes != list(range(len(records))):
        raise ValueError(f"layer {layer}: incomplete or duplicated planes {planes}")
    for r in records:
        if r.layer != layer:
            raise ValueError(f"record for layer {r.layer} found at position {layer}")
    return np.stack([r.matrix for r in sorted(records, key=lambda r: r.plane)])


def c2p_aggregate(records: Sequence[LayerAttention], layers: Optional[int] = None) -> np.ndarray:
    """Sum over layers of each plane's class-token row restricted to patches.

    ``records`` is indexed ``[layer][plane]``, either as AttentionRecords or
    as one (N, 1 + M, 1 + M) array per layer. Returns (N, M).
    """
    if len(records) == 0:
        raise ValueError("no attention records to aggregate")
    if layers is not None and len(records) != layers:
        raise ValueError(f"expected attention from {layers} layers, got {len(records)}")
    total: Optional[np.ndarray] = None
    for layer, entry in enumerate(records):
        c2p = _layer_matrices(layer, entry)[:, 0, 1:]
        if total is None:
            total = np.array(c2p, dtype=np.float64)
        elif c2p.shape != total.shape:
            raise ValueError(f"layer {layer} attention shape {c2p.shape} differs from {total.shape}")
        else:
            total = total + c2p
    return total


def _normalize(maps: np.ndarray) -> np.ndarray:
    lo, hi = maps.min(), maps.max()
    if not hi > lo:
        return np.zeros_like(maps)
    return (maps - lo) / (hi - lo)


def upscale_normalize(a: np.ndarray, height: int, width: int, per_plane: bool = False) -> np.ndarray:
    """(N, M) patch scores -> (N, height, width) maps in [0, 1].

    Bilinear interpolation with aligned corners, then min-max normalisation
    over the whole volume (or each plane with ``per_plane``). A constant
    input gives all-zero maps.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"expected (N, M) scores, got {a.shape}")
    side = math.isqrt(a.shape[1])
    if side * side != a.shape[1]:
        raise ValueError(f"M = {a.shape[1]} is not a perfect square")
    grid = a.reshape(a.shape[0], side, side)
    if side == 1:
        up = np.broadcast_to(grid, (a.shape[0], height, width)).copy()
    else:
        up = ndimage.zoom(grid, (1.0, height / side, width / side), order=1, mode="nearest")
    if per_plane:
        return np.stack([_normalize(plane) for plane in up])
    return _normalize(up)


def patch_cam(conv_out: np.ndarray, height: int, width: int, per_plane: bool = False) -> np.ndarray:
    """Conv-branch spatial logits through the same upscale/normalise path."""
    return upscale_normalize(conv_out, height, width, per_plane=per_plane)


def threshold_mask(maps: np.ndarray, tau: float = 0.5) -> np.ndarray:
    return np.asarray(maps) >= tau


def volume_maps(
    output: EncoderOutput,
    config: ModelConfig,
    volume: int = 0,
    per_plane: bool = False,
) -> np.ndarray:
    """Localization maps (N, H, W) of one volume of an encoder pass."""
    if config.localizes_with_attention:
        if output.attention is None:
            raise ValueError(f"variant {config.variant.value} captured no attention; use patch CAMs")
        scores = c2p_aggregate([layer_att[volume] for layer_att in output.attention], layers=config.layers)
    else:
        scores = output.patch_logits[volume]
    return upscale_normalize(scores, config.image_height, config.image_width, per_plane=per_plane)


def export_pgm(maps: np.ndarray, directory: Union[str, Path], prefix: str = "plane") -> List[Path]:
    directory = Path(directory)
    paths = [save_pgm(plane, directory / f"{prefix}_{i:03d}.pgm") for i, plane in enumerate(maps)]
    logger.debug(f"Exported {len(paths)} maps to {directory}")
    return paths


__all__ = [
    "c2p_aggregate",
    "export_pgm",
    "patch_cam",
    "threshold_mask",
    "upscale_normalize",
    "volume_maps",
]
