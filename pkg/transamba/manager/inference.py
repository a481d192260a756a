"""Single-stage localization of whole volumes and evaluation against truth."""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..core.checkpoint import load_checkpoint
from ..core.config import InferConfig, ModelConfig, read_model_config
from ..core.errors import DataError
from ..core.executor import VolumeExecutor, get_executor
from ..core.tensor import no_grad
from ..data.sampling import infer_starts, merge_windows
from ..data.synthetic import SyntheticVolume, slice_labels
from ..data.volume_io import DatasetInfo, read_dataset, volume_name, write_dataset
from ..localize.maps import export_pgm, threshold_mask, volume_maps
from ..localize.metrics import Metrics, metrics, summarize, write_metrics, write_table
from ..models.encoder import Encoder
from .trainer import CHECKPOINT_BEST, CHECKPOINT_FINAL, MODEL_CONF

logger = logging.getLogger(__name__)

MASKS_DIR = "masks"
MAPS_DIR = "maps"
METRICS_FILE = "metrics.tsv"
PER_VOLUME_FILE = "per_volume.tsv"


def load_model(
    run_dir: Path, checkpoint: Optional[Path] = None, which: str = "final"
) -> Tuple[Encoder, ModelConfig]:
    """Rebuild an encoder from ``model.conf`` and a checkpoint of a training run dir.

    An explicit ``checkpoint`` file wins; otherwise ``which`` picks the run's
    ``best`` (highest validation accuracy) or ``final`` checkpoint.
    """
    run_dir = Path(run_dir)
    if checkpoint is None:
        names = {"best": CHECKPOINT_BEST, "final": CHECKPOINT_FINAL}
        if which not in names:
            raise ValueError(f"unknown checkpoint choice {which!r} (expected best or final)")
        checkpoint = run_dir / names[which]
    config = read_model_config(run_dir / MODEL_CONF)
    model = Encoder(config)
    model.load_state_dict(load_checkpoint(checkpoint))
    return model, config


def localize_volume(
    model: Encoder,
    config: ModelConfig,
    volume: SyntheticVolume,
    infer: InferConfig,
) -> Tuple[np.ndarray, np.ndarray]:
    """Maps (Z, H, W) in [0, 1] and the thresholded mask of one volume."""
    depth = volume.shape[0]
    starts = infer_starts(depth, config.planes)
    windows = np.stack([volume.voxels[s : s + config.planes] for s in starts])
    with no_grad():
        output = model(windows, capture_attention=config.localizes_with_attention)
    maps = [volume_maps(output, config, volume=g, per_plane=infer.per_plane_norm) for g in range(len(starts))]
    merged = merge_windows(starts, maps, depth)
    return merged, threshold_mask(merged, infer.threshold)


def run_inference(
    model: Encoder,
    config: ModelConfig,
    volumes: Sequence[SyntheticVolume],
    infer: InferConfig,
    out_dir: Path,
    executor: Optional[VolumeExecutor] = None,
) -> List[Path]:
    """Write ``masks/vol_XXXX.tsvl`` (maps as voxels, mask, mask slice labels)."""
    out_dir = Path(out_dir)
    for i, v in enumerate(volumes):
        if v.shape[1:] != (config.image_height, config.image_width):
            raise DataError(f"volume {i} planes are {v.shape[1]}x{v.shape[2]}, model expects {config.image_height}x{config.image_width}")

    results = (executor or get_executor()).map(lambda v: localize_volume(model, config, v, infer), volumes)
    predictions = [
        SyntheticVolume(voxels=maps.astype(np.float32), mask=mask, slice_labels=slice_labels(mask))
        for maps, mask in results
    ]
    depth, height, width = volumes[0].shape if volumes else (0, config.image_height, config.image_width)
    info = DatasetInfo(count=len(predictions), depth=depth, height=height, width=width, split="prediction")
    paths = write_dataset(out_dir / MASKS_DIR, predictions, info)
    if infer.export_pgm:
        for i, pred in enumerate(predictions):
            paths += export_pgm(pred.voxels, out_dir / MAPS_DIR / volume_name(i).replace(".tsvl", ""))
    logger.info(f"Localized {len(predictions)} volumes into {out_dir / MASKS_DIR}")
    return paths


def evaluate_volumes(
    predictions: Sequence[SyntheticVolume],
    truth: Sequence[SyntheticVolume],
    executor: Optional[VolumeExecutor] = None,
) -> List[Metrics]:
    if len(predictions) != len(truth):
        raise DataError(f"{len(predictions)} predicted volumes for {len(truth)} truth volumes")
    for i, (p, t) in enumerate(zip(predictions, truth)):
        if p.shape != t.shape:
            raise DataError(f"volume {i}: prediction shape {p.shape} does not match truth {t.shape}")
    return (executor or get_executor()).map(lambda pair: metrics(pair[0].mask, pair[1].mask), list(zip(predictions, truth)))


def run_evaluation(pred_dir: Path, truth_dir: Path, out_dir: Path) -> Tuple[Dict[str, float], List[Path]]:
    """Compare ``pred_dir`` masks with ``truth_dir`` masks; write metrics.tsv and per_volume.tsv."""
    predictions, _ = read_dataset(pred_dir)
    truth, _ = read_dataset(truth_dir)
    per_volume = evaluate_volumes(predictions, truth)
    summary = summarize(per_volume)
    out_dir = Path(out_dir)
    rows = [{"volume": volume_name(i), **m._asdict()} for i, m in enumerate(per_volume)]
    paths = [
        write_metrics(out_dir / METRICS_FILE, summary),
        write_table(out_dir / PER_VOLUME_FILE, rows),
    ]
    logger.info(f"Evaluated {len(per_volume)} volumes: dsc={summary['dsc']:.4f} iou={summary['iou']:.4f}")
    return summary, paths


__all__ = [
    "evaluate_volumes",
    "load_model",
    "localize_volume",
    "run_evaluation",
    "run_inference",
]
