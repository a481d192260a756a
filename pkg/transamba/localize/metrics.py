"""Overlap and surface-distance metrics between binary volumes."""

from __future__ import annotations

from pathlib import Path
from typing import Dict, Iterable, List, Mapping, NamedTuple, Sequence, Union

import numpy as np
from scipy import ndimage


class Metrics(NamedTuple):
    dsc: float
    hd95: float
    iou: float


def surface(mask: np.ndarray) -> np.ndarray:
    """Foreground voxels with at least one face neighbour outside the mask."""
    mask = np.asarray(mask, dtype=bool)
    return mask & ~ndimage.binary_erosion(mask, border_value=0)


def surface_distances(pred: np.ndarray, truth: np.ndarray) -> np.ndarray:
    """Both directed surface-to-surface distance sets, concatenated."""
    sp, st = surface(pred), surface(truth)
    to_truth = ndimage.distance_transform_edt(~st)
    to_pred = ndimage.distance_transform_edt(~sp)
    return np.concatenate([to_truth[sp], to_pred[st]])


def dice(pred: np.ndarray, truth: np.ndarray) -> float:
    total = int(pred.sum()) + int(truth.sum())
    if total == 0:
        return 1.0
    return 2.0 * int((pred & truth).sum()) / total


def mean_plane_iou(pred: np.ndarray, truth: np.ndarray) -> float:
    """IoU per plane (axis 0), averaged over planes where either mask is non-empty."""
    inter = (pred & truth).reshape(pred.shape[0], -1).sum(axis=1)
    union = (pred | truth).reshape(pred.shape[0], -1).sum(axis=1)
    active = union > 0
    if not active.any():
        return 1.0
    return float(np.mean(inter[active] / union[active]))


def metrics(pred: np.ndarray, truth: np.ndarray) -> Metrics:
    """3D Dice, 95th-percentile symmetric surface distance and 2D mean IoU.

    Unit voxel spacing. Two empty masks score (1, 0, 1); an empty mask
    against a non-empty one scores dsc = iou = 0 with hd95 set to the
    volume diagonal.
    """
    pred = np.asarray(pred).astype(bool)
    truth = np.asarray(truth).astype(bool)
    if pred.shape != truth.shape:
        raise ValueError(f"prediction shape {pred.shape} does not match truth {truth.shape}")
    if pred.ndim < 2:
        raise ValueError(f"metrics need at least 2D masks, got shape {pred.shape}")
    p_any, t_any = pred.any(), truth.any()
    if not p_any and not t_any:
        return Metrics(1.0, 0.0, 1.0)
    if not p_any or not t_any:
        return Metrics(0.0, float(np.linalg.norm(pred.shape)), 0.0)
    hd95 = float(np.percentile(surface_distances(pred, truth), 95))
    return Metrics(dice(pred, truth), hd95, mean_plane_iou(pred, truth))


def summarize(per_volume: Sequence[Metrics]) -> Dict[str, float]:
    if not per_volume:
        raise ValueError("no per-volume metrics to summarize")
    table = np.asarray(per_volume, dtype=np.float64)
    means = table.mean(axis=0)
    return {"volumes": len(per_volume), "dsc": float(means[0]), "hd95": float(means[1]), "iou": float(means[2])}


def _format(value: object) -> str:
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".10g")
    return str(value)


def write_metrics(path: Union[str, Path], values: Mapping[str, object]) -> Path:
    """Line-delimited ``name<TAB>value``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(f"{name}\t{_format(value)}\n" for name, value in values.items()), encoding="utf-8")
    return path


def write_table(path: Union[str, Path], rows: Iterable[Mapping[str, object]]) -> Path:
    rows = list(rows)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    columns: List[str] = list(rows[0].keys()) if rows else []
    lines = ["\t".join(columns)]
    lines += ["\t".join(_format(row[c]) for c in columns) for row in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


__all__ = [
    "Metrics",
    "dice",
    "mean_plane_iou",
    "metrics",
    "summarize",
    "surface",
    "surface_distances",
    "write_metrics",
    "write_table",
]
