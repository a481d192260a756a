"""Contiguous N-plane windows over a volume."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from ..core.errors import DataError
from .synthetic import SyntheticVolume


@dataclass
class VolumeSample:
    start: int
    planes: np.ndarray  # (N, H, W)
    labels: np.ndarray  # (N,)
    mask: Optional[np.ndarray] = None  # (N, H, W)

    @property
    def stop(self) -> int:
        return self.start + self.planes.shape[0]


def _check_depth(depth: int, planes: int) -> None:
    if planes < 1:
        raise ValueError(f"window size must be >= 1, got {planes}")
    if depth < planes:
        raise DataError(f"volume has {depth} planes, fewer than the window size {planes}")


def window(volume: SyntheticVolume, start: int, planes: int) -> VolumeSample:
    stop = start + planes
    return VolumeSample(
        start=start,
        planes=volume.voxels[start:stop],
        labels=volume.slice_labels[start:stop],
        mask=volume.mask[start:stop],
    )


def sample_train(volume: SyntheticVolume, planes: int, rng: np.random.Generator) -> VolumeSample:
    """A window whose start is uniform over ``[0, Z - N]``."""
    depth = volume.shape[0]
    _check_depth(depth, planes)
    return window(volume, int(rng.integers(0, depth - planes + 1)), planes)


def infer_starts(depth: int, planes: int) -> List[int]:
    """Sequential non-overlapping starts; a short remainder back-shifts the last window to end at Z."""
    _check_depth(depth, planes)
    starts = list(range(0, depth - planes + 1, planes))
    if depth % planes:
        starts.append(depth - planes)
    return starts


def sample_infer(volume: SyntheticVolume, planes: int) -> List[VolumeSample]:
    return [window(volume, s, planes) for s in infer_starts(volume.shape[0], planes)]


def merge_windows(starts: Sequence[int], outputs: Sequence[np.ndarray], depth: int) -> np.ndarray:
    """Stitch per-window outputs (N, ...) into a (Z, ...) array; later windows win in overlaps."""
    if len(starts) != len(outputs) or not outputs:
        raise ValueError("need one output per window start")
    merged = np.zeros((depth,) + outputs[0].shape[1:], dtype=outputs[0].dtype)
    covered = np.zeros(depth, dtype=bool)
    for start, out in zip(starts, outputs):
        merged[start : start + out.shape[0]] = out
        covered[start : start + out.shape[0]] = True
    if not covered.all():
        raise ValueError(f"windows leave planes {np.flatnonzero(~covered).tolist()} uncovered")
    return merged


__all__ = ["VolumeSample", "infer_starts", "merge_windows", "sample_infer", "sample_train", "window"]
