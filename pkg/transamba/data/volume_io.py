"""The ``TSVL`` volume file and dataset directories.

Layout (little-endian): magic ``TSVL``, version u32, Z, H, W u32, f32 voxels
(Z*H*W), u8 mask (Z*H*W), u8 slice labels (Z). A dataset directory holds
``vol_XXXX.tsvl`` files and a ``dataset.json`` with generation parameters.
"""

from __future__ import annotations

import logging
import struct
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ValidationError

from ..core.errors import DataError
from .synthetic import SyntheticVolume

logger = logging.getLogger(__name__)

MAGIC = b"TSVL"
VERSION = 1
_HEADER = struct.Struct("<4sIIII")
DATASET_FILE = "dataset.json"


class DatasetInfo(BaseModel):
    count: int
    depth: int
    height: int
    width: int
    seed: Optional[int] = None
    split: str = "train"
    contrast: Optional[float] = None
    noise_sd: Optional[float] = None
    base_level: Optional[float] = None
    radius_min: Optional[float] = None
    radius_max: Optional[float] = None
    lesions: Optional[int] = None
    empty_fraction: Optional[float] = None
    distractors: Optional[int] = None


def write_volume(path: Union[str, Path], volume: SyntheticVolume) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    depth, height, width = volume.shape
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, VERSION, depth, height, width))
        f.write(np.ascontiguousarray(volume.voxels, dtype="<f4").tobytes())
        f.write(np.ascontiguousarray(volume.mask, dtype=np.uint8).tobytes())
        f.write(np.ascontiguousarray(volume.slice_labels, dtype=np.uint8).tobytes())
    return path


def read_volume(path: Union[str, Path]) -> SyntheticVolume:
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as e:
        raise DataError(f"cannot read volume {path}: {e}") from e
    if len(buf) < _HEADER.size or buf[:4] != MAGIC:
        raise DataError(f"{path} is not a TSVL volume")
    _, version, depth, height, width = _HEADER.unpack_from(buf)
    if version != VERSION:
        raise DataError(f"unsupported volume version {version} in {path}")
    n = depth * height * width
    expected = _HEADER.size + 4 * n + n + depth
    if len(buf) != expected:
        raise DataError(f"{path} holds {len(buf)} bytes, expected {expected} for {depth}x{height}x{width}")
    offset = _HEADER.size
    voxels = np.frombuffer(buf, dtype="<f4", count=n, offset=offset).reshape(depth, height, width)
    offset += 4 * n
    mask = np.frombuffer(buf, dtype=np.uint8, count=n, offset=offset).reshape(depth, height, width)
    offset += n
    labels = np.frombuffer(buf, dtype=np.uint8, count=depth, offset=offset)
    if mask.max(initial=0) > 1 or labels.max(initial=0) > 1:
        raise DataError(f"{path} has mask or label bytes other than 0/1")
    return SyntheticVolume(
        voxels=voxels.astype(np.float32),
        mask=mask.astype(bool),
        slice_labels=labels.copy(),
    )


def volume_name(index: int) -> str:
    return f"vol_{index:04d}.tsvl"


def write_dataset(directory: Union[str, Path], volumes: List[SyntheticVolume], info: DatasetInfo) -> List[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = [write_volume(directory / volume_name(i), v) for i, v in enumerate(volumes)]
    (directory / DATASET_FILE).write_text(info.model_dump_json(indent=2), encoding="utf-8")
    logger.info(f"Wrote {len(paths)} volumes to {directory}")
    return paths


def read_dataset(directory: Union[str, Path]) -> Tuple[List[SyntheticVolume], DatasetInfo]:
    directory = Path(directory)
    meta = directory / DATASET_FILE
    if not meta.exists():
        raise DataError(f"{directory} is not a dataset directory (missing {DATASET_FILE})")
    try:
        info = DatasetInfo.model_validate_json(meta.read_text(encoding="utf-8"))
    except ValidationError as e:
        raise DataError(f"invalid {meta}: {e}") from e
    volumes = [read_volume(directory / volume_name(i)) for i in range(info.count)]
    for i, v in enumerate(volumes):
        if v.shape != (info.depth, info.height, info.width):
            raise DataError(f"{volume_name(i)} has shape {v.shape}, dataset declares {info.depth}x{info.height}x{info.width}")
    return volumes, info


__all__ = [
    "DatasetInfo",
    "MAGIC",
    "VERSION",
    "read_dataset",
    "read_volume",
    "volume_name",
    "write_dataset",
    "write_volume",
]
