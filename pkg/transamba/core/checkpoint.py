"""The ``TSCK`` checkpoint container.

Layout (little-endian): magic ``TSCK``, version u32, entry count u32, then per
entry: name length u32, UTF-8 name, rank u32, dims u32[rank], f32 payload.
"""

from __future__ import annotations

import logging
import struct
from collections import OrderedDict
from pathlib import Path
from typing import Mapping, Union

import numpy as np

from .errors import DataError

logger = logging.getLogger(__name__)

MAGIC = b"TSCK"
VERSION = 1


def save_checkpoint(path: Union[str, Path], state: Mapping[str, np.ndarray]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(state)))
        for name, value in state.items():
            raw_name = name.encode("utf-8")
            array = np.ascontiguousarray(np.asarray(value, dtype="<f4"))
            f.write(struct.pack("<I", len(raw_name)))
            f.write(raw_name)
            f.write(struct.pack("<I", array.ndim))
            if array.ndim:
                f.write(struct.pack(f"<{array.ndim}I", *array.shape))
            f.write(array.tobytes(order="C"))
    logger.debug(f"Wrote {len(state)} tensors to {path}")
    return path


def load_checkpoint(path: Union[str, Path]) -> "OrderedDict[str, np.ndarray]":
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as e:
        raise DataError(f"cannot read checkpoint {path}: {e}") from e
    if buf[:4] != MAGIC:
        raise DataError(f"{path} is not a TSCK checkpoint")
    try:
        version, count = struct.unpack_from("<II", buf, 4)
        if version != VERSION:
            raise DataError(f"unsupported checkpoint version {version} in {path}")
        offset = 12
        state: "OrderedDict[str, np.ndarray]" = OrderedDict()
        for _ in range(count):
            (name_len,) = struct.unpack_from("<I", buf, offset)
            offset += 4
            name = buf[offset : offset + name_len].decode("utf-8")
            offset += name_len
            (rank,) = struct.unpack_from("<I", buf, offset)
            offset += 4
            dims = struct.unpack_from(f"<{rank}I", buf, offset) if rank else ()
            offset += 4 * rank
            n = int(np.prod(dims)) if rank else 1
            payload = np.frombuffer(buf, dtype="<f4", count=n, offset=offset)
            offset += 4 * n
            state[name] = payload.reshape(dims).astype(np.float32)
    except (struct.error, ValueError, UnicodeDecodeError) as e:
        if isinstance(e, DataError):
            raise
        raise DataError(f"truncated or corrupt checkpoint {path}: {e}") from e
    if offset != len(buf):
        raise DataError(f"{len(buf) - offset} trailing bytes in checkpoint {path}")
    return state


__all__ = ["MAGIC", "VERSION", "load_checkpoint", "save_checkpoint"]
