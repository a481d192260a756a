from pathlib import Path
from typing import Union

import numpy as np
from PIL import Image


def to_uint8(plane: np.ndarray) -> np.ndarray:
    """Map a [0, 1] plane onto 0..255 (values outside are clipped)."""
    return np.round(np.clip(plane, 0.0, 1.0) * 255.0).astype(np.uint8)


def plane_to_image(plane: np.ndarray) -> Image.Image:
    if plane.ndim != 2:
        raise ValueError(f"expected a 2D plane, got shape {plane.shape}")
    return Image.fromarray(to_uint8(plane)).convert("L")


def save_pgm(plane: np.ndarray, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    plane_to_image(plane).save(path, format="PPM")
    return path


__all__ = ["plane_to_image", "save_pgm", "to_uint8"]
