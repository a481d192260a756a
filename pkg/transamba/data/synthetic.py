"""Seeded synthetic volumes with ellipsoid lesions and slice-level labels."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple, Union

import numpy as np

from ..core.executor import VolumeExecutor, get_executor

logger = logging.getLogger(__name__)


@dataclass
class SyntheticVolume:
    voxels: np.ndarray  # (Z, H, W) float32 in [0, 1]
    mask: np.ndarray  # (Z, H, W) bool
    slice_labels: np.ndarray  # (Z,) uint8

    def __post_init__(self) -> None:
        if self.voxels.shape != self.mask.shape:
            raise ValueError(f"voxels {self.voxels.shape} and mask {self.mask.shape} differ in shape")
        if self.slice_labels.shape != (self.voxels.shape[0],):
            raise ValueError(f"expected {self.voxels.shape[0]} slice labels, got {self.slice_labels.shape}")

    @property
    def shape(self) -> Tuple[int, int, int]:
        return self.voxels.shape

    def check_labels(self) -> bool:
        return bool((self.slice_labels.astype(bool) == self.mask.any(axis=(1, 2))).all())


def slice_labels(mask: np.ndarray) -> np.ndarray:
    """1 for every slice holding at least one foreground voxel."""
    return np.asarray(mask, dtype=bool).any(axis=(1, 2)).astype(np.uint8)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Haar-uniform 3x3 rotation from the QR decomposition of a Gaussian matrix."""
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def _draw_radii(rng: np.random.Generator, radius_range: Tuple[float, float], size: int) -> np.ndarray:
    while True:
        radii = rng.uniform(radius_range[0], radius_range[1], size=size)
        if (radii >= 1.0).all():
            return radii


def _draw_center(rng: np.random.Generator, shape: Tuple[int, ...], reach: float) -> np.ndarray:
    # keep the lesion inside the volume when there is room for it
    lo = np.array([min(reach, (s - 1) / 2.0) for s in shape])
    hi = np.array([s - 1 for s in shape]) - lo
    return rng.uniform(lo, hi)


def ellipsoid_mask(
    shape: Tuple[int, int, int],
    center: np.ndarray,
    radii: np.ndarray,
    rotation: Optional[np.ndarray] = None,
) -> np.ndarray:
    coords = np.stack(np.meshgrid(*[np.arange(s) for s in shape], indexing="ij"), axis=-1) - center
    if rotation is not None:
        coords = coords @ rotation
    return ((coords / radii) ** 2).sum(axis=-1) <= 1.0


def _disk_mask(shape: Tuple[int, int], center: np.ndarray, radius: float) -> np.ndarray:
    yy, xx = np.meshgrid(np.arange(shape[0]), np.arange(shape[1]), indexing="ij")
    return (yy - center[0]) ** 2 + (xx - center[1]) ** 2 <= radius**2


def generate_volume(
    rng: np.random.Generator,
    shape: Tuple[int, int, int],
    contrast: float,
    noise_sd: float,
    base_level: float = 0.2,
    radius_range: Tuple[float, float] = (3.0, 8.0),
    lesions: int = 1,
    empty: bool = False,
    distractors: int = 0,
) -> SyntheticVolume:
    mask = np.zeros(shape, dtype=bool)
    for _ in range(0 if empty else lesions):
        radii = _draw_radii(rng, radius_range, 3)
        center = _draw_center(rng, shape, float(radii.max()))
        mask |= ellipsoid_mask(shape, center, radii, random_rotation(rng))

    voxels = np.full(shape, base_level, dtype=np.float64)
    voxels[mask] += contrast
    for _ in range(distractors):
        z = int(rng.integers(0, shape[0]))
        radius = float(_draw_radii(rng, radius_range, 1)[0])
        center = _draw_center(rng, shape[1:], radius)
        plane = voxels[z]
        plane[_disk_mask(shape[1:], center, radius)] = base_level + contrast
    if noise_sd > 0:
        voxels += rng.normal(0.0, noise_sd, size=shape)
    voxels = np.clip(voxels, 0.0, 1.0).astype(np.float32)
    return SyntheticVolume(voxels=voxels, mask=mask, slice_labels=slice_labels(mask))


def generate(
    seed: Union[int, np.random.SeedSequence],
    count: int,
    depth: int,
    height: int,
    width: int,
    contrast: float,
    noise_sd: float,
    base_level: float = 0.2,
    radius_range: Tuple[float, float] = (3.0, 8.0),
    lesions: int = 1,
    empty_fraction: float = 0.0,
    distractors: int = 0,
    executor: Optional[VolumeExecutor] = None,
) -> List[SyntheticVolume]:
    """``count`` volumes, each from its own RNG stream spawned off ``seed``.

    Output is identical for every worker count.
    """
    if not 0.0 < contrast <= 1.0:
        raise ValueError(f"contrast must be in (0, 1], got {contrast}")
    if noise_sd < 0:
        raise ValueError(f"noise_sd must be >= 0, got {noise_sd}")
    if not 0.0 <= empty_fraction <= 1.0:
        raise ValueError(f"empty_fraction must be in [0, 1], got {empty_fraction}")
    if radius_range[1] < 1.0 or radius_range[0] > radius_range[1]:
        raise ValueError(f"invalid radius range {radius_range}")
    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    streams = root.spawn(count)
    shape = (depth, height, width)

    def build(stream: np.random.SeedSequence) -> SyntheticVolume:
        rng = np.random.default_rng(stream)
        empty = bool(rng.random() < empty_fraction)
        return generate_volume(
            rng,
            shape,
            contrast,
            noise_sd,
            base_level=base_level,
            radius_range=radius_range,
            lesions=lesions,
            empty=empty,
            distractors=distractors,
        )

    volumes = (executor or get_executor()).map(build, streams)
    logger.info(f"Generated {count} volumes of shape {shape}")
    return volumes


__all__ = ["SyntheticVolume", "ellipsoid_mask", "generate", "generate_volume", "random_rotation", "slice_labels"]
