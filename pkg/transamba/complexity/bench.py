"""Wall-clock and tracked-memory scaling of cross-plane modelling in N."""

from __future__ import annotations

import logging
import statistics
import time
from contextlib import contextmanager
from typing import Callable, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import psutil
from pydantic import BaseModel

from ..core.config import ModelConfig, Variant
from ..core.tensor import AllocationTracker, Tensor, no_grad
from ..models.cpm import CrossPlaneAttention, PatchMamba, interleave
from ..models.encoder import Encoder

logger = logging.getLogger(__name__)

# block-level targets time one cross-plane global-modelling pass on a TokenStack
BLOCK_TARGETS = ("cross_SSM", "cross_SA")


class ScalingFit(BaseModel):
    linear: Tuple[float, float]
    quadratic: Tuple[float, float, float]
    r2_linear: float
    r2_quadratic: float
    quadratic_share: float  # c2 * N^2 over the quadratic fit at max N


class BenchPoint(BaseModel):
    planes: int
    volumes: int
    time_ns: Optional[int] = None
    peak_bytes: Optional[int] = None
    rss_bytes: Optional[int] = None


class BenchSeries(BaseModel):
    target: str
    points: List[BenchPoint]
    time_fit: Optional[ScalingFit] = None
    memory_fit: Optional[ScalingFit] = None

    def rows(self) -> List[List[object]]:
        return [[p.planes, p.time_ns, p.peak_bytes, p.rss_bytes] for p in self.points]


def _r2(y: np.ndarray, fitted: np.ndarray) -> float:
    total = float(((y - y.mean()) ** 2).sum())
    if total == 0.0:
        return 1.0
    return 1.0 - float(((y - fitted) ** 2).sum()) / total


def fit_scaling(ns: Sequence[int], values: Sequence[float]) -> ScalingFit:
    """Least-squares fits ``c0 + c1 N`` and ``c0 + c1 N + c2 N^2``."""
    n = np.asarray(ns, dtype=np.float64)
    y = np.asarray(values, dtype=np.float64)
    if n.shape != y.shape or n.size < 3:
        raise ValueError("fit_scaling needs at least three (N, value) pairs")
    lin_x = np.vander(n, 2, increasing=True)
    quad_x = np.vander(n, 3, increasing=True)
    lin, *_ = np.linalg.lstsq(lin_x, y, rcond=None)
    quad, *_ = np.linalg.lstsq(quad_x, y, rcond=None)
    top = n.max()
    at_top = float(quad @ np.array([1.0, top, top * top]))
    share = float(quad[2] * top * top / at_top) if at_top != 0.0 else 0.0
    return ScalingFit(
        linear=(float(lin[0]), float(lin[1])),
        quadratic=(float(quad[0]), float(quad[1]), float(quad[2])),
        r2_linear=_r2(y, lin_x @ lin),
        r2_quadratic=_r2(y, quad_x @ quad),
        quadratic_share=share,
    )


@contextmanager
def pinned_to_one_cpu(enabled: bool = True) -> Iterator[Optional[int]]:
    """Restrict the process to a single CPU while benchmarking, where supported."""
    proc = psutil.Process()
    previous = None
    if enabled:
        try:
            previous = proc.cpu_affinity()
            proc.cpu_affinity(previous[:1])
            logger.debug(f"Pinned benchmark to CPU {previous[0]}")
        except (AttributeError, psutil.Error, OSError) as e:
            logger.warning(f"CPU pinning unavailable: {e}")
            previous = None
    try:
        yield previous[0] if previous else None
    finally:
        if previous:
            proc.cpu_affinity(previous)


def build_runner(
    config: ModelConfig,
    target: str,
    planes: int,
    volumes: int,
    seed: int = 0,
) -> Callable[[], object]:
    """A no-grad forward closure for one benchmark point.

    ``target`` is a variant name (full encoder) or one of ``BLOCK_TARGETS``.
    """
    cfg = config.model_copy(update={"planes": planes})
    rng = np.random.default_rng(seed)
    if target in BLOCK_TARGETS:
        D, M = cfg.model_dim, cfg.num_patches
        stack = Tensor(rng.normal(size=(volumes, planes, 1 + M, D)))
        block_rng = np.random.default_rng(cfg.init_seed)
        if target == "cross_SSM":
            block = PatchMamba(D, block_rng, cross_plane=True, d_state=cfg.d_state, d_conv=cfg.d_conv)
            return lambda: block(stack)
        attention = CrossPlaneAttention(D, cfg.heads, M * planes, block_rng).block
        seq = interleave(stack[:, :, 1:, :])
        return lambda: attention.attention(attention.norm1(seq))
    encoder = Encoder(cfg.model_copy(update={"variant": Variant(target)}))
    volumes_in = Tensor(rng.uniform(size=(volumes, planes, cfg.image_height, cfg.image_width)))
    return lambda: encoder(volumes_in, capture_attention=False)


def bench_time(
    config: ModelConfig,
    plane_counts: Sequence[int],
    trials: int = 5,
    warmup: int = 1,
    volumes_per_pass: int = 8,
    target: Optional[str] = None,
    pin_cpu: bool = True,
) -> BenchSeries:
    """Median forward wall-clock per N with a fixed number of volumes per pass."""
    if trials < 1:
        raise ValueError("need at least one timed trial")
    target = target or config.variant.value
    points: List[BenchPoint] = []
    with pinned_to_one_cpu(pin_cpu), no_grad():
        for planes in plane_counts:
            run = build_runner(config, target, planes, volumes_per_pass)
            for _ in range(warmup):
                run()
            samples = []
            for _ in range(trials):
                start = time.perf_counter_ns()
                run()
                samples.append(time.perf_counter_ns() - start)
            median = int(statistics.median(samples))
            logger.info(f"{target} N={planes}: median {median / 1e6:.2f} ms over {trials} trials")
            points.append(BenchPoint(planes=planes, volumes=volumes_per_pass, time_ns=median))
    series = BenchSeries(target=target, points=points)
    if len(points) >= 3:
        series.time_fit = fit_scaling([p.planes for p in points], [p.time_ns for p in points])
    return series


def bench_memory(
    config: ModelConfig,
    plane_counts: Sequence[int],
    total_planes: int = 32,
    target: Optional[str] = None,
) -> BenchSeries:
    """Peak tracked tensor bytes of one forward pass at a fixed total plane count B."""
    target = target or config.variant.value
    proc = psutil.Process()
    points: List[BenchPoint] = []
    with no_grad():
        for planes in plane_counts:
            if total_planes % planes:
                raise ValueError(f"total plane count {total_planes} is not a multiple of N={planes}")
            volumes = total_planes // planes
            run = build_runner(config, target, planes, volumes)
            with AllocationTracker() as tracker:
                out = run()
                del out
            points.append(
                BenchPoint(
                    planes=planes,
                    volumes=volumes,
                    peak_bytes=tracker.peak_bytes,
                    rss_bytes=int(proc.memory_info().rss),
                )
            )
            logger.info(f"{target} N={planes}: peak {tracker.peak_bytes} tracked bytes")
    series = BenchSeries(target=target, points=points)
    if len(points) >= 3:
        series.memory_fit = fit_scaling([p.planes for p in points], [p.peak_bytes for p in points])
    return series


__all__ = [
    "BLOCK_TARGETS",
    "BenchPoint",
    "BenchSeries",
    "ScalingFit",
    "bench_memory",
    "bench_time",
    "build_runner",
    "fit_scaling",
    "pinned_to_one_cpu",
]
