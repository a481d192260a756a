"""Analytic time/space cost models of in-plane and cross-plane modelling.

One global-modelling pass over L tokens of width D costs ``4LD^2 + 2L^2D``
with self-attention and ``128LD`` with the SSM (inner width 2D, state 16).
In-plane sequences have L = M over a batch of B planes; cross-plane
sequences have L = M * N over B / N volumes. All arithmetic is integral.
"""

from __future__ import annotations

from numbers import Integral
from typing import Dict, List, Tuple

from ..core.config import Variant
from ..core.protocol import ComplexityReport

Terms = List[Tuple[str, int]]

MODES = ("in_SA", "in_SSM", "cross_SA", "cross_SSM", "transamba_layer", "crossSA_layer")
SSM_CONSTANT = 128


def _check_positive(**values: int) -> None:
    for name, value in values.items():
        if not isinstance(value, Integral) or isinstance(value, bool) or value < 1:
            raise ValueError(f"{name} must be a positive integer, got {value!r}")


def _sa_terms(prefix: str, length: int, D: int) -> Terms:
    return [(f"{prefix}.proj", 4 * length * D * D), (f"{prefix}.attn", 2 * length * length * D)]


def time_terms(mode: str, M: int, N: int, D: int) -> Terms:
    _check_positive(M=M, N=N, D=D)
    M, N, D = int(M), int(N), int(D)
    if mode == "in_SA":
        return _sa_terms("in_SA", M, D)
    if mode == "in_SSM":
        return [("in_SSM", SSM_CONSTANT * M * D)]
    if mode == "cross_SA":
        return _sa_terms("cross_SA", M * N, D)
    if mode == "cross_SSM":
        return [("cross_SSM", SSM_CONSTANT * M * N * D)]
    if mode == "transamba_layer":
        return time_terms("cross_SSM", M, N, D) + time_terms("in_SA", M, N, D)
    if mode == "crossSA_layer":
        return time_terms("cross_SA", M, N, D) + time_terms("in_SA", M, N, D)
    raise ValueError(f"unknown complexity mode {mode!r}; expected one of {', '.join(MODES)}")


def space_terms(mode: str, B: int, M: int, N: int, D: int) -> Terms:
    _check_positive(B=B, M=M, N=N, D=D)
    B, M, N, D = int(B), int(M), int(N), int(D)
    if B % N:
        raise ValueError(f"batch of {B} planes does not hold whole volumes of {N} planes")
    volumes = B // N
    if mode in ("in_SA", "in_SSM"):
        return [(label, B * value) for label, value in time_terms(mode, M, N, D)]
    if mode in ("cross_SA", "cross_SSM"):
        return [(label, volumes * value) for label, value in time_terms(mode, M, N, D)]
    if mode == "transamba_layer":
        return space_terms("cross_SSM", B, M, N, D) + space_terms("in_SA", B, M, N, D)
    if mode == "crossSA_layer":
        return space_terms("cross_SA", B, M, N, D) + space_terms("in_SA", B, M, N, D)
    raise ValueError(f"unknown complexity mode {mode!r}; expected one of {', '.join(MODES)}")


def time_complexity(mode: str, M: int, N: int, D: int) -> int:
    return sum(v for _, v in time_terms(mode, M, N, D))


def space_complexity(mode: str, B: int, M: int, N: int, D: int) -> int:
    return sum(v for _, v in space_terms(mode, B, M, N, D))


def complexity_report(mode: str, B: int, M: int, N: int, D: int) -> ComplexityReport:
    t, s = time_terms(mode, M, N, D), space_terms(mode, B, M, N, D)
    return ComplexityReport(
        mode=mode,
        B=B,
        M=M,
        N=N,
        D=D,
        time_terms=t,
        space_terms=s,
        time_total=sum(v for _, v in t),
        space_total=sum(v for _, v in s),
    )


# counter modes making up one encoder layer of each variant
VARIANT_MODES: Dict[Variant, Tuple[str, ...]] = {
    Variant.V1: ("in_SA",),
    Variant.V2: ("in_SSM", "in_SA"),
    Variant.V2B: ("in_SSM", "in_SSM"),
    Variant.V3: ("cross_SSM", "in_SA"),
    Variant.V4: ("cross_SSM", "in_SSM", "in_SSM"),
    Variant.V5: ("cross_SA", "in_SA"),
}


def layer_complexity(variant: Variant, B: int, M: int, N: int, D: int) -> ComplexityReport:
    """Per-layer cost of an encoder variant as the sum of its counter modes."""
    variant = Variant(variant)
    t: Terms = []
    s: Terms = []
    for mode in VARIANT_MODES[variant]:
        t += time_terms(mode, M, N, D)
        s += space_terms(mode, B, M, N, D)
    return ComplexityReport(
        mode=variant.value,
        B=B,
        M=M,
        N=N,
        D=D,
        time_terms=t,
        space_terms=s,
        time_total=sum(v for _, v in t),
        space_total=sum(v for _, v in s),
    )


def estimate_memory(
    variant: Variant,
    B: int,
    M: int,
    N: int,
    D: int,
    layers: int = 1,
    bytes_per_element: int = 4,
) -> int:
    """Analytic activation bytes: space units x bytes per element x layers."""
    return layer_complexity(variant, B, M, N, D).space_total * bytes_per_element * layers


__all__ = [
    "MODES",
    "VARIANT_MODES",
    "complexity_report",
    "estimate_memory",
    "layer_complexity",
    "space_complexity",
    "space_terms",
    "time_complexity",
    "time_terms",
]
