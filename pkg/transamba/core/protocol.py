"""Records exchanged between the encoder, localization and complexity code."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field, model_validator

from .tensor import Tensor


@dataclass(frozen=True)
class AttentionRecord:
    """Head-averaged post-softmax attention of one plane in one layer."""

    layer: int
    plane: int
    matrix: np.ndarray  # (1 + M, 1 + M)

    def check(self, atol: float = 1e-6) -> None:
        if self.matrix.ndim != 2 or self.matrix.shape[0] != self.matrix.shape[1]:
            raise ValueError(f"attention matrix must be square, got {self.matrix.shape}")
        if (self.matrix < 0).any():
            raise ValueError(f"negative attention in layer {self.layer}, plane {self.plane}")
        if not np.allclose(self.matrix.sum(axis=-1), 1.0, atol=atol):
            raise ValueError(f"attention rows of layer {self.layer}, plane {self.plane} do not sum to 1")


@dataclass
class ClassScores:
    """Per-plane logits of the class-token (GAP) and patch-token (GWRP) branches."""

    y_class: Tensor
    y_patch: Tensor

    def probabilities(self) -> Tuple[np.ndarray, np.ndarray]:
        from scipy.special import expit

        return expit(self.y_class.data), expit(self.y_patch.data)


@dataclass
class EncoderOutput:
    """Everything one forward pass produces for G volumes of N planes."""

    scores: ClassScores  # logits shaped (G * N,)
    patch_logits: np.ndarray  # conv-branch spatial logits, (G, N, M)
    attention: Optional[List[np.ndarray]]  # per layer (G, N, 1 + M, 1 + M), None when not captured
    tokens: Tensor  # final TokenStack (G, N, 1 + M, D)

    def records(self, volume: int = 0) -> List[List[AttentionRecord]]:
        """Attention of one volume as ``[layer][plane]`` records."""
        if self.attention is None:
            return []
        return [
            [AttentionRecord(layer=l, plane=n, matrix=layer_att[volume, n]) for n in range(layer_att.shape[1])]
            for l, layer_att in enumerate(self.attention)
        ]


class ComplexityReport(BaseModel):
    """Symbolic time/space cost of one modelling mode (integer arithmetic)."""

    mode: str
    B: int
    M: int
    N: int
    D: int
    time_terms: List[Tuple[str, int]] = Field(default_factory=list)
    space_terms: List[Tuple[str, int]] = Field(default_factory=list)
    time_total: int = 0
    space_total: int = 0

    @model_validator(mode="after")
    def _totals_match_terms(self) -> "ComplexityReport":
        if self.time_total != sum(v for _, v in self.time_terms):
            raise ValueError("time_total must equal the sum of time_terms")
        if self.space_total != sum(v for _, v in self.space_terms):
            raise ValueError("space_total must equal the sum of space_terms")
        return self


__all__ = ["AttentionRecord", "ClassScores", "ComplexityReport", "EncoderOutput"]
