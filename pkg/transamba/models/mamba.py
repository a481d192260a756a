"""Selective state space scan and the Mamba block built around it."""

from __future__ import annotations

import math
from typing import Optional, Union

import numpy as np

from ..core.errors import NumericalError
from ..core.functional import conv1d_causal, silu, softplus
from ..core.module import Linear, Module, Parameter
from ..core.tensor import Tensor, is_grad_enabled

DT_MIN = 0.001
DT_MAX = 0.1


def selective_scan(
    u: Tensor,
    delta: Tensor,
    A: Tensor,
    B: Tensor,
    C: Tensor,
    D: Tensor,
) -> Tensor:
    """Zero-order-hold selective scan.

    Shapes: ``u`` and ``delta`` are (batch, L, E), ``A`` is (E, S), ``B`` and
    ``C`` are (batch, L, S), ``D`` is (E,). Computes, with h_0 = 0::

        h_t = exp(delta_t * A) * h_{t-1} + (delta_t * B_t) * u_t
        y_t = C_t . h_t + D * u_t

    Recorded on the tape as a single op whose backward runs the reverse
    recurrence.
    """
    if u.ndim != 3:
        raise ValueError(f"selective_scan expects (batch, L, E) input, got {u.shape}")
    batch, length, inner = u.shape
    state = A.shape[-1]
    if length < 1:
        raise ValueError("selective_scan needs a sequence of length >= 1")
    if delta.shape != u.shape:
        raise ValueError(f"delta shape {delta.shape} does not match input {u.shape}")
    if A.shape != (inner, state):
        raise ValueError(f"A must be ({inner}, S), got {A.shape}")
    if B.shape != (batch, length, state) or C.shape != (batch, length, state):
        raise ValueError(f"B and C must be ({batch}, {length}, {state}), got {B.shape} and {C.shape}")
    if D.shape != (inner,):
        raise ValueError(f"D must be ({inner},), got {D.shape}")
    if not np.isfinite(delta.data).all():
        raise NumericalError("non-finite step size in selective scan")

    ud, dd, Ad, Bd, Cd, Dd = u.data, delta.data, A.data, B.data, C.data, D.data
    keep_states = is_grad_enabled() and any(t.requires_grad for t in (u, delta, A, B, C, D))
    hs = np.empty((length, batch, inner, state), dtype=ud.dtype) if keep_states else None
    h = np.zeros((batch, inner, state), dtype=ud.dtype)
    y = np.empty_like(ud)
    for t in range(length):
        dt = dd[:, t, :, None]
        h = np.exp(dt * Ad) * h + dt * Bd[:, t, None, :] * ud[:, t, :, None]
        y[:, t] = (h * Cd[:, t, None, :]).sum(axis=-1)
        if hs is not None:
            hs[t] = h
    y += Dd * ud

    def backward(gy):
        gu = gy * Dd
        gD = (gy * ud).sum(axis=(0, 1))
        gdelta = np.zeros_like(dd)
        gA = np.zeros_like(Ad)
        gB = np.zeros_like(Bd)
        gC = np.zeros_like(Cd)
        gh = np.zeros((batch, inner, state), dtype=ud.dtype)
        zero = np.zeros_like(gh)
        for t in range(length - 1, -1, -1):
            h_t = hs[t]
            h_prev = hs[t - 1] if t > 0 else zero
            gy_t = gy[:, t, :, None]
            dt = dd[:, t, :, None]
            u_t = ud[:, t, :, None]
            B_t = Bd[:, t, None, :]
            gC[:, t] = (gy_t * h_t).sum(axis=1)
            gh = gh + gy_t * Cd[:, t, None, :]
            dA = np.exp(dt * Ad)
            g_dA = gh * h_prev * dA
            gdelta[:, t] = (g_dA * Ad).sum(axis=-1) + (gh * B_t * u_t).sum(axis=-1)
            gA += (g_dA * dt).sum(axis=0)
            gB[:, t] = (gh * dt * u_t).sum(axis=1)
            gu[:, t] += (gh * dt * B_t).sum(axis=-1)
            gh = gh * dA
        return gu, gdelta, gA, gB, gC, gD

    return Tensor.from_op(y, (u, delta, A, B, C, D), backward, "selective_scan")


def _dt_bias(rng: np.random.Generator, inner: int) -> np.ndarray:
    # softplus(bias) is log-uniform in [DT_MIN, DT_MAX]
    dt = np.exp(rng.uniform(size=inner) * (math.log(DT_MAX) - math.log(DT_MIN)) + math.log(DT_MIN))
    dt = np.maximum(dt, 1e-4)
    return dt + np.log(-np.expm1(-dt))


class MambaBlock(Module):
    """In-projection, causal conv, selective scan, SiLU gate, out-projection.

    Inner width ``E = expand * d_model``; ``dt_rank="auto"`` is ceil(D / 16).
    """

    def __init__(
        self,
        d_model: int,
        rng: np.random.Generator,
        d_state: int = 16,
        expand: int = 2,
        d_conv: int = 4,
        dt_rank: Union[int, str] = "auto",
    ):
        super().__init__()
        self.d_model = d_model
        self.d_inner = expand * d_model
        self.d_state = d_state
        self.d_conv = d_conv
        self.dt_rank = math.ceil(d_model / 16) if dt_rank == "auto" else int(dt_rank)

        self.in_proj = Linear(d_model, 2 * self.d_inner, rng, bias=False)
        bound = 1.0 / math.sqrt(d_conv)
        self.conv_weight = Parameter(rng.uniform(-bound, bound, size=(self.d_inner, d_conv)))
        self.conv_bias = Parameter(np.zeros(self.d_inner))
        self.x_proj = Linear(self.d_inner, self.dt_rank + 2 * d_state, rng, bias=False)
        self.dt_proj = Linear(self.dt_rank, self.d_inner, rng)
        dt_std = self.dt_rank**-0.5
        self.dt_proj.weight.data[...] = rng.uniform(-dt_std, dt_std, size=self.dt_proj.weight.shape)
        self.dt_proj.bias.data[...] = _dt_bias(rng, self.d_inner)
        self.A_log = Parameter(np.log(np.tile(np.arange(1, d_state + 1, dtype=np.float64), (self.d_inner, 1))))
        self.D_skip = Parameter(np.ones(self.d_inner))
        self.out_proj = Linear(self.d_inner, d_model, rng, bias=False)

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 3 or x.shape[-1] != self.d_model:
            raise ValueError(f"MambaBlock expects (batch, L, {self.d_model}) input, got {x.shape}")
        E, S, r = self.d_inner, self.d_state, self.dt_rank
        xz = self.in_proj(x)
        xs = silu(conv1d_causal(xz[..., :E], self.conv_weight, self.conv_bias))
        z = xz[..., E:]
        dbc = self.x_proj(xs)
        delta = softplus(self.dt_proj(dbc[..., :r]))
        A = -self.A_log.exp()
        y = selective_scan(xs, delta, A, dbc[..., r : r + S], dbc[..., r + S :], self.D_skip)
        return self.out_proj(y * silu(z))


class BiSSMBlock(Module):
    """Forward scan plus a scan over the reversed sequence, summed.

    With ``shared_weights`` both directions run the same block.
    """

    def __init__(
        self,
        d_model: int,
        rng: np.random.Generator,
        d_state: int = 16,
        d_conv: int = 4,
        shared_weights: bool = False,
    ):
        super().__init__()
        self.shared_weights = shared_weights
        self.fwd = MambaBlock(d_model, rng, d_state=d_state, d_conv=d_conv)
        self.bwd: Optional[MambaBlock] = None
        if not shared_weights:
            self.bwd = MambaBlock(d_model, rng, d_state=d_state, d_conv=d_conv)

    def forward(self, x: Tensor) -> Tensor:
        reverse = self.fwd if self.bwd is None else self.bwd
        return self.fwd(x) + reverse(x.flip(1)).flip(1)


__all__ = ["BiSSMBlock", "MambaBlock", "selective_scan"]
