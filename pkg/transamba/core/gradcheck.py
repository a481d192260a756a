"""Central finite-difference oracle for tape gradients."""

from __future__ import annotations

import logging
from typing import Callable, Dict, Mapping, Optional, Sequence, Union

import numpy as np

from .tensor import Tensor, no_grad

logger = logging.getLogger(__name__)


def gradcheck(
    fn: Callable[[], Tensor],
    tensors: Union[Mapping[str, Tensor], Sequence[Tensor]],
    h: float = 1e-3,
    max_samples: Optional[int] = None,
    seed: int = 0,
    per_entry: bool = False,
) -> Dict[str, float]:
    """Compare analytic and central-difference gradients of a scalar ``fn``.

    ``fn`` must rebuild the loss from the current contents of ``tensors``.
    Returns, per tensor, ``max|analytic - numeric| / (max|numeric| + 1e-8)``.
    With ``per_entry=True`` it returns ``max_i |a_i - n_i| / (|n_i| + 1e-8)``
    instead, which is only meaningful where no true gradient entry is near zero.
    With ``max_samples`` only that many randomly chosen entries per tensor are
    perturbed.
    """
    named = dict(tensors) if isinstance(tensors, Mapping) else {str(i): t for i, t in enumerate(tensors)}
    for name, t in named.items():
        if t.dtype != np.float64:
            logger.warning(f"gradcheck on {name} with dtype {t.dtype}; float64 is expected")
        t.grad = None

    loss = fn()
    loss.backward()
    rng = np.random.default_rng(seed)
    errors: Dict[str, float] = {}
    for name, t in named.items():
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        indices = np.arange(flat.size)
        if max_samples is not None and flat.size > max_samples:
            indices = np.sort(rng.choice(flat.size, size=max_samples, replace=False))
        numeric = np.empty(indices.size, dtype=np.float64)
        with no_grad():
            for k, i in enumerate(indices):
                original = flat[i]
                flat[i] = original + h
                plus = fn().item()
                flat[i] = original - h
                minus = fn().item()
                flat[i] = original
                numeric[k] = (plus - minus) / (2.0 * h)
        picked = analytic.reshape(-1)[indices]
        diff = np.abs(picked - numeric)
        if per_entry:
            errors[name] = float(np.max(diff / (np.abs(numeric) + 1e-8)))
        else:
            errors[name] = float(np.max(diff) / (np.max(np.abs(numeric)) + 1e-8))
    return errors


__all__ = ["gradcheck"]
