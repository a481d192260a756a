import os

import numpy as np
import pytest

from transamba.core.config import ModelConfig
from transamba.core.tensor import use_dtype


@pytest.fixture(autouse=True)
def _single_worker(monkeypatch):
    # Default all tests to inline volume execution unless a test builds its own executor
    if os.environ.get("TRANSAMBA_WORKERS") is None:
        monkeypatch.setenv("TRANSAMBA_WORKERS", "1")
    yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def f64():
    with use_dtype(np.float64):
        yield


@pytest.fixture
def tiny_config():
    """L=2, D=8, H=2, 8x8 planes with P=4 (M=4), N=2."""
    return ModelConfig(
        layers=2,
        model_dim=8,
        heads=2,
        patch_size=4,
        image_height=8,
        image_width=8,
        planes=2,
        d_state=4,
        d_conv=2,
    )
