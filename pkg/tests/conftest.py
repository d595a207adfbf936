"""Shared test helpers: finite differences, relative error, tiny configs."""

from __future__ import annotations

import numpy as np
import pytest

from mmreg.config import TrainConfig


def rel_err(a, b, floor: float = 1e-10) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.abs(a) + np.abs(b), floor)
    return float(np.max(np.abs(a - b) / denom))


def numerical_grad(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar-valued f over every entry of x."""
    grad = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def tiny_train_config(**overrides) -> TrainConfig:
    """Desk-scale config for fast training tests."""
    base = dict(
        lr=3e-3,
        batch_size=16,
        max_epochs=30,
        early_stop_patience=None,
        kfold=3,
        seed=0,
        head_count=4,
        hidden_dim=8,
        basis_count=6,
        shared_dim=5,
    )
    base.update(overrides)
    return TrainConfig(**base)


TINY_DIMS = {"video": 7, "audio": 5, "text": 9}


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
