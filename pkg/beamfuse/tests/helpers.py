# Shared test helpers: central finite differences against backward().

import dataclasses
from typing import Callable, Optional, Sequence

import numpy as np

from beamfuse.core.config import RunConfig
from beamfuse.core.model import POSE_ANCHOR
from beamfuse.core.tensor import Tensor, no_grad


def numeric_grad(loss_fn: Callable[[], Tensor], tensor: Tensor, eps: float = 1e-6,
                 indices: Optional[np.ndarray] = None) -> np.ndarray:
    """Central differences at the given flat indices (all entries by default)."""
    flat = tensor.data.reshape(-1)
    indices = np.arange(flat.size) if indices is None else indices
    grad = np.zeros(len(indices), dtype=np.float64)
    with no_grad():
        for j, i in enumerate(indices):
            original = flat[i]
            flat[i] = original + eps
            plus = loss_fn().item()
            flat[i] = original - eps
            minus = loss_fn().item()
            flat[i] = original
            grad[j] = (plus - minus) / (2 * eps)
    return grad


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-3) -> float:
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / scale))


def check_gradients(loss_fn: Callable[[], Tensor], tensors: Sequence[Tensor],
                    tol: float = 1e-5, eps: float = 1e-6, entries: Optional[int] = None) -> float:
    """Compare backward() with finite differences; returns the worst relative error.

    With `entries`, only that many randomly chosen elements of each tensor
    are perturbed.
    """
    for tensor in tensors:
        tensor.grad = None
    loss_fn().backward()
    picker = np.random.default_rng(0)
    worst = 0.0
    for tensor in tensors:
        assert tensor.grad is not None, f"no gradient reached {tensor}"
        size = tensor.data.size
        if entries is None or entries >= size:
            indices = np.arange(size)
        else:
            indices = np.sort(picker.choice(size, entries, replace=False))
        analytic = tensor.grad.astype(np.float64).reshape(-1)[indices]
        error = max_relative_error(analytic, numeric_grad(loss_fn, tensor, eps, indices))
        worst = max(worst, error)
    assert worst <= tol, f"relative gradient error {worst:.3g} exceeds {tol:.1g}"
    return worst


def randn(rng: np.random.Generator, *shape, scale: float = 1.0) -> np.ndarray:
    return rng.standard_normal(shape) * scale


def tiny_config(**changes) -> RunConfig:
    """A 3x12 dataset and a d=16 single-layer network: fast enough for unit tests."""
    base = dict(sequences=3, snapshots_per_sequence=12, d_model=16, layers=1, heads=2,
                ffn_mult=2, epochs=2, batch_size=8)
    base.update(changes)
    return dataclasses.replace(RunConfig(), **base).validate()


def random_inputs(rng: np.random.Generator, n: int, dtype=np.float32) -> dict:
    """Model-ready inputs of the right shapes for every modality, plus the pose anchor."""
    history = np.concatenate([rng.standard_normal((n, 64)), np.zeros((n, 1))], axis=1)
    return {
        "camera": (rng.random((n, 3, 32, 32)) < 0.1).astype(dtype),
        "lidar": (rng.standard_normal((n, 256, 3)) * 20.0).astype(dtype),
        "radar": rng.random((n, 32, 32)).astype(dtype),
        "gps": rng.standard_normal((n, 2)).astype(dtype),
        "mmwave": history.astype(dtype),
        POSE_ANCHOR: rng.standard_normal((n, 2)).astype(dtype),
    }
