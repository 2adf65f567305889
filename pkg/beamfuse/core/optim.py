# AdamW optimiser state/step and global-norm gradient clipping.

from dataclasses import dataclass, field
from typing import Dict, Mapping, MutableMapping, Optional

import numpy as np

from beamfuse.core.errors import ShapeError, UsageError
from beamfuse.core.tensor import Tensor


@dataclass
class OptimState:
    """Per-parameter AdamW moments plus hyperparameters."""

    lr: float = 1e-3
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def create(cls, params: Mapping[str, Tensor], **hyper) -> "OptimState":
        state = cls(**hyper)
        for name, param in params.items():
            state.m[name] = np.zeros_like(param.data)
            state.v[name] = np.zeros_like(param.data)
        return state


def global_norm(grads: Mapping[str, Optional[np.ndarray]]) -> float:
    total = 0.0
    for grad in grads.values():
        if grad is not None:
            total += float(np.sum(np.square(grad, dtype=np.float64)))
    return float(np.sqrt(total))


def clip_global_norm(grads: MutableMapping[str, Optional[np.ndarray]], max_norm: float) -> float:
    """Scale all gradients in place so their joint L2 norm is at most max_norm.

    Returns the scale applied (1.0 when no clipping was needed).
    """
    if max_norm <= 0:
        raise UsageError("clip_global_norm: max_norm must be positive")
    norm = global_norm(grads)
    if norm <= max_norm:
        return 1.0
    scale = max_norm / norm
    for name, grad in grads.items():
        if grad is not None:
            grads[name] = (grad * scale).astype(grad.dtype)
    return scale


def adamw_step(params: Mapping[str, Tensor], grads: Mapping[str, Optional[np.ndarray]],
               state: OptimState) -> None:
    """One AdamW update with decoupled weight decay and bias-corrected moments."""
    state.step += 1
    lr = state.lr
    bias1 = 1.0 - state.beta1 ** state.step
    bias2 = 1.0 - state.beta2 ** state.step
    for name, param in params.items():
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None or m.shape != param.shape or v.shape != param.shape:
            raise ShapeError("adamw_step", param.shape, None if m is None else m.shape)
        grad = grads.get(name)
        if grad is None:
            grad = np.zeros_like(param.data)
        elif grad.shape != param.shape:
            raise ShapeError("adamw_step", param.shape, grad.shape)
        param.data -= lr * state.weight_decay * param.data
        m *= state.beta1
        m += (1.0 - state.beta1) * grad
        v *= state.beta2
        v += (1.0 - state.beta2) * grad * grad
        m_hat = m / bias1
        v_hat = v / bias2
        param.data -= lr * m_hat / (np.sqrt(v_hat) + state.eps)
