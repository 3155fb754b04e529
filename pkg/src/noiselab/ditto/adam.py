"""Adam with bias correction, on plain numpy arrays."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["AdamState", "adam_update"]


@dataclass
class AdamState:
    """First/second moment accumulators for one parameter array."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def like(cls, values: np.ndarray) -> "AdamState":
        return cls(m=np.zeros_like(values, dtype=np.float64),
                   v=np.zeros_like(values, dtype=np.float64))


def adam_update(state: AdamState, values: np.ndarray, grad: np.ndarray,
                lr: float, beta1: float = 0.9, beta2: float = 0.999,
                eps: float = 1e-8) -> np.ndarray:
    """One Adam step; mutates ``state``, returns the updated values."""
    if grad.shape != values.shape:
        raise ValueError(f"grad shape {grad.shape} != value shape {values.shape}")
    g = grad.astype(np.float64, copy=False)
    state.step += 1
    state.m = beta1 * state.m + (1.0 - beta1) * g
    state.v = beta2 * state.v + (1.0 - beta2) * (g * g)
    m_hat = state.m / (1.0 - beta1 ** state.step)
    v_hat = state.v / (1.0 - beta2 ** state.step)
    step = lr * m_hat / (np.sqrt(v_hat) + eps)
    return (values.astype(np.float64, copy=False) - step).astype(values.dtype)
