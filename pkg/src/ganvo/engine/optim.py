"""Adam optimizer with bias correction."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import NumericError, ShapeError
from .tensor import Tensor


@dataclass
class AdamState:
    """Per-parameter moment buffers; step counts completed updates."""

    step: int = 0
    m: np.ndarray | None = None
    v: np.ndarray | None = None


def adam_step(
    param: Tensor,
    grad: np.ndarray,
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    name: str = "param",
) -> None:
    """One in-place bias-corrected Adam update of ``param.data``."""
    if grad.shape != param.data.shape:
        raise ShapeError(f"gradient shape {grad.shape} does not match parameter '{name}' {param.data.shape}")
    if not np.all(np.isfinite(grad)):
        raise NumericError(f"non-finite gradient for parameter '{name}'")
    if state.m is None:
        state.m = np.zeros_like(param.data)
        state.v = np.zeros_like(param.data)
    state.step += 1
    state.m = beta1 * state.m + (1.0 - beta1) * grad
    state.v = beta2 * state.v + (1.0 - beta2) * grad * grad
    m_hat = state.m / (1.0 - beta1**state.step)
    v_hat = state.v / (1.0 - beta2**state.step)
    param.data -= lr * m_hat / (np.sqrt(v_hat) + eps)


@dataclass
class Adam:
    """Adam over a named parameter dict, one moment state per tensor."""

    params: dict
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    states: dict = field(default_factory=dict)

    def step(self) -> None:
        for name, p in self.params.items():
            if p.grad is None:
                continue
            state = self.states.setdefault(name, AdamState())
            adam_step(p, p.grad, state, self.lr, self.beta1, self.beta2, self.eps, name=name)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()
