"""Adam with bias-corrected moments."""
from dataclasses import dataclass, field

import numpy as np

from ..errors import TrainingError


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, param, **hyper):
        return cls(np.zeros_like(param), np.zeros_like(param), **hyper)


def adam_step(param, grad, state, name="param"):
    """Update ``param`` in place; returns ``(param, state)``."""
    if param.shape != grad.shape or state.m.shape != param.shape:
        raise TrainingError(
            f"{name}: shapes differ (param {param.shape}, grad {grad.shape}, state {state.m.shape})",
            param=name,
        )
    if not np.all(np.isfinite(grad)):
        raise TrainingError(f"non-finite gradient for parameter {name!r}", param=name)
    state.t += 1
    state.m *= state.beta1
    state.m += (1 - state.beta1) * grad
    state.v *= state.beta2
    state.v += (1 - state.beta2) * (grad * grad)
    m_hat = state.m / (1 - state.beta1 ** state.t)
    v_hat = state.v / (1 - state.beta2 ** state.t)
    param -= (state.lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(param.dtype, copy=False)
    return param, state


@dataclass
class Adam:
    """Keeps one AdamState per named parameter."""

    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    states: dict = field(default_factory=dict)

    def step(self, params, grads):
        for name, g in grads.items():
            if name not in self.states:
                self.states[name] = AdamState.zeros_like(
                    params[name], lr=self.lr, beta1=self.beta1, beta2=self.beta2, eps=self.eps
                )
            self.states[name].lr = self.lr
            adam_step(params[name], g, self.states[name], name=name)
