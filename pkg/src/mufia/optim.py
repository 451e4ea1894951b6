"""Bias-corrected Adam, shared by classifier training and the attack."""

from dataclasses import dataclass, field

import numpy as np

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros_like(cls, param):
        return cls(np.zeros_like(param), np.zeros_like(param), 0)


def adam_step(param, grad, state, lr, beta1=BETA1, beta2=BETA2, eps=EPS):
    """Return ``(new_param, new_state)``; inputs are left untouched."""
    param = np.asarray(param)
    grad = np.asarray(grad, dtype=param.dtype)
    if param.shape != grad.shape:
        raise ValueError(f"shape mismatch: param {param.shape}, grad {grad.shape}")
    t = state.t + 1
    m = beta1 * state.m + (1 - beta1) * grad
    v = beta2 * state.v + (1 - beta2) * grad * grad
    m_hat = m / (1 - beta1 ** t)
    v_hat = v / (1 - beta2 ** t)
    new = param - lr * m_hat / (np.sqrt(v_hat) + eps)
    return new.astype(param.dtype, copy=False), AdamState(m, v, t)


@dataclass
class Adam:
    """Adam over a dict of named arrays."""

    lr: float
    beta1: float = BETA1
    beta2: float = BETA2
    eps: float = EPS
    states: dict = field(default_factory=dict)

    def step(self, params, grads):
        out = {}
        for name, p in params.items():
            state = self.states.get(name) or AdamState.zeros_like(p)
            out[name], self.states[name] = adam_step(
                p, grads[name], state, self.lr, self.beta1, self.beta2, self.eps
            )
        return out
