"""Adam optimizer with classic coupled L2 weight decay.

Weight decay is added to the gradient before the moment updates (the
"Adam with L2" formulation, not the decoupled variant); the choice is a
config field so it can be switched off.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Parameter


@dataclass
class AdamState:
    learning_rate: float
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, Parameter], state: AdamState):
    """One Adam update over all parameters with populated gradients."""
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        if p.grad is None:
            continue
        g = p.grad.astype(np.float64)
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"NaN/Inf gradient for parameter {name!r}")
        if state.weight_decay:
            g = g + state.weight_decay * p.data.astype(np.float64)
        if name not in state.m:
            state.m[name] = np.zeros(p.data.shape, dtype=np.float64)
            state.v[name] = np.zeros(p.data.shape, dtype=np.float64)
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        update = state.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)
        p.data = (p.data.astype(np.float64) - update).astype(p.data.dtype)


def zero_grads(params: dict[str, Parameter]):
    for p in params.values():
        p.grad = None
