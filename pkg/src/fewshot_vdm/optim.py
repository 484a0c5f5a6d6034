"""AdamW with global-norm gradient clipping."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamWConfig:
    lr: float = 1e-4
    beta1: float = 0.90
    beta2: float = 0.95
    weight_decay: float = 1e-3
    eps: float = 1e-8
    max_grad_norm: float = 1.0


@dataclass
class AdamWState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


class NonFiniteGradient(FloatingPointError):
    pass


def global_norm(grads: dict[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values())))


def adamw_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamWState,
               hp: AdamWConfig) -> tuple[dict[str, np.ndarray], AdamWState, float]:
    """One decoupled-weight-decay Adam update.

    Returns new parameter arrays, the new state and the pre-clipping gradient
    norm.  Inputs are not mutated.  Non-finite gradients raise
    :class:`NonFiniteGradient` and leave everything untouched.
    """
    if set(grads) != set(params):
        raise KeyError(f"gradient keys do not match parameters: {sorted(set(grads) ^ set(params))}")
    norm = global_norm(grads)
    if not np.isfinite(norm):
        bad = [k for k, g in grads.items() if not np.all(np.isfinite(g))]
        raise NonFiniteGradient(f"non-finite gradients in {bad}")
    clip = 1.0
    if hp.max_grad_norm is not None and norm > hp.max_grad_norm:
        clip = hp.max_grad_norm / (norm + 1e-6)

    step = state.step + 1
    bc1 = 1.0 - hp.beta1**step
    bc2 = 1.0 - hp.beta2**step
    new_params, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = grads[name] * clip
        m = state.m.get(name, np.zeros_like(p))
        v = state.v.get(name, np.zeros_like(p))
        if m.shape != p.shape or v.shape != p.shape:
            raise ValueError(f"optimizer state for {name} has the wrong shape")
        m = hp.beta1 * m + (1.0 - hp.beta1) * g
        v = hp.beta2 * v + (1.0 - hp.beta2) * g * g
        update = (m / bc1) / (np.sqrt(v / bc2) + hp.eps)
        p_new = p * (1.0 - hp.lr * hp.weight_decay) - hp.lr * update
        new_params[name] = p_new.astype(p.dtype)
        new_m[name] = m.astype(p.dtype)
        new_v[name] = v.astype(p.dtype)
    return new_params, AdamWState(step, new_m, new_v), norm
