"""Noise schedule, forward noising, the epsilon objective and ancestral sampling.

Diffusion steps are 1-based throughout: ``t`` ranges over ``1..T`` and the
schedule arrays are indexed with ``t - 1``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class NoiseSchedule:
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    sigma: np.ndarray
    # model timestep fed to the network for each schedule index; identity
    # unless the schedule was respaced for strided sampling
    timesteps: np.ndarray
    beta_start: float = 0.0
    beta_end: float = 0.0

    @property
    def T(self) -> int:
        return len(self.beta)

    def check_t(self, t) -> np.ndarray:
        t = np.asarray(t)
        if np.any(t < 1) or np.any(t > self.T):
            raise ValueError(f"diffusion step {t} outside [1, {self.T}]")
        return t.astype(np.int64)


def _from_betas(beta, timesteps, beta_start=0.0, beta_end=0.0) -> NoiseSchedule:
    beta = np.asarray(beta, dtype=np.float64)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    sigma = np.sqrt(beta)  # sigma_t^2 = beta_t
    return NoiseSchedule(beta, alpha, alpha_bar, sigma, np.asarray(timesteps, dtype=np.int64),
                         float(beta_start), float(beta_end))


def make_schedule(T: int = 200, beta_start: float = 1e-4, beta_end: float = 0.04) -> NoiseSchedule:
    """Linear beta ramp from ``beta_start`` to ``beta_end`` over ``T`` steps."""
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if not 0.0 < beta_start < beta_end < 1.0:
        raise ValueError(f"need 0 < beta_start < beta_end < 1, got {beta_start}, {beta_end}")
    beta = np.array([beta_start]) if T == 1 else np.linspace(beta_start, beta_end, T)
    return _from_betas(beta, np.arange(1, T + 1), beta_start, beta_end)


def respace(sched: NoiseSchedule, steps: int | None) -> NoiseSchedule:
    """Keep ``steps`` evenly spaced diffusion steps (always including 1 and T).

    The betas of the shortened chain are recomputed from the retained
    cumulative products, so every retained marginal is unchanged.
    """
    if steps is None or steps >= sched.T:
        return sched
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    keep = np.unique(np.round(np.linspace(1, sched.T, steps)).astype(np.int64))
    ab = sched.alpha_bar[keep - 1]
    prev = np.concatenate([[1.0], ab[:-1]])
    beta = 1.0 - ab / prev
    return _from_betas(beta, sched.timesteps[keep - 1], sched.beta_start, sched.beta_end)


def add_noise(v0, t, eps, sched: NoiseSchedule):
    """Closed-form marginal ``sqrt(ab_t) v0 + sqrt(1 - ab_t) eps``.

    ``t`` may be a scalar or one step per leading batch element.
    """
    v0 = np.asarray(v0)
    eps = np.asarray(eps)
    if v0.shape != eps.shape:
        raise ValueError(f"noise shape {eps.shape} != video shape {v0.shape}")
    t = sched.check_t(t)
    ab = sched.alpha_bar[t - 1]
    if ab.ndim:
        ab = ab.reshape(-1, *([1] * (v0.ndim - 1)))
    out = np.sqrt(ab) * v0 + np.sqrt(1.0 - ab) * eps
    return out.astype(v0.dtype)


def training_loss(model, v0, cond, t, eps, sched: NoiseSchedule) -> float:
    """Mean squared error between ``eps`` and ``model(v_t, t, cond)``."""
    v_t = add_noise(v0, t, eps, sched)
    pred = np.asarray(model(v_t, sched.timesteps[sched.check_t(t) - 1], cond))
    if pred.shape != eps.shape:
        raise ValueError(f"model output {pred.shape} != noise shape {eps.shape}")
    diff = pred.astype(np.float64) - eps
    return float(np.mean(diff * diff))


def posterior_mean(v_t, t: int, eps_pred, sched: NoiseSchedule):
    b = sched.beta[t - 1]
    return (v_t - (b / np.sqrt(1.0 - sched.alpha_bar[t - 1])) * eps_pred) / np.sqrt(sched.alpha[t - 1])


def denoise_step(model, v_t, t: int, cond, sched: NoiseSchedule, noise_draw):
    """One ancestral step ``v_t -> v_{t-1}``; no noise is added at ``t = 1``."""
    t = int(sched.check_t(t))
    eps_pred = np.asarray(model(v_t, int(sched.timesteps[t - 1]), cond))
    mean = posterior_mean(v_t, t, eps_pred, sched)
    sigma = 0.0 if t == 1 else sched.sigma[t - 1]
    out = mean + sigma * np.asarray(noise_draw) if sigma else mean
    return out.astype(np.asarray(v_t).dtype)


def sample(model, cond, sched: NoiseSchedule, rng_seed: int, shape, steps: int | None = None,
           dtype=np.float32):
    """Ancestral sampling from pure noise with first-frame anchoring.

    ``shape`` is the video shape ``(F, H, W, 3)``.  Before the first step and
    after every step, frame 0 of the working tensor is replaced by the clean
    conditioning frame noised to the current level (with one fixed anchor
    draw), and by the clean frame itself once the chain reaches step 0.
    ``steps`` optionally strides the chain (see :func:`respace`).
    """
    x0 = np.asarray(cond.first_frame, dtype=np.float64)
    if x0.shape != tuple(shape[1:]):
        raise ValueError(f"conditioning frame {x0.shape} does not match video {shape}")
    sched = respace(sched, steps)
    rng = np.random.default_rng(rng_seed)
    v = rng.standard_normal(shape)
    anchor_eps = rng.standard_normal(x0.shape)

    def anchor(v, level):
        if level == 0:
            v[0] = x0
        else:
            ab = sched.alpha_bar[level - 1]
            v[0] = np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * anchor_eps

    anchor(v, sched.T)
    v = v.astype(dtype)
    for t in range(sched.T, 0, -1):
        z = rng.standard_normal(shape) if t > 1 else np.zeros(shape)
        v = denoise_step(model, v, t, cond, sched, z.astype(dtype)).astype(np.float64)
        anchor(v, t - 1)
        v = v.astype(dtype)
    return np.clip(v, -1.0, 1.0)
