"""Base pretraining, few-shot LoRA fine-tuning and inference."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import denoiser, diffusion, lora as lora_mod
from .checkpoint import Checkpoint
from .denoiser import Conditioning, DenoiserParams, ModelConfig
from .interp import InterpMethod, Variant, build_video_dataset, interpolate
from .optim import AdamWConfig, AdamWState, adamw_step

log = logging.getLogger(__name__)


class DivergenceError(FloatingPointError):
    pass


class FreezeViolation(RuntimeError):
    pass


@dataclass
class LoraSpec:
    targets: str = "QKVO"
    rank: int = 64
    alpha: float = 32.0


@dataclass
class TrainRunConfig:
    steps: int = 250
    batch_size: int = 2
    seed: int = 42
    eval_every: int | None = None
    optimizer: AdamWConfig = field(default_factory=AdamWConfig)
    interp: str = "linear"
    lora: LoraSpec | None = None
    # schedule
    beta_start: float = 1e-4
    beta_end: float = 0.04
    # pretraining only: share of clips that are image-to-image transitions
    transition_prob: float = 0.5

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if not 0.0 <= self.transition_prob <= 1.0:
            raise ValueError(f"transition_prob={self.transition_prob} must lie in [0, 1]")
        if self.eval_every is not None and (self.eval_every < 1 or self.steps % self.eval_every):
            raise ValueError(f"eval_every={self.eval_every} must divide steps={self.steps}")

    def to_dict(self) -> dict:
        return asdict(self)


def finetune_steps(n: int, toy_factor: int = 4) -> int:
    """Step budget by shot count: 1000 up to n=5, 2000 at n=10, 4000 at n=30, divided by ``toy_factor``."""
    full = 1000 if n <= 5 else 2000 if n <= 10 else 4000
    return full // toy_factor


def schedule_from(cfg: ModelConfig, run: TrainRunConfig) -> diffusion.NoiseSchedule:
    return diffusion.make_schedule(cfg.timesteps, run.beta_start, run.beta_end)


def schedule_record(sched: diffusion.NoiseSchedule) -> dict:
    return {"T": sched.T, "beta_start": sched.beta_start, "beta_end": sched.beta_end, "kind": "linear"}


def schedule_from_record(rec: dict) -> diffusion.NoiseSchedule:
    return diffusion.make_schedule(rec["T"], rec["beta_start"], rec["beta_end"])


# ---------------------------------------------------------------------------
# loss + gradients


def loss_and_grads(params: DenoiserParams, v0, cond: Conditioning, t, eps, sched, lora=None,
                   trainable="base"):
    """Epsilon-prediction MSE and its gradients for the trainable tensors."""
    dtype = params.tensors["patch.w"].dtype
    v0 = np.asarray(v0, dtype=dtype)
    eps = np.asarray(eps, dtype=dtype)
    v_t = diffusion.add_noise(v0, t, eps, sched)
    pred, cache = denoiser.forward(params, v_t, sched.timesteps[sched.check_t(t) - 1], cond,
                                   lora=lora, keep_cache=True)
    diff = pred - eps
    loss = float(np.mean(diff.astype(np.float64) ** 2))
    grads = denoiser.backward(params, cache, (2.0 / diff.size) * diff, lora=lora, trainable=trainable)
    return loss, grads


def model_fn(params: DenoiserParams, lora=None):
    def eps_model(v_t, t, cond):
        return denoiser.forward(params, v_t, t, cond, lora=lora)
    return eps_model


def _draw_batch(rng, videos, batch_size, sched):
    idx = rng.integers(0, len(videos), size=batch_size)
    v0 = np.stack([videos[i] for i in idx]).astype(np.float32)
    t = rng.integers(1, sched.T + 1, size=batch_size)
    eps = rng.standard_normal(v0.shape).astype(np.float32)
    return v0, t, eps


class JsonlLog:
    def __init__(self, path=None):
        self.path = Path(path) if path else None
        self.records = []
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)

    def write(self, **rec):
        rec.setdefault("timestamp", time.time())
        self.records.append(rec)
        if self.path:
            with self.path.open("a") as fh:
                fh.write(json.dumps(rec) + "\n")


def _opt_to_tensors(state: AdamWState) -> dict:
    out = {f"m/{k}": v for k, v in state.m.items()}
    out.update({f"v/{k}": v for k, v in state.v.items()})
    return out


def _opt_from_tensors(tensors: dict, step: int) -> AdamWState:
    m = {k[2:]: v for k, v in tensors.items() if k.startswith("m/")}
    v = {k[2:]: v for k, v in tensors.items() if k.startswith("v/")}
    return AdamWState(step, m, v)


# ---------------------------------------------------------------------------
# pretraining corpus


def moving_shapes_video(rng, cfg: ModelConfig) -> np.ndarray:
    """Coloured shapes translating, scaling and recolouring over the clip."""
    F, H, W = cfg.num_frames, cfg.height, cfg.width
    yy, xx = np.mgrid[0:H, 0:W].astype(np.float64)
    bg0, bg1 = rng.uniform(-1, 1, 3), rng.uniform(-1, 1, 3)
    grad_dir = rng.uniform(0, 2 * np.pi)
    g = ((xx * np.cos(grad_dir) + yy * np.sin(grad_dir)) / max(H, W) + 1) / 2
    background = bg0 * (1 - g[..., None]) + bg1 * g[..., None]
    texture = rng.uniform(0, 0.2) * rng.standard_normal((H, W, 1))
    shapes = []
    static = rng.random() < 0.25
    for _ in range(rng.integers(1, 4)):
        size0 = rng.uniform(min(3.0, H / 8), H / 4)
        shapes.append({
            "kind": rng.integers(2),
            "c": rng.uniform([0, 0], [W, H]),
            "vel": np.zeros(2) if static else rng.uniform(-1.5, 1.5, 2),
            "size": size0,
            "dsize": 0.0 if static else rng.uniform(-0.4, 0.4) * size0 / F,
            "col0": rng.uniform(-1, 1, 3),
            "col1": rng.uniform(-1, 1, 3) if (not static and rng.random() < 0.4) else None,
        })
    video = np.empty((F, H, W, 3))
    for f in range(F):
        frame = background + texture
        for s in shapes:
            cx, cy = s["c"] + f * s["vel"]
            r = max(1.0, s["size"] + f * s["dsize"])
            if s["kind"] == 0:
                m = (xx - cx) ** 2 + (yy - cy) ** 2 <= r * r
            else:
                m = (np.abs(xx - cx) <= r) & (np.abs(yy - cy) <= r)
            w = f / (F - 1)
            col = s["col0"] if s["col1"] is None else (1 - w) * s["col0"] + w * s["col1"]
            frame[m] = col
        video[f] = np.clip(frame, -1, 1)
    return video


def _edited(rng, frame, cfg: ModelConfig) -> np.ndarray:
    """A generic edit of ``frame``: another scene, a two-colour threshold,
    a channel remap or a flip."""
    kind = rng.integers(4)
    if kind == 0:
        return moving_shapes_video(rng, cfg)[0]
    if kind == 1:
        lum = frame.mean(-1)
        thr = np.quantile(lum, rng.uniform(0.2, 0.8))
        lo, hi = rng.uniform(-1, 1, (2, 3))
        return np.where((lum > thr)[..., None], hi, lo)
    if kind == 2:
        return frame[..., rng.permutation(3)] * rng.choice([-1.0, 1.0], 3)
    return frame[:, ::-1] if rng.random() < 0.5 else frame[::-1]


def transition_video(rng, cfg: ModelConfig) -> np.ndarray:
    """A scene turning into an edited version of itself, with a random
    interpolation variant (the same family the fine-tuning videos use)."""
    first = moving_shapes_video(rng, cfg)[0]
    variants = [Variant.LINEAR, Variant.QUADRATIC, Variant.DISCRETE]
    if cfg.height % 4 == 0 and cfg.width % 4 == 0:
        variants.append(Variant.TILES)
    method = InterpMethod(variants[rng.integers(len(variants))])
    return interpolate(first, _edited(rng, first, cfg), cfg.num_frames, method)


def pretraining_clip(rng, cfg: ModelConfig, transition_prob: float) -> np.ndarray:
    if rng.random() < transition_prob:
        return transition_video(rng, cfg)
    return moving_shapes_video(rng, cfg)


# ---------------------------------------------------------------------------
# pretraining


def pretrain_base(model_cfg: ModelConfig, run: TrainRunConfig, log_path=None,
                  resume: Checkpoint | None = None, stop_at: int | None = None) -> Checkpoint:
    """Train every base tensor on fresh procedural clips.

    A share ``run.transition_prob`` of the clips are image-to-image
    transitions (:func:`transition_video`), the rest moving shapes.

    Each step draws its batch from ``default_rng([seed, step])`` so a resumed
    run replays the exact same subsequent batches.  ``stop_at`` ends the run
    early (for resumable chunks); the schedule still refers to ``run.steps``.
    """
    sched = schedule_from(model_cfg, run)
    if resume is None:
        params = denoiser.init_params(model_cfg, run.seed)
        state = AdamWState()
    else:
        if resume.kind != "base" or resume.config != model_cfg:
            raise ValueError("resume checkpoint does not match the model config")
        params = resume.params()
        state = _opt_from_tensors(resume.optimizer, resume.metadata["step"])
    logger = JsonlLog(log_path)
    end = run.steps if stop_at is None else min(stop_at, run.steps)
    losses = list(resume.metadata.get("losses", [])) if resume is not None else []
    for step in range(state.step, end):
        rng = np.random.default_rng([run.seed, step, 1])
        v0 = np.stack([pretraining_clip(rng, model_cfg, run.transition_prob)
                       for _ in range(run.batch_size)]).astype(np.float32)
        t = rng.integers(1, sched.T + 1, size=run.batch_size)
        eps = rng.standard_normal(v0.shape).astype(np.float32)
        loss, grads = loss_and_grads(params, v0, Conditioning(v0[:, 0]), t, eps, sched)
        if not np.isfinite(loss):
            raise DivergenceError(f"non-finite loss at step {step + 1}")
        new, state, gnorm = adamw_step(params.tensors, grads, state, run.optimizer)
        params = DenoiserParams(model_cfg, new)
        losses.append(loss)
        logger.write(step=step + 1, loss=loss, grad_norm=gnorm)
    return Checkpoint(
        "base", model_cfg, params.tensors, _opt_to_tensors(state), schedule_record(sched),
        {"step": state.step, "seed": run.seed, "config_hash": model_cfg.hash(),
         "run": run.to_dict(), "losses": losses, "base_hash": params.hash()},
    )


# ---------------------------------------------------------------------------
# fine-tuning


@dataclass
class Snapshot:
    step: int
    train_predictions: list
    test_predictions: list
    train_correct: bool | None = None


def finetune_lora(base: Checkpoint, tasks, run: TrainRunConfig, log_path=None, snapshot_fn=None):
    """Train a fresh adapter on the task's transition videos, base frozen.

    ``snapshot_fn(params, adapter, step)`` is called every ``run.eval_every``
    steps when both are given; its return values are collected in order.
    Returns ``(adapter checkpoint, snapshots)``.
    """
    spec = run.lora or LoraSpec()
    params = base.params()
    base_hash = params.hash()
    cfg = params.config
    sched = schedule_from_record(base.schedule)
    videos = build_video_dataset(tasks, cfg.num_frames, InterpMethod.parse(run.interp))
    if videos[0].shape != (cfg.num_frames, cfg.height, cfg.width, 3):
        raise ValueError(f"task videos {videos[0].shape} do not match the model canvas")
    adapter = lora_mod.attach(params, spec.targets, spec.rank, spec.alpha, seed=run.seed)
    state = AdamWState()
    logger = JsonlLog(log_path)
    snapshots = []
    for step in range(run.steps):
        rng = np.random.default_rng([run.seed, step, 2])
        v0, t, eps = _draw_batch(rng, videos, run.batch_size, sched)
        loss, grads = loss_and_grads(params, v0, Conditioning(v0[:, 0]), t, eps, sched,
                                     lora=adapter, trainable="lora")
        if not np.isfinite(loss):
            raise DivergenceError(f"non-finite loss at step {step + 1}")
        new, state, gnorm = adamw_step(adapter.tensors(), grads, state, run.optimizer)
        adapter.set_tensors(new)
        logger.write(step=step + 1, loss=loss, grad_norm=gnorm)
        if snapshot_fn is not None and run.eval_every and (step + 1) % run.eval_every == 0:
            snapshots.append(snapshot_fn(params, adapter, step + 1))
    if params.hash() != base_hash:
        raise FreezeViolation("base parameters changed during fine-tuning")
    ckpt = Checkpoint(
        "adapter", cfg, adapter.tensors(), _opt_to_tensors(state), base.schedule,
        {"step": state.step, "seed": run.seed, "config_hash": cfg.hash(), "base_hash": base_hash,
         "rank": adapter.rank, "alpha": adapter.alpha, "targets": adapter.targets.value,
         "task": tasks.name, "n_train": len(tasks.train_pairs), "run": run.to_dict(),
         "losses": [r["loss"] for r in logger.records]},
    )
    return ckpt, snapshots


def adapter_from_checkpoint(ckpt: Checkpoint, base: Checkpoint) -> lora_mod.LoraAdapter:
    if ckpt.kind != "adapter":
        raise ValueError("not an adapter checkpoint")
    if ckpt.metadata.get("config_hash") != base.config_hash or ckpt.config != base.config:
        raise ValueError(
            f"adapter was trained for config {ckpt.metadata.get('config_hash')}, "
            f"base has {base.config_hash}"
        )
    md = ckpt.metadata
    adapter = lora_mod.LoraAdapter(md["rank"], md["alpha"], lora_mod.TargetSpec.parse(md["targets"]),
                                   base.config_hash)
    adapter.set_tensors(dict(ckpt.tensors))
    return adapter


# ---------------------------------------------------------------------------
# inference


def infer(params: DenoiserParams, adapter, x_test, seed: int = 0, steps: int | None = None,
          sched: diffusion.NoiseSchedule | None = None):
    """Generate a transition video from ``x_test``; the prediction is its last frame."""
    cfg = params.config
    x = np.asarray(x_test, dtype=np.float64)
    if x.shape != (cfg.height, cfg.width, 3):
        raise ValueError(f"input image {x.shape} does not match canvas {(cfg.height, cfg.width, 3)}")
    if sched is None:
        sched = diffusion.make_schedule(cfg.timesteps)
    video = diffusion.sample(model_fn(params, adapter), Conditioning(x), sched, seed,
                             (cfg.num_frames, cfg.height, cfg.width, 3), steps=steps)
    return video, video[-1]
