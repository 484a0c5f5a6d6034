"""Declarative experiment configs and scoring of saved predictions.

A config file is TOML with up to five sections; every key is optional and
unknown keys are rejected::

    [model]       num_frames height width patch dim heads blocks timesteps
    [schedule]    beta_start beta_end
    [optimizer]   lr beta1 beta2 weight_decay eps max_grad_norm
    [lora]        targets rank alpha
    [train]       steps batch_size seed eval_every interp transition_prob

Optimizer and LoRA defaults are the published large-model values (AdamW lr
1e-4, betas 0.9/0.95, weight decay 1e-3, eps 1e-8, clip 1.0, rank 64, alpha
32, batch 2).  Desk-scale runs usually override ``optimizer.lr`` (1e-3 for
pretraining, 2e-3 or more for LoRA) because a few hundred steps at 1e-4 barely
move a freshly initialised network.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import numpy as np
import tomli

from . import codec, metrics
from .denoiser import ModelConfig
from .optim import AdamWConfig
from .checkpoint import Checkpoint
from .pipeline import LoraSpec, TrainRunConfig, infer, schedule_from_record
from .tasks import TaskKind, TaskSet


class ConfigError(ValueError):
    pass


@dataclass
class ScheduleConfig:
    beta_start: float = 1e-4
    beta_end: float = 0.04


@dataclass
class TrainConfig:
    steps: int = 250
    batch_size: int = 2
    seed: int = 42
    eval_every: int | None = None
    interp: str = "linear"
    transition_prob: float = 0.5


@dataclass
class ExperimentConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    optimizer: AdamWConfig = field(default_factory=AdamWConfig)
    lora: LoraSpec = field(default_factory=LoraSpec)
    train: TrainConfig = field(default_factory=TrainConfig)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        sections = {f.name: f for f in fields(cls)}
        unknown = set(data) - set(sections)
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        built = {}
        for name, f in sections.items():
            section_cls = type(f.default_factory())
            values = data.get(name, {})
            if not isinstance(values, dict):
                raise ConfigError(f"section [{name}] must be a table")
            allowed = {g.name for g in fields(section_cls)}
            bad = set(values) - allowed
            if bad:
                raise ConfigError(f"unknown keys in [{name}]: {sorted(bad)}")
            try:
                built[name] = section_cls(**values)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"invalid [{name}] section: {exc}") from exc
        return cls(**built)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path, "rb") as fh:
            try:
                data = tomli.load(fh)
            except tomli.TOMLDecodeError as exc:
                raise ConfigError(f"cannot parse {path}: {exc}") from exc
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return {f.name: asdict(getattr(self, f.name)) for f in fields(self)}

    def run_config(self, with_lora: bool = False) -> TrainRunConfig:
        t = self.train
        return TrainRunConfig(
            steps=t.steps, batch_size=t.batch_size, seed=t.seed, eval_every=t.eval_every,
            optimizer=self.optimizer, interp=t.interp, lora=self.lora if with_lora else None,
            beta_start=self.schedule.beta_start, beta_end=self.schedule.beta_end,
            transition_prob=t.transition_prob,
        )


# ---------------------------------------------------------------------------
# scoring


METRICS = ("miou", "match_rate", "arc", "conceptarc", "classification")


def _mask_for(ts: TaskSet, i: int) -> np.ndarray:
    entry = ts.meta["test"][i]
    if "mask" in entry:
        return np.asarray(entry["mask"], dtype=bool)
    return codec.mask_decode(ts.test_pairs[i][1])


def score_predictions(ts: TaskSet, predictions, metric: str, attempts: int | None = None,
                      k: int = 0) -> metrics.EvalReport:
    """Score ``predictions[i]`` (a list of attempt images for test input ``i``).

    Image metrics use the first attempt only.  ``attempts`` defaults to 2 for
    ``arc`` and 3 for ``conceptarc``; ``k`` is the lenient cell tolerance.
    """
    if metric not in METRICS:
        raise ValueError(f"unknown metric {metric!r}; expected one of {METRICS}")
    if len(predictions) != len(ts.test_pairs):
        raise ValueError(f"{len(predictions)} predictions for {len(ts.test_pairs)} test inputs")
    if any(len(p) == 0 for p in predictions):
        raise ValueError("every test input needs at least one prediction")
    protocol = {"metric": metric, "task": ts.name, "attempts_available": [len(p) for p in predictions]}

    if metric == "miou":
        scores = [metrics.miou(p[0], _mask_for(ts, i)) for i, p in enumerate(predictions)]
        return metrics.EvalReport(metric, scores, metrics.aggregate(scores), protocol)

    if metric == "match_rate":
        scores = []
        for i, p in enumerate(predictions):
            ann = ts.meta["test"][i].get("annotation")
            if ann is None:
                raise ValueError(f"test input {i} has no pose annotation")
            scores.append(metrics.match_rate(p[0], ann))
        return metrics.EvalReport(metric, scores, metrics.aggregate(scores), protocol)

    if metric == "classification":
        symbols = codec.SymbolSet.from_json(ts.meta["symbols"]) if "symbols" in ts.meta else codec.SymbolSet()
        pred_labels, true_labels, scores = [], [], []
        for i, p in enumerate(predictions):
            labels = np.asarray(ts.meta["test"][i]["labels"])
            got = codec.decode_classification_grid(p[0], symbols)
            pred_labels.append(got)
            true_labels.append(labels)
            scores.append(float(np.mean(got == labels)))
        rep = metrics.classification_report(np.concatenate(pred_labels), np.concatenate(true_labels),
                                            symbols.num_classes)
        protocol["accuracy"] = rep["accuracy"]
        return metrics.EvalReport(metric, scores, rep["accuracy"], protocol, confusion=rep["confusion"])

    # grid protocols
    if ts.task_kind is not TaskKind.ARC:
        raise ValueError(f"metric {metric} needs an ARC task, got {ts.task_kind.value}")
    attempts = attempts or (2 if metric == "arc" else 3)
    truths = [np.asarray(m["grid_out"]) for m in ts.meta["test"]]
    train_outputs = [np.asarray(m["grid_out"]) for m in ts.meta["train"]]
    grids = [[codec.grid_decode(img, t.shape) for img in p] for p, t in zip(predictions, truths)]
    if metric == "conceptarc":
        grids = [[codec.gray_remap(g, train_outputs) for g in p] for p in grids]
    errors = [[metrics.cell_errors(g, t) for g in p] for p, t in zip(grids, truths)]
    protocol.update(attempts=attempts, k=k)
    if metric == "arc":
        solved = metrics.arc_score(grids, truths, attempts=attempts, k=k)
        per_input = [metrics.input_solved(e, attempts, k) for e in errors]
        curves = metrics.lenient_curves([errors], max_attempts=max(attempts, 3), attempts_at_k=attempts)
        protocol["task_solved"] = solved
        return metrics.EvalReport(metric, [float(s) for s in per_input], float(solved), protocol,
                                  curves=curves)
    flags = metrics.conceptarc_score(grids, truths, train_outputs, attempts=attempts, remap_black=False)
    curves = metrics.lenient_curves([errors], max_attempts=max(attempts, 3), attempts_at_k=attempts,
                                    per_input=True)
    return metrics.EvalReport(metric, [float(f) for f in flags], metrics.aggregate(flags), protocol,
                              curves=curves)


def default_metric(kind: TaskKind) -> str | None:
    return {TaskKind.SEGMENTATION: "miou", TaskKind.POSE: "match_rate", TaskKind.ARC: "arc",
            TaskKind.CLASSIFICATION_GRID: "classification"}.get(TaskKind(kind))


def snapshot_predictor(ts, base: Checkpoint, sample_steps):
    """Build a ``snapshot_fn`` for :func:`finetune_lora` that predicts every
    train and test input.  A snapshot is train-correct when every training
    prediction is exact (decoded grids for ARC, 8-bit pixels otherwise)."""
    sched = schedule_from_record(base.schedule)

    def fn(params, adapter, step):
        train = [infer(params, adapter, x, seed=i, steps=sample_steps, sched=sched)[1]
                 for i, (x, _) in enumerate(ts.train_pairs)]
        test = [infer(params, adapter, x, seed=i, steps=sample_steps, sched=sched)[1]
                for i, (x, _) in enumerate(ts.test_pairs)]
        if ts.task_kind is TaskKind.ARC:
            ok = all(np.array_equal(codec.grid_decode(p, np.shape(m["grid_out"])), m["grid_out"])
                     for p, m in zip(train, ts.meta["train"]))
        else:
            ok = all(np.array_equal(codec.to_uint8(p), codec.to_uint8(y)) for p, (_, y) in zip(train, ts.train_pairs))
        return {"step": step, "train_correct": bool(ok), "train": train, "test": test}

    return fn
