"""``fewshot-vdm`` command line.

Exit codes: 0 success, 2 validation error, 3 numeric failure, 4 I/O error.
Failures print one JSON error record to stderr (and to ``<out>/error.json``
when an output directory was given).  Relative ``--out`` paths resolve under
``$FEWSHOT_VDM_OUTPUT_ROOT`` when it is set.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import codec, lora as lora_mod
from .checkpoint import load_checkpoint, save_checkpoint
from .denoiser import ModelConfig, param_count
from .experiment import (METRICS, ConfigError, ExperimentConfig, default_metric, score_predictions,
                         snapshot_predictor)
from .interp import Variant, save_video
from .metrics import snapshot_selection
from .optim import AdamWConfig
from .pipeline import (FreezeViolation, LoraSpec, TrainRunConfig, adapter_from_checkpoint, finetune_lora,
                       finetune_steps, infer, pretrain_base, schedule_from_record)
from .tasks import ARC_TRANSFORMS, TaskKind, generate_synthetic_tasks, load_taskset, make_arc_task, save_taskset
from .tasks import taskset_from_arc_json

log = logging.getLogger("fewshot_vdm")

OUTPUT_ROOT_ENV = "FEWSHOT_VDM_OUTPUT_ROOT"
EXIT_OK, EXIT_VALIDATION, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


def resolve_out(path) -> Path:
    p = Path(path)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    return p if (p.is_absolute() or not root) else Path(root) / p


def _write_json(path: Path, data) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=1, sort_keys=True, default=str) + "\n")
    return path


def _record(out: Path, command: str, config_hash: str | None, **extra) -> Path:
    return _write_json(out / "run.json", {"command": command, "config_hash": config_hash, **extra})


def _ints(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _capped_rank(params, targets: str, rank: int) -> int:
    cap = lora_mod.max_rank(params, targets)
    if rank > cap:
        log.warning("rank %d exceeds the cap %d for this model; using %d", rank, cap, cap)
        return cap
    return rank


def _list_predictions(pred_dir: Path, n: int) -> list[list[np.ndarray]]:
    out = []
    for i in range(n):
        files = sorted(pred_dir.glob(f"{i:03d}_a*.png")) or sorted(pred_dir.glob(f"{i:03d}.png"))
        if not files:
            raise FileNotFoundError(f"no prediction for test input {i} in {pred_dir}")
        out.append([codec.load_png(f) for f in files])
    return out


# ---------------------------------------------------------------------------
# commands


def cmd_make_dataset(args) -> None:
    out = resolve_out(args.out)
    size = (args.size, args.size)
    if args.arc_json:
        ts = taskset_from_arc_json(args.arc_json, canvas=size, name=Path(args.arc_json).stem)
    elif args.kind == "arc" and args.arc_transform:
        ts = make_arc_task(args.arc_transform, args.n, args.n_test, args.seed, canvas=size,
                           max_side=args.arc_max_side)
    else:
        ts = generate_synthetic_tasks(args.kind, args.n, args.n_test, args.seed, size=size)
    save_taskset(ts, out)
    _record(out, "make-dataset", None, kind=ts.task_kind.value, name=ts.name, n_train=len(ts.train_pairs),
            n_test=len(ts.test_pairs), seed=args.seed)
    print(out)


def cmd_pretrain(args) -> None:
    out = resolve_out(args.out)
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    run = cfg.run_config()
    resume = load_checkpoint(args.resume) if args.resume else None
    log_path = out / "train_log.jsonl"
    if resume is None and log_path.exists():
        log_path.unlink()
    ckpt = pretrain_base(cfg.model, run, log_path=log_path, resume=resume)
    save_checkpoint(ckpt, out / "base.ckpt")
    _record(out, "pretrain", cfg.model.hash(), config=cfg.to_dict(), base_hash=ckpt.metadata["base_hash"],
            final_loss=ckpt.metadata["losses"][-1] if ckpt.metadata["losses"] else None)
    print(out / "base.ckpt")


def _finetune_run(args, cfg: ExperimentConfig, params, n: int) -> TrainRunConfig:
    targets = args.lora_targets or cfg.lora.targets
    rank = _capped_rank(params, targets, args.rank or cfg.lora.rank)
    opt = cfg.optimizer if args.lr is None else AdamWConfig(**{**cfg.optimizer.__dict__, "lr": args.lr})
    steps = args.steps or (cfg.train.steps if args.config else finetune_steps(n))
    return TrainRunConfig(
        steps=steps, batch_size=cfg.train.batch_size, seed=cfg.train.seed if args.seed is None else args.seed,
        eval_every=args.eval_every, optimizer=opt, interp=args.interp or cfg.train.interp,
        lora=LoraSpec(targets, rank, args.alpha or cfg.lora.alpha),
    )


def cmd_finetune(args) -> None:
    out = resolve_out(args.out)
    base = load_checkpoint(args.base)
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    ts = load_taskset(args.task_dir)
    if args.n:
        ts = ts.subset(args.n)
    run = _finetune_run(args, cfg, base.params(), len(ts.train_pairs))
    log_path = out / "train_log.jsonl"
    if log_path.exists():
        log_path.unlink()
    snap_fn = None
    if run.eval_every:
        snap_fn = snapshot_predictor(ts, base, args.sample_steps)
    adapter_ckpt, snaps = finetune_lora(base, ts, run, log_path=log_path, snapshot_fn=snap_fn)
    save_checkpoint(adapter_ckpt, out / "adapter.ckpt")
    extra = {}
    if snaps:
        attempts = args.attempts or (2 if ts.task_kind is TaskKind.ARC else 1)
        sel = snapshot_selection([s["train_correct"] for s in snaps], attempts)
        pred_dir = out / "selected"
        for i in range(len(ts.test_pairs)):
            for a, j in enumerate(sel.indices):
                codec.save_png(snaps[j]["test"][i], pred_dir / f"{i:03d}_a{a}.png")
        extra = {"snapshots": [{"step": s["step"], "train_correct": s["train_correct"]} for s in snaps],
                 "selection": sel.__dict__}
    _record(out, "finetune", base.config_hash, task=ts.name, run=run.to_dict(),
            adapter_hash=adapter_ckpt.tensor_hash(), base_hash=adapter_ckpt.metadata["base_hash"], **extra)
    print(out / "adapter.ckpt")


def cmd_infer(args) -> None:
    out = resolve_out(args.out)
    base = load_checkpoint(args.base)
    params = base.params()
    adapter = adapter_from_checkpoint(load_checkpoint(args.adapter), base) if args.adapter else None
    sched = schedule_from_record(base.schedule)
    src = Path(args.input)
    if src.is_dir():
        ts = load_taskset(src)
        inputs = [x for x, _ in ts.test_pairs]
        for i, x in enumerate(inputs):
            for a in range(args.attempts):
                video, pred = infer(params, adapter, x, seed=args.seed + a, steps=args.steps, sched=sched)
                codec.save_png(pred, out / "predictions" / f"{i:03d}_a{a}.png")
                save_video(video, out / "videos" / f"{i:03d}_a{a}")
    else:
        video, pred = infer(params, adapter, codec.load_png(src), seed=args.seed, steps=args.steps, sched=sched)
        codec.save_png(pred, out / "prediction.png")
        save_video(video, out / "frames")
    _record(out, "infer", base.config_hash, input=str(src), seed=args.seed, steps=args.steps,
            adapter=str(args.adapter) if args.adapter else None)
    print(out)


def cmd_eval(args) -> None:
    out = resolve_out(args.out)
    ts = load_taskset(args.task_dir)
    metric = args.metric or default_metric(ts.task_kind)
    if metric is None:
        raise ValueError(f"no default metric for task kind {ts.task_kind.value}; pass --metric")
    preds = _list_predictions(Path(args.predictions), len(ts.test_pairs))
    k = 0 if args.protocol == "strict" else args.k
    report = score_predictions(ts, preds, metric, attempts=args.attempts, k=k)
    report.protocol["protocol"] = args.protocol
    files = report.write(out)
    pred_dir = Path(args.predictions)
    manifests = [d / "run.json" for d in (pred_dir, pred_dir.parent) if (d / "run.json").exists()]
    config_hash = json.loads(manifests[0].read_text()).get("config_hash") if manifests else None
    _record(out, "eval", config_hash, metric=metric, aggregate=report.aggregate,
            files=[f.name for f in files])
    print(json.dumps({"metric": metric, "aggregate": report.aggregate}))


def _sweep_cell(job: dict) -> dict:
    """One (axis value, n) fine-tune + evaluation; runs in a worker process."""
    base = load_checkpoint(job["base"])
    params = base.params()
    ts = load_taskset(job["task_dir"]).subset(job["n"])
    spec = LoraSpec(job["targets"], _capped_rank(params, job["targets"], job["rank"]), job["alpha"])
    run = TrainRunConfig(steps=job["steps"], seed=job["seed"], interp=job["interp"], lora=spec,
                         optimizer=AdamWConfig(lr=job["lr"], weight_decay=0.0))
    ad_ckpt, _ = finetune_lora(base, ts, run)
    adapter = adapter_from_checkpoint(ad_ckpt, base)
    sched = schedule_from_record(base.schedule)
    preds = [[infer(params, adapter, x, seed=i, steps=job["sample_steps"], sched=sched)[1]]
             for i, (x, _) in enumerate(ts.test_pairs)]
    report = score_predictions(ts, preds, job["metric"])
    return {**job, "score": report.aggregate, "adapter_hash": ad_ckpt.tensor_hash()}


def cmd_sweep(args) -> None:
    out = resolve_out(args.out)
    base = load_checkpoint(args.base)
    task_dir = out / "tasks"
    ns = _ints(args.ns)
    n_train = max(_ints(args.grid) if args.axis == "n" else ns)
    ts = generate_synthetic_tasks(args.kind, n_train, args.n_test, args.seed,
                                  size=(base.config.height, base.config.width))
    save_taskset(ts, task_dir)
    metric = default_metric(ts.task_kind)
    if metric is None:
        raise ValueError(f"sweeps need a scored task kind, got {args.kind}")
    defaults = {"interp": args.interp, "targets": args.lora_targets, "rank": args.rank}
    if args.axis == "interp":
        grid = [Variant(v).value for v in args.grid.split(",")]
    elif args.axis == "targets":
        grid = [lora_mod.TargetSpec.parse(v).value for v in args.grid.split(",")]
    else:
        grid = _ints(args.grid)
    columns = ["score"] if args.axis == "n" else ns
    jobs = []
    for value in grid:
        for n in ([value] if args.axis == "n" else ns):
            job = dict(defaults, base=str(Path(args.base).resolve()), task_dir=str(task_dir.resolve()), n=n,
                       alpha=args.alpha, lr=args.lr, seed=args.seed, metric=metric,
                       steps=args.steps or finetune_steps(n), sample_steps=args.sample_steps, axis_value=value)
            if args.axis != "n":
                job[args.axis] = value
            jobs.append(job)
    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            results = list(pool.map(_sweep_cell, jobs))
    else:
        results = [_sweep_cell(j) for j in jobs]
    table = out / f"sweep_{args.axis}.csv"
    with table.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([args.axis] + [c if c == "score" else f"n={c}" for c in columns])
        for value in grid:
            row = [r["score"] for r in results if r["axis_value"] == value]
            w.writerow([value] + row)
    _write_json(out / f"sweep_{args.axis}.json", {"config_hash": base.config_hash, "metric": metric,
                                                 "results": results})
    _record(out, "sweep", base.config_hash, axis=args.axis, grid=grid, ns=ns, metric=metric)
    print(table.read_text(), end="")


def cmd_param_count(args) -> None:
    if args.config:
        cfg = ExperimentConfig.load(args.config).model
    else:
        cfg = ModelConfig(**{k: v for k, v in vars(args).items()
                             if k in ModelConfig.__dataclass_fields__ and v is not None})
    print(json.dumps({"config_hash": cfg.hash(), "parameters": param_count(cfg), "config": cfg.to_dict()}))


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fewshot-vdm", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("make-dataset", help="write a synthetic or ARC task directory")
    s.add_argument("--kind", default="segmentation", choices=[k.value for k in TaskKind])
    s.add_argument("--n", type=int, default=5, help="training pairs")
    s.add_argument("--n-test", type=int, default=4)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--size", type=int, default=32, help="square canvas side")
    s.add_argument("--arc-json", help="ARC task file to import instead of generating")
    s.add_argument("--arc-transform", choices=ARC_TRANSFORMS)
    s.add_argument("--arc-max-side", type=int, default=5, help="largest synthetic ARC grid side")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_make_dataset)

    s = sub.add_parser("pretrain", help="train a base model on moving-shape clips")
    s.add_argument("--config", help="TOML experiment config")
    s.add_argument("--resume", help="base checkpoint to continue from")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_pretrain)

    s = sub.add_parser("finetune", help="fit a LoRA adapter on a task directory")
    s.add_argument("--base", required=True)
    s.add_argument("--task-dir", required=True)
    s.add_argument("--config")
    s.add_argument("--interp", choices=[v.value for v in Variant])
    s.add_argument("--lora-targets", choices=[t.value for t in lora_mod.TargetSpec])
    s.add_argument("--rank", type=int)
    s.add_argument("--alpha", type=float)
    s.add_argument("--lr", type=float)
    s.add_argument("--steps", type=int, help="default: scaled step budget for the shot count")
    s.add_argument("--seed", type=int)
    s.add_argument("--n", type=int, help="use only the first n training pairs")
    s.add_argument("--eval-every", type=int, help="take prediction snapshots at this interval")
    s.add_argument("--attempts", type=int, help="attempts chosen from snapshots (default 2 for ARC)")
    s.add_argument("--sample-steps", type=int, default=50, help="strided sampling steps for snapshots")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_finetune)

    s = sub.add_parser("infer", help="generate transition videos and predictions")
    s.add_argument("--base", required=True)
    s.add_argument("--adapter")
    s.add_argument("--input", required=True, help="PNG image or task directory (all test inputs)")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--steps", type=int, help="strided sampling steps (default: full chain)")
    s.add_argument("--attempts", type=int, default=1, help="predictions per input, seeds seed..seed+attempts-1")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("eval", help="score a prediction directory against a task directory")
    s.add_argument("--task-dir", required=True)
    s.add_argument("--predictions", required=True, help="directory of NNN_aK.png files")
    s.add_argument("--metric", choices=METRICS)
    s.add_argument("--protocol", choices=["strict", "lenient"], default="strict")
    s.add_argument("--k", type=int, default=1, help="cell tolerance for the lenient protocol")
    s.add_argument("--attempts", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep", help="ablation table over one axis and shot counts")
    s.add_argument("--axis", required=True, choices=["interp", "targets", "rank", "n"])
    s.add_argument("--grid", required=True, help="comma-separated axis values")
    s.add_argument("--base", required=True)
    s.add_argument("--kind", default="segmentation")
    s.add_argument("--ns", default="3,5,10,30", help="shot counts (table columns)")
    s.add_argument("--n-test", type=int, default=4)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--interp", default="linear")
    s.add_argument("--lora-targets", default="QKVO")
    s.add_argument("--rank", type=int, default=8)
    s.add_argument("--alpha", type=float, default=32.0)
    s.add_argument("--lr", type=float, default=2e-3)
    s.add_argument("--steps", type=int)
    s.add_argument("--sample-steps", type=int, default=50)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("param-count", help="closed-form parameter count of a model config")
    s.add_argument("--config")
    for name, f in ModelConfig.__dataclass_fields__.items():
        s.add_argument("--" + name.replace("_", "-"), dest=name, type=int)
    s.set_defaults(func=cmd_param_count)
    return p


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, FloatingPointError):
        return EXIT_NUMERIC
    if isinstance(exc, OSError):
        return EXIT_IO
    if isinstance(exc, (ValueError, KeyError, ConfigError, FreezeViolation)):
        return EXIT_VALIDATION
    return 1


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except Exception as exc:  # noqa: BLE001
        code = _exit_code(exc)
        if code == 1:
            raise
        record = {"status": "error", "exit_code": code, "error": type(exc).__name__,
                  "message": str(exc), "command": args.command}
        print(json.dumps(record), file=sys.stderr)
        out = getattr(args, "out", None)
        if out:
            try:
                _write_json(resolve_out(out) / "error.json", record)
            except OSError:
                pass
        return code
    out = getattr(args, "out", None)
    if out and (resolve_out(out) / "error.json").exists():
        (resolve_out(out) / "error.json").unlink()
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
