"""
Few-shot segmentation end to end
================================

1. pretrain a small base video model on procedurally generated clips,
2. fine-tune a LoRA adapter on n example pairs turned into transition videos,
3. sample a clip from a new input and read the prediction off its last frame.

Pretraining takes several minutes on one CPU core.  Set
``FEWSHOT_VDM_BASE=/path/base.ckpt`` to reuse a checkpoint, and
``DEMO_QUICK=1`` for a much shorter (and much worse) run.
"""
import os
import time

import numpy as np

from _common import output_dir
from fewshot_vdm import codec
from fewshot_vdm.checkpoint import load_checkpoint, save_checkpoint
from fewshot_vdm.denoiser import ModelConfig
from fewshot_vdm.metrics import miou
from fewshot_vdm.optim import AdamWConfig
from fewshot_vdm.pipeline import (LoraSpec, TrainRunConfig, adapter_from_checkpoint, finetune_lora, infer,
                                  pretrain_base, schedule_from_record)
from fewshot_vdm.tasks import generate_synthetic_tasks

out = output_dir("05_fewshot_segmentation")
quick = os.environ.get("DEMO_QUICK") == "1"

# -- step 1: base model --------------------------------------------------------
if os.environ.get("FEWSHOT_VDM_BASE"):
    base = load_checkpoint(os.environ["FEWSHOT_VDM_BASE"])
else:
    cfg = ModelConfig(dim=128, heads=4, blocks=2)
    run = TrainRunConfig(steps=100 if quick else 2500, seed=0, optimizer=AdamWConfig(lr=1e-3, weight_decay=0.0))
    t0 = time.time()
    base = pretrain_base(cfg, run, log_path=out / "pretrain_log.jsonl")
    save_checkpoint(base, out / "base.ckpt")
    losses = base.metadata["losses"]
    print(f"pretrained {len(losses)} steps in {time.time() - t0:.0f}s, "
          f"loss {np.mean(losses[:50]):.3f} -> {np.mean(losses[-50:]):.3f}")
params = base.params()
sched = schedule_from_record(base.schedule)

# -- step 2: few-shot adapter --------------------------------------------------
tasks = generate_synthetic_tasks("segmentation", 5, 4, seed=3)
spec = LoraSpec("AllLinear", 8, 32.0)
scores = {}
x_test, _ = tasks.test_pairs[0]
panels = [x_test, codec.render_mask_target(tasks.meta["test"][0]["mask"])]
for n in (0, 1, 5):
    adapter = None
    if n:
        run = TrainRunConfig(steps=20 if quick else 250, seed=0, lora=spec,
                             optimizer=AdamWConfig(lr=2e-3, weight_decay=0.0))
        ckpt, _ = finetune_lora(base, tasks.subset(n), run)
        adapter = adapter_from_checkpoint(ckpt, base)
    # -- step 3: inference ------------------------------------------------------
    preds = [infer(params, adapter, x, seed=i, steps=50, sched=sched)[1] for i, (x, _) in enumerate(tasks.test_pairs)]
    scores[n] = np.mean([miou(p, m["mask"]) for p, m in zip(preds, tasks.meta["test"])])
    panels.append(preds[0])
    print(f"n={n}: held-out mIoU {scores[n]:.3f}" + ("  (untuned base)" if n == 0 else ""))

codec.save_png(np.concatenate(panels, 1), out / "input_truth_base_n1_n5.png")
print("wrote", out)
