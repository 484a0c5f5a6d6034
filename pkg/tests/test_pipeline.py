import numpy as np
import pytest

from fewshot_vdm.denoiser import ModelConfig
from fewshot_vdm.lora import attach
from fewshot_vdm.optim import AdamWConfig
from fewshot_vdm.pipeline import (LoraSpec, TrainRunConfig, adapter_from_checkpoint, finetune_lora, finetune_steps,
                                  infer, moving_shapes_video, pretrain_base, pretraining_clip, schedule_from_record, transition_video)
from fewshot_vdm.tasks import generate_synthetic_tasks

CFG = ModelConfig(num_frames=3, height=8, width=8, patch=4, dim=16, heads=2, blocks=1, timesteps=10)


@pytest.fixture(scope="module")
def base():
    return pretrain_base(CFG, TrainRunConfig(steps=6, seed=1, optimizer=AdamWConfig(lr=1e-3)))


@pytest.fixture(scope="module")
def tasks():
    return generate_synthetic_tasks("segmentation", 2, 1, seed=0, size=(8, 8))


def test_run_config_validation():
    with pytest.raises(ValueError):
        TrainRunConfig(steps=10, eval_every=3)
    with pytest.raises(ValueError):
        TrainRunConfig(steps=0)
    with pytest.raises(ValueError):
        TrainRunConfig(transition_prob=1.5)
    assert finetune_steps(5) == 250 and finetune_steps(10, 1) == 2000 and finetune_steps(30, 1) == 4000


def test_transition_clips():
    cfg = ModelConfig(num_frames=5, height=16, width=16, patch=4, dim=16, heads=2, blocks=1, timesteps=10)
    for seed in range(20):
        v = transition_video(np.random.default_rng(seed), cfg)
        assert v.shape == (5, 16, 16, 3)
        assert v.min() >= -1 and v.max() <= 1
        assert not np.array_equal(v[0], v[-1])
    a = pretraining_clip(np.random.default_rng(3), cfg, 0.5)
    assert np.array_equal(a, pretraining_clip(np.random.default_rng(3), cfg, 0.5))
    # probability 0 always falls through to a moving-shapes clip
    rng = np.random.default_rng(4)
    rng.random()
    assert np.array_equal(pretraining_clip(np.random.default_rng(4), cfg, 0.0), moving_shapes_video(rng, cfg))


def test_pretrain_resume_is_identical(base, tmp_path):
    run = TrainRunConfig(steps=6, seed=1, optimizer=AdamWConfig(lr=1e-3))
    half = pretrain_base(CFG, run, stop_at=3)
    assert half.metadata["step"] == 3
    resumed = pretrain_base(CFG, run, resume=half)
    assert resumed.tensor_hash() == base.tensor_hash()
    assert resumed.metadata["losses"] == base.metadata["losses"]
    log = tmp_path / "log.jsonl"
    pretrain_base(CFG, TrainRunConfig(steps=2, seed=1), log_path=log)
    assert len(log.read_text().splitlines()) == 2


def test_resume_rejects_other_config(base):
    other = ModelConfig(num_frames=3, height=8, width=8, patch=4, dim=16, heads=2, blocks=2, timesteps=10)
    with pytest.raises(ValueError):
        pretrain_base(other, TrainRunConfig(steps=6), resume=base)


def test_finetune_freezes_base_and_snapshots(base, tasks):
    h = base.params().hash()
    calls = []
    run = TrainRunConfig(steps=4, eval_every=2, seed=0, optimizer=AdamWConfig(lr=1e-2),
                         lora=LoraSpec("QKVO", 2, 4.0))
    ad, snaps = finetune_lora(base, tasks, run, snapshot_fn=lambda p, a, s: calls.append(s) or s)
    assert base.params().hash() == h
    assert snaps == [2, 4] and calls == [2, 4]
    assert ad.kind == "adapter" and ad.metadata["base_hash"] == h
    adapter = adapter_from_checkpoint(ad, base)
    assert any(np.any(b != 0) for b in adapter.B.values())
    assert set(ad.tensors) == set(attach(base.params(), "QKVO", 2).tensors())


def test_finetune_deterministic(base, tasks):
    run = TrainRunConfig(steps=3, seed=5, lora=LoraSpec("QK", 2, 4.0))
    a, _ = finetune_lora(base, tasks, run)
    b, _ = finetune_lora(base, tasks, run)
    assert a.tensor_hash() == b.tensor_hash()


def test_adapter_config_guard(base, tasks):
    ad, _ = finetune_lora(base, tasks, TrainRunConfig(steps=1, lora=LoraSpec("QK", 2, 4.0)))
    other = pretrain_base(ModelConfig(num_frames=3, height=8, width=8, patch=4, dim=16, heads=2, blocks=2,
                                      timesteps=10), TrainRunConfig(steps=1))
    with pytest.raises(ValueError):
        adapter_from_checkpoint(ad, other)


def test_finetune_rejects_wrong_canvas(base):
    big = generate_synthetic_tasks("segmentation", 1, 0, seed=0, size=(16, 16))
    with pytest.raises(ValueError):
        finetune_lora(base, big, TrainRunConfig(steps=1, lora=LoraSpec("QK", 2, 4.0)))


def test_infer_contracts(base, tasks):
    x = tasks.test_pairs[0][0]
    sched = schedule_from_record(base.schedule)
    video, pred = infer(base.params(), None, x, seed=3, sched=sched)
    assert video.shape == (3, 8, 8, 3)
    assert np.array_equal(pred, video[-1])
    assert np.abs(video[0] - x).max() < 1e-6
    assert video.min() >= -1 and video.max() <= 1
    again, _ = infer(base.params(), None, x, seed=3, sched=sched)
    assert np.array_equal(video, again)
    strided, _ = infer(base.params(), None, x, seed=3, steps=4, sched=sched)
    assert strided.shape == video.shape
    with pytest.raises(ValueError):
        infer(base.params(), None, np.zeros((4, 4, 3)))
