import numpy as np
import pytest

from fewshot_vdm.checkpoint import Checkpoint, CheckpointError, ChecksumError, load_checkpoint, save_checkpoint
from fewshot_vdm.denoiser import init_params


@pytest.fixture
def ckpt(tiny_config):
    p = init_params(tiny_config, 2)
    opt = {"m/head.w": np.ones((48, 16), np.float32)}
    return Checkpoint("base", tiny_config, p.tensors, opt, {"T": 10, "beta_start": 1e-4, "beta_end": 0.04},
                      {"step": 3, "note": "x"})


def test_roundtrip_bit_exact(tmp_path, ckpt):
    path = save_checkpoint(ckpt, tmp_path / "a.ckpt")
    back = load_checkpoint(path)
    assert back.config == ckpt.config and back.kind == "base"
    assert back.tensor_hash() == ckpt.tensor_hash()
    for k, v in ckpt.tensors.items():
        assert back.tensors[k].dtype == np.float32
        assert np.array_equal(back.tensors[k], v)
    assert np.array_equal(back.optimizer["m/head.w"], ckpt.optimizer["m/head.w"])
    assert back.metadata == ckpt.metadata and back.schedule == ckpt.schedule
    # saving again gives identical bytes
    again = save_checkpoint(back, tmp_path / "b.ckpt")
    assert path.read_bytes() == again.read_bytes()


def test_corrupt_byte_detected(tmp_path, ckpt):
    path = save_checkpoint(ckpt, tmp_path / "a.ckpt")
    blob = bytearray(path.read_bytes())
    blob[len(blob) // 2] ^= 0xFF
    path.write_bytes(bytes(blob))
    with pytest.raises(ChecksumError):
        load_checkpoint(path)


def test_bad_magic_and_missing(tmp_path):
    p = tmp_path / "junk"
    p.write_bytes(b"hello world" * 10)
    with pytest.raises(CheckpointError):
        load_checkpoint(p)
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "missing")


def test_adapter_checkpoint_has_no_params(ckpt):
    ad = Checkpoint("adapter", ckpt.config, {})
    with pytest.raises(ValueError):
        ad.params()
