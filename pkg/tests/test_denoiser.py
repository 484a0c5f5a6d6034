import numpy as np
import pytest

from fewshot_vdm import lora
from fewshot_vdm.denoiser import (Conditioning, ModelConfig, backward, forward, init_params, param_count,
                                  tensor_shapes)


def _inputs(cfg, seed=0, batch=None):
    rng = np.random.default_rng(seed)
    lead = () if batch is None else (batch,)
    v = rng.standard_normal(lead + (cfg.num_frames, cfg.height, cfg.width, 3))
    x0 = rng.uniform(-1, 1, lead + (cfg.height, cfg.width, 3))
    t = rng.integers(1, cfg.timesteps + 1, size=batch) if batch else 4
    r = rng.standard_normal(v.shape)
    return v, t, Conditioning(x0), r


def _fd_check(loss, tensor, analytic, rng, n=20, h=1e-5):
    worst = 0.0
    idx = rng.choice(tensor.size, size=min(n, tensor.size), replace=False)
    flat = tensor.reshape(-1)
    for i in idx:
        old = flat[i]
        flat[i] = old + h
        lp = loss()
        flat[i] = old - h
        lm = loss()
        flat[i] = old
        num = (lp - lm) / (2 * h)
        a = analytic.reshape(-1)[i]
        worst = max(worst, abs(num - a) / max(abs(num), abs(a), 1e-6))
    return worst


def test_param_count_closed_form(tiny_config):
    cfg = tiny_config
    d, k, N, F = cfg.dim, cfg.patch_dim, cfg.patches_per_frame, cfg.num_frames
    # independent arithmetic: embeddings + blocks + head
    emb = (k * d + d) + F * d + N * d + (d * d + d) + (k * d + d) + d
    block = 4 * (d * d + d) + 2 * 2 * d + (4 * d * d + 4 * d) + (4 * d * d + d)
    head = 2 * d + (k * d + k)
    assert param_count(cfg) == emb + cfg.blocks * block + head
    assert init_params(cfg).num_parameters() == param_count(cfg)
    assert param_count(ModelConfig()) == init_params(ModelConfig()).num_parameters()


def test_init_deterministic_and_finite(tiny_config):
    a, b = init_params(tiny_config, 3), init_params(tiny_config, 3)
    assert a.hash() == b.hash()
    assert init_params(tiny_config, 4).hash() != a.hash()
    assert set(a.tensors) == set(tensor_shapes(tiny_config))
    out = forward(a, np.zeros((3, 8, 8, 3)), 1, Conditioning(np.zeros((8, 8, 3))))
    assert np.all(np.isfinite(out))


@pytest.mark.parametrize("kw", [dict(height=30), dict(dim=30, heads=4), dict(num_frames=1), dict(patch=0)])
def test_invalid_config(kw):
    with pytest.raises(ValueError):
        ModelConfig(**kw)


def test_shapes_and_batching(tiny_params):
    cfg = tiny_params.config
    v, t, c, _ = _inputs(cfg, batch=2)
    out = forward(tiny_params, v, t, c)
    assert out.shape == v.shape
    single = forward(tiny_params, v[1], t[1], Conditioning(c.first_frame[1]))
    assert np.allclose(single, out[1], atol=1e-12)
    with pytest.raises(ValueError):
        forward(tiny_params, v[:, :2], t, c)


def test_forward_deterministic(tiny_params):
    v, t, c, _ = _inputs(tiny_params.config)
    assert np.array_equal(forward(tiny_params, v, t, c), forward(tiny_params, v, t, c))


def test_frame_permutation_equivariance(tiny_params):
    v, t, c, _ = _inputs(tiny_params.config)
    out = forward(tiny_params, v, t, c)
    swapped = tiny_params.copy()
    pf = swapped.tensors["pos.frame"].copy()
    pf[[0, 2]] = pf[[2, 0]]
    swapped.tensors["pos.frame"] = pf
    out2 = forward(swapped, v[[2, 1, 0]], t, c)
    assert np.allclose(out2, out[[2, 1, 0]], atol=1e-12)


def test_backward_requires_forward(tiny_params):
    with pytest.raises(RuntimeError):
        backward(tiny_params, None, np.zeros((3, 8, 8, 3)))


def test_gradients_match_finite_differences(tiny_params):
    cfg = tiny_params.config
    v, t, c, r = _inputs(cfg, seed=5, batch=2)

    def loss():
        return float(np.sum(forward(tiny_params, v, t, c) * r))

    _, cache = forward(tiny_params, v, t, c, keep_cache=True)
    grads = backward(tiny_params, cache, r)
    assert set(grads) == set(tiny_params.tensors)
    rng = np.random.default_rng(0)
    for name, tensor in tiny_params.tensors.items():
        assert _fd_check(loss, tensor, grads[name], rng) < 1e-3, name


def test_lora_gradients_match_finite_differences(tiny_params):
    cfg = tiny_params.config
    v, t, c, r = _inputs(cfg, seed=6)
    ad = lora.attach(tiny_params, "AllLinear", rank=2, alpha=4.0, seed=1)
    rng = np.random.default_rng(2)
    for n in ad.layers:
        ad.B[n] = 0.3 * rng.standard_normal(ad.B[n].shape)

    def loss():
        return float(np.sum(forward(tiny_params, v, t, c, lora=ad) * r))

    _, cache = forward(tiny_params, v, t, c, lora=ad, keep_cache=True)
    grads = backward(tiny_params, cache, r, lora=ad, trainable="lora")
    assert set(grads) == set(ad.tensors())
    for key, tensor in ad.tensors().items():
        assert _fd_check(loss, tensor, grads[key], rng) < 1e-3, key


def test_frozen_tensors_get_no_gradient(tiny_params):
    v, t, c, r = _inputs(tiny_params.config)
    ad = lora.attach(tiny_params, "QK", rank=2)
    _, cache = forward(tiny_params, v, t, c, lora=ad, keep_cache=True)
    grads = backward(tiny_params, cache, r, lora=ad, trainable="lora")
    assert not set(grads) & set(tiny_params.tensors)
    _, cache = forward(tiny_params, v, t, c, keep_cache=True)
    grads = backward(tiny_params, cache, r, trainable={"head.w", "head.b"})
    assert set(grads) == {"head.w", "head.b"}


def test_gradient_linear_in_loss_scale(tiny_params):
    v, t, c, r = _inputs(tiny_params.config)
    _, cache = forward(tiny_params, v, t, c, keep_cache=True)
    g1 = backward(tiny_params, cache, r)
    g2 = backward(tiny_params, cache, 2 * r)
    for k in g1:
        assert np.allclose(g2[k], 2 * g1[k], rtol=1e-12, atol=0)
