"""
Low-rank adapters
=================

An adapter adds ``(alpha / r) * B @ A`` to selected weight matrices.  B
starts at zero, so attaching an adapter changes nothing until it is trained,
and a trained adapter can be folded back into the weights.
"""
import numpy as np

from fewshot_vdm import lora
from fewshot_vdm.denoiser import Conditioning, ModelConfig, forward, init_params, param_count

cfg = ModelConfig(dim=64, blocks=2)
params = init_params(cfg, seed=0)
print("base parameters:", param_count(cfg))

for spec in lora.TargetSpec:
    ad = lora.attach(params, spec, rank=8)
    print(f"{spec.value:9s} layers {len(ad.layers):2d}  adapter parameters {ad.num_parameters()}")

ad = lora.attach(params, "QKVO", rank=8, alpha=32)
rng = np.random.default_rng(0)
v = rng.standard_normal((cfg.num_frames, cfg.height, cfg.width, 3)).astype(np.float32)
cond = Conditioning(rng.uniform(-1, 1, (cfg.height, cfg.width, 3)))
base_out = forward(params, v, 100, cond)
print("fresh adapter is transparent:", np.array_equal(base_out, forward(params, v, 100, cond, lora=ad)))

# Pretend training moved B, then merge.
for name in ad.layers:
    ad.B[name] = (0.01 * rng.standard_normal(ad.B[name].shape)).astype(np.float32)
merged = lora.merge(params, ad)
diff = np.abs(forward(merged, v, 100, cond) - forward(params, v, 100, cond, lora=ad)).max()
print("merged vs adapter max difference: %.2e" % diff)
print("base untouched by merge:", params.hash() == init_params(cfg, seed=0).hash())

try:
    lora.attach(params, "QKVO", rank=64)
except ValueError as exc:
    print("rank cap enforced:", exc)
