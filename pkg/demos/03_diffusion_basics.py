"""
The noise schedule and the sampler
==================================

A linear beta ramp defines how quickly a clip is drowned in noise.  The
sampler walks the chain backwards, pinning frame 0 to the conditioning image.
With a denoiser that knows the true clip, sampling recovers it.
"""
import numpy as np

from _common import output_dir
from fewshot_vdm import codec, diffusion
from fewshot_vdm.denoiser import Conditioning
from fewshot_vdm.interp import interpolate
from fewshot_vdm.tasks import generate_synthetic_tasks

out = output_dir("03_diffusion_basics")
sched = diffusion.make_schedule()
print("T =", sched.T, " alpha_bar_T = %.4f" % sched.alpha_bar[-1])
for t in (1, 50, 100, 150, 200):
    print(f"t={t:3d}  signal {np.sqrt(sched.alpha_bar[t - 1]):.3f}  noise {np.sqrt(1 - sched.alpha_bar[t - 1]):.3f}")

x, y = generate_synthetic_tasks("segmentation", 1, 0, seed=0).train_pairs[0]
clip = interpolate(x, y, 9)

# Forward process snapshots of the last frame.
rng = np.random.default_rng(0)
eps = rng.standard_normal(clip.shape)
strip = [np.clip(diffusion.add_noise(clip, t, eps, sched)[-1], -1, 1) for t in (1, 25, 50, 100, 200)]
codec.save_png(np.concatenate(strip, 1), out / "forward_process.png")


# An oracle denoiser: it knows the clean clip, so its noise estimate is exact.
def oracle(v_t, t, cond):
    ab = sched.alpha_bar[t - 1]
    return (v_t - np.sqrt(ab) * clip) / np.sqrt(1 - ab)


video = diffusion.sample(oracle, Conditioning(x), sched, rng_seed=1, shape=clip.shape, dtype=np.float64)
print("oracle sampling max error:", float(np.abs(video - np.clip(clip, -1, 1)).max()))
strided = diffusion.sample(oracle, Conditioning(x), sched, rng_seed=1, shape=clip.shape, steps=20,
                           dtype=np.float64)
print("20-step strided sampling max error:", float(np.abs(strided - np.clip(clip, -1, 1)).max()))
codec.save_png(np.concatenate(list(video), 1), out / "oracle_sample.png")
print("wrote", out)
