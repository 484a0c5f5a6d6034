"""
Transition videos
=================

Fine-tuning never sees (input, target) pairs directly.  Each pair becomes a
short clip that starts at the input and ends at the target; the way the
frames in between are filled is an ablation axis.
"""
import numpy as np

from _common import output_dir
from fewshot_vdm import codec
from fewshot_vdm.interp import InterpMethod, Variant, interpolate, save_video
from fewshot_vdm.tasks import generate_synthetic_tasks

out = output_dir("02_transition_videos")
x, y = generate_synthetic_tasks("colorization", 1, 0, seed=0).train_pairs[0]

rows = []
for variant in Variant:
    video = interpolate(x, y, 9, InterpMethod(variant))
    # endpoints are the task images, bit for bit
    assert np.array_equal(video[0], x) and np.array_equal(video[-1], y)
    # mean distance to the target shrinks frame by frame
    dist = [float(np.abs(f - y).mean()) for f in video]
    print(f"{variant.value:10s}", " ".join(f"{d:.3f}" for d in dist))
    save_video(video, out / variant.value, InterpMethod(variant))
    rows.append(np.concatenate(list(video), axis=1))

codec.save_png(np.concatenate(rows, axis=0), out / "all_variants.png")
print("wrote", out)
