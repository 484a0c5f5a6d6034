"""
Turning visual tasks into images
================================

Every task is an (input image, target image) pair on a square canvas with
values in [-1, 1].  This script renders one example of each encoding and
checks that the decoders invert them.
"""
import numpy as np

from _common import output_dir
from fewshot_vdm import codec
from fewshot_vdm.pose import render_pose_target
from fewshot_vdm.tasks import generate_synthetic_tasks

out = output_dir("01_task_encoding")
rng = np.random.default_rng(0)

# ARC grids: one palette colour per cell, a 1 px border between cells.
grid = rng.integers(0, 10, size=(5, 4))
img = codec.grid_encode(grid, canvas=(48, 48))
back = codec.grid_decode(img, grid.shape)
print("ARC roundtrip exact:", np.array_equal(back, grid))
codec.save_png(img, out / "arc_grid.png")

# Decoding snaps each cell to the nearest palette colour, so mild noise is harmless.
noisy = np.clip(img + rng.normal(0, 0.1, img.shape), -1, 1)
print("ARC roundtrip under noise:", np.array_equal(codec.grid_decode(noisy, grid.shape), grid))

# Segmentation targets are white-on-black masks, decoded by thresholding the pixel mean.
seg = generate_synthetic_tasks("segmentation", 1, 0, seed=1)
x, y = seg.train_pairs[0]
print("mask decode exact:", np.array_equal(codec.mask_decode(y), seg.meta["train"][0]["mask"]))
codec.save_png(np.concatenate([x, y], 1), out / "segmentation_pair.png")

# Pose targets: white head, blue torso, red arms, green legs.
pose = generate_synthetic_tasks("pose", 1, 0, seed=2)
x, y = pose.train_pairs[0]
ann = pose.meta["train"][0]["annotation"]
print("people:", len(ann.people), "annotated parts:", ann.count())
assert np.array_equal(render_pose_target(ann), y)
codec.save_png(np.concatenate([x, y], 1), out / "pose_pair.png")

# Classification grids: a 4x4 mosaic of images, answered by a 4x4 mosaic of class symbols.
cls = generate_synthetic_tasks("classification_grid", 1, 0, seed=3)
x, y = cls.train_pairs[0]
labels = cls.meta["train"][0]["labels"]
print("symbol decode exact:", codec.decode_classification_grid(y).tolist() == labels)
codec.save_png(np.concatenate([x, y], 1), out / "classification_pair.png")
print("wrote", out)
