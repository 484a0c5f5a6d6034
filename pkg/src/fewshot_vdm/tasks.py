"""Task sets, synthetic desk-scale task generators and the on-disk task directory."""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import codec
from .pose import PoseAnnotation, render_pose_target, stick_figure


class TaskKind(str, enum.Enum):
    SEGMENTATION = "segmentation"
    POSE = "pose"
    COLORIZATION = "colorization"
    JIGSAW = "jigsaw"
    INPAINTING = "inpainting"
    ARC = "arc"
    CLASSIFICATION_GRID = "classification_grid"
    GENERIC = "generic"


@dataclass
class TaskSet:
    name: str
    train_pairs: list
    test_pairs: list
    task_kind: TaskKind
    # per-split ground truth used by evaluation: meta["train"][i], meta["test"][i]
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.task_kind = TaskKind(self.task_kind)
        if not self.train_pairs:
            raise ValueError("a task set needs at least one training pair")
        shapes = {np.shape(im) for pair in self.train_pairs + self.test_pairs for im in pair}
        if len(shapes) != 1:
            raise ValueError(f"all task images must share one shape, got {sorted(shapes)}")
        self.meta.setdefault("train", [{} for _ in self.train_pairs])
        self.meta.setdefault("test", [{} for _ in self.test_pairs])

    @property
    def image_shape(self) -> tuple:
        return np.shape(self.train_pairs[0][0])

    def subset(self, n_train: int) -> "TaskSet":
        meta = dict(self.meta)
        meta["train"] = self.meta["train"][:n_train]
        return TaskSet(self.name, self.train_pairs[:n_train], self.test_pairs, self.task_kind, meta)


# ---------------------------------------------------------------------------
# drawing helpers


def _shape_mask(rng, H, W, min_size=6, max_size=14):
    yy, xx = np.mgrid[0:H, 0:W]
    # sizes are quoted for a 32 px canvas
    k = min(H, W) / 32
    size = rng.integers(max(2, round(min_size * k)), max(2, round(max_size * k)) + 1)
    cy, cx = rng.uniform(size / 2, H - size / 2), rng.uniform(size / 2, W - size / 2)
    kind = rng.integers(3)
    if kind == 0:
        return (yy - cy) ** 2 + (xx - cx) ** 2 <= (size / 2) ** 2
    if kind == 1:
        h2, w2 = size / 2, rng.uniform(0.5, 1.0) * size / 2
        return (np.abs(yy - cy) <= h2) & (np.abs(xx - cx) <= w2)
    half = size / 2
    return (yy >= cy - half) & (yy <= cy + half) & (np.abs(xx - cx) <= (yy - cy + half) / 2)


def _saturated_color(rng):
    hue = rng.uniform(0, 6)
    c = np.clip(np.abs(((hue + np.array([0.0, 4.0, 2.0])) % 6) - 3) - 1, 0, 1)
    return -0.85 + 1.7 * c


def _smooth_noise(rng, H, W, scale=4):
    coarse = rng.standard_normal((H // scale + 2, W // scale + 2))
    ys = np.linspace(0, coarse.shape[0] - 1.001, H)
    xs = np.linspace(0, coarse.shape[1] - 1.001, W)
    y0, x0 = ys.astype(int), xs.astype(int)
    fy, fx = (ys - y0)[:, None], (xs - x0)[None, :]
    c = coarse
    return ((1 - fy) * (1 - fx) * c[y0][:, x0] + fy * (1 - fx) * c[y0 + 1][:, x0]
            + (1 - fy) * fx * c[y0][:, x0 + 1] + fy * fx * c[y0 + 1][:, x0 + 1])


def random_scene(rng, H, W):
    """Coloured gradient background with one to three solid shapes."""
    yy, xx = np.mgrid[0:H, 0:W] / max(H, W)
    c0, c1 = rng.uniform(-0.8, 0.8, 3), rng.uniform(-0.8, 0.8, 3)
    w = (yy * np.cos(rng.uniform(0, np.pi)) + xx)[..., None] / 2
    img = c0 * (1 - w) + c1 * w
    for _ in range(rng.integers(1, 4)):
        img[_shape_mask(rng, H, W)] = rng.uniform(-1, 1, 3)
    return np.clip(img, -1, 1)


def segmentation_pair(rng, H, W):
    """Saturated shapes over a bright, low-saturation textured background."""
    base = rng.uniform(0.15, 0.6)
    tex = base + 0.15 * _smooth_noise(rng, H, W) + 0.05 * rng.standard_normal((H, W))
    tint = rng.uniform(-0.08, 0.08, 3)
    img = tex[..., None] + tint
    mask = np.zeros((H, W), dtype=bool)
    for _ in range(rng.integers(1, 4)):
        m = _shape_mask(rng, H, W)
        img[m] = _saturated_color(rng) + 0.05 * rng.standard_normal((m.sum(), 3))
        mask |= m
    return np.clip(img, -1, 1), codec.render_mask_target(mask), mask


def pose_pair(rng, H, W):
    if min(H, W) < 16:
        raise ValueError(f"pose scenes need at least a 16 px canvas, got {H}x{W}")
    n_people = int(rng.integers(1, 3))
    people = []
    slot = W / n_people
    for k in range(n_people):
        height = rng.uniform(0.7, 0.9) * H
        cx = slot * k + slot / 2 + rng.uniform(-slot * 0.1, slot * 0.1)
        people.append(stick_figure(cx, rng.uniform(0, H - height - 1), height, rng))
    ann = PoseAnnotation((H, W), people)
    img = 0.25 * _smooth_noise(rng, H, W)[..., None] + rng.uniform(-0.6, 0.0, 3)
    skin = np.array([0.8, 0.4, 0.1]) + rng.uniform(-0.1, 0.1, 3)
    shirt, pants = rng.uniform(-0.2, 1.0, 3), rng.uniform(-1.0, 0.2, 3)
    colors = {"legs": pants, "arms": skin, "torso": shirt, "head": skin}
    for part in ("legs", "arms", "torso", "head"):
        for person in people:
            for s in person.parts.get(part, []):
                img[s.raster((H, W))] = colors[part]
    return np.clip(img, -1, 1), render_pose_target(ann), ann


def class_tile(rng, cls: int, size: int, num_classes: int = 7):
    """Procedural "photo" of a class: oriented stripes with a class tint."""
    yy, xx = np.mgrid[0:size, 0:size] / size
    theta = np.pi * cls / num_classes
    freq = 1.5 + cls % 3
    phase = rng.uniform(0, 2 * np.pi)
    stripes = np.sin(2 * np.pi * freq * (xx * np.cos(theta) + yy * np.sin(theta)) + phase)
    tint = _saturated_color(np.random.default_rng(1000 + cls)) * 0.6
    img = 0.4 * stripes[..., None] + tint + 0.1 * rng.standard_normal((size, size, 3))
    return np.clip(img, -1, 1)


ARC_TRANSFORMS = ("identity", "recolor", "hflip", "vflip")


def arc_transform(grid, transform: str, color: int = 2):
    g = np.asarray(grid)
    if transform == "identity":
        return g.copy()
    if transform == "recolor":
        return np.where(g != codec.BLACK, color, codec.BLACK)
    if transform == "hflip":
        return g[:, ::-1].copy()
    if transform == "vflip":
        return g[::-1, :].copy()
    raise ValueError(f"unknown ARC transform {transform!r}")


def random_arc_grid(rng, min_side=3, max_side=5, density=0.45):
    R, C = rng.integers(min(min_side, max_side), max_side + 1, size=2)
    colors = rng.integers(1, 10, size=(R, C))
    return np.where(rng.random((R, C)) < density, colors, codec.BLACK)


def arc_taskset(name, train, test, canvas=(48, 48), transform=None) -> TaskSet:
    """Render ARC grid pairs; the known output shape travels in ``meta``."""
    def render(pairs):
        imgs, meta = [], []
        for x, y in pairs:
            imgs.append((codec.grid_encode(x, canvas), codec.grid_encode(y, canvas)))
            meta.append({"grid_in": np.asarray(x).tolist(), "grid_out": np.asarray(y).tolist()})
        return imgs, meta

    tr, trm = render(train)
    te, tem = render(test)
    meta = {"train": trm, "test": tem, "canvas": list(canvas)}
    if transform:
        meta["transform"] = transform
    return TaskSet(name, tr, te, TaskKind.ARC, meta)


def make_arc_task(transform: str, n_train: int, n_test: int, seed: int, canvas=(48, 48),
                  max_side: int = 5) -> TaskSet:
    rng = np.random.default_rng([seed, 7])
    color = int(rng.integers(1, 10))
    grids = [random_arc_grid(rng, max_side=max_side) for _ in range(n_train + n_test)]
    pairs = [(g, arc_transform(g, transform, color)) for g in grids]
    return arc_taskset(f"arc-{transform}-{seed}", pairs[:n_train], pairs[n_train:], canvas, transform)


def generate_synthetic_tasks(kind, n_train: int, n_test: int, seed: int, size=(32, 32)) -> TaskSet:
    """Deterministic synthetic task family; ``size`` is the canvas ``(H, W)``."""
    kind = TaskKind(kind)
    if n_train < 1 or n_test < 0:
        raise ValueError("need n_train >= 1 and n_test >= 0")
    H, W = size
    rng = np.random.default_rng([seed, list(TaskKind).index(kind)])
    name = f"{kind.value}-{seed}"
    total = n_train + n_test
    pairs, meta = [], []

    if kind is TaskKind.ARC:
        transform = ARC_TRANSFORMS[int(rng.integers(len(ARC_TRANSFORMS)))]
        return make_arc_task(transform, n_train, n_test, seed, size)

    task_meta = {}
    if kind is TaskKind.JIGSAW:
        perm = np.arange(4)
        while np.all(perm == np.arange(4)):
            perm = rng.permutation(4)
        task_meta["permutation"] = perm.tolist()
    if kind is TaskKind.CLASSIFICATION_GRID:
        task_meta["symbols"] = codec.SymbolSet().to_json()

    for _ in range(total):
        if kind is TaskKind.SEGMENTATION:
            x, y, mask = segmentation_pair(rng, H, W)
            meta.append({"mask": mask})
        elif kind is TaskKind.POSE:
            x, y, ann = pose_pair(rng, H, W)
            meta.append({"annotation": ann})
        elif kind is TaskKind.COLORIZATION:
            y = random_scene(rng, H, W)
            gray = y @ np.array([0.299, 0.587, 0.114])
            x = np.repeat(gray[..., None], 3, axis=-1)
            meta.append({})
        elif kind is TaskKind.JIGSAW:
            y = random_scene(rng, H, W)
            tiles = [y[:H // 2, :W // 2], y[:H // 2, W // 2:], y[H // 2:, :W // 2], y[H // 2:, W // 2:]]
            t = [tiles[i] for i in task_meta["permutation"]]
            x = np.concatenate([np.concatenate(t[:2], 1), np.concatenate(t[2:], 1)], 0)
            meta.append({})
        elif kind is TaskKind.INPAINTING:
            y = random_scene(rng, H, W)
            x = y.copy()
            s = H // 4
            r0, c0 = rng.integers(0, H - s), rng.integers(0, W - s)
            x[r0:r0 + s, c0:c0 + s] = -1.0
            meta.append({"hole": [int(r0), int(c0), int(s)]})
        elif kind is TaskKind.CLASSIFICATION_GRID:
            labels = rng.integers(0, 7, size=16)
            tiles = [class_tile(rng, int(c), H // 4) for c in labels]
            x, y = codec.build_classification_grid(tiles, labels)
            meta.append({"labels": labels.tolist()})
        else:  # generic: horizontal mirror
            x = random_scene(rng, H, W)
            y = x[:, ::-1].copy()
            meta.append({})
        pairs.append((x, y))

    return TaskSet(name, pairs[:n_train], pairs[n_train:], kind,
                   {"train": meta[:n_train], "test": meta[n_train:], **task_meta})


# ---------------------------------------------------------------------------
# task directories: train/NNN_input.png, train/NNN_target.png, test/..., task.json


def _meta_to_json(entry: dict, split_dir: Path, idx: int) -> dict:
    out = {}
    for k, v in entry.items():
        if k == "mask":
            codec.save_png(codec.render_mask_target(v), split_dir / f"{idx:03d}_mask.png")
            out[k] = f"{idx:03d}_mask.png"
        elif k == "annotation":
            out[k] = v.to_json()
        else:
            out[k] = v
    return out


def _meta_from_json(entry: dict, split_dir: Path) -> dict:
    out = {}
    for k, v in entry.items():
        if k == "mask":
            out[k] = codec.mask_decode(codec.load_png(split_dir / v))
        elif k == "annotation":
            out[k] = PoseAnnotation.from_json(v)
        else:
            out[k] = v
    return out


def save_taskset(ts: TaskSet, out_dir) -> Path:
    out = Path(out_dir)
    record = {"name": ts.name, "task_kind": ts.task_kind.value,
              "image_shape": list(ts.image_shape), "splits": {}}
    record.update({k: v for k, v in ts.meta.items() if k not in ("train", "test")})
    for split, pairs in (("train", ts.train_pairs), ("test", ts.test_pairs)):
        d = out / split
        d.mkdir(parents=True, exist_ok=True)
        entries = []
        for i, (x, y) in enumerate(pairs):
            codec.save_png(x, d / f"{i:03d}_input.png")
            codec.save_png(y, d / f"{i:03d}_target.png")
            entries.append(_meta_to_json(ts.meta[split][i], d, i))
        record["splits"][split] = entries
    (out / "task.json").write_text(json.dumps(record, indent=1))
    return out


def load_taskset(task_dir) -> TaskSet:
    d = Path(task_dir)
    record = json.loads((d / "task.json").read_text())
    pairs, meta = {}, {}
    for split in ("train", "test"):
        sd = d / split
        entries = record["splits"][split]
        pairs[split] = [(codec.load_png(sd / f"{i:03d}_input.png"), codec.load_png(sd / f"{i:03d}_target.png"))
                        for i in range(len(entries))]
        meta[split] = [_meta_from_json(e, sd) for e in entries]
    extra = {k: v for k, v in record.items() if k not in ("name", "task_kind", "image_shape", "splits")}
    return TaskSet(record["name"], pairs["train"], pairs["test"], record["task_kind"], {**meta, **extra})


def taskset_from_arc_json(source, canvas=(48, 48), name="arc-task") -> TaskSet:
    train, test = codec.load_arc_json(source)
    test = [(x, y if y is not None else np.zeros_like(x)) for x, y in test]
    return arc_taskset(name, train, test, canvas)
