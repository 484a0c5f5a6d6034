"""Input-to-target transition videos."""
from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import codec


class Variant(str, enum.Enum):
    LINEAR = "linear"
    QUADRATIC = "quadratic"
    DISCRETE = "discrete"
    TILES = "tiles"


@dataclass(frozen=True)
class InterpMethod:
    variant: Variant = Variant.LINEAR
    tiles_grid: tuple = (4, 4)

    @classmethod
    def parse(cls, value) -> "InterpMethod":
        if isinstance(value, cls):
            return value
        return cls(Variant(str(value).lower()))

    def to_json(self) -> dict:
        return {"variant": self.variant.value, "tiles_grid": list(self.tiles_grid)}


def frame_weight(f: int, F: int, variant: Variant) -> float:
    """Target coefficient of frame ``f`` (1-based) for the blending variants."""
    w = (f - 1) / (F - 1)
    return w * w if variant is Variant.QUADRATIC else w


def interpolate(x, y, F: int = 9, method=InterpMethod()) -> np.ndarray:
    """Transition video ``(F, H, W, 3)`` whose first frame is ``x`` and last is ``y``.

    * linear: ``(1 - w) x + w y`` with ``w = (f-1)/(F-1)``
    * quadratic: the same with ``w`` squared (ease-in)
    * discrete: ``x`` for ``f <= ceil(F/2)``, ``y`` afterwards
    * tiles: raster-ordered tiles flip from ``x`` to ``y``; frame ``f`` shows
      ``round(n_tiles * (f-1)/(F-1))`` flipped tiles
    """
    method = InterpMethod.parse(method)
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"input {x.shape} and target {y.shape} differ in shape")
    if F < 2:
        raise ValueError(f"need at least 2 frames, got {F}")
    v = np.empty((F,) + x.shape)
    variant = method.variant
    if variant in (Variant.LINEAR, Variant.QUADRATIC):
        for f in range(1, F + 1):
            w = frame_weight(f, F, variant)
            v[f - 1] = (1.0 - w) * x + w * y
    elif variant is Variant.DISCRETE:
        half = math.ceil(F / 2)
        v[:half] = x
        v[half:] = y
    else:
        rows, cols = method.tiles_grid
        H, W = x.shape[:2]
        if H % rows or W % cols:
            raise ValueError(f"tiles grid {rows}x{cols} does not divide {H}x{W}")
        th, tw = H // rows, W // cols
        n = rows * cols
        for f in range(1, F + 1):
            k = int(np.floor(n * (f - 1) / (F - 1) + 0.5))
            frame = x.copy()
            for idx in range(k):
                r, c = divmod(idx, cols)
                frame[r * th:(r + 1) * th, c * tw:(c + 1) * tw] = y[r * th:(r + 1) * th, c * tw:(c + 1) * tw]
            v[f - 1] = frame
    # exact endpoints regardless of floating point blending
    v[0] = x
    v[-1] = y
    return v


def build_video_dataset(tasks, F: int = 9, method=InterpMethod()) -> list[np.ndarray]:
    """One transition video per training pair, in order."""
    if not tasks.train_pairs:
        raise ValueError("task set has no training pairs")
    return [interpolate(x, y, F, method) for x, y in tasks.train_pairs]


def save_video(video, out_dir, method=None) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    video = np.asarray(video)
    for i, frame in enumerate(video):
        codec.save_png(frame, out / f"frame_{i + 1:03d}.png")
    F, H, W, _ = video.shape
    manifest = {"F": F, "H": H, "W": W,
                "method": InterpMethod.parse(method).to_json() if method is not None else None}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1))
    return out


def load_video(video_dir) -> np.ndarray:
    d = Path(video_dir)
    manifest = json.loads((d / "manifest.json").read_text())
    frames = [codec.load_png(d / f"frame_{i + 1:03d}.png") for i in range(manifest["F"])]
    return np.stack(frames)
