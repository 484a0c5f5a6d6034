"""Stick-figure pose annotations and their colour-coded target rendering.

Target colours: head white, torso blue, arms red, legs green, on black.
Coordinates are ``(x, y)`` = ``(column, row)`` in pixels.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

PARTS = ("head", "torso", "arms", "legs")
PART_COLORS = {
    "head": (1.0, 1.0, 1.0),
    "torso": (-1.0, -1.0, 1.0),
    "arms": (1.0, -1.0, -1.0),
    "legs": (-1.0, 1.0, -1.0),
}
DRAW_ORDER = ("legs", "arms", "torso", "head")


@dataclass
class Stroke:
    """Polyline with a round pen of diameter ``width``; a single point is a disc."""

    points: list
    width: float

    def raster(self, shape) -> np.ndarray:
        H, W = shape
        yy, xx = np.mgrid[0:H, 0:W].astype(np.float64)
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)
        r = self.width / 2.0
        out = np.zeros(shape, dtype=bool)
        if len(pts) == 1:
            return (xx - pts[0, 0]) ** 2 + (yy - pts[0, 1]) ** 2 <= r * r
        for (x0, y0), (x1, y1) in zip(pts[:-1], pts[1:]):
            dx, dy = x1 - x0, y1 - y0
            L2 = dx * dx + dy * dy
            s = np.clip(((xx - x0) * dx + (yy - y0) * dy) / L2, 0.0, 1.0) if L2 > 0 else 0.0
            out |= (xx - x0 - s * dx) ** 2 + (yy - y0 - s * dy) ** 2 <= r * r
        return out


@dataclass
class Person:
    parts: dict = field(default_factory=dict)  # part name -> list[Stroke]
    head_size: float | None = None  # distance between the two head keypoints


@dataclass
class PoseAnnotation:
    """People on a canvas plus the annotated part centroids derived from them."""

    shape: tuple
    people: list = field(default_factory=list)

    def centroids(self) -> dict[str, list[tuple[float, float]]]:
        """Centroid of every annotated stroke, grouped by part class."""
        out = {p: [] for p in PARTS}
        for person in self.people:
            for part, strokes in person.parts.items():
                if part not in PART_COLORS:
                    raise ValueError(f"unknown body part {part!r}")
                for s in strokes:
                    m = s.raster(self.shape)
                    if m.any():
                        ys, xs = np.nonzero(m)
                        out[part].append((float(xs.mean()), float(ys.mean())))
        return out

    def head_sizes(self) -> list[float]:
        return [p.head_size for p in self.people if p.head_size is not None and "head" in p.parts]

    def count(self) -> int:
        return sum(len(v) for v in self.centroids().values())

    def to_json(self) -> dict:
        return {
            "shape": list(self.shape),
            "people": [
                {
                    "head_size": p.head_size,
                    "parts": {k: [{"points": [list(map(float, q)) for q in s.points], "width": s.width}
                                  for s in v] for k, v in p.parts.items()},
                }
                for p in self.people
            ],
        }

    @classmethod
    def from_json(cls, data: dict) -> "PoseAnnotation":
        people = [
            Person({k: [Stroke([tuple(q) for q in s["points"]], s["width"]) for s in v]
                    for k, v in p["parts"].items()}, p.get("head_size"))
            for p in data["people"]
        ]
        return cls(tuple(data["shape"]), people)


def render_pose_target(annotation: PoseAnnotation) -> np.ndarray:
    """Black canvas with parts painted legs, arms, torso, head (later wins)."""
    img = np.full((*annotation.shape, 3), -1.0)
    for part in DRAW_ORDER:
        for person in annotation.people:
            for stroke in person.parts.get(part, []):
                img[stroke.raster(annotation.shape)] = PART_COLORS[part]
    return img


def stick_figure(cx: float, top: float, height: float, rng: np.random.Generator) -> Person:
    """A random stick figure whose head centre sits ``height * 0.12`` below ``top``.

    Left and right limbs start 3 px either side of the torso so that the two
    arms (and the two legs) never touch each other.
    """
    head_r = max(1.5, 0.12 * height)
    hy = top + head_r
    neck = hy + head_r + 1.0
    hip = neck + 0.38 * height
    limb = 0.3 * height
    w = 2.0
    parts = {
        "head": [Stroke([(cx, hy)], 2 * head_r)],
        "torso": [Stroke([(cx, neck), (cx, hip)], w)],
        "arms": [],
        "legs": [],
    }
    for side in (-1, 1):
        ang = rng.uniform(-0.6, 0.9)  # radians below horizontal
        sx, sy = cx + side * 3.0, neck + 1.0
        parts["arms"].append(Stroke([(sx, sy), (sx + side * limb * np.cos(ang), sy + limb * np.sin(ang))], w))
        ang = rng.uniform(0.15, 0.5)  # spread from vertical
        lx, ly = cx + side * 3.0, hip + 1.0
        parts["legs"].append(Stroke([(lx, ly), (lx + side * limb * np.sin(ang), ly + limb * np.cos(ang))], w))
    return Person(parts, head_size=2 * head_r)
