"""Rendering task data into ``[-1, 1]`` RGB images and decoding predictions back.

Images are float arrays ``(H, W, 3)`` with values in ``[-1, 1]``.  8-bit files
map through ``v = p / 127.5 - 1`` and back with rounding half away from zero.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

# Canonical ARC colours (8-bit sRGB): black, blue, red, green, yellow, gray,
# magenta, orange, azure, maroon.
ARC_PALETTE_8BIT = (
    (0, 0, 0),
    (0, 116, 217),
    (255, 65, 54),
    (46, 204, 64),
    (255, 220, 0),
    (170, 170, 170),
    (240, 18, 190),
    (255, 133, 27),
    (127, 219, 255),
    (135, 12, 37),
)
BORDER_8BIT = (51, 51, 51)
BLACK, GRAY = 0, 5


def from_uint8(pixels) -> np.ndarray:
    return np.asarray(pixels, dtype=np.float64) / 127.5 - 1.0


def to_uint8(img) -> np.ndarray:
    v = (np.clip(np.asarray(img, dtype=np.float64), -1.0, 1.0) + 1.0) * 127.5
    return (np.sign(v) * np.floor(np.abs(v) + 0.5)).astype(np.uint8)


ARC_PALETTE = from_uint8(ARC_PALETTE_8BIT)
BORDER_COLOR = from_uint8(BORDER_8BIT)


def save_png(img, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    PILImage.fromarray(to_uint8(img)).save(path)


def load_png(path) -> np.ndarray:
    with PILImage.open(path) as im:
        return from_uint8(np.asarray(im.convert("RGB")))


def min_palette_distance(palette=ARC_PALETTE) -> float:
    pal = np.asarray(palette, dtype=np.float64)
    d = np.linalg.norm(pal[:, None] - pal[None], axis=-1)
    return float(d[~np.eye(len(pal), dtype=bool)].min())


# ---------------------------------------------------------------------------
# ARC grids


class GridTooLarge(ValueError):
    pass


@dataclass(frozen=True)
class GridLayout:
    cell: int
    border: int
    top: int
    left: int

    def cell_slice(self, i: int, j: int, inset: int = 0):
        y = self.top + self.border + i * (self.cell + self.border) + inset
        x = self.left + self.border + j * (self.cell + self.border) + inset
        n = self.cell - 2 * inset
        return slice(y, y + n), slice(x, x + n)


def grid_layout(shape, canvas, cell_border: int = 1, min_cell: int = 4) -> GridLayout:
    R, C = shape
    H, W = canvas
    if not (1 <= R <= 30 and 1 <= C <= 30):
        raise ValueError(f"grid shape {shape} outside [1, 30] x [1, 30]")
    cell = min((H - (R + 1) * cell_border) // R, (W - (C + 1) * cell_border) // C)
    if cell < min_cell:
        need_h = R * min_cell + (R + 1) * cell_border
        need_w = C * min_cell + (C + 1) * cell_border
        raise GridTooLarge(
            f"grid {R}x{C} needs at least {need_h}x{need_w} px for {min_cell}px cells "
            f"with {cell_border}px borders; canvas is {H}x{W}"
        )
    gh = R * cell + (R + 1) * cell_border
    gw = C * cell + (C + 1) * cell_border
    return GridLayout(cell, cell_border, (H - gh) // 2, (W - gw) // 2)


def grid_encode(grid, canvas=(48, 48), palette=ARC_PALETTE, cell_border: int = 1,
                border_color=BORDER_COLOR) -> np.ndarray:
    """Paint each cell as a solid palette block, centred, on a border-coloured canvas."""
    g = np.asarray(grid)
    if g.ndim != 2 or g.min() < 0 or g.max() > 9:
        raise ValueError("grid must be a 2-D array with values in 0..9")
    lay = grid_layout(g.shape, canvas, cell_border)
    pal = np.asarray(palette, dtype=np.float64)
    img = np.empty((*canvas, 3))
    img[:] = border_color
    for i in range(g.shape[0]):
        for j in range(g.shape[1]):
            img[lay.cell_slice(i, j)] = pal[g[i, j]]
    return img


def nearest_palette(colors, palette=ARC_PALETTE) -> np.ndarray:
    pal = np.asarray(palette, dtype=np.float64)
    d = np.linalg.norm(np.asarray(colors)[..., None, :] - pal, axis=-1)
    return np.argmin(d, axis=-1)  # first minimum => lowest index on ties


def grid_decode(img, target_shape, palette=ARC_PALETTE, cell_border: int = 1) -> np.ndarray:
    """Mean colour of each cell interior snapped to the nearest palette entry."""
    img = np.asarray(img, dtype=np.float64)
    lay = grid_layout(tuple(target_shape), img.shape[:2], cell_border)
    inset = 1 if lay.cell >= 4 else 0
    R, C = target_shape
    means = np.empty((R, C, 3))
    for i in range(R):
        for j in range(C):
            means[i, j] = img[lay.cell_slice(i, j, inset)].reshape(-1, 3).mean(0)
    return nearest_palette(means, palette).astype(np.int64)


def gray_remap(pred_grid, train_outputs) -> np.ndarray:
    """Turn an all-black prediction into an all-gray grid when black is never a
    legitimate output colour for the task (absent from every training output)."""
    g = np.asarray(pred_grid)
    if g.size and np.all(g == BLACK) and not any(np.any(np.asarray(o) == BLACK) for o in train_outputs):
        return np.full_like(g, GRAY)
    return g


def load_arc_json(source):
    """Read an ARC task (path, JSON string or dict) into lists of grid pairs.

    Returns ``(train, test)`` where each entry is ``(input, output)``; test
    outputs may be ``None`` when the file omits them.
    """
    if isinstance(source, dict):
        data = source
    elif isinstance(source, (str, Path)) and Path(source).exists():
        data = json.loads(Path(source).read_text())
    else:
        data = json.loads(source)
    for key in ("train", "test"):
        if key not in data or not isinstance(data[key], list):
            raise ValueError(f"ARC task is missing a {key!r} list")

    def pairs(items, need_output):
        out = []
        for item in items:
            x = np.asarray(item["input"], dtype=np.int64)
            y = item.get("output")
            if y is None and need_output:
                raise ValueError("ARC train pair without 'output'")
            out.append((x, None if y is None else np.asarray(y, dtype=np.int64)))
        return out

    return pairs(data["train"], True), pairs(data["test"], False)


def dump_arc_json(train, test) -> dict:
    def enc(pairs):
        return [{"input": np.asarray(x).tolist(), **({} if y is None else {"output": np.asarray(y).tolist()})}
                for x, y in pairs]

    return {"train": enc(train), "test": enc(test)}


# ---------------------------------------------------------------------------
# binary masks


def render_mask_target(mask) -> np.ndarray:
    m = np.asarray(mask, dtype=bool)
    return np.repeat(np.where(m, 1.0, -1.0)[..., None], 3, axis=-1)


def mask_decode(img) -> np.ndarray:
    return np.asarray(img).mean(-1) > 0


# ---------------------------------------------------------------------------
# classification grids

SYMBOL_GLYPHS = ("circle", "cross", "triangle", "square", "star", "diamond", "bar",
                 "ring", "saltire", "dot")
SYMBOL_COLORS_8BIT = (
    (255, 60, 60),
    (60, 220, 60),
    (70, 110, 255),
    (255, 220, 40),
    (230, 60, 230),
    (40, 220, 230),
    (255, 140, 20),
    (255, 255, 255),
    (150, 90, 255),
    (150, 255, 120),
)


def _glyph_mask(name: str, size: int) -> np.ndarray:
    c = (np.arange(size) + 0.5) / size * 2.0 - 1.0
    y, x = np.meshgrid(-c, c, indexing="ij")
    r = np.hypot(x, y)
    theta = np.arctan2(y, x)
    if name == "circle":
        return r < 0.7
    if name == "cross":
        return ((np.abs(x) < 0.25) | (np.abs(y) < 0.25)) & (np.maximum(np.abs(x), np.abs(y)) < 0.85)
    if name == "triangle":
        return (y > -0.7) & (y < 0.8) & (np.abs(x) < (0.8 - y) * 0.55)
    if name == "square":
        return np.maximum(np.abs(x), np.abs(y)) < 0.65
    if name == "star":
        return r < 0.3 + 0.5 * np.abs(np.cos(2.5 * (theta - np.pi / 2)))
    if name == "diamond":
        return np.abs(x) + np.abs(y) < 0.85
    if name == "bar":
        return (np.abs(y) < 0.3) & (np.abs(x) < 0.85)
    if name == "ring":
        return (r > 0.45) & (r < 0.85)
    if name == "saltire":
        return (np.abs(np.abs(x) - np.abs(y)) < 0.3) & (r < 1.0)
    if name == "dot":
        return r < 0.35
    raise ValueError(f"unknown glyph {name!r}")


@dataclass(frozen=True)
class SymbolSet:
    """Per-class glyph and colour; class ``i`` uses ``glyphs[i]`` / ``colors[i]``."""

    glyphs: tuple = SYMBOL_GLYPHS[:7]
    colors: tuple = SYMBOL_COLORS_8BIT[:7]

    def __post_init__(self):
        if len(self.glyphs) != len(self.colors) or not 1 <= len(self.glyphs) <= 10:
            raise ValueError("a symbol set needs 1..10 classes with one colour each")

    @property
    def num_classes(self) -> int:
        return len(self.glyphs)

    def tile(self, cls: int, size: int) -> np.ndarray:
        mask = _glyph_mask(self.glyphs[cls], size)
        out = np.full((size, size, 3), -1.0)
        out[mask] = from_uint8(self.colors[cls])
        return out

    def tiles(self, size: int) -> np.ndarray:
        return np.stack([self.tile(c, size) for c in range(self.num_classes)])

    def to_json(self) -> dict:
        return {"glyphs": list(self.glyphs), "colors": [list(c) for c in self.colors]}

    @classmethod
    def from_json(cls, data: dict) -> "SymbolSet":
        return cls(tuple(data["glyphs"]), tuple(tuple(c) for c in data["colors"]))


def mosaic(tiles) -> np.ndarray:
    tiles = np.asarray(tiles)
    th, tw = tiles.shape[1:3]
    return tiles.reshape(4, 4, th, tw, 3).transpose(0, 2, 1, 3, 4).reshape(4 * th, 4 * tw, 3)


def split_tiles(img) -> np.ndarray:
    img = np.asarray(img)
    H, W = img.shape[:2]
    if H % 4 or W % 4:
        raise ValueError(f"image {H}x{W} does not split into 4x4 tiles")
    th, tw = H // 4, W // 4
    return img.reshape(4, th, 4, tw, 3).transpose(0, 2, 1, 3, 4).reshape(16, th, tw, 3)


def build_classification_grid(images, labels, symbols: SymbolSet = SymbolSet()):
    """Return ``(photo mosaic, symbol mosaic)`` for 16 equally sized tiles."""
    images = [np.asarray(im, dtype=np.float64) for im in images]
    if len(images) != 16 or len(labels) != 16:
        raise ValueError("a classification grid needs exactly 16 tiles and 16 labels")
    shapes = {im.shape for im in images}
    if len(shapes) != 1:
        raise ValueError(f"tile size mismatch: {sorted(shapes)}")
    th, tw, _ = images[0].shape
    if th != tw:
        raise ValueError(f"tiles must be square, got {th}x{tw}")
    if any(not 0 <= int(c) < symbols.num_classes for c in labels):
        raise ValueError("label outside the symbol set")
    target = mosaic([symbols.tile(int(c), th) for c in labels])
    return mosaic(images), target


def decode_classification_grid(img, symbols: SymbolSet = SymbolSet()) -> np.ndarray:
    """L2 nearest reference symbol per tile; ties go to the lowest class id."""
    tiles = split_tiles(np.asarray(img, dtype=np.float64))
    refs = symbols.tiles(tiles.shape[1])
    d = ((tiles[:, None] - refs[None]) ** 2).reshape(16, len(refs), -1).sum(-1)
    return np.argmin(d, axis=1)


def min_symbol_distance(symbols: SymbolSet, size: int) -> float:
    refs = symbols.tiles(size).reshape(symbols.num_classes, -1)
    d = np.linalg.norm(refs[:, None] - refs[None], axis=-1)
    return float(d[~np.eye(len(refs), dtype=bool)].min())
