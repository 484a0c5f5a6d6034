import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import ndimage

from fewshot_vdm import codec
from fewshot_vdm.pose import PoseAnnotation, Person, Stroke, render_pose_target, stick_figure
from fewshot_vdm.tasks import (TaskKind, generate_synthetic_tasks, load_taskset, save_taskset,
                               taskset_from_arc_json)


def test_uint8_affine_roundtrip():
    px = np.arange(256, dtype=np.uint8)
    assert np.array_equal(codec.to_uint8(codec.from_uint8(px)), px)
    # 0.0 maps to exactly 127.5, which rounds half away from zero
    assert codec.to_uint8(np.array([0.0]))[0] == 128


def test_single_cell_grid_is_centered_black_block():
    img = codec.grid_encode([[0]], (32, 32))
    black = np.all(img == codec.ARC_PALETTE[0], axis=-1)
    ys, xs = np.nonzero(black)
    assert black.sum() == 30 * 30
    assert (ys.min(), ys.max(), xs.min(), xs.max()) == (1, 30, 1, 30)
    assert np.all(img[~black] == codec.BORDER_COLOR)


def test_two_by_two_blocks_have_palette_means():
    img = codec.grid_encode([[1, 2], [3, 4]], (32, 32))
    for c in (1, 2, 3, 4):
        sel = np.all(img == codec.ARC_PALETTE[c], axis=-1)
        assert sel.sum() == 14 * 14
        assert np.allclose(img[sel].mean(0), codec.ARC_PALETTE[c], atol=0)
    areas = [np.all(img == codec.ARC_PALETTE[c], axis=-1).sum() for c in (1, 2, 3, 4)]
    assert len(set(areas)) == 1


def test_grid_too_large_reports_sizes():
    with pytest.raises(codec.GridTooLarge, match="30x30 needs at least 151x151"):
        codec.grid_encode(np.zeros((30, 30), dtype=int), (48, 48))


def test_border_color_not_in_palette():
    assert np.linalg.norm(codec.ARC_PALETTE - codec.BORDER_COLOR, axis=1).min() > 0.5


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 30), st.integers(1, 30), st.integers(0, 2**31 - 1))
def test_grid_roundtrip_property(r, c, seed):
    g = np.random.default_rng(seed).integers(0, 10, (r, c))
    img = codec.grid_encode(g, (160, 160))
    assert img.min() >= -1 and img.max() <= 1
    assert np.array_equal(codec.grid_decode(img, g.shape), g)


def test_grid_decode_noise_robust():
    # the bound only holds because the palette is well separated
    assert codec.min_palette_distance() / 2 > 0.1 * np.sqrt(3)
    rng = np.random.default_rng(0)
    for _ in range(50):
        g = rng.integers(0, 10, rng.integers(1, 10, 2))
        img = codec.grid_encode(g, (64, 64)) + rng.uniform(-0.1, 0.1, (64, 64, 3))
        assert np.array_equal(codec.grid_decode(img, g.shape), g)


def test_grid_decode_tie_goes_to_lowest_index():
    mid = (codec.ARC_PALETTE[0] + codec.ARC_PALETTE[9]) / 2
    pal = np.stack([codec.ARC_PALETTE[9], codec.ARC_PALETTE[0]])
    assert codec.nearest_palette(mid[None], pal)[0] == 0


def test_gray_remap_only_when_black_is_not_an_answer():
    black = np.zeros((2, 3), dtype=int)
    assert np.all(codec.gray_remap(black, [np.full((2, 2), 5)]) == codec.GRAY)
    assert np.all(codec.gray_remap(black, [np.array([[0, 5]])]) == 0)
    mixed = np.array([[0, 1]])
    assert np.array_equal(codec.gray_remap(mixed, [np.full((1, 2), 5)]), mixed)


def test_arc_json_roundtrip(tmp_path):
    data = {"train": [{"input": [[1, 0], [0, 2]], "output": [[2, 0], [0, 1]]}],
            "test": [{"input": [[3]], "output": [[4]]}]}
    path = tmp_path / "task.json"
    path.write_text(json.dumps(data))
    train, test = codec.load_arc_json(path)
    assert codec.dump_arc_json(train, test) == data
    ts = taskset_from_arc_json(path, canvas=(32, 32))
    assert ts.task_kind is TaskKind.ARC
    assert ts.meta["test"][0]["grid_out"] == [[4]]
    with pytest.raises(ValueError):
        codec.load_arc_json({"train": []})


def test_mask_target_roundtrip():
    assert np.all(codec.render_mask_target(np.zeros((4, 4), bool)) == -1)
    rng = np.random.default_rng(3)
    for _ in range(100):
        m = rng.random((16, 16)) < 0.4
        img = codec.render_mask_target(m)
        assert set(np.unique(img)) <= {-1.0, 1.0}
        assert np.array_equal(codec.mask_decode(img), m)


def test_pose_empty_annotation_renders_black():
    assert np.all(render_pose_target(PoseAnnotation((16, 16), [])) == -1)


def test_single_head_is_one_white_component():
    ann = PoseAnnotation((16, 16), [Person({"head": [Stroke([(8, 8)], 5)]})])
    img = render_pose_target(ann)
    white = np.all(img == 1, axis=-1)
    _, n = ndimage.label(white, structure=np.ones((3, 3)))
    assert n == 1
    assert np.all(img[~white] == -1)


def test_two_people_component_counts():
    rng = np.random.default_rng(0)
    people = [stick_figure(8, 2, 26, rng), stick_figure(24, 3, 26, rng)]
    img = render_pose_target(PoseAnnotation((32, 32), people))
    colors = {"head": (1, 1, 1), "torso": (-1, -1, 1), "arms": (1, -1, -1), "legs": (-1, 1, -1)}
    for part, col in colors.items():
        sel = np.all(img == col, axis=-1)
        _, n = ndimage.label(sel, structure=np.ones((3, 3)))
        assert n == sum(len(p.parts[part]) for p in people), part


def test_symbol_tiles_separable_under_noise():
    sym = codec.SymbolSet()
    # uniform 0.05 noise has L2 norm at most 0.05 * sqrt(8*8*3) on an 8x8 tile
    assert codec.min_symbol_distance(sym, 8) / 2 > 0.05 * np.sqrt(8 * 8 * 3)
    rng = np.random.default_rng(0)
    labels = rng.integers(0, 7, 16)
    tiles = [rng.uniform(-1, 1, (8, 8, 3)) for _ in range(16)]
    photo, target = codec.build_classification_grid(tiles, labels, sym)
    assert photo.shape == target.shape == (32, 32, 3)
    assert np.array_equal(codec.decode_classification_grid(target, sym), labels)
    noisy = target + rng.uniform(-0.05, 0.05, target.shape)
    assert np.array_equal(codec.decode_classification_grid(noisy, sym), labels)


def test_same_class_gives_identical_symbol_tiles():
    tiles = [np.zeros((8, 8, 3))] * 16
    _, target = codec.build_classification_grid(tiles, [4] * 16)
    parts = codec.split_tiles(target)
    assert all(np.array_equal(parts[0], p) for p in parts)


def test_classification_tile_mismatch_rejected():
    tiles = [np.zeros((8, 8, 3))] * 15 + [np.zeros((4, 4, 3))]
    with pytest.raises(ValueError, match="tile size mismatch"):
        codec.build_classification_grid(tiles, [0] * 16)


@pytest.mark.parametrize("kind", [k.value for k in TaskKind])
def test_generators_deterministic_and_in_range(kind):
    a = generate_synthetic_tasks(kind, 2, 1, seed=5)
    b = generate_synthetic_tasks(kind, 2, 1, seed=5)
    for (x1, y1), (x2, y2) in zip(a.train_pairs + a.test_pairs, b.train_pairs + b.test_pairs):
        assert np.array_equal(x1, x2) and np.array_equal(y1, y2)
        assert x1.min() >= -1 and x1.max() <= 1 and y1.min() >= -1 and y1.max() <= 1
    assert a.task_kind.value == kind


def test_unknown_kind_rejected():
    with pytest.raises(ValueError):
        generate_synthetic_tasks("depth", 1, 1, 0)


def test_segmentation_target_matches_mask():
    ts = generate_synthetic_tasks("segmentation", 4, 2, seed=1)
    for (x, y), m in zip(ts.train_pairs, ts.meta["train"]):
        assert np.array_equal(codec.mask_decode(y), m["mask"])


def test_classification_generator_labels_decode():
    ts = generate_synthetic_tasks("classification_grid", 3, 0, seed=2)
    for (x, y), m in zip(ts.train_pairs, ts.meta["train"]):
        assert codec.decode_classification_grid(y).tolist() == m["labels"]


def test_taskset_directory_roundtrip(tmp_path):
    for kind in ("segmentation", "pose", "arc"):
        ts = generate_synthetic_tasks(kind, 2, 1, seed=0)
        back = load_taskset(save_taskset(ts, tmp_path / kind))
        assert back.task_kind == ts.task_kind and back.name == ts.name
        for (x, y), (bx, by) in zip(ts.train_pairs, back.train_pairs):
            assert np.abs(x - bx).max() <= 1 / 127.5
        if kind == "segmentation":
            assert np.array_equal(back.meta["test"][0]["mask"], ts.meta["test"][0]["mask"])
        if kind == "pose":
            assert back.meta["train"][0]["annotation"].centroids() == ts.meta["train"][0]["annotation"].centroids()
