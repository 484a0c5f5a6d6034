import hashlib

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fewshot_vdm.interp import (InterpMethod, Variant, build_video_dataset, interpolate, load_video,
                                save_video)
from fewshot_vdm.tasks import generate_synthetic_tasks

METHODS = [InterpMethod(v) for v in Variant]


@pytest.fixture
def pair():
    rng = np.random.default_rng(0)
    return rng.uniform(-1, 1, (8, 8, 3)), rng.uniform(-1, 1, (8, 8, 3))


@pytest.mark.parametrize("method", METHODS, ids=lambda m: m.variant.value)
@pytest.mark.parametrize("F", [2, 3, 9, 16])
def test_endpoints_exact(pair, method, F):
    x, y = pair
    v = interpolate(x, y, F, method)
    assert v.shape == (F, 8, 8, 3)
    assert np.max(np.abs(v[0] - x)) == 0
    assert np.max(np.abs(v[-1] - y)) == 0


def test_linear_midpoint(pair):
    x, y = pair
    v = interpolate(x, y, 9, "linear")
    assert np.allclose(v[4], 0.5 * x + 0.5 * y, atol=1e-15)


def test_quadratic_three_frames(pair):
    x, y = pair
    v = interpolate(x, y, 3, "quadratic")
    assert np.allclose(v[1], 0.75 * x + 0.25 * y, atol=1e-15)


def test_discrete_switches_after_ceil_half(pair):
    x, y = pair
    v = interpolate(x, y, 9, "discrete")
    for f in range(5):
        assert np.array_equal(v[f], x)
    for f in range(5, 9):
        assert np.array_equal(v[f], y)


def test_tiles_switch_once_in_raster_order(pair):
    x, y = np.full((8, 8, 3), -1.0), np.full((8, 8, 3), 1.0)
    v = interpolate(x, y, 5, InterpMethod(Variant.TILES, (2, 2)))
    switched = [(v[f].reshape(2, 4, 2, 4, 3)[:, 0, :, 0, 0] > 0).ravel() for f in range(5)]
    assert [int(s.sum()) for s in switched] == [0, 1, 2, 3, 4]
    for f in range(1, 5):
        assert np.all(switched[f] >= switched[f - 1])
    assert switched[1].tolist() == [True, False, False, False]


def test_tiles_must_divide():
    with pytest.raises(ValueError):
        interpolate(np.zeros((6, 6, 3)), np.zeros((6, 6, 3)), 3, InterpMethod(Variant.TILES, (4, 4)))


def test_errors():
    with pytest.raises(ValueError):
        interpolate(np.zeros((4, 4, 3)), np.zeros((4, 8, 3)), 9)
    with pytest.raises(ValueError):
        interpolate(np.zeros((4, 4, 3)), np.zeros((4, 4, 3)), 1)


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 12), st.sampled_from(["linear", "quadratic"]), st.integers(0, 1000))
def test_blend_monotone_where_target_larger(F, variant, seed):
    rng = np.random.default_rng(seed)
    x, y = rng.uniform(-1, 1, (4, 4, 3)), rng.uniform(-1, 1, (4, 4, 3))
    v = interpolate(x, y, F, variant)
    up = y > x
    assert np.all(np.diff(v[:, up], axis=0) >= -1e-12)


@pytest.mark.parametrize("variant", ["discrete", "tiles"])
def test_single_change_point_per_pixel(pair, variant):
    x, y = pair
    v = interpolate(x, y, 9, variant)
    changes = (np.diff(v, axis=0) != 0).any(-1).sum(0)
    assert changes.max() == 1


def test_build_dataset_order_and_determinism():
    ts = generate_synthetic_tasks("colorization", 3, 0, seed=1)
    vids = build_video_dataset(ts, 9, "linear")
    assert len(vids) == 3
    for v, (x, y) in zip(vids, ts.train_pairs):
        assert np.array_equal(v[0], x) and np.array_equal(v[-1], y)

    def digest(videos):
        return hashlib.sha256(b"".join(v.tobytes() for v in videos)).hexdigest()

    again = build_video_dataset(generate_synthetic_tasks("colorization", 3, 0, seed=1), 9, "linear")
    assert digest(vids) == digest(again)


def test_video_directory_roundtrip(tmp_path, pair):
    x, y = pair
    v = interpolate(x, y, 4, "quadratic")
    save_video(v, tmp_path / "vid", "quadratic")
    back = load_video(tmp_path / "vid")
    assert back.shape == v.shape
    assert np.abs(back - v).max() <= 1 / 127.5 + 1e-12
