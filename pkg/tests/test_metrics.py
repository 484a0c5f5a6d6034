import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fewshot_vdm.metrics import (EvalReport, aggregate, arc_score, classification_report, component_centroids,
                                 conceptarc_score, lenient_curves, match_rate, miou, optimal_assignment,
                                 part_masks)
from fewshot_vdm.pose import Person, PoseAnnotation, Stroke, render_pose_target, stick_figure
from scenarios import SCENARIOS


def test_miou_basic():
    t = np.zeros((32, 32), bool)
    t[:, :16] = True
    assert miou(t, t) == 1.0
    assert miou(~t, t) == 0.0
    p = np.zeros((32, 32), bool)
    p[:, :24] = True
    assert miou(p, t) == pytest.approx(7 / 12, abs=1e-15)
    # image prediction binarised at mean > 0
    img = np.where(p[..., None], 0.8, -0.8) * np.ones(3)
    assert miou(img, t) == pytest.approx(7 / 12)


def test_miou_empty_classes():
    empty = np.zeros((4, 4), bool)
    assert miou(empty, empty) == 1.0
    with pytest.raises(ValueError):
        miou(empty, np.zeros((4, 5), bool))


def test_miou_matches_pixel_recount():
    rng = np.random.default_rng(0)
    for _ in range(500):
        shape = tuple(rng.integers(1, 20, 2))
        p, t = rng.random(shape) < rng.random(), rng.random(shape) < rng.random()
        ious = []
        for a, b in ((p, t), (~p, ~t)):
            inter = sum(1 for i in range(a.size) if a.flat[i] and b.flat[i])
            union = sum(1 for i in range(a.size) if a.flat[i] or b.flat[i])
            ious.append(1.0 if union == 0 else inter / union)
        assert miou(p, t) == pytest.approx(sum(ious) / 2, abs=1e-12)
        assert miou(~p, ~t) == pytest.approx(miou(p, t), abs=1e-12)


def _brute_force(cost):
    n = cost.shape[0]
    return min(sum(cost[i, perm[i]] for i in range(n)) for perm in itertools.permutations(range(n)))


def test_assignment_equals_brute_force():
    rng = np.random.default_rng(1)
    for _ in range(500):
        a, b = rng.uniform(0, 32, (3, 2)), rng.uniform(0, 32, (3, 2))
        cost = np.linalg.norm(a[:, None] - b[None], axis=-1)
        pairs = optimal_assignment(cost)
        assert len(pairs) == 3
        assert sum(cost[i, j] for i, j in pairs) == pytest.approx(_brute_force(cost), abs=1e-9)


def _dot_person(x, y, size=3.0):
    return Person({"head": [Stroke([(x, y)], size)]}, head_size=size)


def test_match_rate_on_head_discs_vs_brute_force():
    rng = np.random.default_rng(2)
    for _ in range(100):
        truth = rng.uniform(4, 28, (3, 2))
        pred_pts = truth + rng.normal(0, 4, (3, 2))
        ann = PoseAnnotation((32, 32), [_dot_person(x, y) for x, y in truth])
        pred_ann = PoseAnnotation((32, 32), [_dot_person(x, y) for x, y in pred_pts])
        img = render_pose_target(pred_ann)
        ref = np.asarray(ann.centroids()["head"])
        comps = np.asarray(component_centroids(part_masks(img)["head"])).reshape(-1, 2)
        if len(comps) != 3:  # discs merged; skip ambiguous draw
            continue
        cost = np.linalg.norm(comps[:, None] - ref[None], axis=-1)
        best = min(itertools.permutations(range(3)), key=lambda p: sum(cost[i, p[i]] for i in range(3)))
        expected = sum(cost[i, best[i]] < 4.5 for i in range(3)) / 3
        assert match_rate(img, ann) == pytest.approx(expected)


def test_match_rate_self_and_displaced():
    rng = np.random.default_rng(3)
    ann = PoseAnnotation((48, 48), [stick_figure(14, 4, 36, rng), stick_figure(34, 6, 34, rng)])
    assert match_rate(render_pose_target(ann), ann) == 1.0
    far = np.full((48, 48, 3), -1.0)
    assert match_rate(far, ann) == 0.0
    assert match_rate(far, PoseAnnotation((48, 48), [])) is None
    rate, info = match_rate(render_pose_target(ann), ann, details=True)
    assert info["parts"]["arms"]["annotated"] == 4


@pytest.mark.parametrize("name", list(SCENARIOS))
def test_protocol_scenarios(name):
    actual, expected = SCENARIOS[name]()
    assert actual == expected


@settings(max_examples=60, deadline=None)
@given(st.lists(st.lists(st.lists(st.one_of(st.none(), st.integers(0, 8)), min_size=1, max_size=3),
                         min_size=1, max_size=3), min_size=1, max_size=6))
def test_lenient_curves_monotone(results):
    c = lenient_curves(results)
    assert all(b >= a for a, b in zip(c["accuracy_vs_k"], c["accuracy_vs_k"][1:]))
    assert all(b >= a for a, b in zip(c["accuracy_vs_attempts"], c["accuracy_vs_attempts"][1:]))
    strict = np.mean([all(any(e == 0 for e in errs[:2] if e is not None) for errs in task) for task in results])
    assert c["accuracy_vs_k"][0] == pytest.approx(strict)
    # k = inf accepts every decodable, correctly shaped attempt
    shaped = np.mean([all(any(e is not None for e in errs[:2]) for errs in task) for task in results])
    assert c["accuracy_vs_k"][-1] == pytest.approx(shaped)


def test_conceptarc_matches_attempt_subset_brute_force():
    rng = np.random.default_rng(4)
    truth = np.array([[1, 2], [3, 4]])
    for _ in range(200):
        preds = [truth if rng.random() < 0.3 else truth + 1 for _ in range(rng.integers(1, 5))]
        got = conceptarc_score([preds], [truth])[0]
        want = any(np.array_equal(p, truth) for p in preds[:3])
        assert got == want
        assert arc_score([preds], [truth], attempts=3) == want


def test_classification_report():
    r = classification_report([0, 1, 2], [0, 1, 2])
    assert np.array_equal(r["confusion"], np.eye(3)) and r["accuracy"] == 1.0
    r = classification_report([0, 0, 0, 0], [0, 1, 2, 1], num_classes=3)
    assert np.array_equal(r["confusion"][:, 0], np.ones(3)) and r["confusion"][:, 1:].sum() == 0
    rng = np.random.default_rng(5)
    p, t = rng.integers(0, 7, 300), rng.integers(0, 7, 300)
    r = classification_report(p, t, 7)
    assert r["accuracy"] == sum(int(a == b) for a, b in zip(p, t)) / 300
    assert r["counts"].sum() == 300
    assert np.allclose(r["confusion"].sum(1), 1.0)


def test_report_writes_json_csv_png(tmp_path):
    rep = classification_report([0, 1, 1], [0, 1, 0], 2)
    scores = [1.0, None, 0.5]
    er = EvalReport("classification", scores, aggregate(scores), {"attempts": 1}, rep["confusion"],
                    lenient_curves([[[0]], [[1]]]))
    files = er.write(tmp_path)
    assert er.aggregate == 0.75
    assert {f.suffix for f in files} == {".json", ".csv", ".png"}
    data = json.loads(files[0].read_text())
    assert data["aggregate"] == 0.75 and data["per_sample"][1] is None
    assert math.isclose(aggregate([0.2, 0.4]), 0.3)
