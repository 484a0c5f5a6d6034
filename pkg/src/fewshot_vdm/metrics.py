"""Evaluation metrics and scoring protocols."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage
from scipy.optimize import linear_sum_assignment

from .codec import gray_remap, mask_decode
from .pose import PARTS, PoseAnnotation

# ---------------------------------------------------------------------------
# segmentation


def miou(pred, truth) -> float:
    """Mean of foreground and background IoU; ``pred`` is binarised at mean > 0.

    A class absent from both prediction and truth scores IoU 1.
    """
    p = mask_decode(pred) if np.ndim(pred) == 3 else np.asarray(pred, dtype=bool)
    t = np.asarray(truth, dtype=bool)
    if p.shape != t.shape:
        raise ValueError(f"prediction {p.shape} and mask {t.shape} differ")
    ious = []
    for a, b in ((p, t), (~p, ~t)):
        union = np.count_nonzero(a | b)
        ious.append(1.0 if union == 0 else np.count_nonzero(a & b) / union)
    return float(np.mean(ious))


# ---------------------------------------------------------------------------
# pose: match rate


@dataclass(frozen=True)
class MatchRateConfig:
    distance_multiple: float = 1.5
    default_head_distance: float = 20.0
    connectivity: int = 8
    head_min: float = 0.5  # head: every channel above this
    dominance: float = 0.3  # part colour channel must beat both others by this

    def __post_init__(self):
        if self.distance_multiple <= 0:
            raise ValueError("distance_multiple must be positive")
        if self.connectivity not in (4, 8):
            raise ValueError("connectivity must be 4 or 8")


def part_masks(pred, cfg: MatchRateConfig = MatchRateConfig()) -> dict[str, np.ndarray]:
    img = np.asarray(pred, dtype=np.float64)
    r, g, b = img[..., 0], img[..., 1], img[..., 2]
    dom = cfg.dominance

    def dominant(c, o1, o2):
        return (c - o1 > dom) & (c - o2 > dom)

    return {
        "head": (r > cfg.head_min) & (g > cfg.head_min) & (b > cfg.head_min),
        "torso": dominant(b, r, g),
        "arms": dominant(r, g, b),
        "legs": dominant(g, r, b),
    }


def component_centroids(mask, connectivity: int = 8) -> list[tuple[float, float]]:
    structure = np.ones((3, 3)) if connectivity == 8 else None
    labels, n = ndimage.label(mask, structure=structure)
    if n == 0:
        return []
    centers = ndimage.center_of_mass(mask, labels, range(1, n + 1))
    return [(float(c), float(r)) for r, c in centers]


def optimal_assignment(cost) -> list[tuple[int, int]]:
    """Minimum-total-cost one-to-one matching for a rectangular cost matrix."""
    cost = np.asarray(cost, dtype=np.float64)
    if cost.size == 0:
        return []
    rows, cols = linear_sum_assignment(cost)
    return list(zip(rows.tolist(), cols.tolist()))


def match_threshold(annotation: PoseAnnotation, cfg: MatchRateConfig = MatchRateConfig()) -> float:
    sizes = annotation.head_sizes()
    ref = float(np.mean(sizes)) if sizes else cfg.default_head_distance
    return cfg.distance_multiple * ref


def match_rate(pred, annotation: PoseAnnotation, cfg: MatchRateConfig = MatchRateConfig(),
               details: bool = False):
    """Fraction of annotated part centroids matched by a predicted component.

    Returns ``None`` when the annotation has no parts.  Unmatched predicted
    components carry no penalty.
    """
    ann = annotation.centroids()
    total = sum(len(v) for v in ann.values())
    if total == 0:
        return (None, {}) if details else None
    thr = match_threshold(annotation, cfg)
    masks = part_masks(pred, cfg)
    matched = 0
    info = {"threshold": thr, "parts": {}}
    for part in PARTS:
        truth = np.asarray(ann[part]).reshape(-1, 2)
        found = np.asarray(component_centroids(masks[part], cfg.connectivity)).reshape(-1, 2)
        pairs = []
        if len(truth) and len(found):
            cost = np.linalg.norm(found[:, None] - truth[None], axis=-1)
            pairs = [(i, j, float(cost[i, j])) for i, j in optimal_assignment(cost)]
        hits = sum(1 for _, _, d in pairs if d < thr)
        matched += hits
        info["parts"][part] = {"annotated": len(truth), "predicted": len(found), "matched": hits}
    rate = matched / total
    return (rate, info) if details else rate


# ---------------------------------------------------------------------------
# ARC protocols


def cell_errors(pred, truth) -> int | None:
    """Number of differing cells, or ``None`` when shapes differ or nothing decoded."""
    if pred is None or truth is None:
        return None
    p, t = np.asarray(pred), np.asarray(truth)
    if p.shape != t.shape:
        return None
    return int(np.count_nonzero(p != t))


def input_solved(attempt_errors, attempts: int, k: int | float) -> bool:
    errs = [e for e in list(attempt_errors)[:attempts] if e is not None]
    return bool(errs) and min(errs) <= k


def arc_score(predictions, truths, attempts: int = 2, k: int = 0) -> bool:
    """Strict ARC rule: every test input needs an exact match among its first
    ``attempts`` predictions.  ``k > 0`` tolerates up to ``k`` wrong cells."""
    if len(predictions) != len(truths):
        raise ValueError("one attempt list per test input is required")
    return all(
        input_solved([cell_errors(p, t) for p in preds], attempts, k)
        for preds, t in zip(predictions, truths)
    )


def conceptarc_score(predictions, truths, train_outputs=(), attempts: int = 3,
                     remap_black: bool = True) -> list[bool]:
    """Per test input: solved if any of the first ``attempts`` predictions is exact.

    All-black predictions are remapped to gray first when black never occurs in
    the task's training outputs.
    """
    if len(predictions) != len(truths):
        raise ValueError("one attempt list per test input is required")
    out = []
    for preds, t in zip(predictions, truths):
        fixed = [gray_remap(p, train_outputs) if (remap_black and p is not None) else p for p in preds]
        out.append(input_solved([cell_errors(p, t) for p in fixed], attempts, 0))
    return out


def lenient_curves(results, ks=(0, 1, 2, 3, 4, 5, math.inf), max_attempts: int = 3,
                   attempts_at_k: int = 2, k_at_attempts: int = 0, per_input: bool = False) -> dict:
    """Accuracy as the error tolerance ``k`` and the attempt budget grow.

    ``results`` holds, per task, a list per test input of per-attempt cell
    error counts (``None`` = wrong shape / undecodable).  With ``per_input``
    each test input counts on its own (ConceptARC style), otherwise a task
    counts only when all of its inputs are solved (ARC style).
    """
    def accuracy(attempts, k):
        scores = []
        for task in results:
            solved = [input_solved(errs, attempts, k) for errs in task]
            if per_input:
                scores.extend(solved)
            else:
                scores.append(all(solved))
        return float(np.mean(scores)) if scores else 0.0

    return {
        "k": [float(k) for k in ks],
        "accuracy_vs_k": [accuracy(attempts_at_k, k) for k in ks],
        "attempts": list(range(1, max_attempts + 1)),
        "accuracy_vs_attempts": [accuracy(a, k_at_attempts) for a in range(1, max_attempts + 1)],
    }


@dataclass
class Selection:
    indices: list
    padded: bool
    trigger: int | None  # first snapshot whose training prediction was correct


def snapshot_selection(train_correct, attempts: int = 2) -> Selection:
    """Choose which evaluation snapshots supply the scored attempts.

    From the first snapshot whose training-set prediction was correct, take
    it and the following ones; with no such snapshot take the last
    ``attempts``.  Missing snapshots are filled by repeating the last one.
    """
    flags = list(train_correct)
    if not flags:
        raise ValueError("no snapshots to select from")
    first = next((i for i, ok in enumerate(flags) if ok), None)
    if first is not None:
        idx = list(range(first, min(first + attempts, len(flags))))
    else:
        idx = list(range(max(0, len(flags) - attempts), len(flags)))
    padded = len(idx) < attempts
    idx += [idx[-1]] * (attempts - len(idx))
    return Selection(idx, padded, first)


# ---------------------------------------------------------------------------
# classification


def classification_report(pred_labels, true_labels, num_classes: int | None = None) -> dict:
    p = np.asarray(pred_labels, dtype=np.int64).ravel()
    t = np.asarray(true_labels, dtype=np.int64).ravel()
    if p.shape != t.shape:
        raise ValueError("prediction and truth label lists differ in length")
    if num_classes is None:
        num_classes = int(max(p.max(initial=0), t.max(initial=0))) + 1
    counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(counts, (t, p), 1)
    rows = counts.sum(1, keepdims=True)
    confusion = np.divide(counts, rows, out=np.zeros(counts.shape), where=rows > 0)
    return {"accuracy": float(np.trace(counts) / max(len(t), 1)),
            "counts": counts, "confusion": confusion}


# ---------------------------------------------------------------------------
# reports


@dataclass
class EvalReport:
    metric: str
    per_sample: list
    aggregate: float | None
    protocol: dict = field(default_factory=dict)
    confusion: np.ndarray | None = None
    curves: dict | None = None

    def to_json(self) -> dict:
        out = {"metric": self.metric, "aggregate": self.aggregate, "per_sample": self.per_sample,
               "protocol": self.protocol}
        if self.confusion is not None:
            out["confusion"] = np.asarray(self.confusion).tolist()
        if self.curves is not None:
            out["curves"] = self.curves
        return out

    def write(self, out_dir, plots: bool = True) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        files = [out / f"{self.metric}_report.json", out / f"{self.metric}_summary.csv"]
        files[0].write_text(json.dumps(self.to_json(), indent=1, default=_json_default))
        with files[1].open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sample", "score"])
            for i, s in enumerate(self.per_sample):
                w.writerow([i, "" if s is None else s])
            w.writerow(["aggregate", "" if self.aggregate is None else self.aggregate])
        if plots and (self.confusion is not None or self.curves is not None):
            files += _plots(self, out)
        return files


def aggregate(scores) -> float | None:
    vals = [float(s) for s in scores if s is not None]
    return float(np.mean(vals)) if vals else None


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


def _plots(report: EvalReport, out: Path) -> list[Path]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    files = []
    if report.confusion is not None:
        fig, ax = plt.subplots(figsize=(4, 4))
        im = ax.imshow(report.confusion, vmin=0, vmax=1, cmap="Blues")
        ax.set_xlabel("predicted")
        ax.set_ylabel("true")
        fig.colorbar(im, ax=ax)
        path = out / f"{report.metric}_confusion.png"
        fig.savefig(path, dpi=100, bbox_inches="tight")
        plt.close(fig)
        files.append(path)
    if report.curves is not None:
        c = report.curves
        fig, axes = plt.subplots(1, 2, figsize=(8, 3))
        ks = ["inf" if math.isinf(k) else str(int(k)) for k in c["k"]]
        axes[0].plot(ks, c["accuracy_vs_k"], marker="o")
        axes[0].set_xlabel("allowed wrong cells")
        axes[0].set_ylabel("accuracy")
        axes[1].plot(c["attempts"], c["accuracy_vs_attempts"], marker="o")
        axes[1].set_xlabel("attempts")
        path = out / f"{report.metric}_lenient.png"
        fig.savefig(path, dpi=100, bbox_inches="tight")
        plt.close(fig)
        files.append(path)
    return files
