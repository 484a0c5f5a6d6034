"""
Scoring ARC-style predictions
=============================

ARC counts a task as solved only when every test input is matched exactly
within two attempts.  ConceptARC scores each test input on its own with three
attempts.  Lenient curves relax the cell tolerance or the attempt budget.
"""
import math

import numpy as np

from _common import output_dir
from fewshot_vdm.metrics import (EvalReport, arc_score, conceptarc_score, lenient_curves,
                                 snapshot_selection)

out = output_dir("06_arc_protocols")
truth = np.array([[1, 2], [3, 4]])
one_off = np.array([[1, 2], [3, 5]])
wrong = np.zeros((2, 2), int)

print("exact on attempt 2:         ", arc_score([[wrong, truth]], [truth]))
print("one wrong cell, strict:     ", arc_score([[one_off, wrong]], [truth]))
print("one wrong cell, k=1:        ", arc_score([[one_off, wrong]], [truth], k=1))
print("ConceptARC, exact at try 3: ", conceptarc_score([[wrong, wrong, truth]], [truth]))

# Attempts come from periodic fine-tuning snapshots.
sel = snapshot_selection([False, False, True, False, True, True], attempts=2)
print("snapshots used:", sel.indices, "(first train-correct snapshot:", sel.trigger, ")")

# Per task, per test input, per attempt: number of wrong cells (None = wrong shape).
rng = np.random.default_rng(0)
results = [[[int(e) if rng.random() > 0.1 else None for e in rng.poisson(2, 3)] for _ in range(2)]
           for _ in range(40)]
curves = lenient_curves(results, ks=(0, 1, 2, 3, 4, 5, math.inf))
for k, acc in zip(curves["k"], curves["accuracy_vs_k"]):
    print(f"k={k:>4}  accuracy {acc:.2f}")
EvalReport("arc", [None] * len(results), curves["accuracy_vs_k"][0], {"attempts": 2}, curves=curves).write(out)
print("wrote", out)
