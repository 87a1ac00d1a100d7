"""Classifying feature-point trajectories by motion.

Each rigid body's trajectories lie near a 3-dimensional affine subspace of
the stacked (x, y) coordinates.  Noise is added in three groups at -30, -25
and -20 dB SNR (50/35/15% of the points); models are fitted on 80% of the
points and score the held-out 20%.  Real tracks in the same CSV layout go
through ``hemppcat ingest-trajectories`` followed by ``hemppcat classify``.

    python demos/03_trajectory_classification.py
"""

import numpy as np

from hemppcat.evaluation import trajectory_experiment
from hemppcat.synth import add_group_noise, make_trajectories

SEEDS = range(5)

table = {}
for seed in SEEDS:
    ds, v = add_group_noise(make_trajectories(seed=seed), seed=seed)
    rows, _ = trajectory_experiment(ds, k=3, seed=seed)
    for group, method, rate in rows:
        table.setdefault((group, method), []).append(rate)

groups = ["1", "2", "3", "overall"]
print("test misclassification (%), mean over", len(SEEDS), "seeds")
print("  method    " + "".join(f"{g:>9s}" for g in groups))
for method in ("kplanes", "mppca", "hemppcat"):
    print(f"  {method:9s} " + "".join(f"{100 * np.mean(table[g, method]):9.2f}" for g in groups))
