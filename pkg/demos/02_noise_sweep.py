"""How the gap between MPPCA and HeMPPCAT opens as one group gets noisier.

A reduced version of the benchmark: each replicate reuses the same model,
coefficients and standardised noise at every grid point, so only the noise
scale of group 1 changes along a row.  The full run is

    hemppcat benchmark --out results/

which sweeps v1 = 1.0, 1.1, ..., 4.0 with 25 replicates.

    python demos/02_noise_sweep.py
"""

import numpy as np

from hemppcat import paper_config, run_v1_sweep

GRID = [1.0, 2.0, 3.0, 4.0]
REPLICATES = 4

res = run_v1_sweep(paper_config(), GRID, REPLICATES, seed=0,
                   progress=lambda v1, done, total: print(f"  v1={v1} done ({done}/{total})"))

print("\nmean factor error, averaged over the three components")
print("  v1   " + "".join(f"{m:>10s}" for m in res.methods))
for g, v1 in enumerate(res.v1_grid):
    print(f"  {v1:.1f}  " + "".join(f"{np.mean(res.errors[g, m]):10.3f}" for m in range(len(res.methods))))
print("\nA replicate where K-Planes collapses a cluster to a few points can dominate a")
print("small-sample mean; compare medians over more replicates before reading too much in.")
