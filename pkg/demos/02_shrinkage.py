# Shrinkage versus hard truncation on a single spike.
import numpy as np

from eoptshrinkq.shrinkage import shrink
from eoptshrinkq.spiked_synth import SpikedModelSpec, sample_block

losses = {"shrink": [], "truncate": []}
for seed in range(20):
    block, truth = sample_block(SpikedModelSpec(128, 128, (3.0,), seed=seed))
    result, residual = shrink(block)
    u, s, vt = np.linalg.svd(block)
    trunc = s[0] * np.outer(u[:, 0], vt[0])
    losses["shrink"].append(np.sum((result.estimate() - truth.signal) ** 2))
    losses["truncate"].append(np.sum((trunc - truth.signal) ** 2))

c = result.components[0]
print("last block: observed sigma %.3f, d_hat %.3f, overlaps %.3f/%.3f, shrunk to %.3f"
      % (np.sqrt(c.observed_eigenvalue), c.d_hat, c.a1_hat, c.a2_hat, c.phi_hat))
print("theory for d=3, beta=1: overlap 1 - 1/d^2 = %.3f, shrunk value d - 1/d = %.3f"
      % (1 - 1 / 9, 3 - 1 / 3))
for k, v in losses.items():
    print("%-9s mean squared Frobenius loss %.3f" % (k, np.mean(v)))

# the residual looks like noise again
print("residual energy per entry %.5f vs noise %.5f"
      % (np.mean(residual ** 2), np.mean(truth.noise ** 2)))
