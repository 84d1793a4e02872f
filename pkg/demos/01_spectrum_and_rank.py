# Where do spikes show up in the spectrum, and how many does the estimator keep?
import numpy as np

from eoptshrinkq.spectral import decompose, estimate_bulk_edge, impute_noise_spectrum
from eoptshrinkq.spiked_synth import SpikedModelSpec, mp_edge, sample_block, white_noise_alpha

n = d = 128
alpha = white_noise_alpha(n / d)
print("detection threshold alpha =", alpha, " MP edge =", mp_edge(n / d))

# three spikes well above alpha, one below it
spec = SpikedModelSpec(n, d, (6.0, 4.0, 2.5, 0.6 * alpha), seed=1)
block, truth = sample_block(spec)
sd = decompose(block)
edge = estimate_bulk_edge(sd)

print("top eigenvalues:", np.round(sd.eigenvalues[:6], 3))
print("estimated edge %.3f (k=%d), kept r+ = %d" % (edge.lambda_plus_hat, edge.k, edge.r_plus_hat))

# the sub-threshold spike sticks to the bulk, so it is not counted
noise = impute_noise_spectrum(sd, edge)
print("imputed noise spectrum, top 3:", np.round(noise.eigenvalues[:3], 3))

# compare with the true noise spectrum
z_eigs = np.linalg.eigvalsh(truth.noise @ truth.noise.T)[::-1]
print("true noise spectrum, top 3:   ", np.round(z_eigs[:3], 3))
