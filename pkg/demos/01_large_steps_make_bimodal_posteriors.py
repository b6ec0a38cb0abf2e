"""
Why a few big denoising steps cannot be Gaussian
================================================

Take the simplest multimodal data there is: two narrow bumps at -1 and +1.
Diffuse it, then ask for the true reverse transition q(x_prev | x_t).
When the two noise levels are close, the answer is a single bump. When they
are far apart, the answer has two. A sampler that models each reverse step
as one Gaussian is therefore wrong by construction once steps get big.

Run with:  python demos/01_large_steps_make_bimodal_posteriors.py
"""

import numpy as np

from fastgesture import oracle

data = oracle.GaussianMixture1D([0.5, 0.5], [-1.0, 1.0], [0.1, 0.1])

# one giant jump: almost clean (abar = 0.99) straight to almost pure noise (0.01)
big = oracle.exact_posterior(data, abar_t=0.01, abar_prev=0.99, x_t=0.0)
print("big jump   modes:", np.round(big.mode_locations, 4))

# one small step at the same noise level
small = oracle.exact_posterior(data, abar_t=0.01, abar_prev=0.01 / 0.98, x_t=0.0)
print("small step modes:", np.round(small.mode_locations, 4) + 0.0)

# The closed form is cheap, so check it against brute-force quadrature.
for name, prev in (("big", 0.99), ("small", 0.01 / 0.98)):
    xs, quad = oracle.quadrature_posterior(data, 0.01, prev, 0.0)
    exact = oracle.posterior_mixture(data, 0.01, prev, 0.0).pdf(xs)
    print(f"{name:5s} max |exact - quadrature| = {np.max(np.abs(exact - quad)):.2e}")

# Sweep the jump size: where does the second mode appear?
print("\nabar_prev  modes at x_t=0")
for prev in (0.0102, 0.02, 0.05, 0.1, 0.3, 0.6, 0.9, 0.99):
    n, _ = oracle.count_modes(oracle.posterior_mixture(data, 0.01, prev, 0.0))
    print(f"{prev:9.4f}  {n}")

# A crude text plot of the big-jump density
xs = np.linspace(-1.6, 1.6, 33)
dens = big.mixture.pdf(xs)
print()
for x, d in zip(xs, dens):
    print(f"{x:+.1f} " + "#" * int(40 * d / dens.max()))
