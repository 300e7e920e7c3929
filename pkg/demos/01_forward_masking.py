"""
Forward masking process on a tiny token space
=============================================

Each coordinate of a state keeps its token with probability exp(-t) and
otherwise falls into the absorbing mask token.  Everything below is exact:
kernels come from the closed-form matrix exponential, marginals from
axis-wise kernel application.
"""

import math

import numpy as np

from absdiff import (
    ModelSpec,
    forward_conditional,
    marginal,
    product_q0,
    sample_forward,
    token_kernel,
    tv,
)

# three tokens per dimension, token 2 is the mask, two dimensions
spec = ModelSpec(S=3, d=2, mask=2, q0=product_q0([[0.5, 0.3, 0.2]] * 2))

print("token kernel at t = ln 2 (rows: from, cols: to):")
print(token_kernel(spec, math.log(2)))

# the conditional law of a state with one already-masked coordinate stays
# supported on two points: survive or fully mask
dist = forward_conditional(spec, (0, 2), t=1.0)
print("\nconditional mass at t=1 from (0, mask):")
for idx in np.nonzero(dist)[0]:
    print(f"  state index {idx}: {dist[idx]:.6f}")

# marginals interpolate between the data and the all-mask point
print("\nmass of the fully-masked state over time:")
for t in (0.0, 0.5, 1.0, 2.0, 5.0, 10.0):
    q = marginal(spec, t)
    print(f"  t = {t:5.1f}: {q[-1]:.6f}")

point = np.zeros(spec.n_states)
point[-1] = 1.0
print(f"\nTV to the all-mask point at t=10: {tv(marginal(spec, 10.0), point):.2e}")
print(f"crude union bound d e^-t:          {spec.d * math.exp(-10.0):.2e}")

# a few forward trajectories sampled exactly
rng = np.random.default_rng(0)
print("\nforward draws from (0, 1):")
for t in (0.2, 1.0, 3.0):
    draws = [sample_forward(spec, (0, 1), t, rng) for _ in range(6)]
    print(f"  t = {t}: {draws}")
