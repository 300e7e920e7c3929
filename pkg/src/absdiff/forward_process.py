"""Closed-form absorbing forward process.

Each dimension evolves independently: a non-mask token survives to time t
with probability ``exp(-t)`` and otherwise sits at the mask token, which is
absorbing.  The per-token generator has -1 on non-mask diagonal entries and
+1 into the mask column; everything here is derived from its exact matrix
exponential, never from numerical integration.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .state_space import ModelSpec, StateVec, dense_dist


def rate_matrix_token(spec: ModelSpec) -> np.ndarray:
    """Per-token generator: rows sum to zero, mask row identically zero."""
    Q = -np.eye(spec.S)
    Q[:, spec.mask] += 1.0
    Q[spec.mask, :] = 0.0
    return Q


def token_kernel(spec: ModelSpec, t: float) -> np.ndarray:
    """Transition matrix of one token over elapsed time t.

    ``K[a, b] = P(token b at time t | token a at time 0)``.
    """
    if t < 0:
        raise ValueError(f"time must be nonnegative, got {t}")
    keep = math.exp(-t)
    K = keep * np.eye(spec.S)
    K[:, spec.mask] += 1.0 - keep
    K[spec.mask, spec.mask] = 1.0
    K[spec.mask, : spec.mask] = 0.0
    K[spec.mask, spec.mask + 1 :] = 0.0
    return K


def apply_kernel_axis(tensor: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    """Contract ``kernel[a, b]`` against one axis of a joint tensor.

    Sends mass indexed by token ``a`` on ``axis`` to token ``b``; the result
    keeps the axis in place.
    """
    moved = np.moveaxis(tensor, axis, -1)
    out = moved @ kernel
    return np.moveaxis(out, -1, axis)


def forward_conditional(spec: ModelSpec, x0: Sequence[int], t: float) -> np.ndarray:
    """Distribution of the state at time t given it started at ``x0``."""
    if len(x0) != spec.d:
        raise ValueError(f"state has {len(x0)} tokens, spec.d = {spec.d}")
    K = token_kernel(spec, t)
    mass = K[int(x0[0])]
    for i in range(1, spec.d):
        mass = np.outer(mass, K[int(x0[i])]).ravel(order="F")
    return dense_dist(mass)


def marginal(spec: ModelSpec, t: float) -> np.ndarray:
    """Marginal distribution at time t, starting from ``spec.q0``.

    Applies the token kernel along each dimension axis in turn; memory stays
    at one dense vector, cost O(d * S * S**d).
    """
    K = token_kernel(spec, t)
    tensor = spec.q0_tensor()
    for axis in range(spec.d):
        tensor = apply_kernel_axis(tensor, K, axis)
    return dense_dist(tensor.ravel(order="F"))


def sample_forward(
    spec: ModelSpec, x0: Sequence[int], t: float, rng: np.random.Generator
) -> StateVec:
    """One forward draw: each non-mask token kept with prob exp(-t)."""
    if t < 0:
        raise ValueError(f"time must be nonnegative, got {t}")
    keep = math.exp(-t)
    out = []
    for tok in x0:
        tok = int(tok)
        if tok != spec.mask and rng.random() >= keep:
            tok = spec.mask
        out.append(tok)
    return tuple(out)
