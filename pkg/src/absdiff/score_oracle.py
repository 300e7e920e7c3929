"""Exact and emulated score functions on supported transitions.

The discrete score of a pair of states is the ratio of their marginal
probabilities.  Under the absorbing forward process the only transitions with
positive reverse rate unmask a single coordinate, so score functions here are
defined exactly on pairs (x, y) that differ at one dimension j with
``x[j] == mask`` and ``y[j] != mask``.

Two independent exact routes are provided and cross-checked in tests:

* ratio of dense marginals (``score_ratio`` / :class:`ExactRatioScore`);
* survival-odds factor times the single-token posterior obtained by a Bayes
  sum over compatible initial states (``score_analytic`` /
  :class:`ExactAnalyticScore`).

Estimator error is emulated, not learned: :class:`PerturbedScore` multiplies
the exact value by a deterministic seeded log-uniform factor, and
:class:`ClippedScore` applies the inverse-time (or mask-likelihood) cap that
the reverse samplers assume.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .forward_process import apply_kernel_axis, marginal, token_kernel
from .state_space import ModelSpec, decode, encode

T_FLOOR = 1e-12


@dataclass(frozen=True)
class TransitionPair:
    """States x, y differing only at dimension j, with x masked there."""

    x: tuple[int, ...]
    y: tuple[int, ...]
    j: int

    @staticmethod
    def make(x: Sequence[int], j: int, target: int, spec: ModelSpec) -> "TransitionPair":
        x = tuple(int(v) for v in x)
        if x[j] != spec.mask:
            raise ValueError(f"dimension {j} of x is not masked")
        if target == spec.mask or not 0 <= target < spec.S:
            raise ValueError(f"target token {target} invalid for unmasking")
        y = x[:j] + (int(target),) + x[j + 1 :]
        return TransitionPair(x=x, y=y, j=j)


@dataclass(frozen=True)
class TransitionTable:
    """All supported transitions of a spec, as parallel index arrays.

    Row k unmasks dimension ``dim[k]`` of state ``xi[k]`` to token
    ``target[k]``, producing state ``yi[k]``.
    """

    xi: np.ndarray
    yi: np.ndarray
    dim: np.ndarray
    target: np.ndarray

    def __len__(self) -> int:
        return self.xi.shape[0]


def transition_table(spec: ModelSpec) -> TransitionTable:
    xi, yi, dims, targets = [], [], [], []
    non_mask = [a for a in range(spec.S) if a != spec.mask]
    for idx in range(spec.n_states):
        state = decode(idx, spec)
        for j in range(spec.d):
            if state[j] != spec.mask:
                continue
            for a in non_mask:
                y = state[:j] + (a,) + state[j + 1 :]
                xi.append(idx)
                yi.append(encode(y, spec))
                dims.append(j)
                targets.append(a)
    as64 = lambda v: np.asarray(v, dtype=np.int64)
    return TransitionTable(as64(xi), as64(yi), as64(dims), as64(targets))


# -- exact scores ------------------------------------------------------------

def score_ratio(spec: ModelSpec, t: float, pair: TransitionPair) -> float:
    """Score as a direct ratio of dense marginal masses."""
    q = marginal(spec, t)
    qx = q[encode(pair.x, spec)]
    if qx <= 0.0:
        raise ZeroDivisionError(
            f"marginal mass of conditioning state {pair.x} is zero at t={t}"
        )
    return float(q[encode(pair.y, spec)] / qx)


def posterior_token(spec: ModelSpec, j: int, x: Sequence[int], t: float) -> np.ndarray:
    """Distribution of the initial token at dimension j given state x at t.

    Bayes sum over all initial states compatible with x: each weighted by its
    q0 mass times the product of per-token transition probabilities.
    """
    x = tuple(int(v) for v in x)
    if x[j] != spec.mask:
        raise ValueError(f"dimension {j} of x is not masked")
    K = token_kernel(spec, t)
    tensor = spec.q0_tensor()
    for axis in range(spec.d):
        if axis != j:
            tensor = apply_kernel_axis(tensor, K, axis)
    # tensor now indexed by (x^0..x^{j-1}, a, x^{j+1}..): initial token a at j
    sel = list(x)
    sel[j] = slice(None)
    weights = tensor[tuple(sel)] * K[:, x[j]]
    total = float(weights.sum())
    if total <= 0.0:
        raise ZeroDivisionError(
            f"marginal mass of conditioning state {x} is zero at t={t}"
        )
    return weights / total


def score_analytic(spec: ModelSpec, t: float, pair: TransitionPair) -> float:
    """Score via survival odds times the single-token posterior.

    At t = 0 the expression degenerates to the ratio of q0 masses, which is
    finite whenever the conditioning state has positive data mass.
    """
    if t < 0:
        raise ValueError(f"time must be nonnegative, got {t}")
    if t == 0.0:
        q0t = spec.q0_tensor()
        px = float(q0t[pair.x])
        if px <= 0.0:
            raise ZeroDivisionError(f"q0 mass of conditioning state {pair.x} is zero")
        return float(q0t[pair.y]) / px
    post = posterior_token(spec, pair.j, pair.x, t)
    return float(math.exp(-t) / (-math.expm1(-t)) * post[pair.y[pair.j]])


def _unmask_indices(spec: ModelSpec, x: Sequence[int], j: int) -> tuple[int, np.ndarray]:
    """State index of x and of every single-token unmasking of dimension j."""
    xi = encode(x, spec)
    stride = spec.S**j
    targets = spec.non_mask_tokens()
    return xi, xi + (targets - spec.mask) * stride


class ExactRatioScore:
    """Exact score backed by dense marginal ratios."""

    kind = "exact-ratio"

    def __init__(self, spec: ModelSpec):
        self.spec = spec

    def value(self, t: float, pair: TransitionPair) -> float:
        if t == 0.0:
            return score_analytic(self.spec, 0.0, pair)
        return score_ratio(self.spec, t, pair)

    def batch(self, t: float, table: TransitionTable) -> np.ndarray:
        q = marginal(self.spec, t)
        qx = q[table.xi]
        if np.any(qx <= 0.0):
            bad = int(table.xi[int(np.argmin(qx))])
            raise ZeroDivisionError(
                f"marginal mass of conditioning state index {bad} is zero at t={t}"
            )
        return q[table.yi] / qx

    def dim_values(self, t: float, x: Sequence[int], j: int) -> np.ndarray:
        """Scores of all unmaskings of dimension j, ordered by target token."""
        xi, yis = _unmask_indices(self.spec, x, j)
        q = marginal(self.spec, t) if t > 0 else self.spec.q0
        if q[xi] <= 0.0:
            raise ZeroDivisionError(
                f"marginal mass of conditioning state index {xi} is zero at t={t}"
            )
        return q[yis] / q[xi]


class ExactAnalyticScore:
    """Exact score via the posterior decomposition, vectorized per dimension.

    The batch path contracts the token kernel over every axis except the
    unmasked one, which yields all posteriors of one dimension at once; it is
    numerically independent of the marginal-ratio route apart from sharing
    the kernel entries.
    """

    kind = "exact-analytic"

    def __init__(self, spec: ModelSpec):
        self.spec = spec

    def value(self, t: float, pair: TransitionPair) -> float:
        return score_analytic(self.spec, t, pair)

    def batch(self, t: float, table: TransitionTable) -> np.ndarray:
        spec = self.spec
        K = token_kernel(spec, t)
        keep = math.exp(-t)
        out = np.empty(len(table), dtype=np.float64)
        for j in range(spec.d):
            rows = np.nonzero(table.dim == j)[0]
            if rows.size == 0:
                continue
            tensor = spec.q0_tensor()
            for axis in range(spec.d):
                if axis != j:
                    tensor = apply_kernel_axis(tensor, K, axis)
            # flat[a * ...]: joint weight with initial token a at dimension j
            flat = tensor.reshape(spec.n_states, order="F")
            stride = spec.S**j
            base = table.xi[rows] - spec.mask * stride
            # q_t(x) = sum_a weight(a) * K[a, mask]
            qx = np.zeros(rows.size)
            for a in range(spec.S):
                qx += flat[base + a * stride] * K[a, spec.mask]
            if np.any(qx <= 0.0):
                bad = int(table.xi[rows[int(np.argmin(qx))]])
                raise ZeroDivisionError(
                    f"marginal mass of conditioning state index {bad} is zero at t={t}"
                )
            # survival-odds prefactor times posterior; the (1 - e^{-t})
            # factors cancel, leaving e^{-t} * weight(target) / q_t(x)
            out[rows] = keep * flat[base + table.target[rows] * stride] / qx
        return out

    def dim_values(self, t: float, x: Sequence[int], j: int) -> np.ndarray:
        spec = self.spec
        if t == 0.0:
            q0t = spec.q0_tensor()
            px = float(q0t[tuple(x)])
            if px <= 0.0:
                raise ZeroDivisionError(f"q0 mass of conditioning state {x} is zero")
            sel = list(x)
            sel[j] = slice(None)
            return q0t[tuple(sel)][spec.non_mask_tokens()] / px
        post = posterior_token(spec, j, x, t)
        pref = math.exp(-t) / (-math.expm1(-t))
        return pref * post[spec.non_mask_tokens()]


def compute_gamma(spec: ModelSpec) -> float:
    """Minimum conditional likelihood ratio of the mask token in the data.

    Over every dimension i and every context (the other d-1 tokens) with
    positive marginal mass, take the conditional probability of the mask
    token divided by the largest conditional probability of a non-mask
    token, and return the minimum.  Zero means some reachable context gives
    the mask no mass; a positive value bounds the exact score by its inverse
    uniformly in time.  Degenerate data whose reachable contexts are all
    certain-mask yields ``inf``.
    """
    S, d = spec.S, spec.d
    non_mask = [a for a in range(S) if a != spec.mask]
    gamma = math.inf
    for i in range(d):
        rows = np.moveaxis(spec.q0_tensor(), i, -1).reshape(-1, S)
        ctx_mass = rows.sum(axis=1)
        for row, total in zip(rows, ctx_mass):
            if total <= 0.0:
                continue
            top = max(row[a] for a in non_mask)
            if top <= 0.0:
                continue  # mask certain here: no constraint
            gamma = min(gamma, row[spec.mask] / top)
    return gamma


# -- emulated estimators -----------------------------------------------------

_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)


def _mix64(h: np.ndarray) -> np.ndarray:
    h = np.asarray(h, dtype=np.uint64)
    h ^= h >> np.uint64(30)
    h *= _MIX1
    h ^= h >> np.uint64(27)
    h *= _MIX2
    h ^= h >> np.uint64(31)
    return h


def _pair_step_uniform(seed: int, xi, yi, t: float) -> np.ndarray:
    """Deterministic uniforms in [0, 1), fixed per (pair, query time)."""
    with np.errstate(over="ignore"):
        h = np.uint64(seed & 0xFFFFFFFFFFFFFFFF) + _GOLDEN
        h = _mix64(h + np.asarray(xi, dtype=np.uint64) * _GOLDEN)
        h = _mix64(h + np.asarray(yi, dtype=np.uint64) * _MIX1)
        h = _mix64(h + np.float64(t).view(np.uint64))
    return h.astype(np.float64) / 2.0**64


class PerturbedScore:
    """Exact score times a seeded log-uniform factor in [-eta, eta].

    The factor is a pure function of (pair, query time, seed), so the same
    query always returns the same value: this emulates a fixed trained
    estimator with bounded log error, not fresh noise per call.
    """

    kind = "perturbed"

    def __init__(self, base, eta: float, seed: int):
        if eta < 0:
            raise ValueError(f"eta must be nonnegative, got {eta}")
        self.base = base
        self.eta = float(eta)
        self.seed = int(seed)
        self.spec = base.spec

    def _factor(self, t: float, xi, yi) -> np.ndarray:
        u = _pair_step_uniform(self.seed, xi, yi, t)
        return np.exp((2.0 * u - 1.0) * self.eta)

    def value(self, t: float, pair: TransitionPair) -> float:
        base = self.base.value(t, pair)
        if self.eta == 0.0:
            return base
        xi = encode(pair.x, self.spec)
        yi = encode(pair.y, self.spec)
        return float(base * self._factor(t, np.int64(xi), np.int64(yi)))

    def batch(self, t: float, table: TransitionTable) -> np.ndarray:
        base = self.base.batch(t, table)
        if self.eta == 0.0:
            return base
        return base * self._factor(t, table.xi, table.yi)

    def dim_values(self, t: float, x: Sequence[int], j: int) -> np.ndarray:
        base = self.base.dim_values(t, x, j)
        if self.eta == 0.0:
            return base
        xi, yis = _unmask_indices(self.spec, x, j)
        return base * self._factor(t, np.full_like(yis, xi), yis)


def perturbed_score(base, eta: float, seed: int) -> PerturbedScore:
    return PerturbedScore(base, eta, seed)


class ClippedScore:
    """Score capped by the envelope the reverse samplers assume.

    With early stopping the cap is ``kappa / t`` in forward time t.  Without
    early stopping (``gamma`` set) it is ``kappa * max(1/gamma, 1/t)``; the
    tiny floor on t only guards the arithmetic at t = 0, where the mask
    likelihood term is the operative bound anyway.
    """

    kind = "clipped"

    def __init__(self, base, kappa: float, gamma: float | None = None,
                 t_floor: float = T_FLOOR):
        if kappa <= 0:
            raise ValueError(f"kappa must be positive, got {kappa}")
        if gamma is not None and gamma <= 0:
            raise ValueError(f"gamma must be positive when set, got {gamma}")
        self.base = base
        self.kappa = float(kappa)
        self.gamma = gamma
        self.t_floor = t_floor
        self.spec = base.spec

    def cap(self, t: float) -> float:
        inv_t = 1.0 / max(t, self.t_floor)
        if self.gamma is None:
            return self.kappa * inv_t
        return self.kappa * max(1.0 / self.gamma, inv_t)

    def value(self, t: float, pair: TransitionPair) -> float:
        return min(self.base.value(t, pair), self.cap(t))

    def batch(self, t: float, table: TransitionTable) -> np.ndarray:
        return np.minimum(self.base.batch(t, table), self.cap(t))

    def dim_values(self, t: float, x: Sequence[int], j: int) -> np.ndarray:
        return np.minimum(self.base.dim_values(t, x, j), self.cap(t))


def clipped_score(base, kappa: float, gamma: float | None = None) -> ClippedScore:
    return ClippedScore(base, kappa, gamma=gamma)
