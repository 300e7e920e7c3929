"""Divergences, the score-entropy functional, and the Bregman gap.

KL is always called with the target distribution first: convergence results
in this package bound ``kl(q_target, sampler_law)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .forward_process import marginal
from .score_oracle import ExactRatioScore, transition_table
from .state_space import ModelSpec, dense_dist, encode

CSV_COLUMNS = (
    "spec_hash",
    "sampler",
    "S",
    "d",
    "T",
    "delta",
    "N",
    "seed",
    "kl",
    "tv",
    "score_entropy_sum",
    "steps",
    "wallclock_s",
)


class SupportError(ValueError):
    """Raised when KL is requested without absolute continuity."""


def kl(p: np.ndarray, q: np.ndarray) -> float:
    """Kullback-Leibler divergence sum(p * log(p/q)), with 0 log 0 = 0.

    Requires p(x) > 0 implies q(x) > 0; violations name the offending state.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {q.shape}")
    support = p > 0.0
    if np.any(q[support] <= 0.0):
        bad = int(np.nonzero(support & (q <= 0.0))[0][0])
        raise SupportError(
            f"state index {bad} has mass {p[bad]} under the target "
            f"but zero under the comparison distribution"
        )
    ps = p[support]
    return float(np.sum(ps * np.log(ps / q[support])))


def tv(p: np.ndarray, q: np.ndarray) -> float:
    """Total variation distance, one half the L1 difference."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {q.shape}")
    return float(0.5 * np.abs(p - q).sum())


def bregman_gap(s: float, shat: float) -> float:
    """G(s; shat) = s * log(s / shat) - s for positive arguments.

    Callers form differences G(s; shat) - G(s; s); the difference is the
    Bregman divergence of u -> u log u - u and is nonnegative.
    """
    if s <= 0 or shat <= 0:
        raise ValueError(f"bregman_gap needs positive arguments, got ({s}, {shat})")
    return s * math.log(s / shat) - s


def score_entropy(
    spec: ModelSpec,
    t: float,
    shat,
    weight_order: str = "as_written",
) -> float:
    """Expected Bregman mismatch between an estimator and the exact score.

    Averages, over states drawn from the time-t marginal, the rate-weighted
    sum of ``shat - s - s log(shat/s)`` across supported transitions.  The
    default weights a transition (y, x) by the forward rate from y to x, the
    unmasking direction; ``weight_order="transposed"`` instead sums over the
    masking direction as a sensitivity toggle, evaluating both scores on the
    inverted ratio.
    """
    if weight_order not in ("as_written", "transposed"):
        raise ValueError(f"unknown weight_order {weight_order!r}")
    table = transition_table(spec)
    if len(table) == 0:
        return 0.0
    q = marginal(spec, t)
    exact = ExactRatioScore(spec)
    s_vals = exact.batch(t, table)
    shat_vals = np.asarray(shat.batch(t, table), dtype=np.float64)
    if weight_order == "as_written":
        weights = q[table.xi]
    else:
        # masking direction: state is the unmasked end, ratios invert
        weights = q[table.yi]
        with np.errstate(divide="ignore"):
            s_vals = 1.0 / s_vals
            shat_vals = 1.0 / shat_vals
    pos = (weights > 0.0) & (s_vals > 0.0)
    s_p, sh_p, w_p = s_vals[pos], shat_vals[pos], weights[pos]
    terms = sh_p - s_p - s_p * np.log(sh_p / s_p)
    total = float(np.sum(w_p * terms))
    # zero-score rows contribute shat alone (the Bregman terms vanish)
    zero = (weights > 0.0) & (s_vals == 0.0)
    total += float(np.sum(weights[zero] * shat_vals[zero]))
    if total < -1e-9:
        raise AssertionError(f"score entropy came out negative: {total}")
    return max(total, 0.0)


def empirical_dist(
    samples: Sequence[Sequence[int]], spec: ModelSpec, alpha: float = 0.0
) -> np.ndarray:
    """Smoothed histogram of sampled states as a dense distribution.

    With ``alpha = 0`` this is the raw empirical law (use for TV); a small
    ``alpha`` such as ``1/len(samples)`` keeps KL against it finite.
    """
    if len(samples) == 0:
        raise ValueError("need at least one sample")
    counts = np.zeros(spec.n_states, dtype=np.float64)
    for state in samples:
        counts[encode(state, spec)] += 1.0
    m = float(len(samples))
    return dense_dist((counts + alpha) / (m + alpha * spec.n_states))


def counts_to_dist(counts: np.ndarray, spec: ModelSpec, alpha: float = 0.0) -> np.ndarray:
    """Same smoothing as :func:`empirical_dist` for a precomputed histogram."""
    counts = np.asarray(counts, dtype=np.float64)
    m = float(counts.sum())
    if m <= 0:
        raise ValueError("need at least one sample")
    return dense_dist((counts + alpha) / (m + alpha * spec.n_states))


@dataclass
class MetricsRecord:
    """One experiment result row; serializes to the fixed CSV schema."""

    spec_hash: str
    sampler: str
    S: int
    d: int
    T: float
    delta: float
    N: int
    seed: int
    kl: float
    tv: float
    score_entropy_sum: float
    steps: float
    wallclock_s: float

    def __post_init__(self) -> None:
        for name in ("kl", "tv", "score_entropy_sum"):
            v = getattr(self, name)
            if not math.isnan(v) and v < -1e-15:
                raise ValueError(f"{name} must be nonnegative, got {v}")
        if self.steps < 0:
            raise ValueError(f"steps must be nonnegative, got {self.steps}")

    def to_row(self) -> list[str]:
        def fmt(v) -> str:
            if isinstance(v, float):
                return repr(v)
            return str(v)

        return [fmt(getattr(self, col)) for col in CSV_COLUMNS]


def write_csv(path: str, records: Sequence[MetricsRecord]) -> None:
    """Write records in the fixed column order, sorted on all non-clock fields."""

    rows = [rec.to_row() for rec in records]
    rows.sort(key=lambda r: r[:-1])
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(CSV_COLUMNS) + "\n")
        for row in rows:
            fh.write(",".join(row) + "\n")
