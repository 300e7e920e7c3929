"""Reverse-time samplers: initialization, schedules, jump simulation.

Two samplers share the same estimated reverse rates (forward rate times
estimated score, supported only on unmasking moves):

* Poisson leaping holds rates at the start of each interval and applies all
  fired jumps at once; within one dimension, simultaneous fires for several
  targets resolve by a uniform choice among the distinct fired targets.
* Thinned-clock simulation draws a dominating Poisson number of candidate
  times per interval and accepts each transition with probability rate over
  intensity, which simulates the estimated reverse chain exactly.

``exact_law`` integrates or composes the corresponding laws in closed form
for validation on enumerable state spaces.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .score_oracle import compute_gamma, transition_table
from .state_space import ModelSpec, StateVec, dense_dist

_MAX_GRID = 10_000_000


class IntensityOverflowError(RuntimeError):
    """Candidate-time transition probabilities exceeded one."""


class IntegrationError(RuntimeError):
    """Dense law integration lost positivity or mass."""


# -- schedules ---------------------------------------------------------------

@dataclass(frozen=True)
class Schedule:
    """Reverse-time grid 0 = t_0 < ... < t_N = T - delta."""

    T: float
    delta: float
    rule: str
    c: float
    grid: np.ndarray = field(repr=False)

    @property
    def n_steps(self) -> int:
        return len(self.grid) - 1

    def deltas(self) -> np.ndarray:
        return np.diff(self.grid)


def make_schedule(T: float, delta: float, rule: str, c: float) -> Schedule:
    """Build a reverse-time grid ending at ``T - delta``.

    ``rule="constant"`` uses uniform steps of size at most c.  With
    ``rule="geometric"`` each step is ``c * min(1, T - t_k)``, so steps shrink
    geometrically once within unit distance of the horizon; the final step is
    clamped to land exactly on ``T - delta``.  The geometric rule never
    reaches the horizon itself, so it requires ``delta > 0``.
    """
    if not 0 <= delta < T:
        raise ValueError(f"need 0 <= delta < T, got delta={delta}, T={T}")
    if c <= 0:
        raise ValueError(f"step scale c must be positive, got {c}")
    end = T - delta
    if rule == "constant":
        n = max(1, math.ceil(end / c - 1e-12))
        grid = np.linspace(0.0, end, n + 1)
    elif rule == "geometric":
        if delta == 0:
            raise ValueError("geometric rule with delta = 0 never terminates")
        pts = [0.0]
        while True:
            t = pts[-1]
            nxt = t + c * min(1.0, T - t)
            if nxt >= end - 1e-12 * max(1.0, end):
                pts.append(end)
                break
            pts.append(nxt)
            if len(pts) > _MAX_GRID:
                raise ValueError("schedule exceeded the grid size limit")
        grid = np.array(pts)
    else:
        raise ValueError(f"unknown schedule rule {rule!r}")
    grid.flags.writeable = False
    return Schedule(T=float(T), delta=float(delta), rule=rule, c=float(c), grid=grid)


# -- initialization ----------------------------------------------------------

@dataclass(frozen=True)
class InitDist:
    """Product initialization: mostly mask, small equal non-mask mass.

    Per dimension the mask token gets ``1 - eps_T`` and every other token
    ``eps_T / (S - 1)``, which keeps the divergence from the time-T marginal
    finite.  Defaults to ``eps_T = exp(-T)``.
    """

    spec: ModelSpec
    eps_T: float

    def __post_init__(self) -> None:
        if not 0 <= self.eps_T < 1:
            raise ValueError(f"eps_T must lie in [0, 1), got {self.eps_T}")

    @staticmethod
    def for_horizon(spec: ModelSpec, T: float, eps_T: float | None = None) -> "InitDist":
        return InitDist(spec=spec, eps_T=math.exp(-T) if eps_T is None else eps_T)

    def token_dist(self) -> np.ndarray:
        v = np.full(self.spec.S, self.eps_T / (self.spec.S - 1))
        v[self.spec.mask] = 1.0 - self.eps_T
        return v

    def dense(self) -> np.ndarray:
        mass = self.token_dist()
        for _ in range(self.spec.d - 1):
            mass = np.outer(mass, self.token_dist()).ravel(order="F")
        return dense_dist(mass)


def sample_init(initdist: InitDist, rng: np.random.Generator) -> StateVec:
    spec = initdist.spec
    non_mask = spec.non_mask_tokens()
    out = []
    for _ in range(spec.d):
        if rng.random() < 1.0 - initdist.eps_T:
            out.append(spec.mask)
        else:
            out.append(int(non_mask[rng.integers(0, spec.S - 1)]))
    return tuple(out)


# -- dominating intensities --------------------------------------------------

@dataclass(frozen=True)
class UniformizationConfig:
    """How per-interval dominating intensities are chosen.

    ``analytic`` uses the closed-form envelope ``kappa * d`` times the
    smaller of the inverse remaining forward time and, when running without
    early stopping, ``(S - 1)`` over the mask-likelihood ratio.  ``exact-sup``
    enumerates all states and maximizes the total outflow rate at the
    interval endpoints.  ``kappa`` must cover any excess of the estimator
    over the exact-score envelope (and the interior of the interval in
    exact-sup mode); candidate-probability overflow is detected fatally.
    """

    lambda_mode: str = "analytic"
    kappa: float = 1.25

    def __post_init__(self) -> None:
        if self.lambda_mode not in ("analytic", "exact-sup"):
            raise ValueError(f"unknown lambda mode {self.lambda_mode!r}")
        if self.kappa < 1.0:
            raise ValueError(f"kappa must be >= 1, got {self.kappa}")


def _outflow_sup(spec: ModelSpec, score, t_fwd: float) -> float:
    table = transition_table(spec)
    if len(table) == 0:
        return 0.0
    vals = score.batch(t_fwd, table)
    sums = np.bincount(table.xi, weights=vals, minlength=spec.n_states)
    return float(sums.max())


def lambda_for_interval(
    spec: ModelSpec,
    score,
    t_lo: float,
    t_hi: float,
    ucfg: UniformizationConfig,
    schedule: Schedule,
) -> float:
    """Dominating intensity for one reverse-time interval ``[t_lo, t_hi)``."""
    if ucfg.lambda_mode == "exact-sup":
        sup = max(
            _outflow_sup(spec, score, schedule.T - t_lo),
            _outflow_sup(spec, score, schedule.T - t_hi),
        )
        return ucfg.kappa * sup
    remaining = schedule.T - t_hi
    inv_time = 1.0 / remaining if remaining > 0 else math.inf
    if schedule.delta == 0:
        gamma = compute_gamma(spec)
        if gamma <= 0:
            raise ValueError(
                "analytic intensity without early stopping needs a positive "
                "mask-likelihood ratio"
            )
        bound = min(inv_time, (spec.S - 1) / gamma)
    else:
        bound = inv_time
    if not math.isfinite(bound):
        raise ValueError("dominating intensity is unbounded on this interval")
    return ucfg.kappa * spec.d * bound


def interval_intensities(
    spec: ModelSpec, score, schedule: Schedule, ucfg: UniformizationConfig
) -> np.ndarray:
    grid = schedule.grid
    return np.array(
        [
            lambda_for_interval(spec, score, grid[k], grid[k + 1], ucfg, schedule)
            for k in range(schedule.n_steps)
        ]
    )


# -- samplers ----------------------------------------------------------------

def _masked_dims(state: Sequence[int], spec: ModelSpec) -> list[int]:
    return [j for j, tok in enumerate(state) if tok == spec.mask]


def tau_leaping_run(
    spec: ModelSpec,
    score,
    schedule: Schedule,
    rng: np.random.Generator,
    init: InitDist | None = None,
    on_step: Callable[[StateVec], None] | None = None,
) -> StateVec:
    """Sample one trajectory of the Poisson-leaping reverse chain.

    Per interval, each masked dimension draws independent Poisson counts for
    every non-mask target with mean rate-times-interval; distinct fired
    targets resolve by a uniform choice.  Unmasked dimensions never change.
    """
    init = init or InitDist.for_horizon(spec, schedule.T)
    state = list(sample_init(init, rng))
    if on_step is not None:
        on_step(tuple(state))
    non_mask = spec.non_mask_tokens()
    grid = schedule.grid
    for k in range(schedule.n_steps):
        dt = grid[k + 1] - grid[k]
        t_fwd = schedule.T - grid[k]
        for j in _masked_dims(state, spec):
            mu = score.dim_values(t_fwd, tuple(state), j) * dt
            counts = rng.poisson(mu)
            fired = non_mask[counts >= 1]
            if fired.size == 1:
                state[j] = int(fired[0])
            elif fired.size > 1:
                state[j] = int(fired[rng.integers(0, fired.size)])
        if on_step is not None:
            on_step(tuple(state))
    return tuple(state)


def uniformization_run(
    spec: ModelSpec,
    score,
    schedule: Schedule,
    ucfg: UniformizationConfig,
    rng: np.random.Generator,
    init: InitDist | None = None,
    lambdas: np.ndarray | None = None,
    on_step: Callable[[StateVec], None] | None = None,
) -> tuple[StateVec, int]:
    """Simulate the estimated reverse chain exactly via a dominating clock.

    Returns the terminal state and the total number of candidate times
    (accepted or not), which is Poisson with mean ``sum(lambda_k * dt_k)``.
    """
    init = init or InitDist.for_horizon(spec, schedule.T)
    if lambdas is None:
        lambdas = interval_intensities(spec, score, schedule, ucfg)
    state = list(sample_init(init, rng))
    if on_step is not None:
        on_step(tuple(state))
    non_mask = spec.non_mask_tokens()
    grid = schedule.grid
    events = 0
    for k in range(schedule.n_steps):
        lam = lambdas[k]
        dt = grid[k + 1] - grid[k]
        m_k = int(rng.poisson(lam * dt)) if lam * dt > 0 else 0
        if m_k == 0:
            continue
        events += m_k
        times = np.sort(rng.uniform(grid[k], grid[k + 1], size=m_k))
        for sigma in times:
            dims = _masked_dims(state, spec)
            if not dims:
                continue
            probs = []
            moves = []
            for j in dims:
                vals = score.dim_values(schedule.T - sigma, tuple(state), j) / lam
                for a, p in zip(non_mask, vals):
                    if p > 0:
                        probs.append(p)
                        moves.append((j, int(a)))
            total = float(sum(probs))
            if total > 1.0 + 1e-12:
                raise IntensityOverflowError(
                    f"transition probability mass {total} exceeds 1 on interval "
                    f"{k}; the dominating intensity {lam} is too small"
                )
            u = rng.random()
            if u < total:
                acc = 0.0
                for p, (j, a) in zip(probs, moves):
                    acc += p
                    if u < acc:
                        state[j] = a
                        break
            if on_step is not None:
                on_step(tuple(state))
    return tuple(state), events


# -- exact laws --------------------------------------------------------------

def _rate_envelope(spec: ModelSpec, score, t_fwd: float, schedule: Schedule) -> float:
    """State-independent upper envelope on the total outflow rate."""
    inv_time = 1.0 / max(t_fwd, 1e-12)
    cap = getattr(score, "cap", None)
    per_pair = cap(t_fwd) if cap is not None else inv_time
    if schedule.delta == 0:
        gamma = compute_gamma(spec)
        if gamma > 0:
            per_pair = min(per_pair, 1.0 / gamma)
    # factor e covers mild estimator excess over the exact envelope
    return math.e * spec.d * (spec.S - 1) * min(per_pair, inv_time)


def _reverse_flow(spec: ModelSpec, score, table, t_rev: float, schedule: Schedule,
                  cache: dict) -> tuple[np.ndarray, np.ndarray]:
    key = round(t_rev, 15)
    hit = cache.get(key)
    if hit is not None:
        return hit
    vals = score.batch(schedule.T - t_rev, table)
    out_rate = np.bincount(table.xi, weights=vals, minlength=spec.n_states)
    if len(cache) > 8:
        cache.clear()
    cache[key] = (vals, out_rate)
    return vals, out_rate


def _integrate_reverse_law(
    spec: ModelSpec, score, schedule: Schedule, p0: np.ndarray, max_step: float
) -> np.ndarray:
    """Classical fourth-order fixed-grid integration of the estimated
    reverse master equation.

    The step never exceeds ``max_step`` and additionally shrinks with the
    closed-form rate envelope so that step times rate stays small; the grid
    depends only on the schedule, never on the evolving law.
    """
    table = transition_table(spec)
    cache: dict = {}

    def flow(t_rev: float, p: np.ndarray) -> np.ndarray:
        vals, out_rate = _reverse_flow(spec, score, table, t_rev, schedule, cache)
        dp = -p * out_rate
        np.add.at(dp, table.yi, p[table.xi] * vals)
        return dp

    p = np.array(p0, dtype=np.float64)
    t = 0.0
    end = schedule.T - schedule.delta
    while t < end - 1e-15:
        env = _rate_envelope(spec, score, schedule.T - t, schedule)
        h = min(max_step, end - t, 0.2 / env if env > 0 else max_step)
        k1 = flow(t, p)
        k2 = flow(t + 0.5 * h, p + 0.5 * h * k1)
        k3 = flow(t + 0.5 * h, p + 0.5 * h * k2)
        k4 = flow(t + h, p + h * k3)
        p = p + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        t += h
        neg = float(p.min())
        if neg < -1e-9:
            raise IntegrationError(f"law went negative ({neg}) at t={t}")
        np.clip(p, 0.0, None, out=p)
        mass = float(p.sum())
        if abs(mass - 1.0) > 1e-9 * max(h, 1e-6):
            raise IntegrationError(f"mass drifted to {mass} at t={t}")
        p /= mass
    return p


def _tau_dim_outcome(mu: np.ndarray, non_mask: np.ndarray, mask: int
                     ) -> list[tuple[int, float]]:
    """Per-dimension outcome law of one leap given target means ``mu``."""
    stay = float(np.exp(-mu.sum()))
    out = {mask: stay}
    fire = -np.expm1(-mu)  # P(target fired at least once)
    hold = np.exp(-mu)
    active = [i for i in range(len(mu)) if fire[i] > 0.0]
    for bits in range(1, 1 << len(active)):
        chosen = [active[i] for i in range(len(active)) if bits >> i & 1]
        prob = 1.0
        for i in active:
            prob *= fire[i] if i in chosen else hold[i]
        share = prob / len(chosen)
        for i in chosen:
            tok = int(non_mask[i])
            out[tok] = out.get(tok, 0.0) + share
    return list(out.items())


def _tau_step_law(
    spec: ModelSpec, p: np.ndarray, vals: np.ndarray, table, blocks, dt: float
) -> np.ndarray:
    non_mask = spec.non_mask_tokens()
    nxt = np.zeros_like(p)
    strides = [spec.S**j for j in range(spec.d)]
    for xi in np.nonzero(p > 0)[0]:
        px = float(p[xi])
        combos = [(int(xi), 1.0)]
        for j, sl in blocks.get(int(xi), ()):
            mu = vals[sl] * dt
            outcomes = _tau_dim_outcome(mu, non_mask, spec.mask)
            combos = [
                (base + (tok - spec.mask) * strides[j], cp * op)
                for base, cp in combos
                for tok, op in outcomes
                if op > 0.0
            ]
        for yi, prob in combos:
            nxt[yi] += px * prob
    return nxt


def _transition_blocks(spec: ModelSpec, table) -> dict[int, list[tuple[int, slice]]]:
    """Group table rows as contiguous (dimension, slice) runs per state."""
    blocks: dict[int, list[tuple[int, slice]]] = {}
    k = 0
    n = len(table)
    while k < n:
        xi, j = int(table.xi[k]), int(table.dim[k])
        end = k
        while end < n and table.xi[end] == xi and table.dim[end] == j:
            end += 1
        blocks.setdefault(xi, []).append((j, slice(k, end)))
        k = end
    return blocks


def exact_law(
    spec: ModelSpec,
    score,
    schedule: Schedule,
    kind: str,
    init: InitDist | None = None,
    max_step: float = 1e-3,
) -> np.ndarray:
    """Closed-form law of a sampler at the end of the schedule.

    ``kind="uniformization"`` integrates the estimated reverse master
    equation (the law the thinned-clock sampler simulates exactly).
    ``kind="tau-leaping"`` composes the exact one-step kernels implied by the
    Poisson-leap and uniform-collision rule.
    """
    init = init or InitDist.for_horizon(spec, schedule.T)
    p0 = init.dense()
    if kind == "uniformization":
        return dense_dist(_integrate_reverse_law(spec, score, schedule, p0, max_step))
    if kind != "tau-leaping":
        raise ValueError(f"unknown exact-law kind {kind!r}")
    table = transition_table(spec)
    blocks = _transition_blocks(spec, table)
    p = np.array(p0, dtype=np.float64)
    grid = schedule.grid
    for k in range(schedule.n_steps):
        vals = score.batch(schedule.T - grid[k], table)
        p = _tau_step_law(spec, p, vals, table, blocks, grid[k + 1] - grid[k])
        total = p.sum()
        if abs(total - 1.0) > 1e-9:
            raise IntegrationError(f"leap kernel lost mass: {total} at step {k}")
        p /= total
    return dense_dist(p)
