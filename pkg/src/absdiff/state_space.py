"""Canonical encoding of states and distributions over ``[S]^d``.

States are length-``d`` token vectors over a vocabulary of size ``S`` with a
distinguished absorbing (mask) token.  Distributions are dense probability
vectors over all ``S**d`` joint states, indexed mixed-radix with dimension 0
least significant: ``index = sum_i x[i] * S**i``.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

# Dense enumeration is the whole point of this package; refuse to go past
# this many joint states rather than silently approximate.
ENUMERATION_CAP = 10_000_000

DIST_TOL = 1e-12

StateVec = tuple[int, ...]


def _as_dist(mass: Iterable[float], *, tol: float = DIST_TOL) -> np.ndarray:
    arr = np.asarray(mass, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"distribution must be a flat vector, got shape {arr.shape}")
    if np.any(arr < 0):
        bad = int(np.argmin(arr))
        raise ValueError(f"negative mass {arr[bad]} at index {bad}")
    total = float(arr.sum())
    if abs(total - 1.0) > tol:
        raise ValueError(f"mass sums to {total}, not 1 within {tol}")
    arr = arr.copy()
    arr.flags.writeable = False
    return arr


def dense_dist(mass: Iterable[float]) -> np.ndarray:
    """Validate and freeze a probability vector over joint states."""
    return _as_dist(mass)


@dataclass(frozen=True)
class ModelSpec:
    """Vocabulary size, dimension, mask token, and data distribution.

    ``q0`` is a dense distribution over all ``S**d`` joint states.  The mask
    token index is configurable; nothing in the package assumes it equals
    ``S - 1``.
    """

    S: int
    d: int
    mask: int
    q0: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        if self.S < 2:
            raise ValueError(f"vocabulary size must be >= 2, got {self.S}")
        if self.d < 1:
            raise ValueError(f"dimension must be >= 1, got {self.d}")
        if not 0 <= self.mask < self.S:
            raise ValueError(f"mask token {self.mask} outside [0, {self.S})")
        n = self.S**self.d
        if n > ENUMERATION_CAP:
            raise ValueError(
                f"S**d = {n} exceeds enumeration cap {ENUMERATION_CAP}"
            )
        q0 = _as_dist(self.q0)
        if q0.shape != (n,):
            raise ValueError(f"q0 has {q0.shape[0]} entries, expected {n}")
        object.__setattr__(self, "q0", q0)

    @property
    def n_states(self) -> int:
        return self.S**self.d

    def q0_tensor(self) -> np.ndarray:
        """q0 reshaped to ``(S,)*d`` with axis i <-> dimension i."""
        return self.q0.reshape((self.S,) * self.d, order="F")

    def non_mask_tokens(self) -> np.ndarray:
        return np.array([a for a in range(self.S) if a != self.mask], dtype=np.int64)


def encode(state: Sequence[int], spec: ModelSpec) -> int:
    """Mixed-radix index of a state, dimension 0 least significant."""
    if len(state) != spec.d:
        raise ValueError(f"state has {len(state)} tokens, spec.d = {spec.d}")
    idx = 0
    for i in reversed(range(spec.d)):
        tok = int(state[i])
        if not 0 <= tok < spec.S:
            raise ValueError(f"token {tok} at dimension {i} outside [0, {spec.S})")
        idx = idx * spec.S + tok
    return idx


def decode(index: int, spec: ModelSpec) -> StateVec:
    """Inverse of :func:`encode`."""
    if not 0 <= index < spec.n_states:
        raise ValueError(f"index {index} outside [0, {spec.n_states})")
    out = []
    rem = int(index)
    for _ in range(spec.d):
        out.append(rem % spec.S)
        rem //= spec.S
    return tuple(out)


def mask_count(state: Sequence[int], spec: ModelSpec) -> int:
    """Number of masked coordinates of a state."""
    if len(state) != spec.d:
        raise ValueError(f"state has {len(state)} tokens, spec.d = {spec.d}")
    return sum(1 for tok in state if tok == spec.mask)


def states_array(spec: ModelSpec) -> np.ndarray:
    """All states as an ``(S**d, d)`` int array, row i = decode(i)."""
    n, S, d = spec.n_states, spec.S, spec.d
    idx = np.arange(n, dtype=np.int64)
    cols = [(idx // S**i) % S for i in range(d)]
    return np.stack(cols, axis=1)


def mask_counts_array(spec: ModelSpec) -> np.ndarray:
    """mask_count for every state index at once."""
    return (states_array(spec) == spec.mask).sum(axis=1)


# -- q0 constructors ---------------------------------------------------------

def uniform_q0(S: int, d: int) -> np.ndarray:
    n = S**d
    return dense_dist(np.full(n, 1.0 / n))

def point_q0(S: int, d: int, index: int) -> np.ndarray:
    mass = np.zeros(S**d)
    mass[index] = 1.0
    return dense_dist(mass)

def dirichlet_q0(S: int, d: int, seed: int, alpha: float) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return dense_dist(rng.dirichlet(np.full(S**d, alpha)))

def product_q0(per_dim: Sequence[Sequence[float]]) -> np.ndarray:
    """Joint distribution with independent dimensions.

    ``per_dim[i]`` is the length-S marginal of dimension i.
    """
    mass = np.asarray(per_dim[0], dtype=np.float64)
    for factor in per_dim[1:]:
        # dimension 0 least significant: earlier dims vary fastest
        mass = np.outer(mass, np.asarray(factor, dtype=np.float64)).ravel(order="F")
    return dense_dist(mass)

def maskfree_uniform_q0(S: int, d: int, mask: int) -> np.ndarray:
    per_dim = np.full(S, 1.0 / (S - 1))
    per_dim[mask] = 0.0
    return product_q0([per_dim] * d)


# -- config loading ----------------------------------------------------------

def parse_q0(field_value, S: int, d: int) -> np.ndarray:
    """Parse the ``q0`` entry of a spec config.

    Accepts ``"uniform"``, ``"point:<index>"``, ``"dirichlet:<seed>,<alpha>"``
    or an explicit mass array.
    """
    if isinstance(field_value, str):
        if field_value == "uniform":
            return uniform_q0(S, d)
        if field_value.startswith("point:"):
            return point_q0(S, d, int(field_value.split(":", 1)[1]))
        if field_value.startswith("dirichlet:"):
            seed_s, alpha_s = field_value.split(":", 1)[1].split(",")
            return dirichlet_q0(S, d, int(seed_s), float(alpha_s))
        raise ValueError(f"unrecognized q0 recipe {field_value!r}")
    return dense_dist(field_value)


def spec_from_dict(cfg: dict) -> ModelSpec:
    S = int(cfg["S"])
    d = int(cfg["d"])
    mask = int(cfg.get("mask", S - 1))
    q0 = parse_q0(cfg["q0"], S, d)
    return ModelSpec(S=S, d=d, mask=mask, q0=q0)


def load_spec(path: str) -> ModelSpec:
    """Load a ModelSpec from a JSON config file (keys S, d, mask, q0)."""
    with open(path) as fh:
        return spec_from_dict(json.load(fh))


def spec_digest(spec: ModelSpec) -> str:
    """Stable short hash identifying a spec, used to key result rows."""
    payload = json.dumps(
        {
            "S": spec.S,
            "d": spec.d,
            "mask": spec.mask,
            "q0": [format(v, ".17g") for v in spec.q0],
        },
        separators=(",", ":"),
    )
    return hashlib.sha256(payload.encode()).hexdigest()[:12]
