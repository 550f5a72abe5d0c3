"""Finite Markov chains with exact (matrix-power) mixing diagnostics.

Distances to stationarity are computed from explicit powers of the
transition matrix, never from samples, so every quantity here is an exact
finite computation up to float roundoff.  Chains are small (at most a few
hundred states), which keeps dense matrix products cheap.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    DegenerateFitError,
    InvalidInputError,
    NumericError,
    PreconditionError,
)

MIXING_SCAN_CAP = 10**6
STATIONARY_ITER_CAP = 10**6
ROW_SUM_TOL = 1e-9
DIST_SUM_TOL = 1e-12
DEFAULT_STATIONARY_TOL = 1e-13

__all__ = [
    "FiniteMarkovChain",
    "MixingFit",
    "check_distribution",
    "tv_distance",
    "stationary_distribution",
    "d_max",
    "mixing_time",
    "t_delta",
    "fit_geometric_mixing",
    "l1_constant",
    "sample_trajectory",
    "check_irreducible_aperiodic",
    "chain_from_json",
]


def check_distribution(vec, tol: float = DIST_SUM_TOL, name: str = "distribution") -> np.ndarray:
    """Validate a probability vector: entries >= 0 and summing to 1 within tol."""
    v = np.asarray(vec, dtype=float)
    if v.ndim != 1 or v.size < 1:
        raise InvalidInputError(f"{name} must be a nonempty 1-d vector")
    if np.any(v < -tol):
        raise InvalidInputError(f"{name} has a negative entry: min={v.min()!r}")
    total = float(v.sum())
    if not math.isfinite(total) or abs(total - 1.0) > max(tol, 1e-12):
        raise InvalidInputError(f"{name} entries sum to {total!r}, not 1")
    return v


class FiniteMarkovChain:
    """Row-stochastic transition matrix over a finite labeled state space.

    Instances are immutable after construction and safe to share across
    threads; the internal caches only memoize deterministic quantities
    (stationary distribution, d_max values, the running matrix power).
    """

    def __init__(self, transition, labels: Sequence | None = None, row_tol: float = ROW_SUM_TOL):
        p = np.array(transition, dtype=float)
        if p.ndim != 2 or p.shape[0] != p.shape[1] or p.shape[0] < 1:
            raise InvalidInputError("transition must be a square n x n matrix with n >= 1")
        n = p.shape[0]
        if not np.all(np.isfinite(p)):
            raise InvalidInputError("transition contains non-finite entries")
        if np.any(p < -row_tol):
            raise InvalidInputError("transition has a negative entry")
        sums = p.sum(axis=1)
        bad = np.where(np.abs(sums - 1.0) > row_tol)[0]
        if bad.size:
            raise InvalidInputError(
                f"transition row {bad[0]} sums to {sums[bad[0]]!r}, not 1 (tol {row_tol})"
            )
        # normalize away load roundoff so rows satisfy the tight invariant
        p = np.clip(p, 0.0, None)
        p /= p.sum(axis=1, keepdims=True)
        p.setflags(write=False)
        self.transition = p
        self.n = n
        self.labels = list(labels) if labels is not None else list(range(n))
        if len(self.labels) != n:
            raise InvalidInputError(f"expected {n} labels, got {len(self.labels)}")
        self._mu: np.ndarray | None = None
        self._ergodic: bool | None = None
        self._dmax: list[float] = []  # d_max(k) for k = 0, 1, ..., len-1
        self._tail_k: int = 0
        self._tail_pow: np.ndarray = np.eye(n)
        self._cumrows: np.ndarray | None = None

    def __repr__(self) -> str:  # pragma: no cover
        return f"FiniteMarkovChain(n={self.n})"

    # -- cached helpers -------------------------------------------------

    def is_ergodic(self) -> bool:
        if self._ergodic is None:
            self._ergodic = check_irreducible_aperiodic(self)
        return self._ergodic

    def stationary(self, tol: float = DEFAULT_STATIONARY_TOL) -> np.ndarray:
        """Stationary distribution at the module default tolerance, memoized."""
        if self._mu is None:
            self._mu = stationary_distribution(self, tol)
        return self._mu

    def power(self, k: int) -> np.ndarray:
        """P^k by iterative multiplication, reusing the running tail power."""
        if k < 0:
            raise InvalidInputError("matrix power requires k >= 0")
        if k < self._tail_k:
            out = np.eye(self.n)
            for _ in range(k):
                out = out @ self.transition
            return out
        while self._tail_k < k:
            self._tail_pow = self._tail_pow @ self.transition
            self._tail_k += 1
        return self._tail_pow

    def _dmax_upto(self, k: int) -> None:
        """Extend the cached d_max sequence through index k."""
        mu = self.stationary()
        while len(self._dmax) <= k:
            pk = self.power(len(self._dmax))
            self._dmax.append(float(0.5 * np.abs(pk - mu).sum(axis=1).max()))

    def cumulative_rows(self) -> np.ndarray:
        if self._cumrows is None:
            c = np.cumsum(self.transition, axis=1)
            c[:, -1] = 1.0
            c.setflags(write=False)
            self._cumrows = c
        return self._cumrows


@dataclass(frozen=True)
class MixingFit:
    """Geometric-decay envelope d_max(k) <= c_const * rho**k plus the derived
    affine mixing-time constant l1 for a given Lipschitz constant."""

    c_const: float
    rho: float
    l1: float

    def __post_init__(self):
        if not (0.0 < self.rho < 1.0):
            raise InvalidInputError(f"rho must lie in (0,1), got {self.rho!r}")
        if self.c_const <= 0.0:
            raise InvalidInputError("c_const must be positive")

    @classmethod
    def from_chain(cls, chain: FiniteMarkovChain, k_max: int, lip: float) -> "MixingFit":
        c, rho = fit_geometric_mixing(chain, k_max)
        return cls(c, rho, l1_constant(c, rho, lip))


def tv_distance(nu1, nu2) -> float:
    """Total variation distance: half the l1 distance between two
    probability vectors of equal dimension."""
    v1 = np.asarray(nu1, dtype=float)
    v2 = np.asarray(nu2, dtype=float)
    if v1.shape != v2.shape or v1.ndim != 1:
        raise InvalidInputError(f"dimension mismatch: {v1.shape} vs {v2.shape}")
    return float(0.5 * np.abs(v1 - v2).sum())


def stationary_distribution(chain: FiniteMarkovChain, tol: float = DEFAULT_STATIONARY_TOL) -> np.ndarray:
    """Unique stationary distribution of an ergodic chain.

    Power iteration on the transposed operator; on return mu satisfies
    tv_distance(mu @ P, mu) <= tol.  A dense linear solve is deliberately
    left to the tests as an independent oracle.
    """
    if tol <= 0.0:
        raise InvalidInputError("tol must be positive")
    if not chain.is_ergodic():
        raise PreconditionError("chain is not irreducible and aperiodic")
    p = chain.transition
    mu = np.full(chain.n, 1.0 / chain.n)
    for _ in range(STATIONARY_ITER_CAP):
        nxt = mu @ p
        if tv_distance(nxt, mu) <= tol:
            # nxt is one step closer to the fixed point than mu and already
            # satisfies the advertised residual, so return it
            if tv_distance(nxt @ p, nxt) <= tol:
                out = nxt / nxt.sum()
                out.setflags(write=False)
                return out
        mu = nxt
    raise NumericError(f"stationary distribution did not converge within {STATIONARY_ITER_CAP} iterations")


def d_max(chain: FiniteMarkovChain, k: int) -> float:
    """Worst-case total variation distance between the k-step distribution
    from any start state and the stationary distribution."""
    if k < 0:
        raise InvalidInputError("k must be >= 0")
    chain._dmax_upto(k)
    return chain._dmax[k]


def mixing_time(chain: FiniteMarkovChain, delta: float) -> int:
    """Smallest k with d_max(k) <= delta, scanning k = 0, 1, 2, ..."""
    if delta <= 0.0:
        raise InvalidInputError("delta must be positive")
    if delta >= 1.0:
        return 0  # total variation distance never exceeds 1
    chain._dmax_upto(0)
    while chain._dmax[-1] > delta:
        if len(chain._dmax) > MIXING_SCAN_CAP:
            raise NumericError(
                f"chain did not mix to delta={delta!r} within {MIXING_SCAN_CAP} steps"
            )
        chain._dmax_upto(len(chain._dmax))
    arr = np.asarray(chain._dmax)
    return int(np.argmax(arr <= delta))


def t_delta(chain: FiniteMarkovChain, delta: float, lip: float) -> int:
    """Mixing time at precision delta / (2 * lip), coupling the chain with the
    Lipschitz constant of the update map."""
    if delta <= 0.0 or lip <= 0.0:
        raise InvalidInputError("delta and lip must be positive")
    return mixing_time(chain, delta / (2.0 * lip))


def fit_geometric_mixing(chain: FiniteMarkovChain, k_max: int) -> tuple[float, float]:
    """Fit d_max(k) ~ c * rho**k by least squares on the log scale.

    After the regression, c is inflated to the smallest value making the
    envelope d_max(k) <= c * rho**k hold exactly on every sampled k whose
    d_max exceeds the 1e-14 numerical floor.
    """
    if k_max < 5:
        raise InvalidInputError("k_max must be at least 5")
    ks = np.arange(k_max + 1)
    ds = np.array([d_max(chain, int(k)) for k in ks])
    mask = ds > 1e-14
    if not mask.any():
        raise DegenerateFitError("all d_max values are numerically zero")
    if mask.sum() >= 2:
        slope, _ = np.polyfit(ks[mask], np.log(ds[mask]), 1)
        rho = float(np.exp(slope))
        rho = min(max(rho, 1e-12), 1.0 - 1e-12)
    else:
        # a single positive point (e.g. rows all equal to mu): any decay rate
        # is admissible once c covers that point
        rho = 0.5
    c = float(np.max(ds[mask] / rho ** ks[mask]))
    return c, rho


def l1_constant(c_const: float, rho: float, lip: float) -> float:
    """Affine mixing-time coefficient max(1, ln(2*c*L)) / ln(1/rho)."""
    if not (0.0 < rho < 1.0):
        raise InvalidInputError(f"rho must lie in (0,1), got {rho!r}")
    if c_const <= 0.0 or lip <= 0.0:
        raise InvalidInputError("c_const and lip must be positive")
    return max(1.0, math.log(2.0 * c_const * lip)) / math.log(1.0 / rho)


def sample_trajectory(chain: FiniteMarkovChain, x0: int, length: int, seed: int) -> np.ndarray:
    """Sample a length-`length` state sequence starting at x0.

    Deterministic for a fixed seed; the RNG is local to the call.
    """
    if not (0 <= x0 < chain.n):
        raise InvalidInputError(f"x0={x0} outside state range [0, {chain.n})")
    if length < 0:
        raise InvalidInputError("length must be >= 0")
    rng = np.random.default_rng(seed)
    cum = chain.cumulative_rows()
    out = np.empty(length, dtype=np.int64)
    state = x0
    draws = rng.random(length)
    for i in range(length):
        out[i] = state
        state = int(np.searchsorted(cum[state], draws[i], side="right"))
    return out


def check_irreducible_aperiodic(chain: FiniteMarkovChain) -> bool:
    """True iff the positive-entry digraph is strongly connected with
    aperiodic cycle structure (gcd of cycle lengths 1)."""
    p = chain.transition
    n = chain.n
    adj = [np.nonzero(p[i] > 0.0)[0] for i in range(n)]
    radj = [np.nonzero(p[:, j] > 0.0)[0] for j in range(n)]

    def reaches_all(neighbors) -> bool:
        seen = np.zeros(n, dtype=bool)
        seen[0] = True
        stack = [0]
        while stack:
            u = stack.pop()
            for v in neighbors[u]:
                if not seen[v]:
                    seen[v] = True
                    stack.append(int(v))
        return bool(seen.all())

    if not (reaches_all(adj) and reaches_all(radj)):
        return False

    # period = gcd over edges (u -> v) of level[u] + 1 - level[v] on a BFS tree
    level = np.full(n, -1, dtype=np.int64)
    level[0] = 0
    frontier = [0]
    while frontier:
        nxt = []
        for u in frontier:
            for v in adj[u]:
                if level[v] < 0:
                    level[v] = level[u] + 1
                    nxt.append(int(v))
        frontier = nxt
    g = 0
    for u in range(n):
        for v in adj[u]:
            g = math.gcd(g, int(level[u] + 1 - level[v]))
            if g == 1:
                return True
    return g == 1


def chain_from_json(source) -> FiniteMarkovChain:
    """Load a chain from {"n": int, "transition": [[...], ...], "labels": [...]}.

    Accepts a path, a JSON string, or an already-parsed dict.  Row sums are
    validated with tolerance 1e-9 and then renormalized exactly.
    """
    doc = _load_json_doc(source, "chain")
    if "transition" not in doc:
        raise InvalidInputError("chain document missing field 'transition'")
    transition = doc["transition"]
    labels = doc.get("labels")
    chain = FiniteMarkovChain(transition, labels=labels, row_tol=ROW_SUM_TOL)
    if "n" in doc and int(doc["n"]) != chain.n:
        raise InvalidInputError(f"field 'n'={doc['n']} but transition is {chain.n} x {chain.n}")
    return chain


def _load_json_doc(source, what: str) -> dict:
    if isinstance(source, dict):
        return source
    if isinstance(source, (str, Path)) and Path(str(source)).exists():
        text = Path(source).read_text()
    elif isinstance(source, str):
        text = source
    else:
        raise InvalidInputError(f"cannot load {what} from {type(source).__name__}")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InvalidInputError(f"malformed {what} JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise InvalidInputError(f"{what} JSON must be an object")
    return doc
