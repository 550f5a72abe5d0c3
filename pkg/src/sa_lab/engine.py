"""Generic nonlinear stochastic approximation driven by a Markov noise chain.

The iteration is theta_{k+1} = theta_k + eps_k * F(X_k, theta_k) along a
sampled trajectory of the noise chain.  Everything else in this module is
exact arithmetic: expected updates and mixing-bias norms are finite sums
over the state space computed from matrix powers, never from samples.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import InvalidInputError, NumericError, PreconditionError
from .markov import FiniteMarkovChain, t_delta
from .schedules import StepSchedule

__all__ = [
    "SaProblem",
    "RunResult",
    "MseCurve",
    "run_sa",
    "estimate_mse",
    "expected_update",
    "bias_norm",
    "verify_condition1",
    "make_t_of",
    "condition1_recipe",
]

CONDITION1_HORIZON = 10**6


@dataclass
class SaProblem:
    """A noise chain plus update map F(x, theta) and its regularity constants.

    `lip` is a Lipschitz constant of F in theta that also dominates
    max_x ||F(x, 0)||; `drift` is the negative-drift coefficient of the mean
    field when one has been certified (None means unknown/uncertified, which
    is enough to run the iteration but not to verify step conditions or
    evaluate bounds).  `theta_star` is the root of the mean field when known.
    """

    noise: FiniteMarkovChain
    update_map: Callable[[int, np.ndarray], np.ndarray]
    lip: float
    dim: int
    drift: float | None = None
    theta_star: np.ndarray | None = None

    def __post_init__(self):
        if self.lip <= 0.0:
            raise InvalidInputError("lip must be positive")
        if self.drift is not None and self.drift <= 0.0:
            raise InvalidInputError("drift must be positive when given")
        if self.dim < 1:
            raise InvalidInputError("dim must be >= 1")
        if self.theta_star is not None:
            ts = np.asarray(self.theta_star, dtype=float)
            if ts.shape != (self.dim,):
                raise InvalidInputError("theta_star has wrong dimension")
            self.theta_star = ts


@dataclass
class RunResult:
    """Checkpoints of one SA run.

    `values` holds ||theta_k - theta*||^2 when the problem knows theta*,
    otherwise ||theta_k||^2.  Snapshots of the full iterate are kept only
    when requested.
    """

    seed: int
    ks: np.ndarray
    values: np.ndarray
    diverged: bool
    final_theta: np.ndarray
    snapshots: list[np.ndarray] | None = None

    @property
    def checkpoints(self) -> list[tuple[int, float]]:
        return list(zip((int(k) for k in self.ks), (float(v) for v in self.values)))

    def to_csv(self, path) -> None:
        write_curve_csv(path, self.ks, self.values, None)


@dataclass
class MseCurve:
    """Replication-averaged squared error per checkpoint."""

    ks: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    reps: int
    base_seed: int
    divergent_fraction: float = 0.0

    def to_csv(self, path) -> None:
        write_curve_csv(path, self.ks, self.mean, self.stderr)


def write_curve_csv(path, ks, values, stderr) -> None:
    """CSV with header k,value,stderr (stderr column empty when absent)."""
    lines = ["k,value,stderr"]
    for i, k in enumerate(ks):
        err = "" if stderr is None else repr(float(stderr[i]))
        lines.append(f"{int(k)},{float(values[i])!r},{err}")
    Path(path).write_text("\n".join(lines) + "\n")


def _default_divergence_threshold(theta0: np.ndarray) -> float:
    return 1e6 * (float(np.linalg.norm(theta0)) + 1.0)


def _error_value(theta: np.ndarray, theta_star: np.ndarray | None) -> float:
    ref = theta if theta_star is None else theta - theta_star
    return float(ref @ ref)


def _simulate(
    problem: SaProblem,
    schedule: StepSchedule,
    theta0: np.ndarray,
    x0: int,
    n_steps: int,
    seed: int,
    record_ks: np.ndarray,
    divergence_threshold: float,
    store_snapshots: bool,
) -> RunResult:
    rng = np.random.default_rng(seed)
    cum = problem.noise.cumulative_rows()
    eps = schedule.steps(n_steps)
    draws = rng.random(n_steps)
    theta = np.array(theta0, dtype=float)
    f = problem.update_map
    state = x0

    ks_out: list[int] = []
    vals_out: list[float] = []
    snaps: list[np.ndarray] | None = [] if store_snapshots else None
    diverged = False
    rec_idx = 0
    n_rec = len(record_ks)

    for k in range(n_steps + 1):
        if rec_idx < n_rec and record_ks[rec_idx] == k:
            ks_out.append(k)
            vals_out.append(_error_value(theta, problem.theta_star))
            if snaps is not None:
                snaps.append(theta.copy())
            rec_idx += 1
        if k == n_steps:
            break
        if float(theta @ theta) > divergence_threshold * divergence_threshold:
            diverged = True
            if not ks_out or ks_out[-1] != k:
                ks_out.append(k)
                vals_out.append(_error_value(theta, problem.theta_star))
                if snaps is not None:
                    snaps.append(theta.copy())
            break
        theta = theta + eps[k] * f(state, theta)
        if not np.all(np.isfinite(theta)):
            raise NumericError(f"non-finite iterate at step k={k + 1}")
        state = int(np.searchsorted(cum[state], draws[k], side="right"))

    return RunResult(
        seed=seed,
        ks=np.asarray(ks_out, dtype=np.int64),
        values=np.asarray(vals_out, dtype=float),
        diverged=diverged,
        final_theta=theta,
        snapshots=snaps,
    )


def run_sa(
    problem: SaProblem,
    schedule: StepSchedule,
    theta0,
    x0: int,
    n_steps: int,
    seed: int,
    checkpoint_every: int | None = None,
    divergence_threshold: float | None = None,
    store_snapshots: bool = False,
) -> RunResult:
    """One SA run along a freshly sampled noise trajectory.

    Checkpoints are taken at k = 0, checkpoint_every, 2*checkpoint_every, ...
    and always at k = n_steps.  The run stops early (flagging `diverged`)
    once ||theta_k|| exceeds the divergence threshold, which defaults to
    1e6 * (||theta0|| + 1).
    """
    theta0 = np.asarray(theta0, dtype=float)
    if theta0.shape != (problem.dim,):
        raise InvalidInputError(f"theta0 must have shape ({problem.dim},)")
    if not (0 <= x0 < problem.noise.n):
        raise InvalidInputError(f"x0={x0} outside noise state range")
    if n_steps < 1:
        raise InvalidInputError("n_steps must be >= 1")
    if divergence_threshold is None:
        divergence_threshold = _default_divergence_threshold(theta0)
    if checkpoint_every is None:
        record = np.array([0, n_steps], dtype=np.int64)
    else:
        if checkpoint_every < 1:
            raise InvalidInputError("checkpoint_every must be >= 1")
        record = np.arange(0, n_steps + 1, checkpoint_every, dtype=np.int64)
        if record[-1] != n_steps:
            record = np.append(record, n_steps)
    return _simulate(
        problem, schedule, theta0, x0, n_steps, seed, record, divergence_threshold, store_snapshots
    )


def estimate_mse(
    problem: SaProblem,
    schedule: StepSchedule,
    theta0,
    n_steps: int,
    reps: int,
    base_seed: int,
    checkpoints: Sequence[int],
    x0: int | Sequence[int] = 0,
    divergence_threshold: float | None = None,
) -> MseCurve:
    """Mean of ||theta_k - theta*||^2 over independent replications.

    Replication r uses seed base_seed + r.  Diverged replications are
    excluded from the averages and reported via `divergent_fraction`.
    Results are a pure function of (base_seed, reps) regardless of the
    worker count (reductions happen in replication order).
    """
    if problem.theta_star is None:
        raise PreconditionError("estimate_mse requires a problem with known theta_star")
    if reps < 1:
        raise InvalidInputError("reps must be >= 1")
    theta0 = np.asarray(theta0, dtype=float)
    record = np.unique(np.asarray(checkpoints, dtype=np.int64))
    if record.size == 0 or record[0] < 0 or record[-1] > n_steps:
        raise InvalidInputError("checkpoints must be within [0, n_steps]")
    if divergence_threshold is None:
        divergence_threshold = _default_divergence_threshold(theta0)
    starts = list(x0) if isinstance(x0, (list, tuple, np.ndarray)) else [int(x0)] * reps
    if len(starts) != reps:
        raise InvalidInputError("per-replication x0 sequence must have length reps")

    def one(r: int) -> RunResult:
        return _simulate(
            problem,
            schedule,
            theta0,
            starts[r],
            n_steps,
            base_seed + r,
            record,
            divergence_threshold,
            False,
        )

    workers = int(os.environ.get("SA_LAB_THREADS", "1") or "1")
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, range(reps)))
    else:
        results = [one(r) for r in range(reps)]

    kept = np.array([not r.diverged for r in results])
    n_kept = int(kept.sum())
    if n_kept == 0:
        nan = np.full(record.size, np.nan)
        return MseCurve(record, nan, nan.copy(), reps, base_seed, 1.0)
    mat = np.stack([results[r].values for r in range(reps) if kept[r]])
    mean = mat.mean(axis=0)
    if n_kept > 1:
        stderr = mat.std(axis=0, ddof=1) / math.sqrt(n_kept)
    else:
        stderr = np.zeros(record.size)
    return MseCurve(record, mean, stderr, reps, base_seed, 1.0 - n_kept / reps)


def expected_update(problem: SaProblem, theta) -> np.ndarray:
    """Exact mean field: sum over states of mu(x) * F(x, theta)."""
    theta = np.asarray(theta, dtype=float)
    mu = problem.noise.stationary()
    out = np.zeros(problem.dim)
    for x in range(problem.noise.n):
        out += mu[x] * problem.update_map(x, theta)
    return out


def bias_norm(problem: SaProblem, theta, x0: int, k: int) -> float:
    """Norm of the k-step Markovian bias from start state x0.

    || sum_y P^k(x0, y) F(y, theta) - mean_field(theta) ||, with P^k computed
    exactly by repeated matrix multiplication.
    """
    if k < 0:
        raise InvalidInputError("k must be >= 0")
    if not (0 <= x0 < problem.noise.n):
        raise InvalidInputError("x0 outside noise state range")
    theta = np.asarray(theta, dtype=float)
    row = problem.noise.power(k)[x0]
    mu = problem.noise.stationary()
    acc = np.zeros(problem.dim)
    for y in range(problem.noise.n):
        w = row[y] - mu[y]
        if w != 0.0:
            acc += w * problem.update_map(y, theta)
    return float(np.linalg.norm(acc))


def make_t_of(chain: FiniteMarkovChain, lip: float, schedule: StepSchedule) -> Callable[[int], int]:
    """Per-iteration mixing time t_k at precision eps_k for the given chain."""

    def t_of(k: int) -> int:
        return t_delta(chain, schedule.step(k), lip)

    return t_of


def verify_condition1(
    schedule: StepSchedule,
    lip: float,
    drift: float,
    t_of: Callable[[int], int],
    horizon: int = CONDITION1_HORIZON,
) -> int | None:
    """Smallest admissible burn-in index K for the step-size condition.

    Checks, for every k in [K, horizon]: the mixing window is well defined
    (k >= t_k) and the windowed step sum eps_{k - t_k .. k - 1} stays within
    drift / (114 * lip^2); additionally the head sum eps_{0..K-1} must stay
    within 1 / (4 * lip).  Returns None when no K <= horizon works.

    Boundary equality of the window sum is accepted: the constant-step
    analysis places K exactly at the mixing time t_eps, where the window
    sum sits exactly on the threshold.  For constant schedules the scan is
    exact; for polynomial schedules the window sum is eventually
    decreasing, so a clean tail up to the horizon is decisive there too.
    """
    if lip <= 0.0 or drift <= 0.0:
        raise InvalidInputError("lip and drift must be positive")
    if horizon < 1:
        raise InvalidInputError("horizon must be >= 1")
    window_cap = drift / (114.0 * lip * lip)
    head_cap = 1.0 / (4.0 * lip)

    if schedule.kind == "constant":
        eps = schedule.eps
        t_eps = t_of(0)
        if eps * t_eps > window_cap:
            return None
        k_start = max(t_eps, 1)
        if eps * k_start > head_cap:
            return None
        return k_start

    cum = np.concatenate(([0.0], np.cumsum(schedule.steps(horizon))))
    last_bad = 0
    for k in range(1, horizon + 1):
        tk = t_of(k)
        if k < tk:
            last_bad = k
            continue
        if cum[k] - cum[k - tk] > window_cap:
            last_bad = k
    k_start = last_bad + 1
    if k_start > horizon:
        return None
    if cum[k_start] > head_cap:
        return None
    return k_start


def condition1_recipe(
    eps: float, xi: float, lip: float, drift: float, l1: float
) -> tuple[float, int]:
    """Sufficient (not minimal) offset h and burn-in K for eps/(k+h)**xi steps.

    Closed-form construction from the affine mixing-time constant l1; the
    direct scan in `verify_condition1` typically certifies a much smaller K.
    Requires parameters large enough that the log factor is positive.
    """
    if min(eps, lip, drift, l1) <= 0.0 or not (0.0 < xi <= 1.0):
        raise InvalidInputError("eps, lip, drift, l1 must be positive and xi in (0,1]")
    n_extra = max(0.0, l1 * (math.log(1.0 + drift / (114.0 * lip * lip)) + 1.0 - math.log(eps)))
    base = l1 + n_extra
    if base <= 1.0:
        raise InvalidInputError("recipe needs l1 + N > 1 so the log factor is positive")
    h = (228.0 * eps * lip * lip * base * math.log(base) / drift) ** (1.0 / xi)
    k_start = int(math.ceil(drift * h**xi / (114.0 * eps * lip * lip)))
    return h, k_start
