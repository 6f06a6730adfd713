"""Proximal stochastic derivative-free algorithm (PSDFA) and two baselines.

All three share the loop in :func:`_run`: iterate ``t = 0..T``, log the
trajectory, and return ``x_{t*}`` with ``P(t* = t)`` proportional to
``alpha_t``. The return index is drawn from its own child stream so it can be
fixed before the loop and the iterate captured on the fly.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import CompositeProblem, RngStream, unit_sphere_vector
from .errors import (CapabilityError, EstimatorFailure, ScheduleViolation, SolverError,
                     SubproblemError)
from .smoothing import schedule_params, two_point_estimate

log = logging.getLogger(__name__)

LAWS = ("constant-over-horizon", "inverse-sqrt", "constant")
SOLVERS = ("psdfa", "subgrad", "proxpt")


@dataclass(frozen=True)
class StepSchedule:
    """Step sizes ``alpha_t`` for ``t = 0..horizon``.

    ``constant-over-horizon``: ``alpha0 / sqrt(T+1)``; ``inverse-sqrt``:
    ``alpha0 / sqrt(t+1)``; ``constant``: ``alpha0``.
    """

    alpha0: float
    horizon: int
    law: str = "constant-over-horizon"

    def __post_init__(self):
        if not self.alpha0 > 0:
            raise ScheduleViolation(f"alpha0 must be positive, got {self.alpha0}")
        if self.horizon < 0:
            raise ScheduleViolation(f"horizon must be >= 0, got {self.horizon}")
        if self.law not in LAWS:
            raise ScheduleViolation(f"unknown schedule law {self.law!r}; expected one of {LAWS}")
        if self.alpha(0) > 0.5:
            raise ScheduleViolation(
                f"alpha_0={self.alpha(0)} > 1/2 breaks u2 <= u1/2 for u1=alpha^2, u2=alpha^3")

    def alpha(self, t: int) -> float:
        if self.law == "constant-over-horizon":
            return self.alpha0 / math.sqrt(self.horizon + 1)
        if self.law == "inverse-sqrt":
            return self.alpha0 / math.sqrt(t + 1)
        return self.alpha0

    def alphas(self) -> np.ndarray:
        return np.array([self.alpha(t) for t in range(self.horizon + 1)])

    def check_admissible(self, rho: float, rho_bar: float) -> None:
        """Require ``alpha_t < min(1/rho_bar, (rho_bar - rho)/2)``; laws are nonincreasing."""
        if not rho_bar > rho:
            raise ScheduleViolation(f"rho_bar={rho_bar} must exceed rho={rho}")
        bound = min(1.0 / rho_bar, (rho_bar - rho) / 2.0)
        if not self.alpha(0) < bound:
            raise ScheduleViolation(
                f"alpha_0={self.alpha(0):.6g} violates alpha_t < min(1/rho_bar, (rho_bar-rho)/2)"
                f"={bound:.6g}")

    def alphacond_bound(self, rho: float, rho_bar: float, lipschitz: float) -> float:
        """Step bound from the one-step descent recursion (reported, not enforced)."""
        delta0 = 1.0 - self.alpha(0) * rho_bar
        return (rho_bar - rho) / (1.0 + rho_bar ** 2 - 2.0 * rho_bar * rho + 4.0 * delta0 * lipschitz)


def default_rho_bar(rho: float) -> float:
    return 2.0 * rho + 1.0


@dataclass(frozen=True)
class SolverConfig:
    schedule: StepSchedule
    rho_bar: Optional[float] = None
    seed: int = 0
    log_stride: int = 1
    snapshot_stride: int = 0

    def __post_init__(self):
        if self.log_stride < 1:
            raise ValueError("log_stride must be >= 1")
        if self.snapshot_stride < 0:
            raise ValueError("snapshot_stride must be >= 0")

    def resolved_rho_bar(self, problem: CompositeProblem) -> float:
        return default_rho_bar(problem.rho_estimate) if self.rho_bar is None else self.rho_bar


@dataclass
class TracePoint:
    t: int
    alpha: float
    objective: float
    oracle_calls: int
    wall_ms: float
    x: Optional[np.ndarray] = None


@dataclass
class RunRecord:
    solver: str
    seed: int
    trajectory: list = field(default_factory=list)
    oracle_calls: int = 0
    t_star: int = 0
    x_star: Optional[np.ndarray] = None
    x_final: Optional[np.ndarray] = None
    x0: Optional[np.ndarray] = None
    wall_time: float = 0.0
    status: str = "ok"
    error: str = ""

    @property
    def initial_objective(self) -> float:
        return self.trajectory[0].objective if self.trajectory else float("nan")

    @property
    def final_objective(self) -> float:
        return self.trajectory[-1].objective if self.trajectory else float("nan")

    def snapshots(self) -> list:
        return [p for p in self.trajectory if p.x is not None]


def sample_weighted_index(weights, rng: RngStream) -> int:
    """Index ``k`` with probability ``weights[k] / sum(weights)``."""
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1 or w.size == 0:
        raise ValueError("weights must be a nonempty 1-D sequence")
    if not np.all(w > 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and strictly positive")
    c = np.cumsum(w)
    k = int(np.searchsorted(c, rng.uniform() * c[-1], side="right"))
    return min(k, w.size - 1)


def psdfa_step(problem: CompositeProblem, x, alpha_t: float, rng: RngStream,
               estimator: Callable = two_point_estimate):
    """``x+ = prox_{alpha r}(x - alpha g)`` with ``g`` the two-point estimate at radii ``alpha^2, alpha^3``."""
    params = schedule_params(alpha_t)
    g, rec = estimator(problem.oracle, x, params, rng)
    return problem.regularizer.prox(np.asarray(x, dtype=float) - alpha_t * g, alpha_t), rec


def _subgradient_step(problem, x, alpha_t, rng):
    xi = problem.oracle.sample(rng)
    v = problem.subgradient(x, xi)
    if not np.all(np.isfinite(v)):
        raise EstimatorFailure("non-finite subgradient", x)
    return problem.regularizer.prox(x - alpha_t * v, alpha_t)


def _proxpoint_step(problem, x, alpha_t, rng):
    xi = problem.oracle.sample(rng)
    y = problem.proxpoint(x, xi, alpha_t)
    if not np.all(np.isfinite(y)):
        raise SubproblemError("non-finite proximal point")
    return y


def _run(name, problem, config, x0, step, calls_per_step):
    schedule = config.schedule
    rho_bar = config.resolved_rho_bar(problem)
    schedule.check_admissible(problem.rho_estimate, rho_bar)
    stream = RngStream(config.seed)
    loop_rng, index_rng, init_rng = stream.child("loop"), stream.child("t_star"), stream.child("x0")
    x = unit_sphere_vector(init_rng, problem.dimension) if x0 is None else np.array(x0, dtype=float)
    alphas = schedule.alphas()
    T = schedule.horizon
    t_star = sample_weighted_index(alphas, index_rng)

    record = RunRecord(solver=name, seed=config.seed, t_star=t_star, x0=x.copy())
    calls = 0
    start = time.perf_counter()
    snap = config.snapshot_stride
    try:
        for t in range(T + 1):
            if t == t_star:
                record.x_star = x.copy()
            row = None
            if t % config.log_stride == 0 or t == T:
                row = TracePoint(t, float(alphas[t]), problem.full_objective(x), calls,
                                 (time.perf_counter() - start) * 1e3,
                                 x.copy() if snap and t % snap == 0 else None)
                record.trajectory.append(row)
            if t == T:
                record.x_final = x.copy()
            x = step(problem, x, float(alphas[t]), loop_rng)
            calls += calls_per_step
            if row is not None:
                row.oracle_calls = calls
    except Exception as exc:
        record.status = "failed"
        record.error = f"{type(exc).__name__}: {exc}"
        record.oracle_calls = calls
        record.wall_time = time.perf_counter() - start
        log.warning("%s run (seed %d) failed: %s", name, config.seed, record.error)
        raise SolverError(record.error, record) from exc
    record.oracle_calls = calls
    record.wall_time = time.perf_counter() - start
    return record


def run_psdfa(problem: CompositeProblem, config: SolverConfig, x0=None) -> RunRecord:
    def step(p, x, a, rng):
        return psdfa_step(p, x, a, rng)[0]
    return _run("psdfa", problem, config, x0, step, 2)


def run_stochastic_subgradient(problem: CompositeProblem, config: SolverConfig, x0=None) -> RunRecord:
    if problem.subgradient is None:
        raise CapabilityError("stochastic subgradient needs a per-sample subgradient map")
    return _run("subgrad", problem, config, x0, _subgradient_step, 1)


def run_stochastic_proxpoint(problem: CompositeProblem, config: SolverConfig, x0=None) -> RunRecord:
    if problem.proxpoint is None:
        raise CapabilityError("stochastic proximal point needs an exact single-sample subproblem solver")
    return _run("proxpt", problem, config, x0, _proxpoint_step, 1)


RUNNERS = {
    "psdfa": run_psdfa,
    "subgrad": run_stochastic_subgradient,
    "proxpt": run_stochastic_proxpoint,
}
