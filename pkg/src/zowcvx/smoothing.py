"""Gaussian smoothing and the two-point gradient estimator.

``f_u(x) = E_z f(x + u z)`` with ``z ~ N(0, I)``. The estimator

    g = [F(x + u1 Z1 + u2 Z2; xi) - F(x + u1 Z1; xi)] / u2 * Z2

uses a single ``xi`` for both evaluations. The Monte-Carlo references below
exist to validate it and are never called by solvers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Optional

import numpy as np

from .core import RngStream, StochasticOracle, standard_normal_vector
from .errors import EstimatorFailure, ScheduleViolation


@dataclass(frozen=True)
class SmoothingParams:
    """Outer radius ``u1`` and inner difference radius ``u2 <= u1 / 2``."""

    u1: float
    u2: float

    def __post_init__(self):
        if not (self.u1 > 0 and self.u2 > 0):
            raise ScheduleViolation(f"smoothing radii must be positive, got u1={self.u1}, u2={self.u2}")
        if self.u2 > self.u1 / 2:
            raise ScheduleViolation(
                f"u2 <= u1/2 violated: u2={self.u2!r} > u1/2={self.u1 / 2!r}")


def _positive_or_none(name, v):
    if v is not None and not v > 0:
        raise ValueError(f"{name} must be positive when given")


@dataclass(frozen=True)
class TheoryConstants:
    """Bounds from the convergence analysis; unknowable from oracle access.

    Kept so diagnostics can carry empirical fits next to the names they
    stand for. Solvers never read them.
    """

    E: Optional[float] = None
    G: Optional[float] = None
    sigma_bar: Optional[float] = None
    B_bar: Optional[float] = None
    B: Optional[float] = None

    def __post_init__(self):
        for name in ("E", "G", "sigma_bar", "B_bar", "B"):
            _positive_or_none(name, getattr(self, name))


@dataclass(frozen=True)
class SampleRecord:
    xi: Any
    z1: np.ndarray
    z2: np.ndarray
    f_shifted: float
    f_base: float


def schedule_params(alpha_t: float) -> SmoothingParams:
    """``u1 = alpha^2``, ``u2 = alpha^3``; needs ``alpha <= 1/2`` so that ``u2 <= u1/2``."""
    if not alpha_t > 0:
        raise ScheduleViolation(f"step size must be positive, got {alpha_t}")
    if alpha_t > 0.5:
        raise ScheduleViolation(
            f"alpha={alpha_t} > 1/2 gives u2=alpha^3 > u1/2=alpha^2/2 (u2 <= u1/2 violated)")
    return SmoothingParams(alpha_t ** 2, alpha_t ** 3)


def two_point_estimate(oracle: StochasticOracle, x, params: SmoothingParams, rng: RngStream,
                       *, xi=None, z1=None, z2=None):
    """One draw of the two-point estimate.

    Draw order is ``xi``, ``Z1``, ``Z2``; any of them may be forced, in which
    case that draw is skipped.
    """
    x = np.asarray(x, dtype=float)
    n = oracle.dimension
    if xi is None:
        xi = oracle.sample(rng)
    z1 = standard_normal_vector(rng, n) if z1 is None else np.asarray(z1, dtype=float)
    z2 = standard_normal_vector(rng, n) if z2 is None else np.asarray(z2, dtype=float)
    base = x + params.u1 * z1
    shifted = base + params.u2 * z2
    f_shifted = oracle.eval(shifted, xi)
    if not math.isfinite(f_shifted):
        raise EstimatorFailure(f"oracle returned {f_shifted} at shifted point", shifted)
    f_base = oracle.eval(base, xi)
    if not math.isfinite(f_base):
        raise EstimatorFailure(f"oracle returned {f_base} at base point", base)
    g = (f_shifted - f_base) / params.u2 * z2
    return g, SampleRecord(xi, z1, z2, f_shifted, f_base)


def _check_finite(values, points):
    bad = ~np.isfinite(values)
    if np.any(bad):
        k = int(np.argmax(bad))
        raise EstimatorFailure(f"oracle returned {values[k]}", points[k])


def smoothed_value_mc(oracle: StochasticOracle, x, u1: float, samples: int, rng: RngStream):
    """Monte-Carlo estimate of ``f_{u1}(x)`` and its standard error."""
    if samples < 2:
        raise ValueError("need at least two samples for a standard error")
    x = np.asarray(x, dtype=float)
    Z = rng.normal((samples, oracle.dimension))
    xis = oracle.sample_many(rng, samples)
    P = x + u1 * Z
    vals = oracle.eval_batch(P, xis)
    _check_finite(vals, P)
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(samples))


def smoothed_gradient_mc(oracle: StochasticOracle, x, u1: float, samples: int, rng: RngStream):
    """Monte-Carlo estimate of ``grad f_{u1}(x)`` via ``E[(F(x+uz) - F(x)) z / u]``.

    Both evaluations of a sample share its ``xi``. Returns the estimate and
    componentwise standard errors.
    """
    if samples < 2:
        raise ValueError("need at least two samples for a standard error")
    x = np.asarray(x, dtype=float)
    Z = rng.normal((samples, oracle.dimension))
    xis = oracle.sample_many(rng, samples)
    P = x + u1 * Z
    shifted = oracle.eval_batch(P, xis)
    _check_finite(shifted, P)
    base = oracle.eval_batch(np.broadcast_to(x, P.shape), xis)
    _check_finite(base, np.broadcast_to(x, P.shape))
    G = ((shifted - base) / u1)[:, None] * Z
    return G.mean(axis=0), G.std(axis=0, ddof=1) / math.sqrt(samples)
