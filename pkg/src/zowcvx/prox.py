"""Simple convex regularizers with exact proximal maps."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import UnsupportedDimension


class ProxRegularizer:
    """Convex ``r`` with ``prox(x, alpha) = argmin_y r(y) + |y - x|^2 / (2 alpha)``."""

    dimension: int

    def value(self, y) -> float:
        raise NotImplementedError

    def values(self, Y) -> np.ndarray:
        """``value`` applied to each row of ``Y``."""
        return np.array([self.value(y) for y in np.atleast_2d(Y)])

    def prox(self, x, alpha: float) -> np.ndarray:
        raise NotImplementedError


class ZeroRegularizer(ProxRegularizer):
    def __init__(self, n: int):
        if n < 1:
            raise ValueError(f"dimension must be >= 1, got {n}")
        self.dimension = int(n)

    def __repr__(self):
        return f"ZeroRegularizer({self.dimension})"

    def value(self, y):
        return 0.0

    def values(self, Y):
        return np.zeros(np.atleast_2d(Y).shape[0])

    def prox(self, x, alpha):
        return np.array(x, dtype=float, copy=True)


class L1Regularizer(ProxRegularizer):
    def __init__(self, n: int, weight: float):
        if n < 1:
            raise ValueError(f"dimension must be >= 1, got {n}")
        if not weight > 0:
            raise ValueError("l1 weight must be positive")
        self.dimension = int(n)
        self.weight = float(weight)

    def __repr__(self):
        return f"L1Regularizer({self.dimension}, weight={self.weight})"

    def value(self, y):
        return self.weight * float(np.sum(np.abs(y)))

    def values(self, Y):
        return self.weight * np.abs(np.atleast_2d(Y)).sum(axis=1)

    def prox(self, x, alpha):
        x = np.asarray(x, dtype=float)
        return np.sign(x) * np.maximum(np.abs(x) - alpha * self.weight, 0.0)


class BoxIndicator(ProxRegularizer):
    """Indicator of ``[lower, upper]``; ``value`` is ``+inf`` outside, never an error."""

    def __init__(self, lower, upper):
        lower = np.atleast_1d(np.asarray(lower, dtype=float))
        upper = np.atleast_1d(np.asarray(upper, dtype=float))
        if lower.shape != upper.shape:
            raise ValueError("box bounds must have the same shape")
        if np.any(lower > upper):
            raise ValueError("box lower bound exceeds upper bound")
        self.lower, self.upper = lower, upper
        self.dimension = lower.size

    def __repr__(self):
        return f"BoxIndicator({self.lower!r}, {self.upper!r})"

    def value(self, y):
        y = np.asarray(y, dtype=float)
        return 0.0 if np.all((y >= self.lower) & (y <= self.upper)) else np.inf

    def values(self, Y):
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        inside = np.all((Y >= self.lower) & (Y <= self.upper), axis=1)
        return np.where(inside, 0.0, np.inf)

    def prox(self, x, alpha):
        return np.clip(np.asarray(x, dtype=float), self.lower, self.upper)


def zero_regularizer(n: int) -> ZeroRegularizer:
    return ZeroRegularizer(n)


def l1_regularizer(n: int, weight: float) -> L1Regularizer:
    return L1Regularizer(n, weight)


def box_indicator(lower, upper) -> BoxIndicator:
    return BoxIndicator(lower, upper)


@dataclass(frozen=True)
class Grid:
    """Search window for :func:`prox_check`.

    ``points`` samples per axis on each round; every refinement round
    shrinks the window around the incumbent by ``zoom``.
    """

    lower: Sequence[float]
    upper: Sequence[float]
    points: int = 401
    refinements: int = 6
    zoom: float = 10.0


def proximal_objective(reg: ProxRegularizer, x, alpha: float, Y) -> np.ndarray:
    """``r(y) + |y - x|^2 / (2 alpha)`` for each row of ``Y``."""
    Y = np.atleast_2d(Y)
    return reg.values(Y) + np.sum((Y - np.asarray(x, dtype=float)) ** 2, axis=1) / (2.0 * alpha)


def grid_minimum(reg: ProxRegularizer, x, alpha: float, grid: Grid) -> tuple[float, np.ndarray]:
    """Brute-force minimum of the proximal objective with local refinement."""
    n = reg.dimension
    if n > 2:
        raise UnsupportedDimension(f"grid oracle supports dimension <= 2, got {n}")
    lo = np.broadcast_to(np.asarray(grid.lower, dtype=float), (n,)).copy()
    hi = np.broadcast_to(np.asarray(grid.upper, dtype=float), (n,)).copy()
    best_val, best_y = np.inf, None
    for _ in range(grid.refinements + 1):
        axes = [np.linspace(lo[k], hi[k], grid.points) for k in range(n)]
        Y = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
        vals = proximal_objective(reg, x, alpha, Y)
        k = int(np.argmin(vals))
        if vals[k] < best_val:
            best_val, best_y = float(vals[k]), Y[k].copy()
        if best_y is None:
            break
        half = (hi - lo) / grid.zoom
        lo, hi = best_y - half, best_y + half
    return best_val, best_y


def prox_check(reg: ProxRegularizer, x, alpha: float, candidate, grid: Optional[Grid] = None,
               tol: float = 1e-6) -> bool:
    """True when ``candidate`` is no worse than the grid minimum plus ``tol``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    candidate = np.atleast_1d(np.asarray(candidate, dtype=float))
    if reg.dimension > 2:
        raise UnsupportedDimension(f"grid oracle supports dimension <= 2, got {reg.dimension}")
    if grid is None:
        span = 2.0 * (np.max(np.abs(np.concatenate([x, candidate]))) + 1.0)
        n = reg.dimension
        # 2-D: fewer points per axis, more zoom rounds for the same final resolution
        grid = Grid(lower=[-span] * n, upper=[span] * n, points=401 if n == 1 else 121,
                    refinements=6 if n == 1 else 8)
    best, _ = grid_minimum(reg, x, alpha, grid)
    cand = float(proximal_objective(reg, x, alpha, candidate)[0])
    return bool(cand <= best + tol)
