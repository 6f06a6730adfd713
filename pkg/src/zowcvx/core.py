"""Problem abstractions: random streams, zeroth-order oracles, composite objectives.

Solvers only ever see a :class:`StochasticOracle`; everything else on
:class:`CompositeProblem` (exact objective, subgradients, structure) is for
baselines, reporting and diagnostics.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from typing import Any, Callable, Optional, Sequence

import numpy as np

MASK64 = (1 << 64) - 1


def _key_to_int(key) -> int:
    if isinstance(key, (int, np.integer)):
        return int(key) & 0xFFFFFFFF
    return zlib.crc32(str(key).encode())


class RngStream:
    """Seeded random stream with keyed, state-independent splitting.

    Children are derived from ``(seed, keys)`` only, never from how many
    draws the parent already made, so a replica can be rebuilt from its
    recorded seed alone.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & MASK64
        self._gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(self.seed)))

    def __repr__(self):
        return f"RngStream(seed={self.seed})"

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def normal(self, size=None):
        return self._gen.standard_normal(size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def integers(self, high: int, size=None):
        return self._gen.integers(high, size=size)

    def child_seed(self, *keys) -> int:
        ss = np.random.SeedSequence(self.seed, spawn_key=tuple(_key_to_int(k) for k in keys))
        return int(ss.generate_state(1, np.uint64)[0])

    def child(self, *keys) -> "RngStream":
        return RngStream(self.child_seed(*keys))

    def spawn(self, n: int) -> list["RngStream"]:
        return [self.child(i) for i in range(n)]


def as_stream(rng) -> RngStream:
    """Accept an ``RngStream`` or an integer seed."""
    if isinstance(rng, RngStream):
        return rng
    if isinstance(rng, (int, np.integer)):
        return RngStream(int(rng))
    raise TypeError(f"expected RngStream or int seed, got {type(rng).__name__}")


def standard_normal_vector(rng: RngStream, n: int) -> np.ndarray:
    if n < 1:
        raise ValueError(f"dimension must be >= 1, got {n}")
    return rng.normal(n)


def unit_sphere_vector(rng: RngStream, n: int) -> np.ndarray:
    v = standard_normal_vector(rng, n)
    return v / np.linalg.norm(v)


class StochasticOracle:
    """Noisy zeroth-order access ``F(x; xi)`` to ``f(x) = E F(x; xi)``.

    Subclasses implement :meth:`eval` and :meth:`sample`. ``eval`` must be a
    pure function of ``(x, xi)``.
    """

    def __init__(self, dimension: int):
        if dimension < 1:
            raise ValueError(f"dimension must be >= 1, got {dimension}")
        self.dimension = int(dimension)

    def eval(self, x, xi) -> float:
        raise NotImplementedError

    def sample(self, rng: RngStream):
        raise NotImplementedError

    def sample_many(self, rng: RngStream, count: int) -> list:
        return [self.sample(rng) for _ in range(count)]

    def eval_batch(self, X, xis) -> np.ndarray:
        """Evaluate rows of ``X`` against matching tokens."""
        return np.array([self.eval(x, xi) for x, xi in zip(X, xis)], dtype=float)


class DeterministicOracle(StochasticOracle):
    """Noise-free oracle; ``sample`` returns ``None`` and consumes no randomness."""

    def __init__(self, fn: Callable[[np.ndarray], float], dimension: int):
        super().__init__(dimension)
        self.fn = fn

    def eval(self, x, xi=None) -> float:
        return float(self.fn(np.asarray(x, dtype=float)))

    def sample(self, rng):
        return None

    def sample_many(self, rng, count):
        return [None] * count


def deterministic_oracle(fn, dimension: int) -> DeterministicOracle:
    return DeterministicOracle(fn, dimension)


class FiniteSumOracle(StochasticOracle):
    """``f = (1/m) sum_i term(i, x)`` with ``xi`` a uniform index in ``0..m-1``."""

    def __init__(self, term: Callable[[int, np.ndarray], float], m: int, dimension: int,
                 batch_term: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None):
        super().__init__(dimension)
        if m < 1:
            raise ValueError("finite-sum oracle needs at least one term")
        self.m = int(m)
        self.term = term
        self._batch_term = batch_term

    def eval(self, x, xi) -> float:
        return float(self.term(int(xi), np.asarray(x, dtype=float)))

    def sample(self, rng: RngStream) -> int:
        return int(rng.integers(self.m))

    def sample_many(self, rng, count):
        return rng.integers(self.m, size=count)

    def eval_batch(self, X, xis):
        if self._batch_term is not None:
            return np.asarray(self._batch_term(np.asarray(xis, dtype=int), np.asarray(X, dtype=float)),
                              dtype=float)
        return super().eval_batch(X, xis)

    def mean(self, x) -> float:
        """Exact ``f(x)``: average over every token."""
        x = np.asarray(x, dtype=float)
        return float(np.mean([self.term(i, x) for i in range(self.m)]))


def finite_sum_oracle(terms: Sequence[Callable[[np.ndarray], float]], dimension: int = 1) -> FiniteSumOracle:
    terms = list(terms)
    if not terms:
        raise ValueError("finite-sum oracle needs at least one term")
    return FiniteSumOracle(lambda i, x: terms[i](x), len(terms), dimension)


@dataclass(frozen=True)
class AbsoluteSum:
    """Structure ``f(y) = sum_i w_i |c_i(y)|`` with smooth residuals ``c_i``.

    ``curvature(y, lam)`` returns ``sum_i lam_i * Hessian(c_i)(y)``. Exact
    Moreau-envelope evaluation relies on this description.
    """

    weights: np.ndarray
    residual: Callable[[np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], np.ndarray]
    curvature: Callable[[np.ndarray, np.ndarray], np.ndarray]

    def value(self, y) -> float:
        return float(self.weights @ np.abs(self.residual(y)))


@dataclass
class CompositeProblem:
    """``phi = f + r`` with ``f`` reachable through ``oracle``.

    The optional callables are capabilities: ``subgradient(x, xi)`` (per-sample
    subgradient, used by the subgradient baseline), ``proxpoint(x, xi, alpha)``
    (exact single-sample proximal step), ``full_subgradient(x)``,
    ``structure`` (an :class:`AbsoluteSum` describing ``f``) and
    ``smoothed(x, u)`` returning value, gradient and Hessian of the Gaussian
    smoothing of ``f`` in closed form.
    """

    oracle: StochasticOracle
    regularizer: Any
    rho_estimate: float
    lipschitz_estimate: float
    f_value: Optional[Callable[[np.ndarray], float]] = None
    subgradient: Optional[Callable[[np.ndarray, Any], np.ndarray]] = None
    proxpoint: Optional[Callable[[np.ndarray, Any, float], np.ndarray]] = None
    full_subgradient: Optional[Callable[[np.ndarray], np.ndarray]] = None
    structure: Optional[AbsoluteSum] = None
    smoothed: Optional[Callable[[np.ndarray, float], tuple]] = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.oracle.dimension != self.regularizer.dimension:
            raise ValueError(
                f"oracle dimension {self.oracle.dimension} != regularizer dimension "
                f"{self.regularizer.dimension}")
        if not self.rho_estimate >= 0:
            raise ValueError("rho_estimate must be nonnegative")
        if not self.lipschitz_estimate > 0:
            raise ValueError("lipschitz_estimate must be positive")

    @property
    def dimension(self) -> int:
        return self.oracle.dimension

    def full_objective(self, x) -> float:
        """Exact ``phi(x)``; ``nan`` when ``f`` has no closed form."""
        if self.f_value is None:
            return float("nan")
        return float(self.f_value(x)) + float(self.regularizer.value(x))
