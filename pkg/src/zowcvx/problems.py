"""Robust phase retrieval and blind deconvolution benchmark instances.

Phase retrieval::

    f(x) = (1/m) sum_i |<a_i, x>^2 - b_i|

Blind deconvolution, decision variable ``z = (x, y)`` stacked in ``R^{2d}``::

    f(x, y) = (1/m) sum_i |<u_i, x> <v_i, y> - b_i|

Indices are zero-based. Every inner product goes through :func:`rowdot` so
that per-term, batched and full evaluations round identically and planted
signals give exactly zero.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.special import ndtr

from .core import AbsoluteSum, CompositeProblem, FiniteSumOracle, RngStream, unit_sphere_vector
from .errors import SubproblemError
from .prox import ProxRegularizer, ZeroRegularizer

_SQRT_2PI = math.sqrt(2.0 * math.pi)


def rowdot(A, x) -> np.ndarray:
    """Row-wise inner products with a fixed summation order."""
    return (np.asarray(A) * np.asarray(x)).sum(axis=-1)


def _check_index(i, m):
    if not 0 <= i < m:
        raise IndexError(f"term index {i} out of range for m={m}")


@dataclass(frozen=True)
class PhaseRetrievalInstance:
    A: np.ndarray
    b: np.ndarray
    x_bar: np.ndarray
    seed: Optional[int] = None

    @property
    def m(self) -> int:
        return self.A.shape[0]

    @property
    def d(self) -> int:
        return self.A.shape[1]

    @classmethod
    def planted(cls, A, x_bar, seed=None):
        A = np.asarray(A, dtype=float)
        x_bar = np.asarray(x_bar, dtype=float)
        return cls(A, rowdot(A, x_bar) ** 2, x_bar, seed)


@dataclass(frozen=True)
class BlindDeconvolutionInstance:
    U: np.ndarray
    V: np.ndarray
    b: np.ndarray
    x_bar: np.ndarray
    y_bar: np.ndarray
    seed: Optional[int] = None

    @property
    def m(self) -> int:
        return self.U.shape[0]

    @property
    def d(self) -> int:
        return self.U.shape[1]

    @property
    def z_bar(self) -> np.ndarray:
        return np.concatenate([self.x_bar, self.y_bar])

    @classmethod
    def planted(cls, U, V, x_bar, y_bar, seed=None):
        U, V = np.asarray(U, dtype=float), np.asarray(V, dtype=float)
        x_bar, y_bar = np.asarray(x_bar, dtype=float), np.asarray(y_bar, dtype=float)
        return cls(U, V, rowdot(U, x_bar) * rowdot(V, y_bar), x_bar, y_bar, seed)


def generate_phase_retrieval(d: int, m: int, rng: RngStream) -> PhaseRetrievalInstance:
    if d < 1 or m < 1:
        raise ValueError(f"need d, m >= 1, got d={d}, m={m}")
    A = rng.normal((m, d))
    x_bar = unit_sphere_vector(rng, d)
    return PhaseRetrievalInstance.planted(A, x_bar, rng.seed)


def generate_blind_deconvolution(d: int, m: int, rng: RngStream) -> BlindDeconvolutionInstance:
    """Gaussian ``U``, ``V``; ``(x_bar, y_bar)`` uniform on the unit sphere of ``R^{2d}``."""
    if d < 1 or m < 1:
        raise ValueError(f"need d, m >= 1, got d={d}, m={m}")
    U = rng.normal((m, d))
    V = rng.normal((m, d))
    w = unit_sphere_vector(rng, 2 * d)
    return BlindDeconvolutionInstance.planted(U, V, w[:d], w[d:], rng.seed)


# -- phase retrieval ---------------------------------------------------------

def pr_term(inst: PhaseRetrievalInstance, i: int, x) -> float:
    _check_index(i, inst.m)
    return abs(float(rowdot(inst.A[i], x)) ** 2 - inst.b[i])


def pr_full_objective(inst: PhaseRetrievalInstance, x) -> float:
    return float(np.mean(np.abs(rowdot(inst.A, x) ** 2 - inst.b)))


def pr_term_subgradient(inst: PhaseRetrievalInstance, i: int, x) -> np.ndarray:
    """``sign(c_i) * 2 <a_i, x> a_i``; zero at kinks (zero lies in the subdifferential)."""
    _check_index(i, inst.m)
    s = float(rowdot(inst.A[i], x))
    return np.sign(s * s - inst.b[i]) * 2.0 * s * inst.A[i]


def pr_full_subgradient(inst: PhaseRetrievalInstance, x) -> np.ndarray:
    s = rowdot(inst.A, x)
    return inst.A.T @ (np.sign(s * s - inst.b) * 2.0 * s) / inst.m


def _pr_1d(s0: float, b: float, beta: float) -> float:
    """Minimize ``|s^2 - b| + (s - s0)^2 / (2 beta)`` over the real line."""
    def q(s):
        return abs(s * s - b) + (s - s0) ** 2 / (2.0 * beta)

    r = math.sqrt(b)
    cands = [r, -r]
    s_out = s0 / (1.0 + 2.0 * beta)
    if s_out * s_out >= b:
        cands.append(s_out)
    if beta < 0.5:
        s_in = s0 / (1.0 - 2.0 * beta)
        if s_in * s_in <= b:
            cands.append(s_in)
    vals = [q(s) for s in cands]
    return cands[int(np.argmin(vals))]


def pr_proxpoint_subproblem(inst: PhaseRetrievalInstance, i: int, x, alpha: float) -> np.ndarray:
    """Exact ``argmin_y |<a_i,y>^2 - b_i| + |y - x|^2 / (2 alpha)``.

    The displacement is parallel to ``a_i``; along it the problem is a
    piecewise quadratic in ``s = <a_i, y>`` minimized in closed form.
    """
    _check_index(i, inst.m)
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    x = np.asarray(x, dtype=float)
    a = inst.A[i]
    aa = float(a @ a)
    if aa == 0.0:
        return x.copy()
    s0 = float(rowdot(a, x))
    s = _pr_1d(s0, float(inst.b[i]), alpha * aa)
    if not math.isfinite(s):
        raise SubproblemError("non-finite phase retrieval subproblem solution")
    return x + ((s - s0) / aa) * a


def _smoothed_abs_square(mu, sigma, b):
    """Value, first and second derivative in ``mu`` of ``E|S^2 - b|``, ``S ~ N(mu, sigma^2)``."""
    r = np.sqrt(b)
    lo = (-r - mu) / sigma
    hi = (r - mu) / sigma
    phi_lo = np.exp(-0.5 * lo * lo) / _SQRT_2PI
    phi_hi = np.exp(-0.5 * hi * hi) / _SQRT_2PI
    P = ndtr(hi) - ndtr(lo)
    M1 = phi_lo - phi_hi
    M2 = P + lo * phi_lo - hi * phi_hi
    inside = (b - mu * mu) * P - 2.0 * mu * sigma * M1 - sigma * sigma * M2
    value = mu * mu + sigma * sigma - b + 2.0 * inside
    d1 = 2.0 * mu - 4.0 * (mu * P + sigma * M1)
    d2 = 2.0 * (1.0 - 2.0 * P) + 4.0 * r * (phi_lo + phi_hi) / sigma
    return value, d1, d2


def pr_smoothed(inst: PhaseRetrievalInstance, x, u: float):
    """Closed-form ``f_u``, its gradient and Hessian at ``x`` (``u > 0``)."""
    if not u > 0:
        raise ValueError("smoothing radius must be positive")
    A = inst.A
    mu = rowdot(A, x)
    sigma = u * np.sqrt(rowdot(A, A))
    h, h1, h2 = _smoothed_abs_square(mu, sigma, inst.b)
    m = inst.m
    return float(np.mean(h)), A.T @ h1 / m, (A.T * h2) @ A / m


def pr_structure(inst: PhaseRetrievalInstance) -> AbsoluteSum:
    A, b = inst.A, inst.b
    return AbsoluteSum(
        weights=np.full(inst.m, 1.0 / inst.m),
        residual=lambda y: rowdot(A, y) ** 2 - b,
        jacobian=lambda y: 2.0 * rowdot(A, y)[:, None] * A,
        curvature=lambda y, lam: 2.0 * (A.T * lam) @ A,
    )


def pr_weak_convexity(inst: PhaseRetrievalInstance) -> float:
    """Modulus ``rho = 2 lambda_max(A^T A / m)``: ``f + (rho/2)|x|^2`` is convex."""
    return 2.0 * float(np.linalg.eigvalsh(inst.A.T @ inst.A / inst.m)[-1])


def phase_retrieval_problem(inst: PhaseRetrievalInstance,
                            regularizer: Optional[ProxRegularizer] = None) -> CompositeProblem:
    A, b = inst.A, inst.b
    reg = ZeroRegularizer(inst.d) if regularizer is None else regularizer
    oracle = FiniteSumOracle(
        lambda i, x: abs(float(rowdot(A[i], x)) ** 2 - b[i]), inst.m, inst.d,
        batch_term=lambda idx, X: np.abs(rowdot(A[idx], X) ** 2 - b[idx]))
    return CompositeProblem(
        oracle=oracle,
        regularizer=reg,
        rho_estimate=pr_weak_convexity(inst),
        # local bound on the unit ball, where the planted signal lives
        lipschitz_estimate=2.0 * float(np.mean(rowdot(A, A))),
        f_value=lambda x: pr_full_objective(inst, x),
        subgradient=lambda x, i: pr_term_subgradient(inst, int(i), x),
        proxpoint=(lambda x, i, alpha: pr_proxpoint_subproblem(inst, int(i), x, alpha))
        if isinstance(reg, ZeroRegularizer) else None,
        full_subgradient=lambda x: pr_full_subgradient(inst, x),
        structure=pr_structure(inst),
        smoothed=lambda x, u: pr_smoothed(inst, x, u),
        metadata={"kind": "phase", "d": inst.d, "m": inst.m, "seed": inst.seed},
    )


# -- blind deconvolution -----------------------------------------------------

def _split(inst, z):
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != 2 * inst.d:
        raise ValueError(f"expected stacked vector of length {2 * inst.d}, got {z.shape[-1]}")
    return z[..., :inst.d], z[..., inst.d:]


def bd_term(inst: BlindDeconvolutionInstance, i: int, z) -> float:
    _check_index(i, inst.m)
    x, y = _split(inst, z)
    return abs(float(rowdot(inst.U[i], x)) * float(rowdot(inst.V[i], y)) - inst.b[i])


def bd_full_objective(inst: BlindDeconvolutionInstance, z) -> float:
    x, y = _split(inst, z)
    return float(np.mean(np.abs(rowdot(inst.U, x) * rowdot(inst.V, y) - inst.b)))


def bd_term_subgradient(inst: BlindDeconvolutionInstance, i: int, z) -> np.ndarray:
    _check_index(i, inst.m)
    x, y = _split(inst, z)
    p = float(rowdot(inst.U[i], x))
    q = float(rowdot(inst.V[i], y))
    return np.sign(p * q - inst.b[i]) * np.concatenate([q * inst.U[i], p * inst.V[i]])


def bd_full_subgradient(inst: BlindDeconvolutionInstance, z) -> np.ndarray:
    x, y = _split(inst, z)
    p, q = rowdot(inst.U, x), rowdot(inst.V, y)
    s = np.sign(p * q - inst.b)
    return np.concatenate([inst.U.T @ (s * q), inst.V.T @ (s * p)]) / inst.m


def _bd_2d(p0, q0, b, beta1, beta2):
    """Minimize ``|pq - b| + (p-p0)^2/(2 beta1) + (q-q0)^2/(2 beta2)``.

    Candidates: stationary points of both smooth pieces and of the proximity
    term restricted to the kink ``pq = b`` (roots of a quartic).
    """
    def obj(p, q):
        return abs(p * q - b) + (p - p0) ** 2 / (2 * beta1) + (q - q0) ** 2 / (2 * beta2)

    cands = []
    for s in (1.0, -1.0):
        M = np.array([[1 / beta1, s], [s, 1 / beta2]])
        if abs(np.linalg.det(M)) > 1e-14 * (1 / beta1) * (1 / beta2):
            p, q = np.linalg.solve(M, [p0 / beta1, q0 / beta2])
            if s * (p * q - b) >= 0:
                cands.append((p, q))
    if b == 0.0:
        cands += [(0.0, q0), (p0, 0.0)]
    else:
        roots = np.roots([beta2, -beta2 * p0, 0.0, beta1 * b * q0, -beta1 * b * b])
        scale = max(1.0, np.max(np.abs(roots)))
        for rt in roots:
            if abs(rt.imag) > 1e-6 * scale or rt.real == 0.0:
                continue
            p = rt.real
            for _ in range(50):
                g = (p - p0) / beta1 - (b / p - q0) * b / (p * p * beta2)
                h = 1 / beta1 + (b * b / p ** 4 + 2 * (b / p - q0) * b / p ** 3) / beta2
                if h <= 0:
                    break
                step = g / h
                p -= step
                if abs(step) <= 1e-15 * max(1.0, abs(p)):
                    break
            cands.append((p, b / p))
    if not cands:
        raise SubproblemError("no candidate minimizer found")
    vals = [obj(p, q) for p, q in cands]
    k = int(np.argmin(vals))
    if not math.isfinite(vals[k]):
        raise SubproblemError("non-finite subproblem objective", residual=vals[k])
    return cands[k]


def bd_proxpoint_subproblem(inst: BlindDeconvolutionInstance, i: int, z, alpha: float) -> np.ndarray:
    """Exact ``argmin_w |<u_i,x'><v_i,y'> - b_i| + |w - z|^2 / (2 alpha)``.

    Optimal displacements lie along ``u_i`` and ``v_i``, leaving a
    two-variable problem in ``(p, q) = (<u_i,x'>, <v_i,y'>)``.
    """
    _check_index(i, inst.m)
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    x, y = _split(inst, z)
    u, v = inst.U[i], inst.V[i]
    uu, vv = float(u @ u), float(v @ v)
    if uu == 0.0 or vv == 0.0:
        return np.concatenate([x, y])
    p0, q0 = float(rowdot(u, x)), float(rowdot(v, y))
    p, q = _bd_2d(p0, q0, float(inst.b[i]), alpha * uu, alpha * vv)
    return np.concatenate([x + ((p - p0) / uu) * u, y + ((q - q0) / vv) * v])


def bd_structure(inst: BlindDeconvolutionInstance) -> AbsoluteSum:
    U, V, b, d = inst.U, inst.V, inst.b, inst.d

    def curvature(z, lam):
        C = (U.T * lam) @ V
        H = np.zeros((2 * d, 2 * d))
        H[:d, d:] = C
        H[d:, :d] = C.T
        return H

    return AbsoluteSum(
        weights=np.full(inst.m, 1.0 / inst.m),
        residual=lambda z: rowdot(U, z[:d]) * rowdot(V, z[d:]) - b,
        jacobian=lambda z: np.hstack([rowdot(V, z[d:])[:, None] * U, rowdot(U, z[:d])[:, None] * V]),
        curvature=curvature,
    )


def bd_weak_convexity(inst: BlindDeconvolutionInstance) -> float:
    """``f + (1/2m) sum(<u_i,x>^2 + <v_i,y>^2)`` is convex, so this modulus works."""
    m = inst.m
    return max(float(np.linalg.eigvalsh(inst.U.T @ inst.U / m)[-1]),
               float(np.linalg.eigvalsh(inst.V.T @ inst.V / m)[-1]))


def blind_deconvolution_problem(inst: BlindDeconvolutionInstance,
                                regularizer: Optional[ProxRegularizer] = None) -> CompositeProblem:
    U, V, b, d = inst.U, inst.V, inst.b, inst.d
    reg = ZeroRegularizer(2 * d) if regularizer is None else regularizer
    oracle = FiniteSumOracle(
        lambda i, z: abs(float(rowdot(U[i], z[:d])) * float(rowdot(V[i], z[d:])) - b[i]),
        inst.m, 2 * d,
        batch_term=lambda idx, Z: np.abs(rowdot(U[idx], Z[:, :d]) * rowdot(V[idx], Z[:, d:]) - b[idx]))
    norms = np.sqrt(rowdot(U, U) * rowdot(V, V))
    return CompositeProblem(
        oracle=oracle,
        regularizer=reg,
        rho_estimate=bd_weak_convexity(inst),
        lipschitz_estimate=math.sqrt(2.0) * float(np.mean(norms)),
        f_value=lambda z: bd_full_objective(inst, z),
        subgradient=lambda z, i: bd_term_subgradient(inst, int(i), z),
        proxpoint=(lambda z, i, alpha: bd_proxpoint_subproblem(inst, int(i), z, alpha))
        if isinstance(reg, ZeroRegularizer) else None,
        full_subgradient=lambda z: bd_full_subgradient(inst, z),
        structure=bd_structure(inst),
        metadata={"kind": "blind", "d": d, "m": inst.m, "seed": inst.seed,
                  "planting": "joint unit sphere in R^{2d}"},
    )


def make_problem(inst, regularizer=None) -> CompositeProblem:
    if isinstance(inst, PhaseRetrievalInstance):
        return phase_retrieval_problem(inst, regularizer)
    if isinstance(inst, BlindDeconvolutionInstance):
        return blind_deconvolution_problem(inst, regularizer)
    raise TypeError(f"unknown instance type {type(inst).__name__}")


def generate_instance(kind: str, d: int, m: int, rng: RngStream):
    if kind == "phase":
        return generate_phase_retrieval(d, m, rng)
    if kind == "blind":
        return generate_blind_deconvolution(d, m, rng)
    raise ValueError(f"unknown problem kind {kind!r}")


# -- instance files ----------------------------------------------------------

def _fmt(row) -> list[str]:
    return ["%.17g" % v for v in np.atleast_1d(row)]


def write_instance(inst, path) -> None:
    """CSV: two ``#`` header rows, matrix rows, then ``b``, then planted signal(s)."""
    kind = "phase" if isinstance(inst, PhaseRetrievalInstance) else "blind"
    seed = "" if inst.seed is None else str(inst.seed)
    with open(path, "w", newline="") as fh:
        fh.write("# kind,d,m,seed\n")
        fh.write(f"# {kind},{inst.d},{inst.m},{seed}\n")
        w = csv.writer(fh, lineterminator="\n")
        if kind == "phase":
            w.writerows(_fmt(r) for r in inst.A)
            w.writerow(_fmt(inst.b))
            w.writerow(_fmt(inst.x_bar))
        else:
            w.writerows(_fmt(r) for r in inst.U)
            w.writerows(_fmt(r) for r in inst.V)
            w.writerow(_fmt(inst.b))
            w.writerow(_fmt(inst.x_bar))
            w.writerow(_fmt(inst.y_bar))


def read_instance(path):
    lines = Path(path).read_text().splitlines()
    if len(lines) < 2 or not lines[0].startswith("#") or not lines[1].startswith("#"):
        raise ValueError(f"{path}: missing instance header")
    kind, d, m, seed = [s.strip() for s in lines[1].lstrip("#").split(",")]
    d, m = int(d), int(m)
    seed = int(seed) if seed else None
    rows = [np.array([float(v) for v in ln.split(",")]) for ln in lines[2:] if ln.strip()]
    if kind == "phase":
        if len(rows) != m + 2:
            raise ValueError(f"{path}: expected {m + 2} data rows, found {len(rows)}")
        return PhaseRetrievalInstance(np.vstack(rows[:m]), rows[m], rows[m + 1], seed)
    if kind == "blind":
        if len(rows) != 2 * m + 3:
            raise ValueError(f"{path}: expected {2 * m + 3} data rows, found {len(rows)}")
        return BlindDeconvolutionInstance(np.vstack(rows[:m]), np.vstack(rows[m:2 * m]),
                                          rows[2 * m], rows[2 * m + 1], rows[2 * m + 2], seed)
    raise ValueError(f"{path}: unknown instance kind {kind!r}")
