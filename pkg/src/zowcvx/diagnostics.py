"""Moreau-envelope evaluation and empirical checks of weak convexity.

The stationarity measure is ``|grad phi_{1/rho_bar}(x)| = rho_bar |x - x_hat|``
with ``x_hat = argmin_y phi(y) + (rho_bar/2)|y - x|^2``. Inner problems are
strongly convex once ``rho_bar > rho``. Diagnostics may use exact
subgradients and problem structure; solvers never call into this module.

Inner solvers, in order of preference:

* ``AbsoluteSum`` structure with ``r`` zero or l1: Newton on
  ``sum w sqrt(c^2 + eps^2)`` with ``eps`` driven to zero, then an
  equality-constrained Newton polish on the identified kinks. A polished
  point with multipliers inside ``[-w, w]`` is the exact minimizer.
* Closed-form smoothing (``problem.smoothed``) with ``r`` zero: damped Newton.
* Otherwise proximal gradient on Monte-Carlo smoothed gradients, or
  proximal subgradient with averaging for the unsmoothed objective.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import lsq_linear

from .core import AbsoluteSum, CompositeProblem, RngStream
from .errors import CapabilityError, IllPosedError, NonconvergenceError, ZowcvxError
from .prox import L1Regularizer, ZeroRegularizer
from .smoothing import SmoothingParams, smoothed_gradient_mc, smoothed_value_mc


@dataclass
class EnvelopeResult:
    x_hat: np.ndarray
    envelope_value: float
    grad_norm: float
    inner_iterations: int
    inner_residual: float
    method: str = ""


def _envelope_result(x, x_hat, value_at_hat, rho_bar, iters, residual, method):
    d = np.asarray(x, dtype=float) - x_hat
    return EnvelopeResult(
        x_hat=x_hat,
        envelope_value=float(value_at_hat + 0.5 * rho_bar * float(d @ d)),
        grad_norm=float(rho_bar * np.linalg.norm(d)),
        inner_iterations=iters,
        inner_residual=float(residual),
        method=method,
    )


# -- absolute-sum structure --------------------------------------------------

class _Folded:
    """``f`` plus an l1 regularizer seen as one absolute sum."""

    def __init__(self, s: AbsoluteSum, n: int, l1_weight: float = 0.0):
        self.s, self.n, self.l1 = s, n, l1_weight
        w = np.asarray(s.weights, dtype=float)
        self.m = w.size
        self.w = np.concatenate([w, np.full(n, l1_weight)]) if l1_weight else w

    def residual(self, y):
        c = self.s.residual(y)
        return np.concatenate([c, y]) if self.l1 else c

    def jacobian(self, y):
        J = self.s.jacobian(y)
        return np.vstack([J, np.eye(self.n)]) if self.l1 else J

    def curvature(self, y, lam):
        return self.s.curvature(y, lam[:self.m])

    def value(self, y):
        return float(self.w @ np.abs(self.residual(y)))


def _newton_smoothed_abs(F: _Folded, x, rho_bar, y, eps, max_iter=100):
    """Minimize ``sum w sqrt(c^2+eps^2) + (rho_bar/2)|y-x|^2`` from ``y``."""
    n = F.n

    def psi(y):
        c = F.residual(y)
        return float(F.w @ np.sqrt(c * c + eps * eps)) + 0.5 * rho_bar * float((y - x) @ (y - x))

    iters = 0
    gnorm = np.inf
    for iters in range(1, max_iter + 1):
        c = F.residual(y)
        J = F.jacobian(y)
        root = np.sqrt(c * c + eps * eps)
        lam = F.w * c / root
        g = J.T @ lam + rho_bar * (y - x)
        gnorm = float(np.linalg.norm(g))
        if gnorm <= 1e-14 * (1.0 + rho_bar * np.linalg.norm(y - x)) + 1e-300:
            break
        H = (J.T * (F.w * eps * eps / root ** 3)) @ J + F.curvature(y, lam) + rho_bar * np.eye(n)
        shift = 0.0
        while True:
            try:
                L = np.linalg.cholesky(H + shift * np.eye(n))
                break
            except np.linalg.LinAlgError:
                shift = max(2 * shift, 1e-10 * rho_bar)
        step = -np.linalg.solve(L.T, np.linalg.solve(L, g))
        f0 = psi(y)
        slope = float(g @ step)
        t = 1.0
        while t > 1e-12:
            y_new = y + t * step
            if psi(y_new) <= f0 + 1e-4 * t * slope:
                break
            t *= 0.5
        if t <= 1e-12:
            break
        y = y_new
        if np.linalg.norm(t * step) <= 1e-16 * (1.0 + np.linalg.norm(y)):
            break
    return y, iters, gnorm


def _polish(F: _Folded, x, rho_bar, y0, active, max_iter=50):
    """Equality-constrained Newton with kinks ``active`` held at zero.

    The active set may hold more kinks than dimensions (e.g. at a planted
    zero), so steps use least squares and the multipliers are recovered
    afterwards from a box-constrained fit ``|lam| <= w``.
    Returns ``(y, residual)`` or ``None`` when the active set is wrong.
    """
    n = F.n
    c0 = F.residual(y0)
    K = np.flatnonzero(active)
    N = np.flatnonzero(~active)
    s = np.sign(c0[N])
    if np.any(s == 0):
        return None
    y = y0.copy()
    J0 = F.jacobian(y0)
    rhs = -(J0[N].T @ (F.w[N] * s) + rho_bar * (y0 - x))
    lam = np.linalg.lstsq(J0[K].T, rhs, rcond=None)[0] if K.size else np.zeros(0)
    k = K.size
    for _ in range(max_iter):
        c = F.residual(y)
        J = F.jacobian(y)
        mult = np.zeros(c.size)
        mult[N] = F.w[N] * s
        mult[K] = lam
        with np.errstate(over="ignore", invalid="ignore"):
            r = np.concatenate([J.T @ mult + rho_bar * (y - x), c[K]])
            res = float(np.linalg.norm(r))
        if not np.isfinite(res):
            return None  # wrong active set; Newton diverged
        if res <= 1e-13 * (1.0 + np.abs(mult).sum()):
            break
        KKT = np.zeros((n + k, n + k))
        KKT[:n, :n] = F.curvature(y, mult) + rho_bar * np.eye(n)
        KKT[:n, n:] = J[K].T
        KKT[n:, :n] = J[K]
        delta = np.linalg.lstsq(KKT, -r, rcond=None)[0]
        if not np.all(np.isfinite(delta)):
            return None
        y = y + delta[:n]
        lam = lam + delta[n:]
    c = F.residual(y)
    if np.any(s * c[N] < 0):
        return None
    J = F.jacobian(y)
    rhs = -(J[N].T @ (F.w[N] * s) + rho_bar * (y - x))
    if k:
        wk = F.w[K]
        fit = lsq_linear(J[K].T, rhs, bounds=(-wk, wk + 1e-300), method="bvls")
        gap = float(np.linalg.norm(J[K].T @ fit.x - rhs))
    else:
        gap = float(np.linalg.norm(rhs))
    res = float(np.hypot(gap, np.linalg.norm(c[K])))
    scale = 1.0 + float(F.w.sum()) * (1.0 + np.linalg.norm(J, 2))
    if not np.isfinite(res) or res > 1e-9 * scale:
        return None
    return y, res


def _abs_sum_envelope(F: _Folded, x, rho_bar, tol, max_iter):
    x = np.asarray(x, dtype=float)
    c_scale = max(1.0, float(np.max(np.abs(F.residual(x)))))
    y = x.copy()
    total = 0
    eps = c_scale
    best = None

    def psi0(y):
        return F.value(y) + 0.5 * rho_bar * float((y - x) @ (y - x))

    while eps >= 1e-13 * c_scale and total < max_iter:
        y, it, gnorm = _newton_smoothed_abs(F, x, rho_bar, y, eps)
        total += it
        if eps <= 1e-3 * c_scale:
            c = np.abs(F.residual(y))
            for factor in (1e2, 1e3, 1e1, 1e4):
                out = _polish(F, x, rho_bar, y, c <= factor * eps)
                if out is not None and psi0(out[0]) <= psi0(y) + 1e-12 * (1.0 + abs(psi0(y))):
                    best = out
                    break
            if best is not None:
                return best[0], total, best[1], "abs-sum newton + kink polish"
        eps *= 0.1
    residual = max(gnorm, float(F.w.sum()) * eps * 10)
    if residual > tol:
        raise NonconvergenceError(f"envelope inner solve stalled at residual {residual:.3g}", residual)
    return y, total, residual, "abs-sum newton"


# -- smoothed objective ------------------------------------------------------

def _smoothed_newton_envelope(smoothed, u, x, rho_bar, tol, max_iter, y0=None):
    """Damped Newton on ``f_u(y) + rho_bar/2 |y - x|^2``.

    For tiny ``u`` the Hessian is huge near kinks and the gradient can only be
    resolved to about ``eps * |hess|``, so the loop also stops once steps stall.
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    y = x.copy() if y0 is None else np.array(y0, dtype=float)

    def psi(y):
        return smoothed(y, u)[0] + 0.5 * rho_bar * float((y - x) @ (y - x))

    def grad(y):
        return smoothed(y, u)[1] + rho_bar * (y - x)

    gnorm, hnorm = np.inf, rho_bar
    for k in range(1, max_iter + 1):
        val, g0, hess = smoothed(y, u)
        g = g0 + rho_bar * (y - x)
        gnorm = float(np.linalg.norm(g))
        H = hess + rho_bar * np.eye(n)
        hnorm = float(np.linalg.norm(H, 2))
        if gnorm <= tol * 1e-2:
            return y, k, gnorm
        try:
            step = -np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            step = -g / rho_bar
        if float(g @ step) >= 0:
            step = -g / rho_bar
        f0 = val + 0.5 * rho_bar * float((y - x) @ (y - x))
        # near the solution the Armijo decrease falls below roundoff in psi
        slack = 8.0 * np.finfo(float).eps * (1.0 + abs(f0))
        t = 1.0
        while t > 1e-10 and psi(y + t * step) > f0 + 1e-4 * t * float(g @ step) + slack:
            t *= 0.5
        if t <= 1e-10:
            # values no longer resolve the decrease; fall back to the gradient norm
            if np.linalg.norm(grad(y + step)) < gnorm:
                t = 1.0
            else:
                break
        y = y + t * step
        if t * np.linalg.norm(step) <= 1e-15 * (1.0 + np.linalg.norm(y)):
            gnorm = float(np.linalg.norm(grad(y)))
            break
    # gradient accuracy is limited by roundoff amplified through the Hessian
    floor = 1e3 * np.finfo(float).eps * hnorm * (1.0 + float(np.linalg.norm(y)))
    if gnorm > max(tol, floor):
        raise NonconvergenceError(f"smoothed envelope Newton stalled at {gnorm:.3g}", gnorm)
    return y, k, gnorm


def _smoothed_mc_envelope(problem, u, x, rho_bar, tol, max_iter, rng, samples):
    """Prox-gradient with Monte-Carlo gradients of ``f_u``.

    The residual cannot drop below the sampling noise, so the loop stops once
    it is under ``max(tol, 10 * noise)``: the reported residual then exceeds
    ten times the Monte-Carlo error.
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    lip = problem.lipschitz_estimate * math.sqrt(n) / u
    eta = 1.0 / (rho_bar + lip)
    y = x.copy()
    res = np.inf
    for k in range(1, max_iter + 1):
        g, se = smoothed_gradient_mc(problem.oracle, y, u, samples, rng)
        y_new = problem.regularizer.prox(y - eta * (g + rho_bar * (y - x)), eta)
        res = float(np.linalg.norm(y_new - y) / eta)
        y = y_new
        if res <= max(tol, 10.0 * float(np.linalg.norm(se))):
            return y, k, res
    raise NonconvergenceError(f"Monte-Carlo envelope solve stalled at {res:.3g}", res)


def _subgradient_envelope(problem, x, rho_bar, tol, max_iter):
    if problem.full_subgradient is None:
        raise CapabilityError("envelope evaluation needs structure or a full subgradient")
    x = np.asarray(x, dtype=float)
    mu = rho_bar - problem.rho_estimate
    y = x.copy()
    avg = x.copy()
    wsum = 0.0
    gmax = 0.0
    for k in range(max_iter):
        v = problem.full_subgradient(y) + rho_bar * (y - x)
        gmax = max(gmax, float(np.linalg.norm(v)))
        eta = 2.0 / (mu * (k + 2))
        y = problem.regularizer.prox(y - eta * v, eta)
        wsum += k + 1
        avg += (k + 1) / wsum * (y - avg)
    residual = math.sqrt(2.0) * gmax / (mu * math.sqrt(max_iter + 1))
    if residual > tol:
        raise NonconvergenceError(f"subgradient envelope bound {residual:.3g} above tolerance", residual)
    return avg, max_iter, residual


def moreau_envelope(problem: CompositeProblem, x, rho_bar: float,
                    smoothing: Optional[SmoothingParams] = None, max_iter: int = 10_000,
                    tol: float = 1e-8, rng: Optional[RngStream] = None,
                    mc_samples: int = 20_000) -> EnvelopeResult:
    """Envelope of ``phi`` (or of ``f_{u1} + r`` when ``smoothing`` is given) at ``x``."""
    if not rho_bar > problem.rho_estimate:
        raise IllPosedError(
            f"rho_bar={rho_bar} must exceed the weak-convexity estimate {problem.rho_estimate}")
    x = np.asarray(x, dtype=float)
    reg = problem.regularizer
    if smoothing is not None:
        u = smoothing.u1
        if problem.smoothed is not None and isinstance(reg, ZeroRegularizer):
            y0 = None
            if problem.structure is not None:
                # the unsmoothed minimizer is within O(u) of the smoothed one
                F = _Folded(problem.structure, problem.dimension, 0.0)
                y0 = _abs_sum_envelope(F, x, rho_bar, tol, max_iter)[0]
            y, it, res = _smoothed_newton_envelope(problem.smoothed, u, x, rho_bar, tol,
                                                   min(max_iter, 500), y0)
            return _envelope_result(x, y, problem.smoothed(y, u)[0], rho_bar, it, res,
                                    "closed-form smoothing newton")
        if rng is None:
            raise ValueError("Monte-Carlo smoothed envelope needs an rng")
        y, it, res = _smoothed_mc_envelope(problem, u, x, rho_bar, tol, max_iter, rng, mc_samples)
        val, _ = smoothed_value_mc(problem.oracle, y, u, mc_samples, rng)
        return _envelope_result(x, y, val + reg.value(y), rho_bar, it, res, "monte-carlo prox-gradient")

    if problem.structure is not None and isinstance(reg, (ZeroRegularizer, L1Regularizer)):
        w = reg.weight if isinstance(reg, L1Regularizer) else 0.0
        F = _Folded(problem.structure, problem.dimension, w)
        y, it, res, method = _abs_sum_envelope(F, x, rho_bar, tol, max_iter)
        return _envelope_result(x, y, F.value(y), rho_bar, it, res, method)

    y, it, res = _subgradient_envelope(problem, x, rho_bar, tol, max_iter)
    return _envelope_result(x, y, problem.full_objective(y), rho_bar, it, res, "averaged prox-subgradient")


# -- probes ------------------------------------------------------------------

def sample_ball(rng: RngStream, n: int, radius: float = 1.0, count: int = 1) -> np.ndarray:
    Z = rng.normal((count, n))
    Z /= np.linalg.norm(Z, axis=1, keepdims=True)
    return Z * (radius * rng.uniform(size=count) ** (1.0 / n))[:, None]


def sample_box(rng: RngStream, n: int, radius: float = 1.0, count: int = 1) -> np.ndarray:
    return rng.uniform(-radius, radius, size=(count, n))


@dataclass
class WeakConvexityProbe:
    rho_hat: float
    x: Optional[np.ndarray]
    y: Optional[np.ndarray]


def estimate_weak_convexity(problem: CompositeProblem, probes: int, rng: RngStream,
                            radius: float = 1.0, domain: str = "ball") -> WeakConvexityProbe:
    """``max(0, max_pairs -<v - w, x - y> / |x - y|^2)`` over random probe points."""
    if probes < 2:
        raise ValueError("need at least two probes")
    if problem.full_subgradient is None:
        raise CapabilityError("weak-convexity probing needs a full subgradient")
    sampler = {"ball": sample_ball, "box": sample_box}[domain]
    X = sampler(rng, problem.dimension, radius, probes)
    Vs = np.array([problem.full_subgradient(x) for x in X])
    best, pair = 0.0, (None, None)
    for i in range(probes - 1):
        dx = X[i] - X[i + 1:]
        dv = Vs[i] - Vs[i + 1:]
        den = np.einsum("ij,ij->i", dx, dx)
        ok = den > 0
        if not np.any(ok):
            continue
        ratio = -np.einsum("ij,ij->i", dv[ok], dx[ok]) / den[ok]
        k = int(np.argmax(ratio))
        if ratio[k] > best:
            j = i + 1 + int(np.flatnonzero(ok)[k])
            best, pair = float(ratio[k]), (X[i].copy(), X[j].copy())
    return WeakConvexityProbe(best, *pair)


def estimate_lipschitz(problem: CompositeProblem, probes: int, rng: RngStream,
                       radius: float = 1.0) -> float:
    """Largest full-subgradient norm over random points of a ball."""
    if problem.full_subgradient is None:
        raise CapabilityError("Lipschitz probing needs a full subgradient")
    X = sample_ball(rng, problem.dimension, radius, probes)
    return max(float(np.linalg.norm(problem.full_subgradient(x))) for x in X)


@dataclass
class HypomonotonicityCheck:
    lhs: float
    bound: float
    se: float
    holds: bool


def hypomonotonicity_probe(problem: CompositeProblem, pairs: int, u: float, samples: int,
                           rng: RngStream, rho_hat: float, lipschitz: float,
                           radius: float = 1.0) -> list[HypomonotonicityCheck]:
    """Check ``<grad f_u(x) - grad f_u(y), x - y> >= -rho|x-y|^2 - 4 L u |x-y|`` on random pairs.

    Smoothed gradients come from :func:`smoothed_gradient_mc`; each check
    is granted three standard errors of slack.
    """
    n = problem.dimension
    out = []
    for _ in range(pairs):
        x, y = sample_ball(rng, n, radius, 2)
        gx, sx = smoothed_gradient_mc(problem.oracle, x, u, samples, rng)
        gy, sy = smoothed_gradient_mc(problem.oracle, y, u, samples, rng)
        d = x - y
        dist = float(np.linalg.norm(d))
        lhs = float((gx - gy) @ d)
        se = float(np.sqrt(np.sum(d * d * (sx * sx + sy * sy))))
        bound = -rho_hat * dist * dist - 4.0 * lipschitz * u * dist
        out.append(HypomonotonicityCheck(lhs, bound, se, lhs >= bound - 3.0 * se))
    return out


# -- traces ------------------------------------------------------------------

@dataclass
class StationarityRow:
    t: int
    alpha: float
    grad_norm: float
    envelope_value: float
    inner_residual: float
    smoothed: bool
    status: str = "ok"


def stationarity_trace(record, problem: CompositeProblem, rho_bar: float, stride: int = 1,
                       smoothed: bool = True, **envelope_kw) -> list[StationarityRow]:
    """Envelope gradient norms at logged snapshots whose index is a multiple of ``stride``.

    With ``smoothed`` the envelope of ``f_{u1} + r`` uses ``u1 = alpha_t^2``
    when the problem has closed-form smoothing; otherwise the unsmoothed
    envelope is reported and the row says so. Failed points are flagged,
    not raised.
    """
    snaps = [p for p in record.snapshots() if p.t % stride == 0]
    if not snaps:
        raise ValueError("record has no iterate snapshots; rerun with snapshot logging enabled")
    use_smooth = smoothed and problem.smoothed is not None
    rows = []
    for p in snaps:
        sm = None
        if use_smooth:
            a = p.alpha if p.alpha <= 0.5 else 0.5
            sm = SmoothingParams(a * a, a ** 3)
        try:
            res = moreau_envelope(problem, p.x, rho_bar, smoothing=sm, **envelope_kw)
            rows.append(StationarityRow(p.t, p.alpha, res.grad_norm, res.envelope_value,
                                        res.inner_residual, use_smooth))
        except ZowcvxError as exc:
            rows.append(StationarityRow(p.t, p.alpha, float("nan"), float("nan"),
                                        getattr(exc, "residual", float("nan")), use_smooth,
                                        f"failed: {exc}"))
    return rows


def weighted_stationarity(rows) -> float:
    """``sum alpha_t |grad|^2 / sum alpha_t`` over successful rows."""
    ok = [r for r in rows if r.status == "ok"]
    if not ok:
        return float("nan")
    a = np.array([r.alpha for r in ok])
    g = np.array([r.grad_norm for r in ok])
    return float(a @ (g * g) / a.sum())
