import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from zowcvx.core import RngStream
from zowcvx.diagnostics import estimate_weak_convexity
from zowcvx.problems import (BlindDeconvolutionInstance, PhaseRetrievalInstance, _smoothed_abs_square,
                             bd_full_objective, bd_full_subgradient, bd_proxpoint_subproblem,
                             bd_term, bd_term_subgradient, bd_weak_convexity,
                             blind_deconvolution_problem, generate_blind_deconvolution,
                             generate_instance, generate_phase_retrieval, phase_retrieval_problem,
                             pr_full_objective, pr_full_subgradient, pr_proxpoint_subproblem,
                             pr_smoothed, pr_term, pr_term_subgradient, pr_weak_convexity,
                             read_instance, rowdot, write_instance)


def test_phase_shapes_and_planting():
    inst = generate_phase_retrieval(10, 30, RngStream(0))
    assert inst.A.shape == (30, 10)
    assert np.linalg.norm(inst.x_bar) == pytest.approx(1, abs=1e-12)
    assert np.array_equal(inst.b, rowdot(inst.A, inst.x_bar) ** 2)
    assert pr_full_objective(inst, inst.x_bar) == 0.0
    assert pr_full_objective(inst, -inst.x_bar) == 0.0


def test_blind_shapes_and_planting():
    inst = generate_blind_deconvolution(20, 60, RngStream(0))
    assert inst.U.shape == inst.V.shape == (60, 20)
    assert np.linalg.norm(inst.z_bar) == pytest.approx(1, abs=1e-12)
    assert bd_full_objective(inst, inst.z_bar) == 0.0
    assert bd_full_objective(inst, np.concatenate([2 * inst.x_bar, inst.y_bar / 2])) == 0.0


def test_phase_hand_values():
    inst = PhaseRetrievalInstance.planted(np.array([[2.0]]), np.array([1.0]))
    assert inst.b[0] == 4
    assert pr_term(inst, 0, np.zeros(1)) == 4
    assert np.array_equal(pr_term_subgradient(inst, 0, np.zeros(1)), [0.0])


def test_blind_hand_values():
    inst = BlindDeconvolutionInstance.planted(np.ones((1, 1)), np.ones((1, 1)), np.ones(1), np.ones(1))
    z = np.array([2.0, 3.0])
    assert bd_term(inst, 0, z) == 5
    assert np.array_equal(bd_term_subgradient(inst, 0, z), [3.0, 2.0])


def test_index_range(phase_10_30, blind_5_15):
    for bad in (-1, 30):
        with pytest.raises(IndexError):
            pr_term(phase_10_30, bad, np.zeros(10))
    with pytest.raises(IndexError):
        bd_term(blind_5_15, 15, np.zeros(10))


def fd_grad(f, x, h=1e-6):
    e = np.eye(x.size)
    return np.array([(f(x + h * e[k]) - f(x - h * e[k])) / (2 * h) for k in range(x.size)])


def test_subgradients_match_finite_differences():
    rng = RngStream(3)
    pr = generate_phase_retrieval(3, 5, rng)
    bd = generate_blind_deconvolution(3, 5, rng)
    checked = 0
    for _ in range(30):
        x = rng.normal(3)
        for i in range(5):
            if abs(rowdot(pr.A[i], x) ** 2 - pr.b[i]) > 1e-3:
                fd = fd_grad(lambda y: pr_term(pr, i, y), x)
                assert np.allclose(pr_term_subgradient(pr, i, x), fd, atol=1e-4)
                checked += 1
        z = rng.normal(6)
        for i in range(5):
            if abs(rowdot(bd.U[i], z[:3]) * rowdot(bd.V[i], z[3:]) - bd.b[i]) > 1e-3:
                fd = fd_grad(lambda y: bd_term(bd, i, y), z)
                assert np.allclose(bd_term_subgradient(bd, i, z), fd, atol=1e-4)
    assert checked > 100


def test_full_subgradient_is_mean_of_terms(phase_10_30, blind_5_15, rng):
    x = rng.normal(10)
    avg = np.mean([pr_term_subgradient(phase_10_30, i, x) for i in range(30)], axis=0)
    assert np.allclose(pr_full_subgradient(phase_10_30, x), avg, atol=1e-13)
    avg = np.mean([bd_term_subgradient(blind_5_15, i, x) for i in range(15)], axis=0)
    assert np.allclose(bd_full_subgradient(blind_5_15, x), avg, atol=1e-13)


def test_kink_tie_rule_is_zero():
    inst = PhaseRetrievalInstance.planted(np.array([[1.0, 0.0]]), np.array([1.0, 0.0]))
    assert np.array_equal(pr_term_subgradient(inst, 0, np.array([1.0, 5.0])), [0.0, 0.0])


@pytest.mark.parametrize("kind", ["phase", "blind"])
def test_subgradient_rays(kind, rng):
    inst = generate_instance(kind, 4, 12, RngStream(5))
    prob = phase_retrieval_problem(inst) if kind == "phase" else blind_deconvolution_problem(inst)
    rho_hat = estimate_weak_convexity(prob, 200, rng, radius=2.0).rho_hat
    rho = max(rho_hat, prob.rho_estimate)
    term = pr_term if kind == "phase" else bd_term
    sub = pr_term_subgradient if kind == "phase" else bd_term_subgradient
    for _ in range(100):
        x = rng.normal(prob.dimension)
        v = rng.normal(prob.dimension)
        h = float(rng.uniform(0, 1))
        i = int(rng.integers(12))
        lhs = term(inst, i, x + h * v)
        # a single term is weakly convex with its own modulus; the problem's covers the mean
        rhs = term(inst, i, x) + h * sub(inst, i, x) @ v - 12 * rho * h * h * (v @ v)
        assert lhs >= rhs - 1e-9


def test_rho_estimates_bound_probes(rng):
    pr = generate_phase_retrieval(10, 30, RngStream(1))
    prob = phase_retrieval_problem(pr)
    assert prob.rho_estimate == pytest.approx(pr_weak_convexity(pr))
    assert prob.rho_estimate <= 2 * np.mean(np.sum(pr.A ** 2, axis=1)) + 1e-12
    assert estimate_weak_convexity(prob, 300, rng).rho_hat <= prob.rho_estimate + 1e-9
    bd = generate_blind_deconvolution(5, 15, RngStream(1))
    assert estimate_weak_convexity(blind_deconvolution_problem(bd), 300, rng).rho_hat \
        <= bd_weak_convexity(bd) + 1e-9


def line_grid_min(obj, lo, hi, points=10**6, rounds=3):
    best_val, best_t = np.inf, None
    for _ in range(rounds):
        ts = np.linspace(lo, hi, points)
        vals = obj(ts)
        k = int(np.argmin(vals))
        if vals[k] < best_val:
            best_val, best_t = vals[k], ts[k]
        w = (hi - lo) / 1000
        lo, hi = best_t - w, best_t + w
    return best_val


def test_phase_subproblem_beats_line_grid():
    rng = RngStream(21)
    inst = generate_phase_retrieval(10, 30, RngStream(2))
    for _ in range(100):
        x = rng.normal(10)
        i = int(rng.integers(30))
        alpha = float(10 ** rng.uniform(-3, 0.5))
        a = inst.A[i]
        y = pr_proxpoint_subproblem(inst, i, x, alpha)
        got = pr_term(inst, i, y) + (y - x) @ (y - x) / (2 * alpha)
        s0, aa, b = a @ x, a @ a, inst.b[i]

        def obj(t):
            s = s0 + t * aa
            return np.abs(s * s - b) + t * t * aa / (2 * alpha)

        span = 2 * (abs(s0) + np.sqrt(b) + 1) / aa
        assert got <= line_grid_min(obj, -span, span) + 1e-8
        # minimizer displacement is parallel to a_i
        d = y - x
        assert np.linalg.norm(d - (d @ a) / aa * a) <= 1e-12 * (1 + np.linalg.norm(d))


def test_blind_subproblem_beats_plane_grid():
    rng = RngStream(22)
    inst = generate_blind_deconvolution(5, 15, RngStream(3))
    for _ in range(100):
        z = rng.normal(10)
        i = int(rng.integers(15))
        alpha = float(10 ** rng.uniform(-3, 0.5))
        y = bd_proxpoint_subproblem(inst, i, z, alpha)
        got = bd_term(inst, i, y) + (y - z) @ (y - z) / (2 * alpha)
        u, v = inst.U[i], inst.V[i]
        p0, q0, uu, vv = u @ z[:5], v @ z[5:], u @ u, v @ v

        def obj(P, Q):
            return np.abs(P * Q - inst.b[i]) + ((P - p0) ** 2 / uu + (Q - q0) ** 2 / vv) / (2 * alpha)

        R = 2 * (abs(p0) + abs(q0) + np.sqrt(abs(inst.b[i])) + 1)
        lo, hi = np.array([-R, -R]), np.array([R, R])
        best = np.inf
        for _ in range(7):
            P, Q = np.meshgrid(np.linspace(lo[0], hi[0], 401), np.linspace(lo[1], hi[1], 401))
            vals = obj(P, Q)
            k = np.unravel_index(np.argmin(vals), vals.shape)
            best = min(best, vals[k])
            c = np.array([P[k], Q[k]])
            w = (hi - lo) / 20
            lo, hi = c - w, c + w
        assert got <= best + 1e-8


@pytest.mark.parametrize("kind", ["phase", "blind"])
def test_subproblem_limits(kind):
    inst = generate_instance(kind, 4, 8, RngStream(4))
    solve = pr_proxpoint_subproblem if kind == "phase" else bd_proxpoint_subproblem
    planted = inst.x_bar if kind == "phase" else inst.z_bar
    assert np.allclose(solve(inst, 3, planted, 0.7), planted, atol=1e-14)
    x = RngStream(9).normal(planted.size)
    assert np.allclose(solve(inst, 3, x, 1e-12), x, atol=1e-10)
    with pytest.raises(ValueError):
        solve(inst, 3, x, 0.0)


def test_smoothed_closed_form_against_monte_carlo():
    rng = RngStream(31)
    for mu, sigma, b in [(0.3, 0.2, 0.5), (-1.2, 0.7, 0.1), (0.0, 1.0, 2.0), (2.0, 0.05, 4.0)]:
        S = mu + sigma * rng.normal(400000)
        samples = np.abs(S * S - b)
        h = _smoothed_abs_square(mu, sigma, b)[0]
        assert abs(samples.mean() - h) <= 4 * samples.std() / np.sqrt(S.size)


def test_smoothed_derivatives_against_finite_differences():
    for mu, sigma, b in [(0.3, 0.2, 0.5), (-1.2, 0.7, 0.1), (0.7, 0.01, 0.49), (2.0, 0.05, 0.0)]:
        eps = 1e-6 * max(1.0, sigma)
        f = lambda m: _smoothed_abs_square(m, sigma, b)
        _, d1, d2 = f(mu)
        assert d1 == pytest.approx((f(mu + eps)[0] - f(mu - eps)[0]) / (2 * eps), rel=1e-6, abs=1e-7)
        assert d2 == pytest.approx((f(mu + eps)[1] - f(mu - eps)[1]) / (2 * eps), rel=1e-5, abs=1e-5)


def test_pr_smoothed_tends_to_objective(phase_10_30, rng):
    x = rng.normal(10)
    v, g, H = pr_smoothed(phase_10_30, x, 1e-7)
    assert v == pytest.approx(pr_full_objective(phase_10_30, x), rel=1e-6)
    assert np.allclose(g, pr_full_subgradient(phase_10_30, x), rtol=1e-5, atol=1e-8)
    assert np.allclose(H, H.T)


@pytest.mark.parametrize("kind", ["phase", "blind"])
def test_instance_round_trip(kind, tmp_path):
    inst = generate_instance(kind, 3, 7, RngStream(12345))
    path = tmp_path / "inst.csv"
    write_instance(inst, path)
    back = read_instance(path)
    assert type(back) is type(inst) and back.seed == inst.seed
    for name in ("b", "x_bar") + (("A",) if kind == "phase" else ("U", "V", "y_bar")):
        assert np.array_equal(getattr(back, name), getattr(inst, name))
    assert path.read_text().splitlines()[0] == "# kind,d,m,seed"


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32), d=st.integers(1, 6), m=st.integers(1, 10), c=st.floats(0.1, 10))
def test_planted_zero_property(seed, d, m, c):
    rng = RngStream(seed)
    pr = generate_phase_retrieval(d, m, rng)
    assert pr_full_objective(pr, pr.x_bar) == 0.0
    assert pr_full_objective(pr, -pr.x_bar) == 0.0
    bd = generate_blind_deconvolution(d, m, rng)
    assert bd_full_objective(bd, bd.z_bar) == 0.0
    assert bd_full_objective(bd, np.concatenate([c * bd.x_bar, bd.y_bar / c])) <= 1e-12
