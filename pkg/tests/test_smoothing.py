import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import erf

from zowcvx.core import RngStream, deterministic_oracle
from zowcvx.errors import EstimatorFailure, ScheduleViolation
from zowcvx.smoothing import (SmoothingParams, TheoryConstants, schedule_params,
                              smoothed_gradient_mc, smoothed_value_mc, two_point_estimate)

ABS = deterministic_oracle(lambda x: abs(float(x[0])), 1)


def linear(a):
    a = np.asarray(a, dtype=float)
    return deterministic_oracle(lambda x: float(a @ x), a.size)


def test_constant_function_gives_zero(rng):
    o = deterministic_oracle(lambda x: 3.0, 4)
    g, _ = two_point_estimate(o, np.ones(4), SmoothingParams(0.2, 0.05), rng)
    assert np.array_equal(g, np.zeros(4))


def test_linear_function_forced_direction(rng):
    g, rec = two_point_estimate(linear([2, 3]), np.zeros(2), SmoothingParams(0.2, 0.1), rng,
                                z2=np.array([1.0, 0.0]))
    assert g == pytest.approx([2.0, 0.0], abs=1e-12)
    assert rec.f_shifted - rec.f_base == pytest.approx(0.2, abs=1e-14)


def test_both_evaluations_share_xi(rng):
    seen = []

    class Spy:
        dimension = 1

        def sample(self, r):
            return int(r.integers(1000))

        def eval(self, x, xi):
            seen.append(xi)
            return float(x[0])

    two_point_estimate(Spy(), np.zeros(1), SmoothingParams(0.2, 0.05), rng)
    assert len(seen) == 2 and seen[0] == seen[1]


def test_nonfinite_oracle_value_is_reported(rng):
    o = deterministic_oracle(lambda x: float("nan"), 2)
    with pytest.raises(EstimatorFailure) as err:
        two_point_estimate(o, np.zeros(2), SmoothingParams(0.2, 0.05), rng)
    assert err.value.point.shape == (2,)


def test_abs_estimate_mean_at_zero():
    rng = RngStream(17)
    p = SmoothingParams(0.2, 0.05)
    g = np.array([two_point_estimate(ABS, np.zeros(1), p, rng)[0][0] for _ in range(200000)])
    assert abs(g.mean()) < 3 * g.std(ddof=1) / math.sqrt(g.size)


def test_schedule_params():
    assert schedule_params(0.1) == SmoothingParams(0.1 ** 2, 0.1 ** 3)
    p = schedule_params(0.5)
    assert (p.u1, p.u2) == (0.25, 0.125)
    with pytest.raises(ScheduleViolation, match="u2 <= u1/2"):
        schedule_params(0.6)
    with pytest.raises(ScheduleViolation):
        schedule_params(0.0)


def test_params_invariants():
    with pytest.raises(ScheduleViolation):
        SmoothingParams(0.1, 0.06)
    with pytest.raises(ScheduleViolation):
        SmoothingParams(0.0, 0.0)


def test_theory_constants_positive():
    TheoryConstants(E=1.0)
    with pytest.raises(ValueError):
        TheoryConstants(G=0.0)


def test_value_mc_affine_unchanged(rng):
    v, se = smoothed_value_mc(linear([1, -2, 0.5]), np.array([1.0, 1.0, 1.0]), 0.7, 20000, rng)
    assert abs(v - (-0.5)) <= 3 * se


def test_value_mc_abs_at_zero(rng):
    v, se = smoothed_value_mc(ABS, np.zeros(1), 1.0, 200000, rng)
    assert abs(v - math.sqrt(2 / math.pi)) <= 3 * se


def test_value_mc_tiny_radius(rng):
    v, se = smoothed_value_mc(ABS, np.array([5.0]), 1e-8, 1000, rng)
    assert abs(v - 5) <= 3 * se + 1e-12


def test_gradient_mc_affine(rng):
    g, se = smoothed_gradient_mc(linear([1, -2]), np.zeros(2), 0.5, 20000, rng)
    assert np.all(np.abs(g - [1, -2]) <= 3 * se + 1e-12)


def test_gradient_mc_abs(rng):
    g, se = smoothed_gradient_mc(ABS, np.zeros(1), 0.5, 100000, rng)
    assert abs(g[0]) <= 3 * se[0]
    g, se = smoothed_gradient_mc(ABS, np.ones(1), 0.5, 200000, rng)
    assert abs(g[0] - erf(1 / (0.5 * math.sqrt(2)))) <= 3 * se[0]


def test_mc_needs_two_samples(rng):
    with pytest.raises(ValueError):
        smoothed_value_mc(ABS, np.zeros(1), 0.1, 1, rng)
    with pytest.raises(ValueError):
        smoothed_gradient_mc(ABS, np.zeros(1), 0.1, 1, rng)


def test_second_moment_stable_across_halves():
    rng = RngStream(99)
    f = deterministic_oracle(lambda x: float(np.abs(x).sum()), 3)
    p = SmoothingParams(0.2, 0.05)
    sq = np.array([np.sum(two_point_estimate(f, np.full(3, 0.1), p, rng)[0] ** 2)
                   for _ in range(100000)])
    a, b = sq[::2].mean(), sq[1::2].mean()
    assert np.isfinite(a) and abs(a - b) / max(a, b) < 0.2


@settings(max_examples=40, deadline=None)
@given(alpha=st.floats(1e-6, 0.5))
def test_schedule_params_respects_ratio(alpha):
    p = schedule_params(alpha)
    assert 0 < p.u2 <= p.u1 / 2


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32), a=st.lists(st.floats(-5, 5), min_size=1, max_size=4))
def test_linear_estimate_is_projection(seed, a):
    a = np.array(a)
    rng = RngStream(seed)
    z2 = rng.normal(a.size)
    g, _ = two_point_estimate(linear(a), rng.normal(a.size), SmoothingParams(0.3, 0.1), rng, z2=z2)
    assert np.allclose(g, (a @ z2) * z2, atol=1e-9 * (1 + np.abs(a).sum() * (z2 @ z2)))
