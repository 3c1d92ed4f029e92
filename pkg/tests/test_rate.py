import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import optimize

from mh_ldp.kernel import MhKernel
from mh_ldp.measures import DiscreteMeasure, HybridMeasure, StateSpace, random_measure, relative_entropy
from mh_ldp.rate import (
    SolverError,
    extract_q,
    laplace_limit,
    legendre_check,
    rate_delta,
    rate_dual_dv,
    rate_from_split,
    rate_hybrid,
    rate_primal_sinkhorn,
    scgf_perron,
)
from mh_ldp.verify import random_finite_kernel

# 0.5 log(4 sqrt 3 / (3 + 2 sqrt 3)), evaluated with mpmath at 30 digits
TWO_STATE_HALF = 0.034668232097536955


def two_state_scan(K, a):
    """min over the one-parameter family of couplings with both marginals (a, 1 - a)."""
    def cost(s):
        g = np.array([[a - s, s], [s, 1 - a - s]])
        ref = np.array([a, 1 - a])[:, None] * K
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(g > 0, g * np.log(g / ref), 0.0)
        return terms.sum()
    res = optimize.minimize_scalar(cost, bounds=(0, min(a, 1 - a)), method="bounded",
                                   options={"xatol": 1e-12})
    return min(res.fun, cost(0.0), cost(min(a, 1 - a)))


def test_two_state_half(two_state):
    nu = DiscreteMeasure(two_state.space, [0.5, 0.5])
    rep = rate_primal_sinkhorn(nu, two_state, tol=1e-13, with_dual=True)
    assert rep.value == pytest.approx(TWO_STATE_HALF, abs=1e-11)
    assert rep.dual_value == pytest.approx(TWO_STATE_HALF, abs=1e-11)
    assert two_state_scan(two_state.K, 0.5) == pytest.approx(TWO_STATE_HALF, abs=1e-10)
    _, u = rate_dual_dv(nu, two_state)
    assert u[1] / u[0] == pytest.approx(math.sqrt(3), rel=1e-6)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.05, 0.95), st.floats(0.05, 0.95), st.floats(0.05, 0.95))
def test_two_state_matches_coupling_scan(a, p, q):
    K = np.array([[1 - p, p], [q, 1 - q]])
    nu = DiscreteMeasure(StateSpace.finite(2), [a, 1 - a])
    assert rate_primal_sinkhorn(nu, K).value == pytest.approx(two_state_scan(K, a), abs=1e-8)


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 8), st.integers(0, 2**32 - 1))
def test_iid_rows_reduce_to_relative_entropy(m, seed):
    rng = np.random.default_rng(seed)
    sp = StateSpace.finite(m)
    rho, nu = random_measure(sp, rng), random_measure(sp, rng)
    K = MhKernel.from_matrix(np.tile(rho.w, (m, 1)), sp)
    assert rate_primal_sinkhorn(nu, K).value == pytest.approx(relative_entropy(nu, rho), abs=1e-8)


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 8), st.integers(0, 2**32 - 1))
def test_primal_dual_and_basic_properties(m, seed):
    rng = np.random.default_rng(seed)
    k = random_finite_kernel(rng, m)
    nu = random_measure(k.space, rng)
    rep = rate_primal_sinkhorn(nu, k, with_dual=True)
    assert rep.value >= -1e-12
    assert abs(rep.gap) <= 1e-6
    assert rate_primal_sinkhorn(k.pi, k).value <= 1e-9
    # nu is invariant for the extracted kernel and the split reproduces the value
    q = rep.q
    np.testing.assert_allclose(nu.w @ q, nu.w, atol=1e-9)
    np.testing.assert_allclose(q.sum(axis=1), 1.0, atol=1e-12)
    assert rate_from_split(rep.split, None, nu, k) == pytest.approx(rep.value, abs=1e-10)
    np.testing.assert_allclose(rep.split.alpha + np.diag(rep.split.rho), q, atol=1e-15)


def test_split_shares_diagonal_by_acceptance(two_state):
    nu = DiscreteMeasure(two_state.space, [0.7, 0.3])
    rep = rate_primal_sinkhorn(nu, two_state)
    q00 = rep.q[0, 0]
    assert rep.split.rho[0] == pytest.approx(q00 * 0.25 / 0.75)
    assert rep.split.alpha[0, 0] == pytest.approx(q00 * 0.5 / 0.75)
    assert rep.split.rho[1] == 0.0


def test_extract_q_checks_marginal(two_state):
    nu = DiscreteMeasure(two_state.space, [0.5, 0.5])
    with pytest.raises(ValueError):
        extract_q(np.array([[0.7, 0.1], [0.1, 0.1]]), nu)


def test_infinite_rate_has_certificate():
    flip = MhKernel.from_matrix([[0.0, 1.0], [1.0, 0.0]])
    rep = rate_primal_sinkhorn(DiscreteMeasure.dirac(flip.space, 0), flip)
    assert rep.value == math.inf
    assert rep.certificate["rows"] == [0]
    half = DiscreteMeasure(flip.space, [0.5, 0.5])
    assert rate_primal_sinkhorn(half, flip).value == pytest.approx(0.0, abs=1e-12)
    d = rate_delta(flip, 1)
    assert d.value == math.inf and "K(x, x) = 0" in d.certificate["reason"]


def test_rate_delta_values(two_state):
    assert rate_delta(two_state, 0).value == pytest.approx(0.287682072451781, abs=1e-15)
    assert rate_delta(two_state, 1).value == pytest.approx(math.log(2), abs=1e-15)
    assert rate_delta(two_state, 0).continuum == pytest.approx(math.log(4))
    assert rate_delta(two_state, 1).continuum == math.inf
    # the single-atom measure gives the same value through the primal solver
    nu = DiscreteMeasure.dirac(two_state.space, 0)
    assert rate_primal_sinkhorn(nu, two_state).value == pytest.approx(-math.log(0.75), abs=1e-12)


def test_rate_hybrid_convex_split(two_state):
    hyb = HybridMeasure(two_state.pi, ((0, 1.0),), 0.5)
    res = rate_hybrid(hyb, two_state, compare_flat=True)
    assert res.value == pytest.approx(0.5 * -math.log(0.75), abs=1e-9)
    assert res.density_part == pytest.approx(0.0, abs=1e-9)
    # on a finite space the flattened measure can only do better
    assert res.flattened <= res.value + 1e-9


def test_scgf_closed_forms(two_state):
    assert scgf_perron(two_state, [0.0, 0.0]) == pytest.approx(0.0, abs=1e-14)
    assert scgf_perron(two_state, [0.7, 0.7]) == pytest.approx(0.7, abs=1e-12)
    expected = math.log((1.75 + math.sqrt(1.0625)) / 2)
    assert scgf_perron(two_state, [0.0, math.log(2)]) == pytest.approx(expected, abs=1e-12)


@settings(max_examples=15, deadline=None)
@given(st.integers(2, 6), st.integers(0, 2**32 - 1))
def test_legendre_identity(m, seed):
    rng = np.random.default_rng(seed)
    k = random_finite_kernel(rng, m)
    rep = legendre_check(k, rng.normal(size=m))
    assert rep.gap <= 1e-6
    np.testing.assert_allclose(rep.q_star.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(rep.nu_star.w @ rep.q_star, rep.nu_star.w, atol=1e-10)


def test_laplace_limit_is_a_minimum(two_state):
    f = np.array([0.3, -0.4])
    grid = np.linspace(0.0, 1.0, 2001)
    vals = [a * f[0] + (1 - a) * f[1] + rate_primal_sinkhorn(
        DiscreteMeasure(two_state.space, [a, 1 - a]), two_state).value for a in grid]
    assert laplace_limit(two_state, f) == pytest.approx(min(vals), abs=1e-6)
    assert laplace_limit(two_state, f) <= min(vals) + 1e-12


def test_solver_error_reports_residual():
    k = random_finite_kernel(np.random.default_rng(2), 6)
    nu = random_measure(k.space, np.random.default_rng(3))
    with pytest.raises(SolverError) as err:
        rate_primal_sinkhorn(nu, k, tol=1e-15, max_iter=2)
    assert err.value.residual > 0


def test_near_block_reference_converges():
    # three weakly linked blocks: plain scaling stalls here, the Newton stage finishes
    m = 30
    K = np.full((m, m), 1e-6)
    for b in range(3):
        K[b * 10:(b + 1) * 10, b * 10:(b + 1) * 10] = 0.1
    K /= K.sum(axis=1, keepdims=True)
    w = np.r_[np.full(10, 0.5), np.full(10, 0.3), np.full(10, 0.2)] / 10
    nu = DiscreteMeasure(StateSpace.finite(m), w)
    rep = rate_primal_sinkhorn(nu, K, tol=1e-12)
    assert rep.residual <= 1e-11
    dual, _ = rate_dual_dv(nu, K)
    assert rep.value == pytest.approx(dual, abs=1e-8)
