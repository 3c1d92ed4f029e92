import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from mh_ldp.measures import (
    CapabilityError,
    DiscreteMeasure,
    HybridMeasure,
    StateSpace,
    joint_relative_entropy,
    lp_distance,
    random_measure,
    relative_entropy,
    tv_norm,
    w1_distance,
)


def weights(m):
    return st.lists(st.floats(0.01, 1.0), min_size=m, max_size=m).map(lambda w: np.asarray(w) / sum(w))


def pair(max_m=6):
    return st.integers(2, max_m).flatmap(lambda m: st.tuples(weights(m), weights(m)))


def lp_bisection(mu, nu, d, tol=1e-11):
    """Levy-Prohorov distance straight from the definition, by bisection on eps."""
    m = len(mu)
    subsets = [s for r in range(1, m + 1) for s in itertools.combinations(range(m), r)]

    def ok(eps):
        for a, b in ((mu, nu), (nu, mu)):
            for A in subsets:
                near = [x for x in range(m) if min(d[x, y] for y in A) < eps]
                if a[list(A)].sum() > b[near].sum() + eps + 1e-15:
                    return False
        return True

    lo, hi = 0.0, 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        lo, hi = (lo, mid) if ok(mid) else (mid, hi)
    return hi


def test_normalization_guard():
    sp = StateSpace.finite(3)
    with pytest.raises(ValueError):
        DiscreteMeasure(sp, [0.5, 0.5, 0.1])
    with pytest.raises(ValueError):
        DiscreteMeasure(sp, [1.2, -0.1, -0.1])
    mu = DiscreteMeasure(sp, [0.2, 0.3, 0.5 + 5e-13])
    assert mu.w.sum() == pytest.approx(1.0, abs=1e-15)
    with pytest.raises(ValueError):
        mu.w[0] = 1.0


def test_grid_space_geometry():
    sp = StateSpace.grid(0.0, 1.0, 4)
    assert sp.h == 0.25
    np.testing.assert_allclose(sp.points, [0.125, 0.375, 0.625, 0.875])
    assert sp.cell_of(0.3) == 1
    assert sp.cell_of(1.0) == 3
    assert sp.boundary_distance(0.125) == 0.125


def test_finite_space_rejects_bad_metric():
    with pytest.raises(ValueError):
        StateSpace.finite(3, distances=[[0, 1, 5], [1, 0, 1], [5, 1, 0]])
    with pytest.raises(ValueError):
        StateSpace.finite(2, distances=[[0, 1], [2, 0]])


def test_relative_entropy_values():
    sp = StateSpace.finite(2)
    mu = DiscreteMeasure(sp, [0.5, 0.5])
    nu = DiscreteMeasure(sp, [0.25, 0.75])
    expected = 0.5 * math.log(2) + 0.5 * math.log(2 / 3)
    assert relative_entropy(mu, nu) == pytest.approx(expected, abs=1e-15)
    assert relative_entropy(mu, DiscreteMeasure.dirac(sp, 0)) == math.inf
    assert relative_entropy(DiscreteMeasure.dirac(sp, 0), mu) == pytest.approx(math.log(2))


@settings(max_examples=60, deadline=None)
@given(pair())
def test_relative_entropy_gibbs(ws):
    a, b = ws
    sp = StateSpace.finite(len(a))
    mu, nu = DiscreteMeasure.normalized(sp, a), DiscreteMeasure.normalized(sp, b)
    assert relative_entropy(mu, nu) >= -1e-15
    assert relative_entropy(mu, mu) == pytest.approx(0.0, abs=1e-15)
    # Pinsker: (sum |mu - nu|)^2 <= 2 R
    assert tv_norm(mu, nu) ** 2 <= 2 * relative_entropy(mu, nu) + 1e-12


def test_chain_rule_joint_entropy(two_state):
    # R(mu (x) q || mu (x) K) = sum_i mu_i R(q_i || K_i)
    sp = two_state.space
    mu = DiscreteMeasure(sp, [0.3, 0.7])
    q = np.array([[0.6, 0.4], [0.1, 0.9]])
    gamma = mu.w[:, None] * q
    rows = sum(mu.w[i] * relative_entropy(DiscreteMeasure(sp, q[i]), DiscreteMeasure(sp, two_state.K[i]))
               for i in range(2))
    assert joint_relative_entropy(gamma, mu, two_state) == pytest.approx(rows, abs=1e-14)


@settings(max_examples=60, deadline=None)
@given(pair())
def test_tv_symmetric_and_bounded(ws):
    a, b = ws
    sp = StateSpace.finite(len(a))
    mu, nu = DiscreteMeasure.normalized(sp, a), DiscreteMeasure.normalized(sp, b)
    assert tv_norm(mu, nu) == pytest.approx(tv_norm(nu, mu))
    assert 0 <= tv_norm(mu, nu) <= 2 + 1e-12


@settings(max_examples=25, deadline=None)
@given(pair(max_m=4), st.integers(0, 2**31 - 1))
def test_lp_matches_definition(ws, seed):
    a, b = ws
    m = len(a)
    rng = np.random.default_rng(seed)
    coords = np.sort(rng.uniform(0, 1, m))
    sp = StateSpace.finite(m, coords=coords)
    mu, nu = DiscreteMeasure.normalized(sp, a), DiscreteMeasure.normalized(sp, b)
    expected = lp_bisection(mu.w, nu.w, sp.distance_matrix())
    assert lp_distance(mu, nu) == pytest.approx(expected, abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(pair(max_m=8))
def test_lp_bounded_by_tv_discrete_metric(ws):
    a, b = ws
    sp = StateSpace.finite(len(a))
    mu, nu = DiscreteMeasure.normalized(sp, a), DiscreteMeasure.normalized(sp, b)
    # under the 0/1 metric the LP distance equals the total variation distance
    assert lp_distance(mu, nu) == pytest.approx(0.5 * tv_norm(mu, nu), abs=1e-12)


def test_lp_capability_limit():
    sp = StateSpace.finite(21)
    mu = DiscreteMeasure.uniform(sp)
    with pytest.raises(CapabilityError, match="m <= 20"):
        lp_distance(mu, mu)


@settings(max_examples=40, deadline=None)
@given(pair(max_m=10))
def test_w1_matches_scipy(ws):
    a, b = ws
    sp = StateSpace.grid(-1.0, 2.0, len(a))
    mu, nu = DiscreteMeasure.normalized(sp, a), DiscreteMeasure.normalized(sp, b)
    expected = stats.wasserstein_distance(sp.points, sp.points, mu.w, nu.w)
    assert w1_distance(mu, nu) == pytest.approx(expected, abs=1e-12)


def test_hybrid_flatten_roundtrip():
    sp = StateSpace.grid(0, 1, 8)
    dens = DiscreteMeasure.uniform(sp)
    hyb = HybridMeasure(dens, ((2, 0.25), (5, 0.75)), 0.4)
    flat = hyb.flatten()
    assert flat.w[2] == pytest.approx(0.6 / 8 + 0.4 * 0.25)
    back = HybridMeasure.unflatten(flat, hyb.atoms, hyb.p)
    np.testing.assert_allclose(back.density.w, dens.w, atol=1e-15)
    again = HybridMeasure.from_dict(hyb.to_dict())
    np.testing.assert_allclose(again.flatten().w, flat.w)


def test_hybrid_validation():
    sp = StateSpace.grid(0, 1, 4)
    dens = DiscreteMeasure.uniform(sp)
    with pytest.raises(ValueError):
        HybridMeasure(dens, ((1, 0.5), (1, 0.5)), 0.5)
    with pytest.raises(ValueError):
        HybridMeasure(dens, ((1, 0.5),), 0.5)
    with pytest.raises(ValueError):
        HybridMeasure(dens, ((1, 1.0),), 1.5)


def test_measure_serialization_roundtrip(rng):
    sp = StateSpace.finite(5, coords=[0, 1, 2, 4, 8])
    mu = random_measure(sp, rng)
    back = DiscreteMeasure.from_dict(mu.to_dict())
    np.testing.assert_array_equal(back.w, mu.w)
    assert back.space.to_dict() == sp.to_dict()


def test_random_measure_support(rng):
    sp = StateSpace.finite(6)
    mu = random_measure(sp, rng, support=[1, 4])
    assert set(np.flatnonzero(mu.w)) == {1, 4}
