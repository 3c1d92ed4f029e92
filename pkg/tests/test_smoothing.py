import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mh_ldp import smoothing
from mh_ldp.kernel import MhKernel
from mh_ldp.measures import DiscreteMeasure, StateSpace, tv_norm, w1_distance
from mh_ldp.rate import rate_primal_sinkhorn
from mh_ldp.verify import gaussian_instance, plateau_instance


def hand_kernel(m, a_rows, r):
    """Grid kernel whose acceptance density in row i is the constant a_rows[i]."""
    sp = StateSpace.grid(0.0, 1.0, m)
    a = np.repeat(np.asarray(a_rows, dtype=float)[:, None] * sp.h, m, axis=1)
    r = np.asarray(r, dtype=float)
    return MhKernel(sp, a, r, a + np.diag(r))


def flat_kernel(m, r=0.25):
    return hand_kernel(m, np.full(m, 1 - r), np.full(m, r))


def lipschitz_kernel(m, L=2.0, c=0.05):
    sp = StateSpace.grid(0.0, 1.0, m)
    a = c * np.exp(L * sp.points)
    return hand_kernel(m, a, 1 - a)


def delta_scan(kernel, x, eps, steps=64):
    """Fine scan of t straight from the definition, over every cell meeting B_t(x)."""
    sp = kernel.space
    h = sp.h
    a = kernel.a / h
    xc = sp.points[x]
    cap = sp.boundary_distance(xc)
    best = 0.0
    for t in np.arange(0.0, cap + 1e-15, h / steps):
        J = np.flatnonzero(np.abs(sp.points - xc) < t + h / 2)
        la = np.abs(np.log(a[np.ix_(J, J)]) - math.log(a[x, x]))
        lr = np.abs(np.log(kernel.r[J]) - math.log(kernel.r[x]))
        if la.max() >= eps or lr.max() >= eps:
            break
        best = t
    return best


def test_flat_kernel_reaches_boundary_cap():
    k = flat_kernel(64)
    x = k.space.cell_of(0.3)
    assert smoothing.delta_eps(k, x, 1e-3) == pytest.approx(k.space.boundary_distance(k.space.points[x]))


@pytest.mark.parametrize("eps", [0.02, 0.05, 0.1, 0.3])
def test_delta_matches_fine_scan_and_lipschitz_rate(eps):
    k = lipschitz_kernel(256)
    x = k.space.cell_of(0.4)
    d = smoothing.delta_eps(k, x, eps)
    assert d == pytest.approx(delta_scan(k, x, eps), abs=k.h / 64)
    assert abs(d - eps / 2.0) <= k.h


@settings(max_examples=20, deadline=None)
@given(st.floats(1e-3, 0.5), st.floats(0.15, 0.85))
def test_delta_monotone_in_eps(eps, x):
    k = gaussian_instance(256)
    i = k.space.cell_of(x)
    assert smoothing.delta_eps(k, i, eps / 2) <= smoothing.delta_eps(k, i, eps)


def test_delta_preconditions(two_state):
    k = hand_kernel(16, np.ones(16), np.zeros(16))
    with pytest.raises(ValueError, match="r\\(x\\) > 0"):
        smoothing.delta_eps(k, 3, 0.1)


def test_sample_atoms_reproducible_and_on_atoms():
    sp = StateSpace.grid(0, 1, 128)
    s1 = smoothing.sample_atoms(sp, [10, 60, 100], [0.2, 0.5, 0.3], 20_000, seed=4)
    s2 = smoothing.sample_atoms(sp, [10, 60, 100], [0.2, 0.5, 0.3], 20_000, seed=4)
    np.testing.assert_array_equal(s1.draws, s2.draws)
    assert set(np.unique(s1.draws)) <= {10, 60, 100}
    freq = np.array([np.mean(s1.draws == c) for c in (10, 60, 100)])
    np.testing.assert_allclose(freq, [0.2, 0.5, 0.3], atol=0.015)
    with pytest.raises(ValueError):
        smoothing.sample_atoms(sp, [1, 2], [0.5, 0.6], 10, seed=1)


def test_single_atom_radius_formula():
    k = lipschitz_kernel(512)
    x = k.space.cell_of(0.3)
    sample = smoothing.sample_atoms(k.space, [x], [1.0], 64, seed=0)
    for n in (1, 8, 64):
        st_ = smoothing.varrho_n(sample, n, k)
        xc = k.space.points[x]
        expected = min(1 / n, smoothing.delta_eps(k, x, 1 / n), 0.5 * k.space.boundary_distance(xc),
                       k.a[x, x] / k.h)
        assert st_.varrho == pytest.approx(expected)
        assert st_.terms["separation"] == math.inf
        assert st_.varrho <= 1 / n


def test_pairwise_term_caps_radius():
    k = flat_kernel(1000)
    sp = k.space
    cells = [sp.cell_of(0.3), sp.cell_of(0.7)]
    sample = smoothing.sample_atoms(sp, cells, [0.5, 0.5], 50, seed=2)
    st_ = smoothing.varrho_n(sample, 2, k) if len(set(sample.draws[:2])) == 2 else None
    st_ = st_ or smoothing.varrho_n(sample, 50, k)
    d = abs(sp.points[cells[1]] - sp.points[cells[0]])
    assert st_.terms["separation"] == pytest.approx(d / 2)
    assert d / 2 == pytest.approx(0.2, abs=sp.h)


def test_radius_requires_positive_rejection():
    k = hand_kernel(32, np.r_[np.ones(16), np.full(16, 0.5)], np.r_[np.zeros(16), np.full(16, 0.5)])
    sample = smoothing.sample_atoms(k.space, [4], [1.0], 4, seed=0)
    with pytest.raises(ValueError, match="r = 0"):
        smoothing.varrho_n(sample, 4, k)


def test_single_atom_n1_is_uniform_interval():
    k = flat_kernel(1024)
    x = k.space.cell_of(0.5)
    st_ = smoothing.varrho_n(smoothing.sample_atoms(k.space, [x], [1.0], 1, seed=0), 1, k)
    nu = smoothing.build_nu_s_n(st_)
    inside = nu.w[nu.w > 0]
    # interior cells carry h / (2 varrho), the two edge cells the remainder
    np.testing.assert_allclose(inside[1:-1], k.h / (2 * st_.varrho), rtol=1e-12)
    assert inside.sum() == pytest.approx(1.0, abs=1e-12)


def test_resolution_error():
    k = flat_kernel(64)
    sample = smoothing.sample_atoms(k.space, [20], [1.0], 64, seed=0)
    st_ = smoothing.varrho_n(sample, 64, k)
    with pytest.raises(smoothing.ResolutionError, match="finer grid"):
        smoothing.build_nu_s_n(st_)


@pytest.fixture(scope="module")
def plateau_states():
    k = plateau_instance(1024)
    sp = k.space
    cells = [sp.cell_of(x) for x in (0.4, 0.5, 0.6)]
    sample = smoothing.sample_atoms(sp, cells, [0.3, 0.4, 0.3], 128, seed=7)
    return k, sample, [smoothing.varrho_n(sample, n, k) for n in (4, 16, 64, 128)]


def test_smoothed_measure_and_kernel(plateau_states):
    k, sample, states = plateau_states
    for st_ in states:
        nu = smoothing.build_nu_s_n(st_)
        q = smoothing.build_q_n(st_)
        assert nu.w.sum() == pytest.approx(1.0, abs=1e-10)
        np.testing.assert_allclose(q.sum(axis=1), 1.0, atol=1e-12)
        assert smoothing.invariance_residual(nu, q) <= 1e-12
        outside = nu.w == 0
        np.testing.assert_array_equal(q[outside], np.eye(k.m)[outside])
        assert w1_distance(nu, sample.empirical(st_.n)) <= st_.varrho + 1e-12


def test_bound_dominates_rate(plateau_states):
    k, _, states = plateau_states
    for st_ in states:
        I = rate_primal_sinkhorn(smoothing.build_nu_s_n(st_), k).value
        assert math.isfinite(I)
        assert I <= smoothing.smoothing_bound(st_, k) + 1e-6


def test_touching_balls_share_a_cell():
    # atoms 0.1 apart give balls that meet inside one cell at small n
    k = plateau_instance(1024)
    sp = k.space
    sample = smoothing.sample_atoms(sp, [sp.cell_of(0.4), sp.cell_of(0.5)], [0.5, 0.5], 8, seed=1)
    st_ = smoothing.varrho_n(sample, 8, k)
    nu = smoothing.build_nu_s_n(st_)
    q = smoothing.build_q_n(st_)
    assert smoothing.invariance_residual(nu, q) <= 1e-12
    np.testing.assert_allclose(q.sum(axis=1), 1.0, atol=1e-12)


def test_bound_log_term_per_draw():
    k = flat_kernel(2048, r=0.25)
    x = k.space.cell_of(0.5)
    st_ = smoothing.varrho_n(smoothing.sample_atoms(k.space, [x], [1.0], 64, seed=0), 64, k)
    V, n = st_.V, 64
    rest = -V * math.log(V / 2) + V / n + 1 / n
    assert smoothing.smoothing_bound(st_, k) - rest == pytest.approx(math.log(4), abs=1e-12)


def test_q_requires_small_volume():
    k = flat_kernel(256)
    x = k.space.cell_of(0.5)
    st_ = smoothing.varrho_n(smoothing.sample_atoms(k.space, [x], [1.0], 1, seed=0), 1, k)
    st_.varrho = 0.6
    with pytest.raises(ValueError, match="larger n"):
        smoothing.build_q_n(st_)


def test_mix_with_target(two_state):
    pi = two_state.pi
    nu_dag = DiscreteMeasure.dirac(two_state.space, 0)
    nu_star = smoothing.mix_with_target(nu_dag, 0.4, pi)
    assert tv_norm(nu_star, nu_dag) == pytest.approx(0.1 * tv_norm(pi, nu_dag), abs=1e-15)
    assert np.all(nu_star.w >= 0.1 * pi.w - 1e-15)
    assert rate_primal_sinkhorn(nu_star, two_state).value <= 0.9 * 0.287682072451781 + 1e-6
    np.testing.assert_allclose(smoothing.mix_with_target(pi, 1.0, pi).w, pi.w)
    for bad in (0.0, 2.0, -1.0):
        with pytest.raises(ValueError):
            smoothing.mix_with_target(nu_dag, bad, pi)
