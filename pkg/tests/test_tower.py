import math

import numpy as np
import pytest

from lorentzlab import tower
from lorentzlab.errors import (DegenerateVariance, NonMarkovBase, ResolutionTooCoarse, TruncationTooHeavy)

RES = 256


@pytest.fixture(scope="module")
def doubling():
    tw = tower.build_tower(tower.AffineMap.doubling(), (0.0, 0.5))
    return tw, tower.transfer_matrix(tw, RES)


def test_return_time_law(doubling):
    tw, _ = doubling
    # relative to the base, R = k has measure 2^-k
    for k in range(1, 8):
        assert tw.return_words[k][1] == pytest.approx(2.0**-k)
    assert tw.tail_slope == pytest.approx(math.log(0.5), abs=1e-12)
    assert tw.truncated_mass < 1e-10


def test_whole_interval_base_is_trivial():
    tw = tower.build_tower(tower.AffineMap.doubling(), (0,))
    pass_levels = tw.max_level
    tw2 = tower.build_tower(tower.AffineMap.doubling(), [0, 1])
    assert tw2.max_level == 0 and tw2.truncated_mass == 0
    assert pass_levels > 0


def test_non_markov_base():
    with pytest.raises(NonMarkovBase):
        tower.build_tower(tower.AffineMap.doubling(), (0.0, 0.3))


def test_truncation_too_heavy():
    with pytest.raises(TruncationTooHeavy):
        tower.build_tower(tower.AffineMap.doubling(), (0,), max_level=5)


def test_resolution_too_coarse():
    tw = tower.build_tower(tower.AffineMap.doubling(), (0,))
    with pytest.raises(ResolutionTooCoarse):
        tower.transfer_matrix(tw, 2)


def test_column_stochastic_and_invariant(doubling):
    _, T = doubling
    assert np.max(np.abs(T.column_sums() - 1)) < 1e-10
    assert np.max(np.abs(T.matvec(T.invariant) - T.invariant)) < 1e-14
    assert np.max(np.abs(T.apply(np.ones(T.n_states)) - 1)) < 1e-12
    M = T.to_sparse()
    assert np.allclose(np.asarray(M.sum(axis=0)).ravel(), 1)


def test_level_indicator_returns(doubling):
    _, T = doubling
    mu = T.invariant * (T.level == 3)
    m = mu.sum()
    v = T.matvec(mu)
    # half the mass returns to level 0 after one step, the rest moves to level 4
    assert v[T.level == 0].sum() == pytest.approx(m / 2)
    assert v[T.level == 4].sum() == pytest.approx(m / 2)


def test_fourier_transfer_conjugate(doubling):
    _, T = doubling
    f = T.observable(lambda y: np.cos(2 * np.pi * y))
    A = tower.fourier_transfer(T, f, 0.3).to_sparse().toarray()
    B = tower.fourier_transfer(T, f, -0.3).to_sparse().toarray()
    assert np.allclose(B, A.conj())
    assert np.allclose(tower.fourier_transfer(T, f, 0.0).to_sparse().toarray(), T.to_sparse().toarray())


def test_leading_eigenvalue(doubling):
    _, T = doubling
    r = tower.leading_eigenvalue(T)
    assert abs(r.lam - 1) < 1e-10
    assert r.gap <= 0.6


def test_charfn_matches_orbits(doubling):
    _, T = doubling
    f = lambda y: np.cos(2 * np.pi * y)  # noqa: E731
    tf = tower.fourier_transfer(T, T.observable(f), 0.3).charfn(10)
    orbit = tower.orbit_charfn(tower.AffineMap.doubling(), f, 0.3, 10, points=200_000)
    assert abs(tf - orbit) < 2e-3


def test_green_kubo_oracles():
    m = tower.AffineMap.doubling()
    assert tower.green_kubo(m, lambda y: np.cos(2 * np.pi * y))["sigma2"] == pytest.approx(0.5, abs=1e-10)
    saw = tower.green_kubo(m, lambda y: y - 0.5)
    # Var = 1/12 and Corr(k) = 2^-k / 12, so sigma^2 = 1/12 + 2/12 = 1/4
    # linear interpolation smears the jump of the sawtooth
    assert saw["sigma2"] == pytest.approx(0.25, abs=1e-3)
    cob = tower.green_kubo(m, lambda y: np.cos(4 * np.pi * y) - np.cos(2 * np.pi * y))
    # interpolation error is O(h^2 f'') with h = 2^-16
    assert abs(cob["sigma2"]) < 1e-7


def test_expansion_fit_and_coboundary(doubling):
    _, T = doubling
    ts = np.linspace(0.02, 0.2, 6)
    f = T.observable(lambda y: np.cos(2 * np.pi * y) + 0.3)
    fit = tower.eigenvalue_expansion_fit(ts, tower.lambda_curve(T, f, ts))
    assert fit.a_fit == pytest.approx(0.3, rel=0.01)
    assert fit.sigma2_fit == pytest.approx(0.5, rel=0.02)
    cob = T.observable(lambda y: np.cos(4 * np.pi * y) - np.cos(2 * np.pi * y))
    with pytest.raises(DegenerateVariance):
        tower.eigenvalue_expansion_fit(ts, tower.lambda_curve(T, cob, ts))


def test_norms(doubling):
    _, T = doubling
    L = T.level.max()
    mild = np.exp(T.level * T.eps / 2)
    assert T.C_norm(mild) == pytest.approx(1.0)
    steep = np.exp(2 * T.level * T.eps)
    assert T.C_norm(steep) == pytest.approx(math.exp(L * T.eps))
    assert T.lip_seminorm(np.ones(T.n_states)) == 0


def test_doeblin_fortet(doubling):
    _, T = doubling
    df = tower.doeblin_fortet_check(T)
    assert df.passed and df.tau <= T.beta ** df.N + 0.05
    tw = T.tower
    bad = tower.transfer_matrix(tw, RES, eps=1.5 * math.log(2))
    assert not tower.doeblin_fortet_check(bad).passed


def test_doeblin_fortet_needs_suite(doubling):
    _, T = doubling
    with pytest.raises(ValueError):
        tower.doeblin_fortet_check(T, test_functions=[np.ones(T.n_states)])


def test_weights_reduce_to_exponential(doubling):
    _, T = doubling
    L = T.level.max()
    c = 1.1  # c^-delta > e^-eps, so the minimum always picks e^-eps
    W = tower.heavy_tail_weight_norms(T, np.full(L + 1, c), delta=0.5)
    assert np.allclose(W.level_weight, np.exp(-T.eps * np.arange(L + 1)), rtol=1e-14)


def run_profile(L, start=3, length=8):
    kbar = np.ones(L + 1)
    kbar[start:start + length] = 2.0 ** np.arange(1, length + 1)
    return kbar


def test_weights_decay_faster_on_run(doubling):
    _, T = doubling
    L = T.level.max()
    W = tower.heavy_tail_weight_norms(T, run_profile(L), delta=0.5)
    ratio = W.level_weight / np.exp(-T.eps * np.arange(L + 1))
    assert np.allclose(ratio[:5], 1)
    assert np.all(np.diff(ratio[4:12]) < 0)
    assert np.allclose(ratio[12:], ratio[12])


def test_weighted_continuity(doubling):
    _, T = doubling
    kbar = run_profile(T.level.max())
    W = tower.heavy_tail_weight_norms(T, kbar, delta=0.5)
    f = kbar[T.level] * T.observable(lambda y: np.cos(2 * np.pi * y))
    ts = 2.0 ** -np.arange(2, 14)
    curve = np.array([W.operator_C_norm_diff(f, t) for t in ts])
    assert np.all(np.diff(curve) < 0) and curve[-1] < curve[0] / 100
    lcurve = np.array([W.operator_L_norm_diff(f, t) for t in ts[::3]])
    assert np.all(np.diff(lcurve) < 0) and lcurve[-1] < 0.1


def test_correlation_decay(doubling):
    _, T = doubling
    saw = T.observable(lambda y: y - 0.5)
    d = tower.correlation_decay_check(T, saw, saw)
    assert d.tau == pytest.approx(0.5, abs=0.02)
    assert d.tau <= 0.6


def test_orthogonal_modes_decay_superexponentially(doubling):
    _, T = doubling
    c = T.observable(lambda y: np.cos(2 * np.pi * y))
    assert tower.correlation_decay_check(T, c, c).superexponential
    one = np.ones(T.n_states)
    d = tower.correlation_decay_check(T, one, one)
    assert np.allclose(d.correlations, 0, atol=1e-14)
