import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lorentzlab import oracle
from lorentzlab.errors import ParameterOrder, ParityViolation


def test_binomial_small():
    pmf = oracle.exact_pmf(oracle.LatticeWalkSpec.ssrw(1), 10)
    assert pmf.at([0]) == pytest.approx(0.24609375, abs=1e-15)
    assert pmf.total == pytest.approx(1.0, abs=1e-12)


def test_ssrw2_small():
    pmf = oracle.exact_pmf(oracle.LatticeWalkSpec.ssrw(2), 2)
    assert pmf.at([0, 0]) == pytest.approx(0.25, abs=1e-15)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 60), st.integers(-60, 60))
def test_inversion_matches_binomial(n, k):
    exact = oracle.exact_pmf(oracle.LatticeWalkSpec.ssrw(1), n).at([k])
    assert oracle.inversion_pmf(n, k) == pytest.approx(exact, abs=1e-12)


def test_pmf_moments():
    pmf = oracle.exact_pmf(oracle.LatticeWalkSpec.ssrw(2), 40).to_array()
    assert np.allclose(pmf.mean(), 0, atol=1e-12)
    assert np.allclose(pmf.cov(), np.eye(2) * 20, atol=1e-9)


def test_parity_violation():
    with pytest.raises(ParityViolation):
        oracle.lclt_limit_check(oracle.LatticeWalkSpec.ssrw(1), [10], [[1]])


def test_return_probabilities():
    p2 = oracle.return_probabilities(2, 4)
    assert p2[2] == pytest.approx(0.25)
    assert p2[4] == pytest.approx((math.comb(4, 2) / 16) ** 2)
    p3 = oracle.return_probabilities(3, 4)
    assert p3[2] == pytest.approx(1 / 6)
    assert p3[1] == 0 and p3[3] == 0


def test_gnedenko_parameter_order():
    with pytest.raises(ParameterOrder):
        oracle.gnedenko_terms(50, A=5, eps=0.5)


def test_gnedenko_bound_holds():
    for n in (100, 1000, 10_000):
        g = oracle.gnedenko_terms(n)
        assert g.lhs <= g.total


def test_cos_quadratic_bound():
    assert oracle.cos_quadratic_bound(0.5, 1e-4) <= 0


def test_heavy_tail_truncation_and_charfn():
    spec = oracle.LatticeWalkSpec.heavy_tail()
    assert spec.truncation_mass < 1e-12
    t = 0.01
    direct = complex(spec.charfn(t))
    assert abs(direct - oracle.heavy_tail_charfn(t)) < 1e-10


def test_bounded_pmf_has_no_log_term():
    spec = oracle.LatticeWalkSpec.from_pmf([-1, 0, 1], [0.25, 0.5, 0.25])
    fit = oracle.heavy_tail_charfn_fit(spec)
    assert abs(fit.c_fit) < 1e-3
    assert fit.intercept == pytest.approx(-0.25, abs=1e-3)


def test_heavy_tail_pmf_sums_to_one():
    pmf = oracle.exact_pmf(oracle.LatticeWalkSpec.heavy_tail(), 64)
    assert pmf.total == pytest.approx(1.0, abs=1e-9)
    assert pmf.at([5]) == pytest.approx(pmf.at([-5]), rel=1e-9)


def test_iid_sampler_mean(rng):
    spec = oracle.LatticeWalkSpec.ssrw(1)
    s = oracle.iid_sampler(spec, rng).draw_sums(100, 50_000)
    assert abs(s.mean()) < 0.2 and abs(s.var() / 100 - 1) < 0.03
