import math

import numpy as np
import pytest

from lorentzlab import limits
from lorentzlab.errors import FiniteHorizonNoTail, InsufficientSamples


def gaussian_samples(rng, ns, N=20_000, lattice=True):
    out = {}
    for n in ns:
        S = rng.normal(0, math.sqrt(0.7 * n), size=(N, 2))
        out[n] = np.rint(S).astype(np.int64) if lattice else S
    return out


def test_clt_check_passes_on_gaussian(rng):
    rep = limits.clt_check(gaussian_samples(rng, [100, 200, 400]))
    assert rep.passed, rep.table()
    assert abs(rep.fitted["covariance"][0][0] - 0.7) < 0.05


def test_clt_check_needs_samples(rng):
    with pytest.raises(InsufficientSamples):
        limits.clt_check(gaussian_samples(rng, [100], N=100))


def test_scaling_laws():
    assert limits.DIFFUSIVE.scalar(100) == 10
    assert abs(limits.SUPERDIFFUSIVE.scalar(100) - math.sqrt(100 * math.log(100))) < 1e-12
    assert abs(limits.SUPERDIFFUSIVE.det(100) - 100 * math.log(100)) < 1e-9


def test_select_scaling(rng):
    diff = gaussian_samples(rng, [100, 400, 1600], lattice=False)
    assert limits.select_scaling(diff)[0] == "diffusive"
    sup = {n: rng.normal(0, math.sqrt(n * math.log(n)), size=(20000, 2)) for n in [100, 400, 1600, 6400]}
    assert limits.select_scaling(sup)[0] == "superdiffusive"


def test_superdiffusion_check(rng):
    sup = {n: rng.normal(0, math.sqrt(n * math.log(n)), size=(50000, 2)) for n in [256, 512, 1024, 2048]}
    assert limits.superdiffusion_check(sup).passed
    diff = {n: rng.normal(0, math.sqrt(n), size=(50000, 2)) for n in [256, 512, 1024, 2048]}
    assert not limits.superdiffusion_check(diff).passed


def test_robust_variance_gaussian(rng):
    x = rng.normal(0, 3, 200_000)
    assert abs(limits.robust_variance(x) / 9 - 1) < 0.02


def test_lclt_pointmass(rng):
    samples = gaussian_samples(rng, [50, 100, 200], N=200_000)
    rep = limits.lclt_pointmass(samples)
    assert rep.passed
    # n P(S=0) -> 1/(2 pi 0.7)
    assert abs(rep.fitted["mean_normalized"] - 1 / (2 * math.pi * 0.7)) < 0.03


def test_tail_fit_power_law(rng):
    u = (1 - rng.random(2_000_000)) ** (-1 / 2)  # P(U > u) = u^-2
    hist = limits.TailHistogram.from_values(np.column_stack([np.floor(u), np.zeros_like(u)]).astype(np.int64))
    rep = limits.tail_fit(hist)
    assert abs(rep.fitted["alpha"] - 2) < 0.1
    assert limits.truncated_variance_curve(hist).passed


def test_tail_fit_rejects_bounded():
    k = np.column_stack([np.arange(1000) % 3, np.zeros(1000)]).astype(np.int64)
    hist = limits.TailHistogram.from_values(k)
    with pytest.raises(FiniteHorizonNoTail):
        limits.tail_fit(hist)
    with pytest.raises(FiniteHorizonNoTail):
        limits.truncated_variance_curve(hist)


def test_relative_drift():
    assert limits.relative_drift([1.0, 1.1, 1.05]) == pytest.approx(0.1)


@pytest.mark.parametrize("vectors,index", [
    ([(1, 0), (0, 1)], 1),
    ([(2, 0), (0, 2), (1, 1)], 2),
    ([(2, 0), (0, 2)], 4),
    ([(3, 1), (1, 3)], 8),
    ([(1, 2), (2, 4)], 0),
])
def test_lattice_index(vectors, index):
    assert limits.lattice_index(vectors)[0] == index


def test_lattice_index_random_against_det(rng):
    for _ in range(200):
        a, b = rng.integers(-9, 10, size=(2, 2))
        det = abs(int(a[0] * b[1] - a[1] * b[0]))
        assert limits.lattice_index([a, b])[0] == det


def test_minimality_detects_sublattice(rng):
    k = rng.integers(-3, 4, size=(20_000, 2)) * 2
    rep = limits.minimality_check(k)
    assert not rep.passed
    full = rng.integers(-3, 4, size=(20_000, 2))
    assert limits.minimality_check(full).passed


def test_return_counters_from_walks(rng):
    steps = np.array([[[1], [-1], [1], [-1]]])
    c = limits.ReturnCounters.from_walks(steps)
    assert c.zero_count.tolist() == [1, 0, 1, 0, 1]
    assert c.visits_sq_sum.tolist() == [0, 0, 1, 1, 4]


def test_divergence_verdict():
    ks = np.arange(1, 4097)
    div = np.concatenate([[0], np.cumsum(1 / ks)])
    conv = np.concatenate([[0], np.cumsum(ks ** -1.5)])
    sched = [2**j for j in range(4, 13)]
    assert limits.divergence_verdict(div, sched)
    assert not limits.divergence_verdict(conv, sched)


def test_robust_variance_lattice(rng):
    # integer samples at a scale where quartiles would snap to the lattice
    for sd in (2.3, 4.7, 9.1):
        k = np.round(rng.normal(0, sd, 400_000)).astype(np.int64)
        # cell edges k +- 1/2 carry the exact cdf of the unrounded law
        assert limits.robust_variance(k) == pytest.approx(sd**2, rel=0.02)
        snapped = np.percentile(k.astype(float), [25, 75])
        assert np.all(snapped == np.round(snapped))
