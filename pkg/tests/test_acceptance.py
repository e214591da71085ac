"""Acceptance criteria 1-12.

Each test records one PASS/FAIL line (collected at the end of the run) and
then asserts the same verdict.  Tolerances are the fixed acceptance values.
"""

import math
import time

import numpy as np
import pytest
from scipy import special

from lorentzlab import cli, dynamics as dyn, geometry, limits, oracle, sampling, tower
from lorentzlab.config import parse_config
from lorentzlab.errors import DegenerateVariance

from conftest import FINITE, INFINITE

pytestmark = pytest.mark.acceptance


def _fmt_checks(checks):
    return "; ".join(f"{name} {'ok' if ok else 'FAILED'} ({val})" for name, ok, val in checks)


def _verdict(criterion, number, checks):
    passed = all(ok for _, ok, _ in checks)
    criterion(number, passed, _fmt_checks(checks))
    assert passed, _fmt_checks([c for c in checks if not c[1]])


# 1 -------------------------------------------------------------------------


def test_criterion_01_exact_lclt(criterion):
    t0 = time.perf_counter()
    row = oracle.lclt_limit_check(oracle.LatticeWalkSpec.ssrw(1), [10_000], [[0]])[0]
    elapsed = time.perf_counter() - t0
    target = 2 / math.sqrt(2 * math.pi)
    err = abs(row["normalized"] - target)
    _verdict(criterion, 1, [
        ("|sqrt(n) P(W_n=0) - 2/sqrt(2 pi)| < 0.01", err < 0.01, f"{row['normalized']:.6f}, err {err:.2e}"),
        ("runtime < 10 s", elapsed < 10, f"{elapsed:.3f} s"),
    ])


# 2 -------------------------------------------------------------------------


def test_criterion_02_gnedenko(criterion):
    terms = [oracle.gnedenko_terms(n, A=5.0, eps=0.5) for n in (100, 1000, 10_000)]
    tail_bound = 2 * math.sqrt(math.pi) * special.erfc(2.5)  # int_{|s|>=5} e^{-s^2/4} ds
    II = terms[0].II
    drops = [a.log_IIII - b.log_IIII for a, b in zip(terms, terms[1:])]
    Is = [g.I for g in terms]
    cos_gap = oracle.cos_quadratic_bound(0.5, 1e-4)
    _verdict(criterion, 2, [
        ("II < 1.2e-6", II < 1.2e-6, f"II = {II:.4e}"),
        ("III <= int e^{-s^2/4}", all(g.III <= tail_bound for g in terms),
         f"max III {max(g.III for g in terms):.3e} vs {tail_bound:.3e}"),
        ("IIII drops >= 10x per decade", all(d >= math.log(10) for d in drops),
         "log drops " + ", ".join(f"{d:.1f}" for d in drops)),
        ("I decreasing", all(b < a for a, b in zip(Is, Is[1:])), ", ".join(f"{v:.2e}" for v in Is)),
        ("cos t <= 1 - t^2/4 on |t|<=0.5", cos_gap <= 0, f"max gap {cos_gap:.2e}"),
    ])


# 3 -------------------------------------------------------------------------


def _projection_oracle(r):
    """Single disk: direction w is open with width 1/|w| - 2r whenever positive."""
    out = {}
    for w in geometry.primitive_directions(1 / (2 * r) + 1):
        width = 1 / math.hypot(*w) - 2 * r
        if width > 0:
            out[w] = width
    return out


def test_criterion_03_corridors(criterion):
    checks = []
    for r in (0.3, 0.4, 0.45):
        lat = geometry.validate_config([((0.5, 0.5), r)])
        found = {tuple(int(v) for v in c.direction): c.width for c in geometry.find_corridors(lat)}
        expect = _projection_oracle(r)
        same = set(found) == set(expect)
        err = max(abs(found[w] - expect[w]) for w in expect) if same else math.inf
        checks.append((f"r={r} sets and widths", same and err < 1e-12,
                       f"{len(found)} directions, max width err {err:.1e}"))
    lat = geometry.validate_config([((0.5, 0.5), 0.3)])
    diag = {tuple(int(v) for v in c.direction): c.width for c in geometry.find_corridors(lat)}.get((1, 1))
    target = 1 / math.sqrt(2) - 0.6
    checks.append(("r=0.3 has (1,1) with width 1/sqrt2 - 0.6",
                   diag is not None and abs(diag - target) < 1e-12, f"{diag}"))
    _verdict(criterion, 3, checks)


# 4 -------------------------------------------------------------------------


def test_criterion_04_dynamics(criterion, infinite_lattice, finite_lattice):
    starts = [dyn.PhasePoint(0, 0.3, 0.8), dyn.PhasePoint(0, 2.0, 2.6), dyn.PhasePoint(0, 4.1, 4.9)]
    hp = max(dyn.time_reversal_error_hp(infinite_lattice, x, 20) for x in starts)
    dbl = max(dyn.time_reversal_error(infinite_lattice, x, 20) for x in starts)
    kc = dyn.kappa_consistency(infinite_lattice, dyn.PhasePoint(0, 0.3, 0.8), 10_000_000)
    ks = sampling.stationarity_ks(finite_lattice, 1_000_000, 100, seed=1)
    dyn.billiard_orbit(finite_lattice, dyn.PhasePoint(0, 0.3, 0.8), 1000)
    t0 = time.perf_counter()
    dyn.billiard_orbit(finite_lattice, dyn.PhasePoint(0, 0.3, 0.8), 2_000_000)
    rate = 2_000_000 / (time.perf_counter() - t0) * 60
    _verdict(criterion, 4, [
        ("20-step time reversal < 1e-6", hp < 1e-6, f"extended precision {hp:.1e}, double {dbl:.1e}"),
        ("kappa consistency over 1e7 steps", kc["mismatches"] == 0 and kc["steps"] == 10_000_000,
         f"{kc['mismatches']} mismatches"),
        ("stationarity KS < 0.01", max(ks.values()) < 0.01, ", ".join(f"{k} {v:.4f}" for k, v in ks.items())),
        (">= 1e7 collisions/min", rate >= 1e7, f"{rate:.2e}/min"),
    ])


# 5 -------------------------------------------------------------------------


def test_criterion_05_finite_clt_lclt(criterion, finite_lattice):
    assert geometry.horizon_of(finite_lattice).is_finite
    res = sampling.run_ensemble(finite_lattice, sampling.EnsembleSpec(100_000, (1000, 2000, 4000), seed=21))
    clt = limits.clt_check({n: res.S(n) for n in (1000, 2000, 4000)})
    drift = clt.checks[0].value
    res = sampling.run_ensemble(finite_lattice, sampling.EnsembleSpec(1_000_000, (500, 1000, 2000), seed=22))
    lclt = limits.lclt_pointmass({n: res.S(n) for n in (500, 1000, 2000)}, stability_tol=0.25)
    vals = ", ".join(f"{r['normalized']:.4f}" for r in lclt.rows)
    _verdict(criterion, 5, [
        ("Var(S_n)/n drift < 10%", drift < 0.10, f"{drift:.4f}"),
        ("n nu(S_n=0) stable within 25%", lclt.checks[0].passed, f"{vals}, drift {lclt.checks[0].value:.4f}"),
    ])


# 6 -------------------------------------------------------------------------


def test_criterion_06_tail(criterion, infinite_lattice):
    res = sampling.run_ensemble(infinite_lattice, sampling.EnsembleSpec(10_000, (1000,), seed=5))
    hist = limits.TailHistogram.from_ensemble(res)
    fit = limits.tail_fit(hist)
    tv = limits.truncated_variance_curve(hist, r2_min=0.95)
    a = fit.fitted["alpha"]
    _verdict(criterion, 6, [
        ("collisions >= 1e7", res.collisions >= 10_000_000, f"{res.collisions}"),
        ("alpha in [1.7, 2.3]", 1.7 <= a <= 2.3, f"{a:.3f}"),
        ("truncated variance R^2 > 0.95", tv.fitted["r2"] > 0.95, f"{tv.fitted['r2']:.4f}"),
    ])


# 7 -------------------------------------------------------------------------


def test_criterion_07_superdiffusion(criterion, infinite_lattice):
    sched = tuple(2**j for j in range(8, 14))
    res = sampling.run_ensemble(infinite_lattice, sampling.EnsembleSpec(100_000, sched, seed=3))
    billiard = limits.superdiffusion_check({n: res.S(n) for n in sched})
    iid = limits.superdiffusion_check(
        oracle.iid_birkhoff_samples(oracle.LatticeWalkSpec.heavy_tail(), sched, 100_000, seed=7))
    checks = []
    for label, rep in (("billiard", billiard), ("iid heavy tail", iid)):
        for c in rep.checks:
            checks.append((f"{label}: {c.name}", c.passed, f"{c.value:.4g}"))
    _verdict(criterion, 7, checks)


# 8 -------------------------------------------------------------------------


def test_criterion_08_heavy_tail_fourier(criterion):
    spec = oracle.LatticeWalkSpec.heavy_tail()
    fit = oracle.heavy_tail_charfn_fit(spec, np.logspace(-4, -1, 61))
    rows = oracle.lclt_limit_check(spec, [2**j for j in range(8, 15)])
    drift = limits.relative_drift([r["normalized"] for r in rows])
    _verdict(criterion, 8, [
        ("(xi-1)/t^2 vs log t R^2 > 0.999", fit.r2 > 0.999, f"R^2 {fit.r2:.6f}, c {fit.c_fit:.4f}"),
        ("normalized P(W_n=0) within 10% up to 2^14", drift < 0.10, f"drift {drift:.4f}"),
    ])


# 9 -------------------------------------------------------------------------


def _walk_counters(d, trajectories, n_max, seed, block=2048):
    rng = np.random.Generator(np.random.Philox(key=seed))
    eye = np.concatenate([np.eye(d, dtype=np.int8), -np.eye(d, dtype=np.int8)])
    total = None
    for a in range(0, trajectories, block):
        c = limits.ReturnCounters.from_walks(eye[rng.integers(0, 2 * d, size=(min(block, trajectories - a), n_max))])
        total = c if total is None else total.merge(c)
    return total


def test_criterion_09_recurrence(criterion, finite_lattice):
    sched = [2**j for j in range(4, 11)]
    r2 = limits.lamperti_statistic(_walk_counters(2, 20_000, 1024, 31), sched,
                                   exact=oracle.return_probabilities(2, 1024), z=3.0, fit_r2=None)
    r3 = limits.lamperti_statistic(_walk_counters(3, 20_000, 1024, 32), sched,
                                   exact=oracle.return_probabilities(3, 1024), z=3.0, fit_r2=None, min_sum=0.0)
    res = sampling.run_ensemble(finite_lattice, sampling.EnsembleSpec(20_000, (1024,), seed=33))
    rb = limits.lamperti_statistic(limits.ReturnCounters.from_ensemble(res), sched, fit_r2=0.9)
    z2 = r2.checks[0]
    _verdict(criterion, 9, [
        ("d=2 sums within 3 SE of exact", z2.passed, f"max |z| {z2.value:.2f}"),
        ("d=2 diverges", r2.fitted["diverging"], f"sum {r2.rows[-1]['partial_sum']:.3f} at n=1024"),
        ("d=3 converges", not r3.fitted["diverging"], f"sum {r3.rows[-1]['partial_sum']:.3f} at n=1024"),
        ("billiard c log n R^2 > 0.9", rb.fitted["log_r2"] > 0.9, f"R^2 {rb.fitted['log_r2']:.4f}"),
    ])


# 10 ------------------------------------------------------------------------


def test_criterion_10_tower_spectrum(criterion):
    tmap = tower.AffineMap.doubling()
    tw = tower.build_tower(tmap, (0,))
    ts = np.linspace(0.02, 0.2, 10)
    cos = lambda y: np.cos(2 * np.pi * y)  # noqa: E731
    spectra = {}
    for res in (2**12, 2**13):
        T = tower.transfer_matrix(tw, res)
        lams = tower.lambda_curve(T, T.observable(cos), ts)
        spectra[res] = (T, tower.leading_eigenvalue(T), lams, tower.eigenvalue_expansion_fit(ts, lams))
    T, r0, lams, fit = spectra[2**12]
    _, r1, lams1, fit1 = spectra[2**13]
    cob = T.observable(lambda y: np.cos(4 * np.pi * y) - np.cos(2 * np.pi * y))
    try:
        tower.eigenvalue_expansion_fit(ts, tower.lambda_curve(T, cob, ts))
        degenerate = False
    except DegenerateVariance:
        degenerate = True
    df = tower.doeblin_fortet_check(T)
    slope_err = abs(tw.tail_slope - math.log(0.5))
    drift = max(abs(r0.lam - r1.lam), abs(r0.gap - r1.gap), float(np.max(np.abs(lams - lams1))),
                abs(fit.sigma2_fit - fit1.sigma2_fit))
    _verdict(criterion, 10, [
        ("lambda_0 = 1 +- 1e-10", abs(r0.lam - 1) < 1e-10, f"{abs(r0.lam - 1):.1e}"),
        ("tail slope log(1/2) +- 1e-3", slope_err < 1e-3, f"err {slope_err:.1e}"),
        ("sigma^2_fit = 0.5 +- 2%", abs(fit.sigma2_fit / 0.5 - 1) < 0.02, f"{fit.sigma2_fit:.6f}"),
        ("coboundary raises DegenerateVariance", degenerate, f"{degenerate}"),
        ("Doeblin-Fortet tau < 1 at defaults", df.passed and df.tau < 1, f"tau {df.tau:.3f}, K {df.K:.3g}, N {df.N}"),
        ("drift under resolution doubling < 1e-3", drift < 1e-3, f"{drift:.1e}"),
    ])


# 11 ------------------------------------------------------------------------


def test_criterion_11_minimality(criterion, infinite_lattice):
    orb = dyn.billiard_orbit(infinite_lattice, dyn.PhasePoint(0, 0.3, 0.8), 10_000)
    rep = limits.minimality_check(orb.kappa, min_steps=10_000)
    _verdict(criterion, 11, [
        ("index of kappa lattice == 1", rep.fitted["index_values"] == 1,
         f"index {rep.fitted['index_values']}, invariants {rep.fitted['invariants_values']}"),
    ])


# 12 ------------------------------------------------------------------------

REPLAY_CONFIGS = {
    "corridors": {"lattice": INFINITE},
    "simulate": {"lattice": FINITE, "ensemble": {"trajectories": 3000, "n_schedule": [100, 200]}},
    "clt": {"lattice": FINITE, "ensemble": {"trajectories": 10_000, "n_schedule": [50, 100]}},
    "lclt": {"lattice": FINITE, "ensemble": {"trajectories": 20_000, "n_schedule": [20, 40]}},
    "tails": {"lattice": INFINITE, "ensemble": {"trajectories": 2000, "n_schedule": [1000]}},
    "recurrence": {"options": {"trajectories": 2000}},
    "rw-oracle": {},
    "spectrum": {"options": {"resolution": 1024}},
}


def test_criterion_12_replay(criterion, tmp_path):
    checks = []
    for scen, body in REPLAY_CONFIGS.items():
        raw = {"scenario": scen, "seed": 99}
        for key, val in body.items():
            if key == "lattice":
                val = {"centers": [list(c) for c, _ in val], "radii": [r for _, r in val]}
            raw[key] = val
        cfg = parse_config(raw)
        cli.run(cfg, workers=1, out=tmp_path / scen)
        status = cli.replay(tmp_path / scen / "manifest.json", workers=3)["status"]
        checks.append((scen, status == "identical", status))
    _verdict(criterion, 12, checks)
