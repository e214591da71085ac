"""Estimators that turn ensembles into limit-theorem verdicts.

Every check returns a :class:`LimitReport` whose ``checks`` entries record
the measured value, the tolerance and the verdict, so a report is a pure
function of (samples, tolerances).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import FiniteHorizonNoTail, InsufficientSamples
from .sampling import KAPPA_EDGES, EDGES2

IQR_TO_SIGMA = 2.0 * stats.norm.ppf(0.75)  # 1.3489795...


@dataclass(frozen=True)
class ScalingLaw:
    """Normalizing sequence B_n.

    ``kind`` is "diffusive" (sqrt n), "superdiffusive" (sqrt(n log n)) or
    "anisotropic" (sqrt(n log n) along ``direction``, sqrt n across it).
    """

    kind: str = "diffusive"
    direction: tuple = None

    def __post_init__(self):
        if self.kind not in ("diffusive", "superdiffusive", "anisotropic"):
            raise ValueError(f"unknown scaling {self.kind!r}")
        if self.kind == "anisotropic":
            if self.direction is None:
                raise ValueError("anisotropic scaling needs a direction")
            w = np.asarray(self.direction, float)
            object.__setattr__(self, "direction", tuple(w / np.linalg.norm(w)))

    def scalar(self, n) -> float:
        """Isotropic normalizer (the geometric mean for anisotropic laws)."""
        return math.sqrt(self.det(n))

    def matrix(self, n) -> np.ndarray:
        n = float(n)
        if self.kind == "diffusive":
            return math.sqrt(n) * np.eye(2)
        if self.kind == "superdiffusive":
            return math.sqrt(n * math.log(n)) * np.eye(2)
        w = np.asarray(self.direction)
        R = np.column_stack([w, [-w[1], w[0]]])
        return R @ np.diag([math.sqrt(n * math.log(n)), math.sqrt(n)]) @ R.T

    def det(self, n) -> float:
        """det B_n: n, n log n, or n sqrt(log n)."""
        n = float(n)
        if self.kind == "diffusive":
            return n
        if self.kind == "superdiffusive":
            return n * math.log(n)
        return n * math.sqrt(math.log(n))

    def rescale(self, S, n) -> np.ndarray:
        return np.linalg.solve(self.matrix(n), np.asarray(S, float).T).T


DIFFUSIVE = ScalingLaw("diffusive")
SUPERDIFFUSIVE = ScalingLaw("superdiffusive")


@dataclass
class Check:
    name: str
    value: float
    tolerance: str
    passed: bool

    def as_dict(self):
        return {"name": self.name, "value": _num(self.value), "tolerance": self.tolerance,
                "passed": bool(self.passed)}


@dataclass
class LimitReport:
    estimator: str
    rows: list = field(default_factory=list)
    fitted: dict = field(default_factory=dict)
    checks: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def check(self, name, value, tolerance, passed):
        self.checks.append(Check(name, value, tolerance, bool(passed)))
        return bool(passed)

    def get(self, name) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def as_dict(self):
        return {
            "estimator": self.estimator,
            "rows": [{k: _num(v) for k, v in r.items()} for r in self.rows],
            "fitted": {k: _num(v) for k, v in self.fitted.items()},
            "checks": [c.as_dict() for c in self.checks],
            "passed": self.passed,
        }

    def table(self) -> str:
        """Aligned text rendering of rows and checks."""
        lines = [f"[{self.estimator}]"]
        if self.rows:
            keys = list(self.rows[0])
            cells = [[_fmt(r.get(k)) for k in keys] for r in self.rows]
            widths = [max(len(k), *(len(c[i]) for c in cells)) for i, k in enumerate(keys)]
            lines.append("  ".join(k.rjust(w) for k, w in zip(keys, widths)))
            lines.extend("  ".join(c.rjust(w) for c, w in zip(row, widths)) for row in cells)
        for k, v in self.fitted.items():
            lines.append(f"{k} = {_fmt(v)}")
        for c in self.checks:
            lines.append(f"{'PASS' if c.passed else 'FAIL'}  {c.name}: {_fmt(c.value)} ({c.tolerance})")
        return "\n".join(lines)


def _num(v):
    if isinstance(v, (np.floating, float)):
        return float(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (list, tuple)):
        return [_num(x) for x in v]
    return v


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.6g}"
    return str(v)


def linear_fit(x, y):
    """Least-squares line; returns (slope, intercept, R^2)."""
    res = stats.linregress(np.asarray(x, float), np.asarray(y, float))
    return float(res.slope), float(res.intercept), float(res.rvalue**2)


def relative_drift(values) -> float:
    """max/min - 1 of a positive sequence."""
    v = np.asarray(values, float)
    return float(v.max() / v.min() - 1.0)


# ----------------------------------------------------------------------------
# covariance and normality


def _cell_quantiles(k, qs) -> np.ndarray:
    """Quantiles of integer data with each value spread uniformly over its unit cell."""
    vals, counts = np.unique(k, return_counts=True)
    mass = counts / counts.sum()
    cdf = np.cumsum(mass)
    i = np.minimum(np.searchsorted(cdf, qs, side="left"), len(vals) - 1)
    return vals[i] - 0.5 + (np.asarray(qs) - (cdf[i] - mass[i])) / mass[i]


def robust_variance(x) -> float:
    """Gaussian-calibrated variance from the interquartile range.

    Integer samples use cell quantiles, so the quartiles do not snap to the
    lattice.
    """
    x = np.asarray(x)
    if np.issubdtype(x.dtype, np.integer):
        q1, q3 = _cell_quantiles(x, [0.25, 0.75])
    else:
        q1, q3 = np.percentile(x.astype(float), [25, 75])
    return float(((q3 - q1) / IQR_TO_SIGMA) ** 2)


def robust_covariance(S, scaling=None, n=None) -> np.ndarray:
    """2x2 covariance from robust variances along the axes and diagonals.

    With ``scaling`` the result is for B_n^-1 S, computed from the unscaled
    samples so integer data keeps its cell quantiles.
    """
    S = np.asarray(S)
    vx, vy = robust_variance(S[:, 0]), robust_variance(S[:, 1])
    vp, vm = robust_variance(S[:, 0] + S[:, 1]), robust_variance(S[:, 0] - S[:, 1])
    c = (vp - vm) / 4.0
    C = np.array([[vx, c], [c, vy]])
    if scaling is not None:
        Binv = np.linalg.inv(scaling.matrix(n))
        C = Binv @ C @ Binv.T
    return C


def mardia(Y) -> tuple:
    """Mardia's multivariate skewness b1 and kurtosis b2 (b2 = d(d+2) under normality)."""
    Y = np.asarray(Y, float)
    Z = Y - Y.mean(axis=0)
    Sinv = np.linalg.inv(np.cov(Z.T, bias=True))
    D = Z @ Sinv
    m2 = np.einsum("ij,ij->i", D, Z)
    b2 = float(np.mean(m2**2))
    # b1 = mean over pairs of (z_i S^-1 z_j)^3, computed through third-moment tensors
    d = Y.shape[1]
    L = np.linalg.cholesky(Sinv)
    W = Z @ L
    b1 = 0.0
    for a in range(d):
        for b in range(d):
            for c in range(d):
                b1 += np.mean(W[:, a] * W[:, b] * W[:, c]) ** 2
    return float(b1), b2


JITTER_SEED = 20240101


def clt_check(samples: dict, scaling: ScalingLaw = DIFFUSIVE, *, drift_tol=0.10, ks_alpha=1e-3,
              min_samples=10_000, robust=False, moment_tol=(0.05, 0.5)) -> LimitReport:
    """Rescale S_n by B_n, estimate covariance and test normality across n.

    ``samples`` maps n to an (N, 2) array.  The covariance of B_n^-1 S_n must
    drift by less than ``drift_tol`` (max/min of the trace) across n; at the
    largest n per-axis KS p-values (against the fitted normal) must exceed
    ``ks_alpha`` and Mardia's statistics must be within ``moment_tol`` of
    their Gaussian values (skewness absolute, kurtosis relative).  Integer
    samples get a fixed-seed uniform jitter on their unit cell before the KS
    test.
    """
    rep = LimitReport("clt_check")
    ns = sorted(samples)
    traces, traces_plain = [], []
    for n in ns:
        S = np.asarray(samples[n], float)
        if len(S) < min_samples:
            raise InsufficientSamples(f"{len(S)} samples at n={n}, need {min_samples}")
        Y = scaling.rescale(S, n)
        C_plain = np.cov(Y.T)
        C_rob = robust_covariance(samples[n], scaling, n)
        C = C_rob if robust else C_plain
        # spread lattice values uniformly over their unit cell so KS sees no ties
        Yk = Y
        if np.issubdtype(np.asarray(samples[n]).dtype, np.integer):
            U = np.random.default_rng(JITTER_SEED).uniform(-0.5, 0.5, S.shape)
            Yk = scaling.rescale(S + U, n)
        ks = [stats.kstest(Yk[:, a], "norm", args=(Yk[:, a].mean(), Yk[:, a].std(ddof=1))).pvalue for a in (0, 1)]
        b1, b2 = mardia(Y)
        traces.append(np.trace(C))
        traces_plain.append(np.trace(C_plain))
        rep.rows.append({"n": n, "cxx": C[0, 0], "cxy": C[0, 1], "cyy": C[1, 1], "trace": np.trace(C),
                         "trace_plain": np.trace(C_plain), "trace_robust": np.trace(C_rob),
                         "se_trace": np.trace(C) * math.sqrt(2.0 / len(S)),
                         "ks_p_x": ks[0], "ks_p_y": ks[1], "mardia_b1": b1, "mardia_b2": b2})
    last = rep.rows[-1]
    rep.fitted["covariance"] = [[last["cxx"], last["cxy"]], [last["cxy"], last["cyy"]]]
    rep.fitted["scaling"] = scaling.kind
    rep.check("covariance drift", relative_drift(traces), f"< {drift_tol}", relative_drift(traces) < drift_tol)
    kmin = min(last["ks_p_x"], last["ks_p_y"])
    rep.check("per-axis KS p-value", kmin, f"> {ks_alpha}", kmin > ks_alpha)
    rep.check("Mardia skewness", last["mardia_b1"], f"< {moment_tol[0]}", last["mardia_b1"] < moment_tol[0])
    rel_k = abs(last["mardia_b2"] / 8.0 - 1.0)
    rep.check("Mardia kurtosis (relative to 8)", rel_k, f"< {moment_tol[1]}", rel_k < moment_tol[1])
    return rep


def stability_score(samples: dict, scaling: ScalingLaw, robust=True) -> float:
    """Max relative drift of the rescaled covariance trace across n."""
    tr = []
    for n in sorted(samples):
        C = robust_covariance(samples[n], scaling, n) if robust else np.cov(scaling.rescale(samples[n], n).T)
        tr.append(np.trace(C))
    return relative_drift(tr)


def select_scaling(samples: dict, robust=True) -> tuple:
    """Pick the scaling with the lower stability score."""
    scores = {law.kind: stability_score(samples, law, robust) for law in (DIFFUSIVE, SUPERDIFFUSIVE)}
    return min(scores, key=scores.get), scores


def superdiffusion_check(samples: dict, *, top=3, drift_tol=0.20, robust=True) -> LimitReport:
    """Var(S_n)/n strictly increasing with positive log-slope, Var/(n log n) stable at the top."""
    rep = LimitReport("superdiffusion_check")
    ns = sorted(samples)
    vn, vnl = [], []
    for n in ns:
        S = np.asarray(samples[n])
        v_rob = float(np.trace(robust_covariance(S)))
        v_plain = float(np.var(S, axis=0, ddof=1).sum())
        v = v_rob if robust else v_plain
        vn.append(v / n)
        vnl.append(v / (n * math.log(n)))
        rep.rows.append({"n": n, "var_over_n": v / n, "var_over_nlogn": v / (n * math.log(n)),
                         "plain_var_over_n": v_plain / n, "robust_var_over_n": v_rob / n})
    slope, icpt, r2 = linear_fit(np.log(ns), vn)
    rep.fitted.update({"log_slope": slope, "log_intercept": icpt, "log_r2": r2})
    inc = bool(np.all(np.diff(vn) > 0))
    rep.check("Var/n strictly increasing", float(np.min(np.diff(vn))), "> 0 per level", inc)
    rep.check("Var/n log-slope", slope, "> 0", slope > 0)
    d = relative_drift(vnl[-top:])
    rep.check(f"Var/(n log n) drift over top {top}", d, f"< {drift_tol}", d < drift_tol)
    return rep


# ----------------------------------------------------------------------------
# local limit


def lclt_pointmass(samples: dict, scaling: ScalingLaw = DIFFUSIVE, targets=None, *, stability_tol=0.25,
                   min_events=20) -> LimitReport:
    """normalizer * nu(S_n = k_n) with binomial standard errors.

    ``targets`` maps n to the lattice point k_n (default 0).  The normalizer
    is det B_n.  Passes when the normalized estimates agree within
    ``stability_tol`` (max/min - 1).
    """
    rep = LimitReport("lclt_pointmass")
    ns = sorted(samples)
    vals = []
    for n in ns:
        S = np.asarray(samples[n])
        k = np.zeros(S.shape[1], S.dtype) if targets is None else np.asarray(targets[n])
        hits = int(np.count_nonzero(np.all(S == k, axis=1)))
        N = len(S)
        if hits < min_events:
            raise InsufficientSamples(f"{hits} hits of k_n at n={n}; need at least {min_events}")
        p = hits / N
        se = math.sqrt(p * (1 - p) / N)
        norm = scaling.det(n)
        vals.append(norm * p)
        rep.rows.append({"n": n, "k": list(np.atleast_1d(k)), "hits": hits, "trajectories": N, "p": p,
                         "se": se, "normalized": norm * p, "normalized_se": norm * se})
    d = relative_drift(vals)
    rep.fitted["mean_normalized"] = float(np.mean(vals))
    rep.check("normalized point mass drift", d, f"< {stability_tol}", d < stability_tol)
    return rep


def lclt_ratio(samples: dict, n: int, k, covariance, scaling: ScalingLaw = DIFFUSIVE, z=3.0) -> LimitReport:
    """Compare nu(S_n = k)/nu(S_n = 0) with the Gaussian ratio phi(k)/phi(0)."""
    rep = LimitReport("lclt_ratio")
    S = np.asarray(samples[n])
    k = np.asarray(k)
    N = len(S)
    h0 = np.count_nonzero(np.all(S == 0, axis=1))
    hk = np.count_nonzero(np.all(S == k, axis=1))
    if h0 < 20 or hk < 20:
        raise InsufficientSamples("too few hits for a ratio estimate")
    ratio = hk / h0
    se = ratio * math.sqrt(1.0 / hk + 1.0 / h0)
    B = scaling.matrix(n)
    C = B @ np.asarray(covariance, float) @ B.T
    expected = math.exp(-0.5 * float(k @ np.linalg.solve(C, k)))
    rep.rows.append({"n": n, "k": k.tolist(), "hits_0": int(h0), "hits_k": int(hk), "ratio": ratio, "se": se,
                     "gaussian_ratio": expected, "trajectories": N})
    rep.check("ratio vs Gaussian", abs(ratio - expected) / se, f"< {z} standard errors", abs(ratio - expected) < z * se)
    return rep


# ----------------------------------------------------------------------------
# tails


@dataclass
class TailHistogram:
    """Counts of |kappa| in bins (E[i-1], E[i]] with exact per-bin sums."""

    edges: np.ndarray
    counts: np.ndarray
    sq_sum: np.ndarray
    sum: np.ndarray  # (bins, d)

    @classmethod
    def from_ensemble(cls, res) -> "TailHistogram":
        return cls(KAPPA_EDGES, res.kappa_hist, res.kappa_sq_sum, res.kappa_sum)

    @classmethod
    def from_values(cls, values) -> "TailHistogram":
        v = np.asarray(values)
        if v.ndim == 1:
            v = v[:, None]
        v = v.astype(np.int64)
        k2 = np.sum(v * v, axis=1)
        idx = np.searchsorted(EDGES2, k2, side="left")
        nb = len(EDGES2)
        counts = np.bincount(idx, minlength=nb)
        sq = np.bincount(idx, weights=k2.astype(float), minlength=nb)
        s = np.column_stack([np.bincount(idx, weights=v[:, j].astype(float), minlength=nb)
                             for j in range(v.shape[1])])
        return cls(KAPPA_EDGES, counts, sq, s)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def survival(self) -> np.ndarray:
        """P(|kappa| > E[i]) for every finite edge."""
        c = np.cumsum(self.counts)[: len(self.edges)]
        return 1.0 - c / self.total

    def exceed_counts(self) -> np.ndarray:
        return self.total - np.cumsum(self.counts)[: len(self.edges)]

    def max_value_bound(self) -> float:
        nz = np.flatnonzero(self.counts)
        i = nz[-1]
        return float(self.edges[i]) if i < len(self.edges) else math.inf


def _knee(logu, logs, min_octaves=2.0, tol=0.25):
    """Smallest start index after which one-octave local slopes stay near the tail slope."""
    n = len(logu)
    loc = np.full(n, np.nan)
    for i in range(n):
        j = np.searchsorted(logu, logu[i] + math.log(2.0))
        if j < n:
            loc[i] = (logs[j] - logs[i]) / (logu[j] - logu[i])
    for i in range(n):
        tail = loc[i:][~np.isnan(loc[i:])]
        if len(tail) == 0 or logu[-1] - logu[i] < min_octaves * math.log(2.0):
            break
        ref = np.median(tail)
        if np.all(np.abs(tail - ref) < tol * max(abs(ref), 1.0)):
            return i
    return 0


def tail_fit(hist: TailHistogram, u_min=None, u_max=None, *, min_count=10, alpha_range=(1.7, 2.3),
             floor=4.0) -> LimitReport:
    """Fit P(|kappa| > u) ~ C u^-alpha by log-log regression.

    The window ends at the last edge with at least ``min_count`` exceedances
    and starts at an automatically detected knee above ``floor``; both ends
    can be overridden.
    """
    rep = LimitReport("tail_fit")
    e = hist.edges
    surv = hist.survival()
    exc = hist.exceed_counts()
    ok = (e >= floor) & (exc >= min_count)
    if np.count_nonzero(ok) < 3 or e[ok][-1] / e[ok][0] < 8:
        raise FiniteHorizonNoTail(f"|kappa| tail spans fewer than three octaves above {floor}")
    u, s = e[ok], surv[ok]
    if u_max is not None:
        keep = u <= u_max
        u, s = u[keep], s[keep]
    if u_min is None:
        i0 = _knee(np.log(u), np.log(s))
        u_min = float(u[i0])
    keep = u >= u_min
    u, s = u[keep], s[keep]
    slope, icpt, r2 = linear_fit(np.log(u), np.log(s))
    alpha, C = -slope, math.exp(icpt)
    for ui, si, ci in zip(u, s, exc[ok][np.isin(e[ok], u)]):
        rep.rows.append({"u": ui, "survival": si, "exceedances": int(ci), "fit": C * ui**-alpha})
    rep.fitted.update({"alpha": alpha, "C": C, "r2": r2, "u_min": float(u[0]), "u_max": float(u[-1])})
    rep.check("tail exponent", alpha, f"in [{alpha_range[0]}, {alpha_range[1]}]",
              alpha_range[0] <= alpha <= alpha_range[1])
    return rep


def truncated_variance_curve(hist: TailHistogram, x_grid=None, *, r2_min=0.95, allow_finite=False) -> LimitReport:
    """Regress Var(kappa 1{|kappa| <= x}) on log x over a dyadic grid."""
    rep = LimitReport("truncated_variance_curve")
    if x_grid is None:
        x_grid = 2.0 ** np.arange(3, 11)
    x_grid = np.asarray(x_grid, float)
    if not allow_finite and hist.max_value_bound() <= x_grid[0]:
        raise FiniteHorizonNoTail(f"observed |kappa| never exceeds {x_grid[0]}")
    N = hist.total
    csq = np.cumsum(hist.sq_sum)
    cs = np.cumsum(hist.sum, axis=0)
    var = []
    for x in x_grid:
        i = int(np.searchsorted(hist.edges, x - 1e-9))
        m2 = csq[i] / N
        m1 = cs[i] / N
        v = float(m2 - np.dot(m1, m1))
        var.append(v)
        rep.rows.append({"x": x, "truncated_variance": v})
    slope, icpt, r2 = linear_fit(np.log(x_grid), var)
    rep.fitted.update({"slope": slope, "intercept": icpt, "r2": r2})
    rep.check("linear in log x", r2, f"R^2 > {r2_min}", r2 > r2_min)
    return rep


# ----------------------------------------------------------------------------
# successive flights


def successive_flight_stats(kappa, *, u_large=16.0, deltas=(0.6, 0.75, 0.9), c_bounds=(0.01, 100.0),
                            cauchy_tol=0.1) -> LimitReport:
    """Growth bounds, conditional exceedances and the cross moment for (kappa, kappa o T).

    (a) every pair with |kappa| >= u_large satisfies
        c1 sqrt|kappa| <= |kappa o T| <= c2 |kappa|^2 for the fitted
        c1 = min ratio, c2 = max ratio; passes if c1 >= c_bounds[0] and
        c2 <= c_bounds[1].
    (b) P(|kappa o T| > u^delta | |kappa| in octave u) decreases in u.
    (c) running mean of <kappa, kappa o T> over dyadic prefixes is Cauchy.
    """
    rep = LimitReport("successive_flight_stats")
    k = np.asarray(kappa, float)
    if k.ndim == 1:
        k = k[:, None]
    a = np.linalg.norm(k[:-1], axis=1)
    b = np.linalg.norm(k[1:], axis=1)

    # (c)
    prod = np.einsum("ij,ij->i", k[:-1], k[1:])
    sizes = 2 ** np.arange(10, int(math.log2(len(prod))) + 1)
    means = [float(prod[:m].mean()) for m in sizes]
    for m, v in zip(sizes, means):
        rep.rows.append({"prefix": int(m), "cross_moment": v})
    scale = max(abs(means[-1]), float(np.mean(np.einsum("ij,ij->i", k, k))) * 1e-2)
    last_changes = np.abs(np.diff(means[-4:])) / scale if len(means) >= 4 else np.array([0.0])
    rep.fitted["cross_moment"] = means[-1]
    rep.check("cross moment Cauchy", float(last_changes[-1]), f"relative change < {cauchy_tol}",
              float(last_changes[-1]) < cauchy_tol)

    big = a >= u_large
    if np.count_nonzero(big) < 10:
        raise FiniteHorizonNoTail(f"fewer than 10 flights with |kappa| >= {u_large}")
    # (a)
    c1 = float(np.min(b[big] / np.sqrt(a[big])))
    c2 = float(np.max(b[big] / a[big] ** 2))
    rep.fitted.update({"c1": c1, "c2": c2, "large_flights": int(np.count_nonzero(big))})
    rep.check("growth bounds", c1, f"c1 >= {c_bounds[0]} and c2 <= {c_bounds[1]}",
              c1 >= c_bounds[0] and c2 <= c_bounds[1])
    # (b)
    octs = 2.0 ** np.arange(int(math.log2(u_large)), int(math.log2(a.max())) + 1)
    for d in deltas:
        us, ps = [], []
        for lo in octs:
            sel = (a >= lo) & (a < 2 * lo)
            if np.count_nonzero(sel) < 20:
                continue
            us.append(lo * math.sqrt(2))
            ps.append(float(np.mean(b[sel] > a[sel] ** d)))
        if len(us) < 3:
            rep.check(f"exceedance decreasing (delta={d})", math.nan, "needs 3 octaves", False)
            continue
        slope, _, _ = linear_fit(np.log(us), ps)
        rep.fitted[f"exceedance_slope_{d}"] = slope
        for u, p in zip(us, ps):
            rep.rows.append({"delta": d, "u": u, "exceedance": p})
        rep.check(f"exceedance decreasing (delta={d})", slope, "slope < 0 and last < first",
                  slope < 0 and ps[-1] < ps[0])
    return rep


# ----------------------------------------------------------------------------
# recurrence


@dataclass
class ReturnCounters:
    """Per-step return counts for a walk ensemble.

    ``zero_count[k]`` trajectories sit at the origin at step k,
    ``alive[k]`` trajectories completed step k and ``visits_sq_sum[k]`` is
    the sum over trajectories of V_k^2, V_k the number of returns by step k.
    """

    zero_count: np.ndarray
    alive: np.ndarray
    visits_sq_sum: np.ndarray

    @classmethod
    def from_ensemble(cls, res) -> "ReturnCounters":
        return cls(res.zero_count, res.alive, res.visits_sq_sum)

    @classmethod
    def from_walks(cls, steps) -> "ReturnCounters":
        """``steps`` is an (N, n, d) integer array of increments."""
        pos = np.cumsum(np.asarray(steps, np.int64), axis=1)
        at0 = np.all(pos == 0, axis=2)
        N, n = at0.shape
        V = np.cumsum(at0, axis=1)
        zero = np.concatenate([[N], at0.sum(axis=0)])
        alive = np.full(n + 1, N)
        v2 = np.concatenate([[0], (V.astype(np.int64) ** 2).sum(axis=0)])
        return cls(zero, alive, v2)

    def merge(self, other: "ReturnCounters") -> "ReturnCounters":
        return ReturnCounters(self.zero_count + other.zero_count, self.alive + other.alive,
                              self.visits_sq_sum + other.visits_sq_sum)

    @property
    def n_max(self) -> int:
        return len(self.alive) - 1

    def partial_sums(self):
        """(E V_n, standard error, E V_n^2) for n = 0..n_max."""
        p = self.zero_count[1:] / self.alive[1:]
        ev = np.concatenate([[0.0], np.cumsum(p)])
        ev2 = np.concatenate([[0.0], self.visits_sq_sum[1:] / self.alive[1:]])
        var = np.maximum(ev2 - ev**2, 0.0)
        se = np.sqrt(var / np.maximum(self.alive, 1))
        return ev, se, ev2


def lamperti_statistic(counters: ReturnCounters, schedule=None, *, exact=None, z=3.0, fit_r2=0.9,
                       return_fraction=None, min_sum=2.0) -> LimitReport:
    """Partial sums of nu(A_k), the Lamperti ratio and the divergence verdicts.

    ``exact`` (optional) holds exact nu(S_k = 0) for k = 0..n_max; the partial
    sums must then match within ``z`` standard errors at every schedule point.
    The ratio statistic is E[V_n^2]/(E V_n)^2 = sum_{j,k<=n} nu(A_j A_k) /
    (sum_{k<=n} nu(A_k))^2.
    """
    rep = LimitReport("lamperti_statistic")
    ev, se, ev2 = counters.partial_sums()
    n_max = counters.n_max
    if schedule is None:
        schedule = [2**j for j in range(4, int(math.log2(n_max)) + 1)]
    schedule = [int(n) for n in schedule if n <= n_max]
    if ev[schedule[-1]] < min_sum:
        raise InsufficientSamples(f"sum of return probabilities {ev[schedule[-1]]:.3g} below {min_sum}")
    ratio = [float(ev2[n] / ev[n] ** 2) if ev[n] > 0 else math.nan for n in schedule]
    ex = None if exact is None else np.concatenate([[0.0], np.cumsum(np.asarray(exact)[1:n_max + 1])])
    for j, n in enumerate(schedule):
        row = {"n": n, "partial_sum": ev[n], "se": se[n], "ratio": ratio[j]}
        if ex is not None:
            row["exact"] = ex[n]
            row["z"] = (ev[n] - ex[n]) / se[n] if se[n] > 0 else math.inf
        if return_fraction is not None and n in return_fraction:
            row["return_fraction"] = return_fraction[n]
        rep.rows.append(row)
    if ex is not None:
        zmax = max(abs(r["z"]) for r in rep.rows)
        rep.check("partial sums vs exact", zmax, f"< {z} standard errors", zmax < z)
    slope, icpt, r2 = linear_fit(np.log(schedule), ev[schedule])
    rep.fitted.update({"log_slope": slope, "log_intercept": icpt, "log_r2": r2,
                       "ratio_max": float(np.nanmax(ratio))})
    inc = np.diff(ev[schedule])
    rep.fitted["last_increment_over_first"] = float(inc[-1] / inc[0]) if inc[0] > 0 else math.nan
    rep.fitted["diverging"] = bool(divergence_verdict(ev, schedule))
    if fit_r2 is not None:
        rep.check("log n fit", r2, f"R^2 > {fit_r2}", r2 > fit_r2)
    return rep


def divergence_verdict(ev, schedule, rate_cut=0.25) -> bool:
    """Diverging when increments over dyadic blocks do not shrink geometrically.

    Block increments of sum k^-(d/2) shrink by 2^-(d/2 - 1) per octave: rate 0
    for a log-divergent sum, 1/2 for d = 3.  The rate is fitted over all blocks
    and compared with ``rate_cut``.
    """
    sched = np.asarray(list(schedule))
    inc = np.diff(np.asarray(ev)[sched])
    if np.any(inc <= 0):
        return False
    slope, _, _ = linear_fit(np.log2(sched[1:]), np.log2(inc))
    return bool(-slope < rate_cut)


# ----------------------------------------------------------------------------
# minimality


def _hnf_basis(vectors):
    """Hermite basis [[p, q], [0, h]] of the Z-span of integer 2-vectors."""
    p, q, h = 0, 0, 0
    for v in vectors:
        x, y = int(v[0]), int(v[1])
        if x == 0:
            h = math.gcd(h, y)
        elif p == 0:
            p, q = x, y
        else:
            d, s, t = _egcd(p, x)
            # the complementary combination has first coordinate 0
            h = math.gcd(h, (x // d) * q - (p // d) * y)
            p, q = d, s * q + t * y
    if p < 0:
        p, q = -p, -q
    if h:
        q %= h
    return (p, q), h


def _egcd(a, b):
    """(g, s, t) with s a + t b = g = gcd(a, b) > 0."""
    s0, s1, t0, t1 = 1, 0, 0, 1
    while b:
        qt = a // b
        a, b = b, a - qt * b
        s0, s1 = s1, s0 - qt * s1
        t0, t1 = t1, t0 - qt * t1
    if a < 0:
        a, s0, t0 = -a, -s0, -t0
    return a, s0, t0


def lattice_index(vectors) -> tuple:
    """Index of the subgroup of Z^2 spanned by ``vectors`` and its invariant factors.

    Returns (index, (d1, d2)); index 0 means the span has rank < 2.
    """
    (p, q), h = _hnf_basis(vectors)
    det = abs(p * h)
    if det == 0:
        return 0, (math.gcd(math.gcd(abs(p), abs(q)), h), 0)
    d1 = math.gcd(math.gcd(abs(p), abs(q)), h)
    return det, (d1, det // d1)


def minimality_check(kappa, *, min_steps=10_000, segment=None) -> LimitReport:
    """Smith-normal-form index of the lattices generated by observed kappa.

    ``values`` is the lattice spanned by kappa itself; ``differences`` by
    kappa_i - kappa_0 and by differences of Birkhoff sums over segments of
    equal length, which detects confinement to a coset r + V of a proper
    sublattice V.
    """
    rep = LimitReport("minimality_check")
    k = np.asarray(kappa, np.int64).reshape(-1, 2)
    if len(k) < min_steps:
        raise InsufficientSamples(f"{len(k)} steps observed, need {min_steps}")
    uniq = np.unique(k, axis=0)
    idx_v, inv_v = lattice_index(uniq)
    diffs = uniq - uniq[0]
    if segment:
        m = (len(k) // segment) * segment
        seg = k[:m].reshape(-1, segment, 2).sum(axis=1)
        useg = np.unique(seg, axis=0)
        diffs = np.concatenate([diffs, useg - useg[0]])
    idx_d, inv_d = lattice_index(diffs)
    rep.fitted.update({"distinct_values": int(len(uniq)), "index_values": idx_v, "invariants_values": list(inv_v),
                       "index_differences": idx_d, "invariants_differences": list(inv_d)})
    rep.check("index of kappa lattice", idx_v, "== 1", idx_v == 1)
    rep.check("index of difference lattice (no coset drift)", idx_d, "== 1", idx_d == 1)
    return rep
