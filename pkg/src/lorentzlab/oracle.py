"""Exact random-walk oracles.

Simple symmetric random walks have closed-form point masses; the heavy-tailed
law p(+-u) = c/u^3 (c = 1/(2 zeta(3))) is convolved on a circular FFT window
whose outer band is monitored for wrap-around.  The Gnedenko terms split the
local-limit error for the span-2 walk into the four integrals of the
inversion argument.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import mpmath as mp
import numpy as np
from scipy import integrate, special, stats

from .errors import ParameterOrder, ParityViolation, WindowOverflow

HEAVY_C = float(1.0 / (2.0 * mp.zeta(3)))
HEAVY_CUTOFF = 2**20
MAX_WINDOW = 2**24
BAND_TOL = 1e-10


@dataclass(frozen=True)
class LatticeWalkSpec:
    """Step law of a lattice walk.

    ``kind`` is "ssrw" (nearest-neighbour steps in dimension ``d``),
    "heavy_tail" or "pmf" (explicit law on Z given by ``values``/``probs``).
    """

    kind: str
    d: int = 1
    values: np.ndarray = field(default=None, repr=False)
    probs: np.ndarray = field(default=None, repr=False)
    cutoff: int = HEAVY_CUTOFF

    def __post_init__(self):
        if self.kind == "ssrw":
            if self.d not in (1, 2, 3):
                raise ValueError("ssrw dimension must be 1, 2 or 3")
        elif self.kind == "heavy_tail":
            u = np.arange(1, self.cutoff + 1, dtype=float)
            p = HEAVY_C / u**3
            object.__setattr__(self, "values", np.concatenate([-u[::-1], u]).astype(np.int64))
            object.__setattr__(self, "probs", np.concatenate([p[::-1], p]))
        elif self.kind == "pmf":
            v = np.asarray(self.values, np.int64)
            p = np.asarray(self.probs, float)
            if v.shape != p.shape or np.any(p < 0):
                raise ValueError("pmf needs matching non-negative probabilities")
            if abs(p.sum() - 1.0) > 1e-12:
                raise ValueError(f"pmf sums to {p.sum()!r}, not 1")
            object.__setattr__(self, "values", v)
            object.__setattr__(self, "probs", p)
        else:
            raise ValueError(f"unknown step law {self.kind!r}")

    @classmethod
    def ssrw(cls, d=1):
        return cls("ssrw", d)

    @classmethod
    def heavy_tail(cls, cutoff=HEAVY_CUTOFF):
        return cls("heavy_tail", 1, cutoff=cutoff)

    @classmethod
    def from_pmf(cls, values, probs):
        return cls("pmf", 1, np.asarray(values), np.asarray(probs))

    @property
    def truncation_mass(self) -> float:
        """Mass of the untruncated heavy-tail law beyond the cutoff (0 otherwise)."""
        if self.kind != "heavy_tail":
            return 0.0
        return float(2 * HEAVY_C * mp.zeta(3, self.cutoff + 1))

    @property
    def span(self) -> int:
        """Span of the difference lattice of the support (2 for SSRW)."""
        if self.kind == "ssrw":
            return 2
        v = self.values[self.probs > 0]
        return int(np.gcd.reduce(np.abs(v - v[0]))) if len(v) > 1 else 0

    def step_variance(self) -> float:
        if self.kind == "ssrw":
            return 1.0 / self.d
        m = float(np.dot(self.values, self.probs))
        return float(np.dot(self.values.astype(float) ** 2, self.probs) - m * m)

    def charfn(self, t) -> np.ndarray:
        """Characteristic function on a grid of t (scalar t per axis for d = 1)."""
        t = np.asarray(t, float)
        if self.kind == "ssrw":
            if self.d == 1:
                return np.cos(t).astype(complex)
            t = np.atleast_2d(t)
            return np.mean(np.cos(t), axis=-1).astype(complex)
        if self.kind == "heavy_tail":
            return np.array([heavy_tail_charfn(x) for x in np.atleast_1d(t)]).reshape(t.shape)
        ph = np.exp(1j * np.multiply.outer(t, self.values))
        return ph @ self.probs


def heavy_tail_charfn(t: float, dps=30) -> complex:
    """xi(t) = Re Li_3(e^{it}) / zeta(3) for the untruncated law p(+-u) = c/u^3.

    The truncated law differs by at most its truncation mass (below 1e-12).
    """
    with mp.workdps(dps):
        x = mp.re(mp.polylog(3, mp.exp(1j * mp.mpf(t)))) / mp.zeta(3)
    return complex(float(x), 0.0)


# ----------------------------------------------------------------------------
# exact point masses


@dataclass
class LatticePmf:
    """Dense pmf on a box of Z^d: ``array[i] = P(W = origin + i)``."""

    origin: np.ndarray
    array: np.ndarray
    truncation_mass: float = 0.0
    step_truncation_mass: float = 0.0

    @property
    def d(self) -> int:
        return self.array.ndim

    def at(self, k) -> float:
        idx = np.atleast_1d(np.asarray(k, np.int64)) - self.origin
        if np.any(idx < 0) or np.any(idx >= self.array.shape):
            return 0.0
        return float(self.array[tuple(idx)])

    @property
    def total(self) -> float:
        return float(self.array.sum())

    def support_points(self):
        return [self.origin + np.array(ix) for ix in zip(*np.nonzero(self.array))]

    def mean(self) -> np.ndarray:
        grids = np.indices(self.array.shape)
        return np.array([np.sum((g + o) * self.array) for g, o in zip(grids, self.origin)]) / self.total

    def cov(self) -> np.ndarray:
        grids = [g + o for g, o in zip(np.indices(self.array.shape), self.origin)]
        m = self.mean()
        C = np.empty((self.d, self.d))
        for a in range(self.d):
            for b in range(self.d):
                C[a, b] = np.sum((grids[a] - m[a]) * (grids[b] - m[b]) * self.array) / self.total
        return C

    def as_dict(self) -> dict:
        return {tuple(int(v) for v in p): self.at(p) for p in self.support_points()}


@dataclass
class RotatedSSRW2:
    """Point masses of the planar simple walk via the rotation u = x+y, v = x-y.

    In rotated coordinates the walk is a pair of independent +-1 walks, so
    P(W_n = (x, y)) = P1(x + y) P1(x - y).  No dense array is formed.
    """

    n: int

    def at(self, k) -> float:
        x, y = (int(v) for v in k)
        return _ssrw1_point(self.n, x + y) * _ssrw1_point(self.n, x - y)

    @property
    def total(self) -> float:
        return 1.0

    def to_array(self, max_side=4001) -> LatticePmf:
        side = 2 * self.n + 1
        if side > max_side:
            raise MemoryError(f"dense array of side {side} exceeds {max_side}")
        p1 = _ssrw1_array(self.n)  # index i <-> value i - n
        x = np.arange(-self.n, self.n + 1)
        U = x[:, None] + x[None, :]
        V = x[:, None] - x[None, :]
        ok = (np.abs(U) <= self.n) & (np.abs(V) <= self.n)
        arr = np.zeros((side, side))
        arr[ok] = p1[U[ok] + self.n] * p1[V[ok] + self.n]
        return LatticePmf(np.array([-self.n, -self.n]), arr)


def _ssrw1_point(n: int, k: int) -> float:
    if abs(k) > n or (n + k) % 2:
        return 0.0
    m = (n + k) // 2
    return float(np.exp(special.gammaln(n + 1) - special.gammaln(m + 1) - special.gammaln(n - m + 1)
                        - n * math.log(2.0)))


def _ssrw1_array(n: int) -> np.ndarray:
    """P(W_n = k) for k = -n..n."""
    k = np.arange(-n, n + 1)
    out = np.zeros(2 * n + 1)
    ok = (n + k) % 2 == 0
    m = (n + k[ok]) // 2
    out[ok] = stats.binom.pmf(m, n, 0.5)
    return out


def _fft_power(step: np.ndarray, n: int, L: int) -> np.ndarray:
    """n-fold circular convolution power of a step pmf given on Z/L (index 0 = value 0)."""
    f = np.fft.rfft(step)
    return np.fft.irfft(f**n, L)


def _heavy_window(spec: LatticeWalkSpec, L: int) -> np.ndarray:
    step = np.zeros(L)
    step[np.mod(spec.values, L)] += spec.probs
    return step


def exact_pmf(spec: LatticeWalkSpec, n: int, *, window=None):
    """Exact law of W_n = X_1 + ... + X_n.

    SSRW: closed-form binomial point masses (d = 1), the rotated product
    form (d = 2) or iterated convolution (d = 3, small n).  Explicit pmf and
    heavy-tail laws: FFT convolution power on a circular window; the mass in
    the outer quarter band of the window bounds the wrap-around error and must
    stay below 1e-10, else the window is doubled up to 2^24 and then
    :class:`WindowOverflow` is raised.
    """
    if n < 1:
        raise ValueError("n must be positive")
    if spec.kind == "ssrw":
        if spec.d == 1:
            return LatticePmf(np.array([-n]), _ssrw1_array(n))
        if spec.d == 2:
            if n > 10_000:
                raise ValueError("planar exact pmf supported for n <= 10^4")
            return RotatedSSRW2(n)
        return _ssrw3_pmf(n)
    vmax = int(np.max(np.abs(spec.values)))
    if spec.kind == "pmf" and n * vmax <= 4096:
        # small support: direct convolution is exact up to rounding
        lo = int(spec.values.min())
        base = np.zeros(int(spec.values.max()) - lo + 1)
        base[spec.values - lo] = spec.probs
        p = base
        for _ in range(n - 1):
            p = np.convolve(p, base)
        return LatticePmf(np.array([n * lo]), p)
    L = window or 1 << max(12, int(math.ceil(math.log2(4 * vmax + 1))) + 1)
    while True:
        w = _fft_power(_heavy_window(spec, L), n, L)
        w = np.maximum(w, 0.0)  # clip FFT round-off below zero
        q = L // 4
        band = float(w[q:L - q].sum())
        if band <= BAND_TOL:
            break
        if L >= MAX_WINDOW:
            raise WindowOverflow(f"outer-band mass {band:.3e} with window 2^{int(math.log2(L))} at n={n}")
        L *= 2
    arr = np.concatenate([w[L - q:], w[:q]])
    return LatticePmf(np.array([-q]), arr, truncation_mass=band,
                      step_truncation_mass=n * spec.truncation_mass)


def heavy_tail_pmfs(spec: LatticeWalkSpec, ns, *, at=0) -> dict:
    """P(W_n = at) for several n from one FFT of the step law."""
    ns = sorted(int(n) for n in ns)
    vmax = int(np.max(np.abs(spec.values)))
    L = 1 << max(12, int(math.ceil(math.log2(4 * vmax + 1))) + 1)
    out = {}
    while True:
        f = np.fft.rfft(_heavy_window(spec, L))
        ok = True
        for n in ns:
            w = np.maximum(np.fft.irfft(f**n, L), 0.0)
            q = L // 4
            band = float(w[q:L - q].sum())
            if band > BAND_TOL:
                ok = False
                break
            out[n] = {"p": float(w[at % L]), "band_mass": band, "total": float(w.sum()),
                      "step_truncation_mass": n * spec.truncation_mass}
        if ok:
            return out
        if L >= MAX_WINDOW:
            raise WindowOverflow(f"outer-band mass above {BAND_TOL} at the largest window")
        L *= 2


def _ssrw3_pmf(n: int) -> LatticePmf:
    if n > 200:
        raise ValueError("three-dimensional exact pmf supported for n <= 200")
    side = 2 * n + 1
    p = np.zeros((side, side, side))
    p[n, n, n] = 1.0
    for _ in range(n):
        q = np.zeros_like(p)
        for ax in range(3):
            q += (np.roll(p, 1, axis=ax) + np.roll(p, -1, axis=ax)) / 6.0
        p = q
    return LatticePmf(np.array([-n, -n, -n]), p)


def return_probabilities(d: int, n_max: int) -> np.ndarray:
    """P(W_k = 0) for the d-dimensional simple walk, k = 0..n_max.

    Uses the split of k steps into j steps along the first axis (binomial with
    p = 1/d) and k - j in the remaining d - 1 axes.
    """
    k = np.arange(n_max + 1)
    p1 = np.zeros(n_max + 1)
    even = k % 2 == 0
    p1[even] = stats.binom.pmf(k[even] // 2, k[even], 0.5)
    if d == 1:
        return p1
    if d == 2:
        return p1**2
    prev = return_probabilities(d - 1, n_max)
    out = np.zeros(n_max + 1)
    for m in range(n_max + 1):
        j = np.arange(0, m + 1)
        w = stats.binom.pmf(j, m, 1.0 / d)
        out[m] = float(np.sum(w * p1[j] * prev[m - j]))
    return out


# ----------------------------------------------------------------------------
# local limit tables


def _gauss_density(x, cov):
    x = np.atleast_1d(np.asarray(x, float))
    cov = np.atleast_2d(cov)
    d = len(x)
    return float(np.exp(-0.5 * x @ np.linalg.solve(cov, x)) / math.sqrt((2 * math.pi) ** d * np.linalg.det(cov)))


def lclt_limit_check(spec: LatticeWalkSpec, n_schedule, k_seq=None, *, tol=None) -> list:
    """Normalized point masses against the Gaussian density times the lattice covolume.

    Rows hold n, k_n, exact P(W_n = k_n), normalizer, normalized value and the
    limit.  Normalizers: sqrt(n) (d = 1), n (d = 2), sqrt(n log n) for the
    heavy-tail law, whose limiting variance per n log n is c.
    """
    ns = list(n_schedule)
    if k_seq is None:
        k_seq = [np.zeros(spec.d, np.int64) for _ in ns]
    rows = []
    heavy = spec.kind == "heavy_tail"
    pm = heavy_tail_pmfs(spec, ns) if heavy else None
    for n, k in zip(ns, k_seq):
        k = np.atleast_1d(np.asarray(k, np.int64))
        if spec.kind == "ssrw":
            if (int(k.sum()) - n) % 2:
                raise ParityViolation(f"k={k.tolist()} has the wrong parity for n={n}")
            covol = 2.0
            cov = np.eye(spec.d) / spec.d
            norm = n ** (spec.d / 2)
            p = exact_pmf(spec, n).at(k)
            x = k / math.sqrt(n)
        elif heavy:
            covol = 1.0
            cov = np.array([[HEAVY_C]])
            norm = math.sqrt(n * math.log(n))
            if int(k[0]) != 0:
                p = exact_pmf(spec, n).at(k)
            else:
                p = pm[n]["p"]
            x = k / norm
        else:
            span = spec.span
            v0 = int(spec.values[spec.probs > 0][0])
            if span > 1 and (int(k[0]) - n * v0) % span:
                raise ParityViolation(f"k={int(k[0])} is off the support coset at n={n}")
            covol = float(span)
            cov = np.array([[spec.step_variance()]])
            norm = math.sqrt(n)
            mean = float(np.dot(spec.values, spec.probs))
            p = exact_pmf(spec, n).at(k)
            x = (k - n * mean) / norm
        limit = covol * _gauss_density(x, cov)
        row = {"n": n, "k": k.tolist(), "exact": p, "normalizer": norm, "normalized": norm * p, "limit": limit}
        if tol is not None:
            row["passed"] = abs(norm * p - limit) < tol
        rows.append(row)
    return rows


# ----------------------------------------------------------------------------
# Gnedenko decomposition


@dataclass
class GnedenkoTerms:
    n: int
    A: float
    eps: float
    k: int
    I: float
    II: float
    III: float
    IIII: float
    log_IIII: float
    III_bound: float
    lhs: float  # pi * |sqrt(n) P(W_n = k) - 2 phi(k / sqrt(n))|

    @property
    def total(self) -> float:
        return self.I + self.II + self.III + self.IIII

    def as_dict(self) -> dict:
        return {k: (float(v) if isinstance(v, float) else v) for k, v in self.__dict__.items()} | {"total": self.total}


def _quad(f, a, b, points=None):
    if b <= a:
        return 0.0
    val, _ = integrate.quad(f, a, b, epsabs=1e-14, epsrel=1e-10, limit=500, points=points)
    return val


def gnedenko_terms(n: int, A: float = 5.0, eps: float = 0.5, k: int = 0, spec: LatticeWalkSpec = None) -> GnedenkoTerms:
    """The four integrals bounding the local-limit error of the span-2 walk.

    I    = int_{|s|<=A} |xi^n(s/sqrt n) - gamma(s)| ds,  gamma(s) = exp(-s^2/2)
    II   = int_{|s|>=A} gamma(s) ds
    III  = int_{A<=|s|<=eps sqrt n} |xi^n(s/sqrt n)| ds
    IIII = int_{eps sqrt n<=|s|<=sqrt n pi/2} |xi^n(s/sqrt n)| ds
    All integrands are even, so each is twice the integral over s >= 0.
    """
    if spec is not None and not (spec.kind == "ssrw" and spec.d == 1):
        raise ValueError("Gnedenko terms are implemented for the one-dimensional simple walk")
    if not 0 < eps < math.pi / 2:
        raise ValueError("eps must lie in (0, pi/2)")
    rn = math.sqrt(n)
    if A > eps * rn:
        raise ParameterOrder(f"A={A} exceeds eps*sqrt(n)={eps * rn}")

    def xin(s):
        return math.cos(s / rn) ** n

    def log_abs_xin(s):
        c = abs(math.cos(s / rn))
        return n * math.log(c) if c > 0 else -math.inf

    I = 2 * _quad(lambda s: abs(xin(s) - math.exp(-s * s / 2)), 0.0, A)
    II = math.sqrt(2 * math.pi) * math.erfc(A / math.sqrt(2))
    III = 2 * _quad(lambda s: abs(xin(s)), A, eps * rn)
    # IIII in log scale: factor out the largest value |xi^n| at s = eps sqrt n
    ref = log_abs_xin(eps * rn)
    scaled = 2 * _quad(lambda s: math.exp(log_abs_xin(s) - ref), eps * rn, rn * math.pi / 2)
    log_IIII = ref + math.log(scaled) if scaled > 0 else -math.inf
    IIII = math.exp(log_IIII)
    III_bound = 2 * math.sqrt(math.pi) * math.erfc(A / 2)
    p = _ssrw1_point(n, k)
    phi = math.exp(-(k * k) / (2 * n)) / math.sqrt(2 * math.pi)
    lhs = math.pi * abs(rn * p - 2 * phi)
    return GnedenkoTerms(n, A, eps, k, I, II, III, IIII, log_IIII, III_bound, lhs)


def cos_quadratic_bound(half_width=0.5, step=1e-4) -> float:
    """max over the grid |t| <= half_width of cos t - (1 - t^2/4) (must be <= 0)."""
    m = int(round(half_width / step))
    t = np.arange(-m, m + 1) * step
    return float(np.max(np.cos(t) - (1 - t * t / 4)))


def inversion_pmf(n: int, k: int) -> float:
    """P(W_n = k) for the span-2 walk from (1/pi) int_{|t|<=pi/2} e^{-itk} cos^n t dt."""
    if (n + k) % 2:
        return 0.0
    val = _quad(lambda t: math.cos(t * k) * math.cos(t) ** n, 0.0, math.pi / 2)
    return 2 * val / math.pi


# ----------------------------------------------------------------------------
# heavy-tail Fourier expansion


@dataclass
class CharFnFit:
    c_fit: float
    intercept: float
    r2: float
    t: np.ndarray
    y: np.ndarray  # (xi(t) - 1) / t^2

    def as_dict(self):
        return {"c_fit": self.c_fit, "intercept": self.intercept, "r2": self.r2}


def heavy_tail_charfn_fit(spec: LatticeWalkSpec = None, t_grid=None) -> CharFnFit:
    """Regress (xi(t) - 1)/t^2 on log t.

    For the heavy-tail law xi(t) = 1 + c t^2 log t - (3/2) c t^2 + O(t^4),
    so the slope is c = 1/(2 zeta(3)).  A bounded law gives slope about 0
    and intercept -sigma^2/2.
    """
    spec = spec or LatticeWalkSpec.heavy_tail()
    if t_grid is None:
        t_grid = np.logspace(-4, -1, 61)
    t = np.asarray(t_grid, float)
    if spec.kind == "heavy_tail":
        with mp.workdps(40):
            xm1 = [mp.re(mp.polylog(3, mp.exp(1j * mp.mpf(x)))) / mp.zeta(3) - 1 for x in t]
            y = np.array([float(v / mp.mpf(x) ** 2) for v, x in zip(xm1, t)])
    else:
        # 1 - cos(tu) = 2 sin^2(tu/2) avoids cancellation
        s = np.sin(np.multiply.outer(t, spec.values.astype(float)) / 2.0)
        xm1 = -2.0 * (s * s) @ spec.probs + 1j * (np.sin(np.multiply.outer(t, spec.values)) @ spec.probs)
        y = xm1.real / t**2
    res = stats.linregress(np.log(t), y)
    return CharFnFit(float(res.slope), float(res.intercept), float(res.rvalue**2), t, y)


# ----------------------------------------------------------------------------
# samplers


class IIDSampler:
    """Inverse-CDF sampler for a step law.

    ``draw(size)`` returns steps (shape (size,) for d = 1, (size, d) else);
    ``draw_sums(n, size)`` draws W_n directly from the exact pmf.
    """

    def __init__(self, spec: LatticeWalkSpec, rng: np.random.Generator):
        self.spec = spec
        self.rng = rng
        if spec.kind != "ssrw":
            self._cdf = np.cumsum(spec.probs)
            self._cdf /= self._cdf[-1]
        self._sum_cdf = {}

    def draw(self, size: int) -> np.ndarray:
        if self.spec.kind == "ssrw":
            d = self.spec.d
            j = self.rng.integers(0, 2 * d, size)
            out = np.zeros((size, d), np.int64)
            out[np.arange(size), j // 2] = np.where(j % 2 == 0, 1, -1)
            return out[:, 0] if d == 1 else out
        u = self.rng.random(size)
        return self.spec.values[np.searchsorted(self._cdf, u, side="right").clip(max=len(self._cdf) - 1)]

    def draw_sums(self, n: int, size: int) -> np.ndarray:
        """Independent copies of W_n from the exact law (d = 1 only)."""
        if n not in self._sum_cdf:
            pmf = exact_pmf(self.spec, n)
            cdf = np.cumsum(pmf.array)
            cdf /= cdf[-1]
            self._sum_cdf[n] = (int(pmf.origin[0]), cdf)
        lo, cdf = self._sum_cdf[n]
        u = self.rng.random(size)
        return lo + np.searchsorted(cdf, u, side="right").clip(max=len(cdf) - 1)


def iid_sampler(spec: LatticeWalkSpec, rng: np.random.Generator) -> IIDSampler:
    return IIDSampler(spec, rng)


def iid_birkhoff_samples(spec: LatticeWalkSpec, schedule, trajectories: int, seed: int, dim: int = 2) -> dict:
    """Partial sums of ``dim`` independent coordinates at each n in ``schedule``.

    Increments between schedule points are drawn from the exact law of
    W_{n_{j+1} - n_j}, so the samples are consistent along each trajectory.
    """
    rng = np.random.Generator(np.random.Philox(key=int(seed)))
    sampler = IIDSampler(spec, rng)
    sched = sorted(int(n) for n in schedule)
    S = np.zeros((trajectories, dim), np.int64)
    out = {}
    prev = 0
    for n in sched:
        m = n - prev
        for a in range(dim):
            S[:, a] += sampler.draw_sums(m, trajectories)
        out[n] = S.copy()
        prev = n
    return out
