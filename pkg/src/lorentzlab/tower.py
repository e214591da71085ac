"""First-return towers over full-branch affine expanding maps.

The base map T sends each branch interval [b_j, b_{j+1}) affinely onto
[0, 1).  For a base Lambda made of whole branches, the tower point (y, l)
records the current position y = T^l x and the time l since the last visit
to Lambda; the tower map is (y, l) -> (T y, l + 1) off Lambda and
(T y, 0) on it.  Because the branches are full this quotient is exactly
Markov, and the reference measure is Lebesgue in y scaled per level, so the
Jacobian is 1 off the return set.

The transfer operator is discretized by Ulam's method on cells of width
1/resolution in y on every level.  The mass matrix is column stochastic; the
continuation out of the top retained level is sent back to level 0 in
proportion to Lebesgue on Lambda (the law it would return with), which keeps
stochasticity exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse, stats

from .errors import DegenerateVariance, NoGap, NonMarkovBase, ResolutionTooCoarse, TruncationTooHeavy

MASS_FLOOR = 1e-10
MAX_TRUNCATED = 1e-6
MAX_LEVELS = 2000


@dataclass(frozen=True)
class AffineMap:
    """Full-branch, orientation-preserving, piecewise-affine map of [0, 1)."""

    breakpoints: tuple

    def __post_init__(self):
        b = tuple(float(x) for x in self.breakpoints)
        if b[0] != 0.0 or b[-1] != 1.0 or any(y <= x for x, y in zip(b, b[1:])):
            raise ValueError("breakpoints must increase from 0 to 1")
        object.__setattr__(self, "breakpoints", b)

    @classmethod
    def doubling(cls):
        return cls((0.0, 0.5, 1.0))

    @classmethod
    def m_adic(cls, m: int):
        return cls(tuple(np.arange(m + 1) / m))

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.breakpoints)

    @property
    def n_branches(self) -> int:
        return len(self.breakpoints) - 1

    @property
    def min_slope(self) -> float:
        return float(1.0 / self.widths.max())

    @property
    def alpha(self) -> float:
        """Largest contraction factor of an inverse branch."""
        return float(self.widths.max())

    def branch(self, x):
        return np.clip(np.searchsorted(self.breakpoints, x, side="right") - 1, 0, self.n_branches - 1)

    def __call__(self, x):
        x = np.asarray(x, float)
        j = self.branch(x)
        b = np.asarray(self.breakpoints)
        w = self.widths
        return (x - b[j]) / w[j]

    def transfer(self, g, y):
        """(P g)(y) = sum_j w_j g(b_j + w_j y) for a vectorized callable g."""
        b = np.asarray(self.breakpoints)
        return sum(w * g(b[j] + w * y) for j, w in enumerate(self.widths))

    def to_json(self):
        return {"breakpoints": list(self.breakpoints)}


# ----------------------------------------------------------------------------
# tower


@dataclass
class TowerModel:
    tmap: AffineMap
    base: tuple
    base_measure: float
    level_masses: np.ndarray  # Lebesgue mass of {R > l} for l = 0..L
    truncated_mass: float
    tail: np.ndarray  # mu_Lambda{R > n}, normalized on the base, n = 0..L
    return_words: dict  # R -> (number of return cylinders, normalized measure)
    min_return: int
    tail_slope: float = math.nan
    tail_intercept: float = math.nan
    tail_r2: float = math.nan

    @property
    def max_level(self) -> int:
        return len(self.level_masses) - 1

    @property
    def expansion_rate(self) -> float:
        """Exponential decay rate of level masses, -log(1 - |Lambda|)."""
        return -self.tail_slope if np.isfinite(self.tail_slope) else math.inf

    def to_json(self):
        return {
            "map": self.tmap.to_json(),
            "base": list(self.base),
            "base_measure": self.base_measure,
            "levels": self.max_level + 1,
            "level_masses": [float(m) for m in self.level_masses],
            "truncated_mass": self.truncated_mass,
            "tail": [float(t) for t in self.tail],
            "return_words": {str(r): [int(c), float(m)] for r, (c, m) in self.return_words.items()},
            "min_return": self.min_return,
            "tail_slope": self.tail_slope,
            "tail_intercept": self.tail_intercept,
            "tail_r2": self.tail_r2,
        }


def _base_branches(tmap: AffineMap, base) -> tuple:
    """Branch indices of a base given as indices or as an interval (a, b)."""
    if isinstance(base, (tuple, list)) and len(base) == 2 and any(isinstance(v, float) for v in base):
        a, b = float(base[0]), float(base[1])
        bp = np.asarray(tmap.breakpoints)
        ia = np.flatnonzero(np.isclose(bp, a, rtol=0, atol=1e-15))
        ib = np.flatnonzero(np.isclose(bp, b, rtol=0, atol=1e-15))
        if len(ia) == 0 or len(ib) == 0 or ib[0] <= ia[0]:
            raise NonMarkovBase(f"base [{a}, {b}) is not a union of branch domains")
        return tuple(range(int(ia[0]), int(ib[0])))
    idx = tuple(sorted(int(j) for j in base))
    if not idx or any(j < 0 or j >= tmap.n_branches for j in idx) or len(set(idx)) != len(idx):
        raise NonMarkovBase(f"base branches {base!r} are not valid branch indices")
    return idx


def build_tower(tmap: AffineMap, base, max_level=None, *, mass_floor=MASS_FLOOR,
                max_truncated=MAX_TRUNCATED) -> TowerModel:
    """First-return tower over ``base`` by symbolic iteration of the branches.

    Levels are added until the level mass drops below ``mass_floor`` (or up to
    ``max_level``).  The mass above the last level is reported as truncated;
    :class:`TruncationTooHeavy` is raised when it exceeds ``max_truncated``.
    """
    if tmap.min_slope <= 1.0:
        raise ValueError("map is not expanding")
    B = _base_branches(tmap, base)
    w = tmap.widths
    lam = float(w[list(B)].sum())
    q = 1.0 - lam  # probability of continuing one more level
    masses = [lam]
    cap = MAX_LEVELS if max_level is None else max_level
    while len(masses) <= cap and q > 0:
        nxt = masses[-1] * q
        if max_level is None and nxt < mass_floor:
            break
        masses.append(nxt)
    masses = np.array(masses)
    truncated = float(masses[-1] * q)
    if truncated > max_truncated:
        raise TruncationTooHeavy(f"truncated mass {truncated:.3e} above {max_truncated:.1e}")
    tail = masses / lam
    nB, nC = len(B), tmap.n_branches - len(B)
    words = {}
    for L in range(1, len(masses) + 1):
        # a return at time L: b, then L-1 symbols outside the base, then a base symbol
        words[L] = (nB * nC ** (L - 1) * nB, float(q ** (L - 1) * lam))
    model = TowerModel(tmap, B, lam, masses, truncated, tail, words, 1)
    if len(masses) >= 3:
        n = np.arange(1, len(masses))
        res = stats.linregress(n, np.log(tail[1:]))
        model.tail_slope, model.tail_intercept, model.tail_r2 = float(res.slope), float(res.intercept), float(res.rvalue**2)
    return model


# ----------------------------------------------------------------------------
# Ulam discretization


def _cylinders(tmap: AffineMap, j: int, res: int):
    """Cylinders inside branch j down to two cells, as (depth, lo, hi) cell ranges of the global grid."""
    b = np.asarray(tmap.breakpoints)
    w = tmap.widths
    out = []
    stack = [(1, b[j], b[j + 1])]
    while stack:
        d, lo, hi = stack.pop()
        clo, chi = int(round(lo * res)), int(round(hi * res))
        if chi - clo < 2:
            continue
        out.append((d, clo, chi))
        for jj in range(tmap.n_branches):
            stack.append((d + 1, lo + (hi - lo) * b[jj], lo + (hi - lo) * b[jj + 1]))
    out.sort()
    return out


@dataclass
class TransferMatrix:
    """Ulam mass matrix M = S + u g^T on tower cells, with Young's norms.

    States are (level, grid cell).  ``nu`` holds the reference mass of each
    cell, so a function phi on cells corresponds to the mass vector nu*phi and
    the transfer operator on functions is phi -> M(nu phi) / nu.
    """

    tower: TowerModel
    resolution: int
    eps: float
    beta: float
    level: np.ndarray
    grid: np.ndarray
    S: sparse.csr_matrix
    u: np.ndarray
    g: np.ndarray
    nu: np.ndarray
    pieces: list  # (level, branch, first state, grid start)
    cylinders: dict  # branch -> list of (depth, grid lo, grid hi)

    @property
    def n_states(self) -> int:
        return len(self.level)

    @property
    def invariant(self) -> np.ndarray:
        """Reference masses normalized to a probability vector (invariant for M)."""
        return self.nu / self.nu.sum()

    @property
    def y_lo(self) -> np.ndarray:
        return self.grid / self.resolution

    def matvec(self, v):
        return self.S @ v + self.u * (self.g @ v)

    def rmatvec(self, w):
        return self.S.T @ w + self.g * (self.u @ w)

    def to_sparse(self) -> sparse.csr_matrix:
        nz = np.flatnonzero(self.g)
        R = sparse.csr_matrix(np.outer(self.u, np.ones(1)))  # column vector
        return (self.S + R @ sparse.csr_matrix((self.g[nz], (np.zeros(len(nz)), nz)), shape=(1, self.n_states))).tocsr()

    def column_sums(self) -> np.ndarray:
        return np.asarray(self.S.sum(axis=0)).ravel() + self.g * self.u.sum()

    def apply(self, phi, n: int = 1):
        """Transfer operator on functions, n times."""
        v = np.asarray(phi) * self.nu
        for _ in range(n):
            v = self.matvec(v)
        return v / self.nu

    def integral(self, phi) -> float:
        return complex(np.sum(np.asarray(phi) * self.invariant)) if np.iscomplexobj(phi) else float(np.sum(phi * self.invariant))

    def observable(self, f, nodes: int = 8) -> np.ndarray:
        """Cell averages of f(y) by Gauss-Legendre quadrature per cell."""
        x, wts = np.polynomial.legendre.leggauss(nodes)
        h = 1.0 / self.resolution
        ys = (np.arange(self.resolution)[:, None] + (x[None, :] + 1) / 2) * h
        avg = (np.asarray(f(ys)) * wts[None, :]).sum(axis=1) / 2
        return avg[self.grid]

    def level_function(self, values) -> np.ndarray:
        """Function constant on each level."""
        values = np.asarray(values)
        return values[self.level]

    # norms
    def level_weights(self, eps=None) -> np.ndarray:
        eps = self.eps if eps is None else eps
        return np.exp(-eps * self.level)

    def C_norm(self, phi, weights=None) -> float:
        w = self.level_weights() if weights is None else weights
        return float(np.max(np.abs(phi) * w))

    def lip_seminorm(self, phi, weights=None, beta=None) -> float:
        """max over pieces, depth d and cylinders C of weight * osc_C(phi) / beta^(d-1)."""
        w = self.level_weights() if weights is None else weights
        beta = self.beta if beta is None else beta
        phi = np.asarray(phi)
        best = 0.0
        for lev, j, s0, g0 in self.pieces:
            for d, lo, hi in self.cylinders[j]:
                seg = phi[s0 + lo - g0: s0 + hi - g0]
                if np.iscomplexobj(seg):
                    osc = float(np.max(np.abs(seg[:, None] - seg[None, :]))) if len(seg) <= 64 else _complex_osc(seg)
                else:
                    osc = float(seg.max() - seg.min())
                val = w[s0] * osc / beta ** (d - 1)
                if val > best:
                    best = val
        return best

    def L_norm(self, phi, weights=None, beta=None) -> float:
        return self.C_norm(phi, weights) + self.lip_seminorm(phi, weights, beta)

    def to_json(self):
        return {"resolution": self.resolution, "eps": self.eps, "beta": self.beta, "states": self.n_states,
                "levels": int(self.level.max()) + 1, "nnz": int(self.S.nnz)}


def _complex_osc(seg):
    # diameter of a planar point set is bounded by twice the max distance to the centroid;
    # use the exact diameter along 64 directions instead
    ang = np.linspace(0, np.pi, 64, endpoint=False)
    proj = np.real(seg[:, None] * np.exp(-1j * ang)[None, :])
    return float(np.max(proj.max(axis=0) - proj.min(axis=0)))


def transfer_matrix(tower: TowerModel, resolution: int = 2**12, eps=None, beta=None) -> TransferMatrix:
    """Ulam discretization of the quotient transfer operator.

    ``eps`` defaults to half the fitted per-level decay rate and ``beta`` to
    sqrt(alpha), alpha the largest inverse-branch contraction.
    """
    tmap = tower.tmap
    res = int(resolution)
    w = tmap.widths
    bp = np.asarray(tmap.breakpoints)
    if np.any(w * res < 2 - 1e-9):
        raise ResolutionTooCoarse(f"resolution {res} gives fewer than 2 cells on some branch")
    if eps is None:
        rate = tower.expansion_rate
        eps = 0.5 * rate if np.isfinite(rate) else 0.5 * math.log(tmap.min_slope)
    if beta is None:
        beta = math.sqrt(tmap.alpha)

    k = np.arange(res)
    br = tmap.branch((k + 0.5) / res)
    inB = np.isin(br, tower.base)
    L = tower.max_level

    # state indices: level 0 holds base cells, levels >= 1 hold the complement
    base_cells = np.flatnonzero(inB)
    comp_cells = np.flatnonzero(~inB)
    n0, nc = len(base_cells), len(comp_cells)
    index0 = -np.ones(res, np.int64)
    index0[base_cells] = np.arange(n0)
    indexc = -np.ones(res, np.int64)
    indexc[comp_cells] = np.arange(nc)
    level = np.concatenate([np.zeros(n0, np.int64)] + [np.full(nc, l, np.int64) for l in range(1, L + 1)])
    grid = np.concatenate([base_cells] + [comp_cells] * L)
    N = len(level)
    lam = tower.base_measure
    dens = np.concatenate([[1.0], lam * (1 - lam) ** np.arange(L)])  # y-density of nu per level
    nu = dens[level] / res

    # template: grid cell -> grid cells of its image with overlap fractions
    src, dst, frac = [], [], []
    for kk in range(res):
        j = br[kk]
        lo = (kk / res - bp[j]) / w[j] * res
        hi = ((kk + 1) / res - bp[j]) / w[j] * res
        a, b = int(math.floor(lo + 1e-9)), int(math.ceil(hi - 1e-9))
        for m in range(a, b):
            ov = min(hi, m + 1) - max(lo, m)
            if ov > 1e-12:
                src.append(kk)
                dst.append(m)
                frac.append(ov / (hi - lo))
    src, dst, frac = np.array(src), np.array(dst), np.array(frac)
    to_base = inB[dst]

    rows, cols, vals = [], [], []
    g = np.zeros(N)
    offsets = np.concatenate([[0], n0 + nc * np.arange(L)])  # first state of each level
    for l in range(L + 1):
        here = inB[src] if l == 0 else ~inB[src]
        s_idx = offsets[l] + (index0[src] if l == 0 else indexc[src])
        # returns to level 0
        m = here & to_base
        rows.append(index0[dst[m]])
        cols.append(s_idx[m])
        vals.append(frac[m])
        m = here & ~to_base
        if l < L:
            rows.append(offsets[l + 1] + indexc[dst[m]])
            cols.append(s_idx[m])
            vals.append(frac[m])
        else:
            np.add.at(g, s_idx[m], frac[m])
    S = sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(N, N))
    u = np.zeros(N)
    u[:n0] = 1.0 / n0

    pieces = []
    for j in range(tmap.n_branches):
        cells = np.flatnonzero(br == j)
        g0 = int(cells[0])
        if j in tower.base:
            pieces.append((0, j, int(index0[g0]), g0))
        else:
            for l in range(1, L + 1):
                pieces.append((l, j, int(offsets[l] + indexc[g0]), g0))
    cyl = {j: _cylinders(tmap, j, res) for j in range(tmap.n_branches)}
    return TransferMatrix(tower, res, float(eps), float(beta), level, grid, S, u, g, nu, pieces, cyl)


# ----------------------------------------------------------------------------
# Fourier perturbation and spectra


@dataclass
class FourierTransfer:
    """P_t = M diag(exp(i t f)) acting on mass vectors."""

    T: TransferMatrix
    phase: np.ndarray
    t: float

    def matvec(self, v):
        return self.T.matvec(self.phase * v)

    def rmatvec(self, w):
        return np.conj(self.phase) * self.T.rmatvec(w)

    def to_sparse(self):
        return (self.T.to_sparse() @ sparse.diags(self.phase)).tocsr()

    def charfn(self, n: int) -> complex:
        """integral of P_t^n 1, the characteristic function of S_n at t."""
        v = self.T.invariant.astype(complex)
        for _ in range(n):
            v = self.matvec(v)
        return complex(v.sum())


def fourier_transfer(T: TransferMatrix, fbar, t) -> FourierTransfer:
    fbar = np.asarray(fbar, float)
    if fbar.shape != (T.n_states,):
        raise ValueError("observable must have one value per tower cell")
    t = float(np.sum(t)) if np.ndim(t) else float(t)
    return FourierTransfer(T, np.exp(1j * t * fbar), t)


@dataclass
class EigenResult:
    lam: complex
    gap: float  # |lambda_2| / |lambda_1|
    iterations: int
    converged: bool
    vector: np.ndarray = field(repr=False, default=None)


def _as_operator(op):
    if isinstance(op, (FourierTransfer, TransferMatrix)):
        return op.matvec, op.rmatvec, (op.T.n_states if isinstance(op, FourierTransfer) else op.n_states)
    A = sparse.csr_matrix(op) if not sparse.issparse(op) else op
    return (lambda v: A @ v), (lambda w: A.conj().T @ w), A.shape[0]


def leading_eigenvalue(op, *, tol=1e-14, max_iter=10_000, deflation_iter=200, seed=0, gap_tol=1e-6) -> EigenResult:
    """Dominant eigenvalue by power iteration and the modulus ratio by deflation.

    The right vector starts from the uniform mass vector; the estimate is the
    ratio of total masses, which is exact for a stochastic matrix.  The gap is
    the geometric-mean growth rate of the iteration deflated by the
    rank-one spectral projector (left vector from the adjoint iteration).
    """
    mv, rmv, n = _as_operator(op)
    v = np.full(n, 1.0 / n, dtype=complex)
    lam_old = np.inf
    it = 0
    converged = False
    for it in range(1, max_iter + 1):
        w = mv(v)
        lam = complex(w.sum() / v.sum()) if abs(v.sum()) > 1e-300 else complex(np.vdot(v, w) / np.vdot(v, v))
        v = w / np.linalg.norm(w)
        if abs(lam - lam_old) < tol:
            converged = True
            break
        lam_old = lam
    # left eigenvector
    u = np.ones(n, dtype=complex)
    for _ in range(max_iter):
        u2 = rmv(u)
        u2 = u2 / np.conj(np.vdot(u2, v))  # fixes scale and phase by <u, v> = 1
        if np.linalg.norm(u2 - u) < 1e-12 * np.linalg.norm(u2):
            u = u2
            break
        u = u2
    denom = np.vdot(u, v)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n) + 1j * rng.standard_normal(n)

    def deflate(y):
        return y - v * (np.vdot(u, y) / denom)

    x = deflate(x)
    x /= np.linalg.norm(x)
    logs = []
    for _ in range(deflation_iter):
        y = deflate(mv(x))
        nrm = np.linalg.norm(y)
        if nrm < 1e-300:
            logs.append(-np.inf)
            break
        logs.append(math.log(nrm))
        x = y / nrm
    tail = logs[len(logs) // 2:]
    gap_mod = 0.0 if (not tail or np.isneginf(tail).any()) else math.exp(float(np.mean(tail)))
    gap = gap_mod / abs(lam)
    if gap > 1 - gap_tol:
        raise NoGap(f"second eigenvalue modulus ratio {gap:.6f} is within {gap_tol} of 1")
    return EigenResult(lam, gap, it, converged, v)


@dataclass
class ExpansionFit:
    a_fit: float
    sigma2_fit: float
    residual: float
    t: np.ndarray
    lam: np.ndarray

    def as_dict(self):
        return {"a_fit": self.a_fit, "sigma2_fit": self.sigma2_fit, "residual": self.residual}


def eigenvalue_expansion_fit(ts, lams, *, tol=1e-3) -> ExpansionFit:
    """Fit log lambda_t = i a t - sigma^2 t^2 / 2 + i c3 t^3 + c4 t^4.

    Raises :class:`DegenerateVariance` when the fitted sigma^2 is below ``tol``.
    """
    t = np.asarray(ts, float)
    lg = np.log(np.asarray(lams, complex))
    # unwrap the phase along t
    im = np.unwrap(lg.imag)
    Xr = np.column_stack([-t**2 / 2, t**4])
    Xi = np.column_stack([t, t**3])
    cr, rr, *_ = np.linalg.lstsq(Xr, lg.real, rcond=None)
    ci, ri, *_ = np.linalg.lstsq(Xi, im, rcond=None)
    resid = float(np.sqrt(np.mean((Xr @ cr - lg.real) ** 2) + np.mean((Xi @ ci - im) ** 2)))
    fit = ExpansionFit(float(ci[0]), float(cr[0]), resid, t, np.asarray(lams))
    if fit.sigma2_fit < tol:
        raise DegenerateVariance(fit.sigma2_fit, tol)
    return fit


def lambda_curve(T: TransferMatrix, fbar, ts, **kw) -> np.ndarray:
    return np.array([leading_eigenvalue(fourier_transfer(T, fbar, t), **kw).lam for t in ts])


# ----------------------------------------------------------------------------
# oracles on the interval


def green_kubo(tmap: AffineMap, f, *, grid=2**16, k_max=80, tol=1e-15) -> dict:
    """sigma^2 = int f^2 + 2 sum_k int f (f o T^k) for Lebesgue-invariant T.

    Correlations use int f (f o T^k) = int (P^k f) f with P the exact transfer
    operator evaluated on a midpoint grid; f is centered first.
    """
    y = (np.arange(grid) + 0.5) / grid
    fy = np.asarray(f(y), float)
    mean = float(fy.mean())
    fc = fy - mean
    cur = fc.copy()
    corrs = [float(np.mean(fc * fc))]
    for _ in range(k_max):
        prev = cur

        def g(x, prev=prev):
            return np.interp(x, y, prev, period=1.0)

        cur = tmap.transfer(g, y)
        c = float(np.mean(cur * fc))
        corrs.append(c)
        if abs(c) < tol and np.max(np.abs(cur)) < 1e-12:
            break
    sigma2 = corrs[0] + 2 * sum(corrs[1:])
    return {"sigma2": sigma2, "mean": mean, "correlations": corrs}


def orbit_charfn(tmap: AffineMap, f, t: float, n: int, points: int = 10**6) -> complex:
    """Characteristic function of S_n f over an equispaced grid of initial points."""
    x = (np.arange(points) + 0.5) / points
    S = np.zeros(points)
    for _ in range(n):
        S += f(x)
        x = tmap(x)
    return complex(np.mean(np.exp(1j * t * S)))


# ----------------------------------------------------------------------------
# Doeblin-Fortet


def default_test_suite(T: TransferMatrix, count=24, seed=0) -> list:
    """Fourier modes per level, random Lipschitz fields and level profiles."""
    rng = np.random.default_rng(seed)
    y = (T.grid + 0.5) / T.resolution
    L = int(T.level.max())
    suite = []
    for k in (1, 2, 4, 8, 16):
        suite.append(np.cos(2 * np.pi * k * y))
        suite.append(np.sin(2 * np.pi * k * y) * (T.level % 2 == 0))
    for _ in range(8):
        knots = rng.uniform(-1, 1, 9)
        slope = rng.uniform(-1, 1, L + 1)
        suite.append(np.interp(y, np.linspace(0, 1, 9), knots) + slope[T.level])
    suite.append(np.ones(T.n_states))
    suite.append(np.exp(0.5 * T.eps * T.level))
    for lev in (0, L // 2, L):
        suite.append((T.level == lev).astype(float))
    while len(suite) < count:
        suite.append(rng.uniform(-1, 1, T.n_states))
    return suite


@dataclass
class DFResult:
    tau: float
    K: float
    N: int
    passed: bool
    envelope: list  # (tau, K(tau))
    ratios: list  # per test function (||P^N phi||_L, ||phi||_L, ||phi||_C)

    def as_dict(self):
        return {"tau": self.tau, "K": self.K, "N": self.N, "passed": self.passed,
                "envelope": [[float(a), float(b)] for a, b in self.envelope]}


def default_N(beta: float) -> int:
    """Smallest N with beta^N < 1/2."""
    return int(math.floor(math.log(0.5) / math.log(beta))) + 1


def doeblin_fortet_check(T: TransferMatrix, N=None, test_functions=None, *, K_cap=100.0, tau_grid=None) -> DFResult:
    """Fit ||P^N phi||_L <= tau ||phi||_L + K ||phi||_C over a test suite.

    tau is the largest ratio Lip(P^N phi) / ||phi||_L, the contraction of
    the divided-difference part, and K the smallest constant that then holds
    for every test function.  The check passes when tau < 1 and K <= K_cap.
    The full envelope K(tau) over a tau grid is also returned.
    """
    N = default_N(T.beta) if N is None else int(N)
    suite = default_test_suite(T) if test_functions is None else list(test_functions)
    if len(suite) < 20:
        raise ValueError("the Doeblin-Fortet suite needs at least 20 test functions")
    data, lips = [], []
    for phi in suite:
        img = T.apply(phi, N)
        lip = T.lip_seminorm(img)
        data.append((T.C_norm(img) + lip, T.L_norm(phi), T.C_norm(phi)))
        lips.append(lip)
    arr = np.array(data)

    def K_of(tau):
        return float(np.max(np.maximum(arr[:, 0] - tau * arr[:, 1], 0.0) / arr[:, 2]))

    tau_grid = np.linspace(0.0, 0.99, 100) if tau_grid is None else np.asarray(tau_grid)
    env = [(float(tau), K_of(tau)) for tau in tau_grid]
    tau = float(np.max(np.array(lips) / arr[:, 1]))
    K = K_of(tau)
    return DFResult(tau, K, N, bool(tau < 1 and K <= K_cap), env, data)


# ----------------------------------------------------------------------------
# heavy-tail weights


@dataclass
class WeightedNorms:
    """Norms with level weight prod_{k=1}^{l} min(e^-eps, kbar(l-k)^-delta)."""

    T: TransferMatrix
    level_weight: np.ndarray  # per level
    eps: float
    delta: float

    @property
    def weights(self) -> np.ndarray:
        return self.level_weight[self.T.level]

    def C_norm(self, phi) -> float:
        return self.T.C_norm(phi, self.weights)

    def L_norm(self, phi) -> float:
        return self.T.L_norm(phi, self.weights)

    def operator_C_norm_diff(self, fbar, t) -> float:
        """Exact weighted sup-norm of P_t - P_0 on functions."""
        w = self.weights
        d = np.abs(np.exp(1j * t * np.asarray(fbar)) - 1.0)
        row = self.T.matvec(self.T.nu * d / w)
        return float(np.max(w * row / self.T.nu))

    def operator_L_norm_diff(self, fbar, t, suite=None) -> float:
        """max over a test suite of ||(P_t - P_0) phi||_L / ||phi||_L."""
        suite = default_test_suite(self.T) if suite is None else suite
        ph = np.exp(1j * t * np.asarray(fbar))
        best = 0.0
        for phi in suite:
            v = self.T.nu * phi
            diff = (self.T.matvec(ph * v) - self.T.matvec(v.astype(complex))) / self.T.nu
            best = max(best, self.L_norm(diff) / self.L_norm(phi))
        return best


def heavy_tail_weight_norms(T: TransferMatrix, kbar_levels, eps=None, delta=0.5) -> WeightedNorms:
    """Weights built from a level profile kbar(l) of the flight observable."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    eps = T.eps if eps is None else eps
    L = int(T.level.max())
    kb = np.broadcast_to(np.asarray(kbar_levels, float), (L + 1,))
    factors = np.minimum(math.exp(-eps), kb[:L] ** (-delta))  # factor for step k uses kbar at level l-k
    w = np.concatenate([[1.0], np.cumprod(factors)])
    return WeightedNorms(T, w, eps, delta)


# ----------------------------------------------------------------------------
# correlations


@dataclass
class DecayResult:
    lags: np.ndarray
    correlations: np.ndarray
    tau: float
    C: float
    superexponential: bool

    def as_dict(self):
        return {"tau": self.tau, "C": self.C, "superexponential": self.superexponential,
                "correlations": [float(c) for c in self.correlations]}


def correlation_decay_check(T: TransferMatrix, phi, psi, n_max=30, *, rel_floor=1e-3) -> DecayResult:
    """Corr(n) = int (phi o F^n) psi - int phi int psi via powers of the mass matrix.

    The exponential rate is fitted on lags n >= 1 with |Corr(n)| above
    ``rel_floor`` times |Corr(0)|; the discretization resolves only a finite
    number of lags, beyond which correlations of cell averages vanish.
    """
    mu = T.invariant
    phi = np.asarray(phi, float)
    psi = np.asarray(psi, float)
    mean_phi = float(phi @ mu)
    mean_psi = float(psi @ mu)
    v = psi * mu
    corr = []
    for n in range(n_max + 1):
        corr.append(float(phi @ v) - mean_phi * mean_psi)
        v = T.matvec(v)
    corr = np.array(corr)
    lags = np.arange(n_max + 1)
    scale = max(abs(corr[0]), 1e-300)
    big = np.abs(corr) > rel_floor * scale
    stop = next((n for n in range(1, n_max + 1) if not big[n]), n_max + 1)
    use = (lags >= 1) & (lags < stop)
    if np.count_nonzero(use) < 3:
        return DecayResult(lags, corr, 0.0, float(abs(corr[0])), True)
    res = stats.linregress(lags[use], np.log(np.abs(corr[use])))
    return DecayResult(lags, corr, float(math.exp(res.slope)), float(math.exp(res.intercept)), False)
