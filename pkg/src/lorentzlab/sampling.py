"""Invariant-measure sampling and Birkhoff-sum ensembles.

Initial points are drawn from mu_1 (density proportional to cos of the
outgoing angle relative to the normal) with a counter-based generator:
trajectory ``i`` uses the Philox block with key ``seed`` and counter
``(i, 0, 0, 0)``.  Ensembles run in fixed-size blocks, so every output is
independent of the number of worker threads.
"""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numba as nb
import numpy as np

from . import dynamics as dyn
from .dynamics import PhasePoint
from .geometry import ScattererLattice, horizon_of

BLOCK = 4096
MAX_DROP_FRACTION = 1e-4

# |kappa| histogram edges: integers up to 8, then eight bins per octave
SMALL_EDGES = np.arange(0, 9, dtype=float)
LOG_EDGES = 8.0 * 2.0 ** (np.arange(1, 8 * 21 + 1) / 8.0)
KAPPA_EDGES = np.concatenate([SMALL_EDGES, LOG_EDGES])


def _edges_squared():
    # bin i holds |kappa|^2 in (E[i-1]^2, E[i]^2]; bin 0 is kappa == 0
    e2 = np.floor(KAPPA_EDGES**2).astype(np.int64)
    return np.concatenate([e2, [np.iinfo(np.int64).max]])


EDGES2 = _edges_squared()


# ----------------------------------------------------------------------------
# sampling mu_1


def _uniforms(words: np.ndarray) -> np.ndarray:
    """Map uint64 words to doubles strictly inside (0, 1)."""
    return ((words >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


def _points_from_uniforms(weights, u):
    s = np.searchsorted(weights, u[..., 0], side="right")
    s = np.minimum(s, len(weights) - 1)
    theta = 2.0 * math.pi * u[..., 1]
    rel = np.arcsin(2.0 * u[..., 2] - 1.0)
    phi = np.mod(theta + rel, 2.0 * math.pi)
    return s.astype(np.int64), theta, phi


def sample_mu1(lattice: ScattererLattice, rng: np.random.Generator) -> PhasePoint:
    """One phase point distributed according to mu_1, in cell (0, 0)."""
    t = dyn.tables_for(lattice)
    s, th, ph = _points_from_uniforms(t.weights, rng.random(3))
    return PhasePoint(int(s), float(th), float(ph), (0, 0))


def initial_points(lattice: ScattererLattice, seed: int, start: int, count: int):
    """Initial points for trajectories ``start .. start+count-1``."""
    t = dyn.tables_for(lattice)
    bg = np.random.Philox(key=int(seed), counter=[int(start), 0, 0, 0])
    words = bg.random_raw(4 * count).reshape(count, 4)
    return _points_from_uniforms(t.weights, _uniforms(words[:, :3]))


def relative_angle(theta, phi):
    """Outgoing angle relative to the normal, in [-pi, pi)."""
    return np.mod(np.asarray(phi) - np.asarray(theta) + math.pi, 2.0 * math.pi) - math.pi


# ----------------------------------------------------------------------------
# ensemble kernel


@nb.njit(cache=True, nogil=True)
def _run_block(lc, rad, cs, cox, coy, s0, th0, ph0, sched, max_cells, merged, threshold, kmin, edges2):
    B = s0.shape[0]
    m = sched.shape[0]
    n_max = sched[m - 1]
    nb_ = edges2.shape[0]
    S = np.zeros((B, m, 2), np.int64)
    P = np.zeros((B, m, 2))
    V = np.zeros((B, m), np.int64)
    status = np.zeros(B, np.int8)
    done = np.zeros(B, np.int64)
    fs = np.empty(B, np.int64)
    fth = np.empty(B)
    fph = np.empty(B)
    hist = np.zeros(nb_, np.int64)
    hk2 = np.zeros(nb_)
    hkx = np.zeros(nb_, np.int64)
    hky = np.zeros(nb_, np.int64)
    zero = np.zeros(n_max + 1, np.int64)
    alive = np.zeros(n_max + 1, np.int64)
    v2 = np.zeros(n_max + 1, np.int64)
    n_merged = 0
    for b in range(B):
        s = s0[b]
        th = th0[b]
        ph = ph0[b]
        zx = 0
        zy = 0
        qx = 0.0
        qy = 0.0
        visits = 0
        nxt = 0
        alive[0] += 1
        for k in range(1, n_max + 1):
            if merged:
                st, s, th, ph, kx, ky, psx, psy, path, mm = dyn._merged_flight(
                    lc, rad, cs, cox, coy, s, th, ph, max_cells, threshold, kmin)
                if mm:
                    n_merged += 1
            else:
                st, s, th, ph, kx, ky, psx, psy, path = dyn._flight(lc, rad, cs, cox, coy, s, th, ph, max_cells)
            if st != 0:
                status[b] = st
                break
            zx += kx
            zy += ky
            qx += psx
            qy += psy
            k2 = kx * kx + ky * ky
            # first edge with edges2 >= k2
            lo = 0
            hi = nb_ - 1
            while lo < hi:
                mid = (lo + hi) // 2
                if edges2[mid] >= k2:
                    hi = mid
                else:
                    lo = mid + 1
            hist[lo] += 1
            hk2[lo] += k2
            hkx[lo] += kx
            hky[lo] += ky
            alive[k] += 1
            if zx == 0 and zy == 0:
                zero[k] += 1
                visits += 1
            v2[k] += visits * visits
            if k == sched[nxt]:
                S[b, nxt, 0] = zx
                S[b, nxt, 1] = zy
                P[b, nxt, 0] = qx
                P[b, nxt, 1] = qy
                V[b, nxt] = visits
                nxt += 1
            done[b] = k
        fs[b] = s
        fth[b] = th
        fph[b] = ph
    return S, P, V, status, done, fs, fth, fph, hist, hk2, hkx, hky, zero, alive, v2, n_merged


# ----------------------------------------------------------------------------
# specs and results


@dataclass(frozen=True)
class EnsembleSpec:
    trajectories: int
    n_schedule: tuple
    seed: int = 0
    observable: str = "kappa"
    merged_section: bool = False
    threshold: float = 0.0
    kmin: int = 2
    max_cells: int = dyn.MAX_CELLS

    def __post_init__(self):
        sched = tuple(int(n) for n in self.n_schedule)
        object.__setattr__(self, "n_schedule", sched)
        if self.trajectories < 1:
            raise ValueError("trajectories must be at least 1")
        if not sched or sched[0] < 1 or any(b <= a for a, b in zip(sched, sched[1:])):
            raise ValueError("n_schedule must be strictly increasing positive integers")
        if self.observable not in ("kappa", "psi"):
            raise ValueError(f"unknown observable {self.observable!r}")

    def as_dict(self) -> dict:
        return {
            "trajectories": self.trajectories, "n_schedule": list(self.n_schedule), "seed": self.seed,
            "observable": self.observable, "merged_section": self.merged_section,
            "threshold": self.threshold, "kmin": self.kmin, "max_cells": self.max_cells,
        }


@dataclass
class Moments:
    """Count, mean and centered second-moment matrix with pairwise merging."""

    count: int = 0
    mean: np.ndarray = field(default_factory=lambda: np.zeros(2))
    m2: np.ndarray = field(default_factory=lambda: np.zeros((2, 2)))

    @classmethod
    def of(cls, x: np.ndarray) -> "Moments":
        x = np.asarray(x, float)
        if len(x) == 0:
            return cls(0, np.zeros(x.shape[1]), np.zeros((x.shape[1], x.shape[1])))
        mu = x.mean(axis=0)
        d = x - mu
        return cls(len(x), mu, d.T @ d)

    def merge(self, other: "Moments") -> "Moments":
        if self.count == 0:
            return other
        if other.count == 0:
            return self
        n = self.count + other.count
        delta = other.mean - self.mean
        mean = self.mean + delta * (other.count / n)
        m2 = self.m2 + other.m2 + np.outer(delta, delta) * (self.count * other.count / n)
        return Moments(n, mean, m2)

    @property
    def cov(self) -> np.ndarray:
        return self.m2 / max(self.count - 1, 1)


@dataclass
class BirkhoffSample:
    traj_id: int
    S: dict  # n -> 2-vector
    visits: dict  # n -> number of returns to the origin cell by step n


@dataclass
class EnsembleResult:
    """Samples and counters of an ensemble run.

    ``S_kappa[i, j]`` and ``S_psi[i, j]`` are the Birkhoff sums of trajectory
    ``i`` at ``n_schedule[j]``.  Per-step arrays are indexed by step ``k``.
    """

    spec: EnsembleSpec
    S_kappa: np.ndarray
    S_psi: np.ndarray
    visits: np.ndarray
    status: np.ndarray
    steps_done: np.ndarray
    final_state: tuple
    kappa_hist: np.ndarray
    kappa_sq_sum: np.ndarray
    kappa_sum: np.ndarray  # (bins, 2)
    zero_count: np.ndarray
    alive: np.ndarray
    visits_sq_sum: np.ndarray
    merged_count: int
    horizon: str
    moments: list

    @property
    def drops(self) -> int:
        return int(np.count_nonzero(self.status))

    @property
    def ok(self) -> np.ndarray:
        return self.status == 0

    @property
    def edges(self) -> np.ndarray:
        return KAPPA_EDGES

    @property
    def collisions(self) -> int:
        return int(self.kappa_hist.sum())

    def S(self, n: int) -> np.ndarray:
        """Birkhoff sums of the spec's observable at schedule point n (surviving trajectories)."""
        j = self.spec.n_schedule.index(int(n))
        arr = self.S_kappa if self.spec.observable == "kappa" else self.S_psi
        return arr[self.ok, j]

    def samples(self):
        arr = self.S_kappa if self.spec.observable == "kappa" else self.S_psi
        for i in np.flatnonzero(self.ok):
            yield BirkhoffSample(int(i), {n: arr[i, j] for j, n in enumerate(self.spec.n_schedule)},
                                 {n: int(self.visits[i, j]) for j, n in enumerate(self.spec.n_schedule)})

    def return_probabilities(self) -> np.ndarray:
        """Estimated nu(S_k = 0) for k = 0..n_max (k = 0 is 1 by definition)."""
        p = self.zero_count / np.maximum(self.alive, 1)
        p[0] = 1.0
        return p

    def metadata(self, config_hash: str | None = None) -> dict:
        return {
            "spec": self.spec.as_dict(),
            "config_hash": config_hash,
            "horizon": self.horizon,
            "drops": self.drops,
            "collisions": self.collisions,
            "merged": int(self.merged_count),
        }

    def write(self, outdir, config_hash=None, digits=12):
        os.makedirs(outdir, exist_ok=True)
        paths = []
        arr = self.S_kappa if self.spec.observable == "kappa" else self.S_psi
        fmt = (lambda v: str(int(v))) if self.spec.observable == "kappa" else (lambda v: f"{v:.{digits}g}")
        for j, n in enumerate(self.spec.n_schedule):
            p = os.path.join(outdir, f"ensemble_n{n}.csv")
            with open(p, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["traj_id", "Sx", "Sy"])
                for i in np.flatnonzero(self.ok):
                    w.writerow([int(i), fmt(arr[i, j, 0]), fmt(arr[i, j, 1])])
            paths.append(p)
        p = os.path.join(outdir, "ensemble_meta.json")
        with open(p, "w") as fh:
            json.dump(self.metadata(config_hash), fh, indent=2, sort_keys=True)
            fh.write("\n")
        paths.append(p)
        return paths


def _block_ranges(trajectories, block=BLOCK):
    return [(a, min(a + block, trajectories)) for a in range(0, trajectories, block)]


def run_ensemble(lattice: ScattererLattice, spec: EnsembleSpec, workers: int = 1, *,
                 horizon: str | None = None, check_drops=True) -> EnsembleResult:
    """Run ``spec.trajectories`` independent trajectories from mu_1.

    Blocks of fixed size are processed by a thread pool and merged in block
    order; integer counters are summed exactly.
    """
    tab = dyn.tables_for(lattice)
    sched = np.asarray(spec.n_schedule, np.int64)

    def work(rng_range):
        a, b = rng_range
        s0, th0, ph0 = initial_points(lattice, spec.seed, a, b - a)
        return _run_block(tab.lc, tab.rad, tab.cs, tab.cox, tab.coy, s0, th0, ph0, sched, spec.max_cells,
                          spec.merged_section, spec.threshold, spec.kmin, EDGES2)

    ranges = _block_ranges(spec.trajectories)
    if workers <= 1:
        parts = [work(r) for r in ranges]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(work, ranges))

    cat = lambda i: np.concatenate([p[i] for p in parts])  # noqa: E731
    add = lambda i: np.sum([p[i] for p in parts], axis=0)  # noqa: E731
    S, P, V, status, done = cat(0), cat(1), cat(2), cat(3), cat(4)
    final = (cat(5), cat(6), cat(7))
    hist, hk2 = add(8), add(9)
    hk = np.column_stack([add(10), add(11)])
    zero, alive, v2 = add(12), add(13), add(14)
    merged = int(sum(p[15] for p in parts))

    # per-block moments merged in block order
    obs = S if spec.observable == "kappa" else P
    moments = []
    for j in range(len(sched)):
        acc = Moments()
        for a, b in ranges:
            keep = status[a:b] == 0
            acc = acc.merge(Moments.of(obs[a:b, j][keep]))
        moments.append(acc)

    if horizon is None:
        horizon = horizon_of(lattice).tag
    res = EnsembleResult(spec, S, P, V, status, done, final, hist, hk2, hk, zero, alive, v2, merged, horizon,
                         moments)
    if check_drops and res.drops > MAX_DROP_FRACTION * spec.trajectories:
        raise RuntimeError(f"{res.drops} of {spec.trajectories} trajectories dropped (grazing or escape)")
    return res


def stationarity_ks(lattice: ScattererLattice, samples: int, steps: int, seed: int = 0, workers: int = 1) -> dict:
    """Two-sample KS distances between mu_1 and its image after ``steps`` collisions.

    The reference sample uses a disjoint trajectory range of the same stream.
    """
    from scipy.stats import ks_2samp

    spec = EnsembleSpec(samples, (steps,), seed)
    res = run_ensemble(lattice, spec, workers)
    s1, th1, ph1 = (a[res.ok] for a in res.final_state)
    s0, th0, ph0 = initial_points(lattice, seed, samples, samples)
    out = {
        "theta": float(ks_2samp(th0, th1).statistic),
        "phi_rel": float(ks_2samp(relative_angle(th0, ph0), relative_angle(th1, ph1)).statistic),
    }
    if lattice.n_scatterers > 1:
        out["scatterer"] = float(np.max(np.abs(
            np.bincount(s0, minlength=lattice.n_scatterers) / len(s0)
            - np.bincount(s1, minlength=lattice.n_scatterers) / len(s1))))
    return out
