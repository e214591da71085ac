"""Event-driven billiard map on the torus, lifted to the integer cover.

Phase points live on scatterer boundaries: ``theta`` is the arc angle of the
collision point on its circle and ``phi`` the direction of the outgoing
velocity.  Positions are kept as (integer cell, in-cell coordinates), so the
accuracy of a step does not depend on how far the particle has wandered.

The hot loops are numba kernels; the Python wrappers translate status codes
into exceptions.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numba as nb
import numpy as np

from .errors import HorizonEscape, NumericalDegeneracy
from .geometry import ScattererLattice

TWO_PI = 2.0 * math.pi
GRAZE_TOL = 1e-14
MAX_CELLS = 1_000_000

OK, ESCAPE, DEGENERATE = 0, 1, 2


@dataclass(frozen=True)
class PhasePoint:
    scatterer: int
    theta: float
    phi: float
    lift_cell: tuple = (0, 0)

    def position(self, lattice: ScattererLattice) -> np.ndarray:
        """Planar position of q in cell-local coordinates of the lift."""
        c = lattice.local_centers[self.scatterer] + np.asarray(self.lift_cell, float)
        r = lattice.radii[self.scatterer]
        return c + r * np.array([math.cos(self.theta), math.sin(self.theta)])

    def velocity(self) -> np.ndarray:
        return np.array([math.cos(self.phi), math.sin(self.phi)])

    def normal(self) -> np.ndarray:
        """Unit normal at q pointing into the free domain."""
        return np.array([math.cos(self.theta), math.sin(self.theta)])

    def is_outgoing(self, tol=1e-12) -> bool:
        return math.cos(self.phi - self.theta) >= -tol


@dataclass(frozen=True)
class FlightRecord:
    psi: tuple
    kappa: tuple
    path_length: float
    merged: bool = False


# ----------------------------------------------------------------------------
# tables


@dataclass(frozen=True)
class Tables:
    """Flat arrays consumed by the kernels."""

    lc: np.ndarray  # local centers, (s, 2)
    rad: np.ndarray
    cs: np.ndarray  # candidate scatterer index
    cox: np.ndarray  # candidate home-cell offset relative to the visited cell
    coy: np.ndarray
    weights: np.ndarray = field(default=None)  # cumulative circumference shares


_TABLE_CACHE: dict = {}


def tables_for(lattice: ScattererLattice) -> Tables:
    key = (lattice.centers.tobytes(), lattice.radii.tobytes(), lattice.cell_offset.tobytes())
    tab = _TABLE_CACHE.get(key)
    if tab is None:
        lc = np.ascontiguousarray(lattice.local_centers)
        rad = np.ascontiguousarray(lattice.radii)
        cs, cox, coy = [], [], []
        for s in range(len(rad)):
            for ox in (-1, 0, 1):
                for oy in (-1, 0, 1):
                    cx, cy = lc[s, 0] + ox, lc[s, 1] + oy
                    # distance from the disk center to the unit square
                    dx = max(0.0 - cx, 0.0, cx - 1.0)
                    dy = max(0.0 - cy, 0.0, cy - 1.0)
                    if math.hypot(dx, dy) < rad[s] + 1e-9:
                        cs.append(s)
                        cox.append(ox)
                        coy.append(oy)
        w = np.cumsum(rad) / np.sum(rad)
        tab = Tables(lc, rad, np.array(cs, np.int64), np.array(cox, np.int64), np.array(coy, np.int64), w)
        _TABLE_CACHE[key] = tab
    return tab


# ----------------------------------------------------------------------------
# kernels


@nb.njit(cache=True, nogil=True)
def _flight(lc, rad, cs, cox, coy, s0, theta, phi, max_cells):
    """One billiard map step from (s0, theta, phi) with home cell (0, 0).

    Returns (status, s1, theta1, phi1, kx, ky, psix, psiy, path).
    """
    r0 = rad[s0]
    ux = math.cos(theta)
    uy = math.sin(theta)
    vx = math.cos(phi)
    vy = math.sin(phi)
    px = lc[s0, 0] + r0 * ux
    py = lc[s0, 1] + r0 * uy
    i = int(math.floor(px))
    j = int(math.floor(py))
    sx = 1 if vx > 0 else -1
    sy = 1 if vy > 0 else -1
    inf = math.inf
    tx = inf
    ty = inf
    if vx != 0.0:
        tx = (i + (1 if vx > 0 else 0) - px) / vx
    if vy != 0.0:
        ty = (j + (1 if vy > 0 else 0) - py) / vy

    best = inf
    bs = -1
    bkx = 0
    bky = 0
    graze = False
    ncand = cs.shape[0]
    cells = 0
    while True:
        texit = tx if tx < ty else ty
        for c in range(ncand):
            s = cs[c]
            hx = i + cox[c]
            hy = j + coy[c]
            if s == s0 and hx == 0 and hy == 0:
                continue
            dx = (px - lc[s, 0]) - hx
            dy = (py - lc[s, 1]) - hy
            b = dx * vx + dy * vy
            if b >= 0.0:
                continue
            cr = dx * vy - dy * vx
            r = rad[s]
            disc = r * r - cr * cr
            if disc < -GRAZE_TOL:
                continue
            if disc < GRAZE_TOL:
                # near-tangent ray; only matters if it would be the first hit
                if -b < best:
                    graze = True
                    best = -b
                    bs = s
                    bkx = hx
                    bky = hy
                continue
            t = -b - math.sqrt(disc)
            if t < best:
                best = t
                bs = s
                bkx = hx
                bky = hy
                graze = False
        if best <= texit:
            break
        cells += 1
        if cells > max_cells:
            return ESCAPE, -1, 0.0, 0.0, 0, 0, 0.0, 0.0, 0.0
        if tx < ty:
            i += sx
            tx = (i + (1 if vx > 0 else 0) - px) / vx
        else:
            j += sy
            ty = (j + (1 if vy > 0 else 0) - py) / vy
    if graze:
        return DEGENERATE, -1, 0.0, 0.0, 0, 0, 0.0, 0.0, 0.0

    r1 = rad[bs]
    hx = (px - lc[bs, 0]) - bkx + best * vx
    hy = (py - lc[bs, 1]) - bky + best * vy
    th1 = math.atan2(hy, hx)
    if th1 < 0.0:
        th1 += TWO_PI
    nx = math.cos(th1)
    ny = math.sin(th1)
    vn = vx * nx + vy * ny
    wx = vx - 2.0 * vn * nx
    wy = vy - 2.0 * vn * ny
    ph1 = math.atan2(wy, wx)
    if ph1 < 0.0:
        ph1 += TWO_PI
    psix = bkx + lc[bs, 0] + r1 * nx - px
    psiy = bky + lc[bs, 1] + r1 * ny - py
    return OK, bs, th1, ph1, bkx, bky, psix, psiy, best


@nb.njit(cache=True, nogil=True)
def _merged_flight(lc, rad, cs, cox, coy, s0, theta, phi, max_cells, threshold, kmin):
    st, s1, th1, ph1, kx, ky, psx, psy, path = _flight(lc, rad, cs, cox, coy, s0, theta, phi, max_cells)
    if st != OK or not (path < threshold):
        return st, s1, th1, ph1, kx, ky, psx, psy, path, False
    st2, s2, th2, ph2, kx2, ky2, psx2, psy2, path2 = _flight(lc, rad, cs, cox, coy, s1, th1, ph1, max_cells)
    if st2 != OK:
        return st2, s2, th2, ph2, kx2, ky2, psx2, psy2, path2, False
    if max(abs(kx2), abs(ky2)) < kmin:
        return st, s1, th1, ph1, kx, ky, psx, psy, path, False
    return OK, s2, th2, ph2, kx + kx2, ky + ky2, psx + psx2, psy + psy2, path + path2, True


@nb.njit(cache=True, nogil=True)
def _orbit(lc, rad, cs, cox, coy, s0, theta, phi, n, max_cells, merged, threshold, kmin):
    """n consecutive steps; arrays are filled up to the returned count."""
    out_s = np.empty(n, np.int64)
    out_th = np.empty(n)
    out_ph = np.empty(n)
    out_k = np.empty((n, 2), np.int64)
    out_psi = np.empty((n, 2))
    out_path = np.empty(n)
    out_m = np.zeros(n, np.bool_)
    s = s0
    th = theta
    ph = phi
    status = OK
    done = 0
    for k in range(n):
        if merged:
            st, s, th, ph, kx, ky, psx, psy, path, m = _merged_flight(
                lc, rad, cs, cox, coy, s, th, ph, max_cells, threshold, kmin)
        else:
            st, s, th, ph, kx, ky, psx, psy, path = _flight(lc, rad, cs, cox, coy, s, th, ph, max_cells)
            m = False
        if st != OK:
            status = st
            break
        out_s[k] = s
        out_th[k] = th
        out_ph[k] = ph
        out_k[k, 0] = kx
        out_k[k, 1] = ky
        out_psi[k, 0] = psx
        out_psi[k, 1] = psy
        out_path[k] = path
        out_m[k] = m
        done += 1
    return status, done, out_s, out_th, out_ph, out_k, out_psi, out_path, out_m


@nb.njit(cache=True, nogil=True)
def _kappa_consistency(lc, rad, cs, cox, coy, s0, theta, phi, n, max_cells):
    """Track lift cells incrementally and from accumulated planar positions.

    Returns (status, steps done, mismatches, max position deviation, max path).
    """
    s = s0
    th = theta
    ph = phi
    zx = 0
    zy = 0
    qx = lc[s, 0] + rad[s] * math.cos(th)
    qy = lc[s, 1] + rad[s] * math.sin(th)
    bad = 0
    dev = 0.0
    maxpath = 0.0
    done = 0
    for k in range(n):
        st, s, th, ph, kx, ky, psx, psy, path = _flight(lc, rad, cs, cox, coy, s, th, ph, max_cells)
        if st != OK:
            return st, done, bad, dev, maxpath
        zx += kx
        zy += ky
        qx += psx
        qy += psy
        cx = qx - rad[s] * math.cos(th) - lc[s, 0]
        cy = qy - rad[s] * math.sin(th) - lc[s, 1]
        ix = int(math.floor(cx + 0.5))
        iy = int(math.floor(cy + 0.5))
        if ix != zx or iy != zy:
            bad += 1
        d = max(abs(cx - zx), abs(cy - zy))
        if d > dev:
            dev = d
        if path > maxpath:
            maxpath = path
        done += 1
    return OK, done, bad, dev, maxpath


# ----------------------------------------------------------------------------
# public wrappers


def _raise(status, step=None, max_cells=MAX_CELLS):
    if status == ESCAPE:
        raise HorizonEscape(max_cells, step)
    if status == DEGENERATE:
        raise NumericalDegeneracy(step)


def _check_outgoing(x: PhasePoint):
    if not x.is_outgoing():
        raise ValueError("phase point velocity points into the scatterer")


def next_collision(lattice: ScattererLattice, x: PhasePoint, max_cells=MAX_CELLS):
    """Apply the billiard map once; return the new phase point and the flight."""
    _check_outgoing(x)
    t = tables_for(lattice)
    st, s1, th1, ph1, kx, ky, psx, psy, path = _flight(
        t.lc, t.rad, t.cs, t.cox, t.coy, x.scatterer, x.theta % TWO_PI, x.phi % TWO_PI, max_cells)
    _raise(st, max_cells=max_cells)
    cell = (x.lift_cell[0] + kx, x.lift_cell[1] + ky)
    return PhasePoint(s1, th1, ph1, cell), FlightRecord((psx, psy), (kx, ky), path, False)


def merged_step(lattice: ScattererLattice, x: PhasePoint, threshold: float, kmin=2, max_cells=MAX_CELLS):
    """Billiard map on the merged section.

    A flight shorter than ``threshold`` followed by a flight with
    ``max(|kappa|) >= kmin`` is reported as one record with ``merged=True``.
    """
    _check_outgoing(x)
    t = tables_for(lattice)
    st, s1, th1, ph1, kx, ky, psx, psy, path, m = _merged_flight(
        t.lc, t.rad, t.cs, t.cox, t.coy, x.scatterer, x.theta % TWO_PI, x.phi % TWO_PI,
        max_cells, threshold, kmin)
    _raise(st, max_cells=max_cells)
    cell = (x.lift_cell[0] + kx, x.lift_cell[1] + ky)
    return PhasePoint(s1, th1, ph1, cell), FlightRecord((psx, psy), (kx, ky), path, bool(m))


@dataclass
class Orbit:
    """Arrays for ``n`` consecutive collisions (row k is the state after step k+1)."""

    x0: PhasePoint
    scatterer: np.ndarray
    theta: np.ndarray
    phi: np.ndarray
    kappa: np.ndarray
    psi: np.ndarray
    path_length: np.ndarray
    merged: np.ndarray

    def __len__(self):
        return len(self.theta)

    def lift_cells(self) -> np.ndarray:
        return np.asarray(self.x0.lift_cell) + np.cumsum(self.kappa, axis=0)

    def point(self, k: int) -> PhasePoint:
        """Phase point after k steps (k = 0 is the initial point)."""
        if k == 0:
            return self.x0
        z = self.lift_cells()[k - 1]
        return PhasePoint(int(self.scatterer[k - 1]), float(self.theta[k - 1]), float(self.phi[k - 1]),
                          (int(z[0]), int(z[1])))

    def records(self):
        for k in range(len(self)):
            yield (self.point(k + 1), FlightRecord(tuple(self.psi[k]), tuple(int(v) for v in self.kappa[k]),
                                                   float(self.path_length[k]), bool(self.merged[k])))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "scatterer", "theta", "phi", "psi_x", "psi_y", "kappa_x", "kappa_y",
                        "path_length", "merged"])
            for k in range(len(self)):
                w.writerow([k + 1, int(self.scatterer[k]), f"{self.theta[k]:.12g}", f"{self.phi[k]:.12g}",
                            f"{self.psi[k, 0]:.12g}", f"{self.psi[k, 1]:.12g}", int(self.kappa[k, 0]),
                            int(self.kappa[k, 1]), f"{self.path_length[k]:.12g}", int(self.merged[k])])


def billiard_orbit(lattice: ScattererLattice, x0: PhasePoint, n: int, *, merged=False, threshold=0.0,
                   kmin=2, max_cells=MAX_CELLS) -> Orbit:
    """``n`` consecutive applications of the (optionally merged) billiard map."""
    if n < 1:
        raise ValueError("n must be at least 1")
    _check_outgoing(x0)
    t = tables_for(lattice)
    st, done, s, th, ph, k, psi, path, m = _orbit(
        t.lc, t.rad, t.cs, t.cox, t.coy, x0.scatterer, x0.theta % TWO_PI, x0.phi % TWO_PI, n,
        max_cells, merged, threshold, kmin)
    _raise(st, step=done, max_cells=max_cells)
    return Orbit(x0, s, th, ph, k, psi, path, m)


def reflect(v, n):
    """Specular reflection v - 2<v,n>n."""
    v = np.asarray(v, float)
    n = np.asarray(n, float)
    return v - 2.0 * np.dot(v, n) * n


def reverse(x: PhasePoint) -> PhasePoint:
    """Time-reversed phase point: undo the last reflection and flip the velocity."""
    return PhasePoint(x.scatterer, x.theta, (2.0 * x.theta - x.phi) % TWO_PI, x.lift_cell)


def angle_distance(a, b):
    d = (np.asarray(a) - np.asarray(b)) % TWO_PI
    return np.minimum(d, TWO_PI - d)


def time_reversal_error(lattice: ScattererLattice, x0: PhasePoint, n: int = 20) -> float:
    """Max angular error after n steps forward, reversal, n steps, reversal."""
    fwd = billiard_orbit(lattice, x0, n).point(n)
    back = billiard_orbit(lattice, reverse(fwd), n).point(n)
    y = reverse(back)
    if y.scatterer != x0.scatterer or tuple(y.lift_cell) != tuple(x0.lift_cell):
        return math.inf
    return float(max(angle_distance(y.theta, x0.theta), angle_distance(y.phi, x0.phi)))


def kappa_consistency(lattice: ScattererLattice, x0: PhasePoint, n: int, max_cells=MAX_CELLS) -> dict:
    """Compare incrementally tracked lift cells with cells recovered from positions."""
    t = tables_for(lattice)
    st, done, bad, dev, maxpath = _kappa_consistency(
        t.lc, t.rad, t.cs, t.cox, t.coy, x0.scatterer, x0.theta % TWO_PI, x0.phi % TWO_PI, n, max_cells)
    _raise(st, step=done, max_cells=max_cells)
    return {"steps": int(done), "mismatches": int(bad), "max_deviation": float(dev), "max_path": float(maxpath)}


def cell_walk_bound(max_cells=MAX_CELLS) -> float:
    """Longest flight the grid walk can produce before declaring an escape."""
    return math.sqrt(2.0) * (max_cells + 2)


# ----------------------------------------------------------------------------
# extended precision


def next_collision_hp(lattice: ScattererLattice, x: PhasePoint, dps: int = 40):
    """Billiard map in extended precision (mpmath).

    The double-precision kernel picks the disk that is hit; the collision point
    and reflection are then recomputed with ``dps`` significant digits.  Angles
    in the returned point are ``mpmath.mpf``.
    """
    import mpmath as mp

    t = tables_for(lattice)
    st, s1, _, _, kx, ky, _, _, _ = _flight(
        t.lc, t.rad, t.cs, t.cox, t.coy, x.scatterer, float(x.theta) % TWO_PI, float(x.phi) % TWO_PI, MAX_CELLS)
    _raise(st)
    with mp.workdps(dps):
        two_pi = 2 * mp.pi
        th, ph = mp.mpf(x.theta), mp.mpf(x.phi)
        lc0 = [mp.mpf(float(v)) for v in t.lc[x.scatterer]]
        lc1 = [mp.mpf(float(v)) for v in t.lc[s1]]
        r0, r1 = mp.mpf(float(t.rad[x.scatterer])), mp.mpf(float(t.rad[s1]))
        px, py = lc0[0] + r0 * mp.cos(th), lc0[1] + r0 * mp.sin(th)
        vx, vy = mp.cos(ph), mp.sin(ph)
        dx, dy = px - lc1[0] - kx, py - lc1[1] - ky
        b = dx * vx + dy * vy
        cr = dx * vy - dy * vx
        tt = -b - mp.sqrt(r1 * r1 - cr * cr)
        hx, hy = dx + tt * vx, dy + tt * vy
        th1 = mp.atan2(hy, hx) % two_pi
        nx, ny = mp.cos(th1), mp.sin(th1)
        vn = vx * nx + vy * ny
        ph1 = mp.atan2(vy - 2 * vn * ny, vx - 2 * vn * nx) % two_pi
        psi = (kx + lc1[0] + r1 * nx - px, ky + lc1[1] + r1 * ny - py)
    cell = (x.lift_cell[0] + int(kx), x.lift_cell[1] + int(ky))
    return PhasePoint(int(s1), th1, ph1, cell), FlightRecord(psi, (int(kx), int(ky)), tt, False)


def reverse_hp(x: PhasePoint, dps: int = 40) -> PhasePoint:
    import mpmath as mp

    with mp.workdps(dps):
        phi = (2 * mp.mpf(x.theta) - mp.mpf(x.phi)) % (2 * mp.pi)
    return PhasePoint(x.scatterer, x.theta, phi, x.lift_cell)


def time_reversal_error_hp(lattice: ScattererLattice, x0: PhasePoint, n: int = 20, dps: int = 40) -> float:
    """Reversal error of the extended-precision map, as a float."""
    import mpmath as mp

    with mp.workdps(dps):
        x = PhasePoint(x0.scatterer, mp.mpf(x0.theta), mp.mpf(x0.phi), x0.lift_cell)
        for _ in range(n):
            x, _ = next_collision_hp(lattice, x, dps)
        x = reverse_hp(x, dps)
        for _ in range(n):
            x, _ = next_collision_hp(lattice, x, dps)
        y = reverse_hp(x, dps)
        if y.scatterer != x0.scatterer or tuple(y.lift_cell) != tuple(x0.lift_cell):
            return math.inf
        two_pi = 2 * mp.pi
        err = 0.0
        for a, b in ((y.theta, x0.theta), (y.phi, x0.phi)):
            d = (a - mp.mpf(b)) % two_pi
            err = max(err, float(min(d, two_pi - d)))
    return err
