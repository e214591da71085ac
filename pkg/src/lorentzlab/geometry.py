"""Periodic scatterer configurations on the unit torus and their corridors.

A configuration is a finite set of disjoint disks in the unit square,
repeated over the integer lattice.  A corridor is a maximal open strip
parallel to a primitive lattice direction that meets no lifted disk; the
horizon is infinite exactly when at least one corridor exists.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import product

import numpy as np

from .errors import (
    BoundaryTouchesCell,
    FiniteHorizon,
    NonPositiveRadius,
    OverlappingScatterers,
)

GAP_TOL = 1e-12
_OFFSET_GRID = 64


@dataclass(frozen=True)
class ScattererLattice:
    """Validated scatterer configuration.

    ``centers`` are stored reduced modulo 1.  ``cell_offset`` translates the
    fundamental cell D = [0, 1)^2 + offset; every disk is attributed to the
    translate of D that contains its center, which fixes the cell index used
    for the discrete free flight.
    """

    centers: np.ndarray
    radii: np.ndarray
    cell_offset: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def __post_init__(self):
        for name in ("centers", "radii", "cell_offset"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_scatterers(self) -> int:
        return len(self.radii)

    @property
    def local_centers(self) -> np.ndarray:
        """Centers in coordinates where the fundamental cell is [0, 1)^2."""
        return np.mod(self.centers - self.cell_offset, 1.0)

    @property
    def r_min(self) -> float:
        return float(self.radii.min())

    @property
    def r_max(self) -> float:
        return float(self.radii.max())

    def free_area(self) -> float:
        return 1.0 - math.pi * float(np.sum(self.radii**2))

    def mean_free_path(self) -> float:
        """Mean free path of the billiard map, pi |Q| / |dQ|."""
        return math.pi * self.free_area() / (2 * math.pi * float(np.sum(self.radii)))

    def as_config(self) -> dict:
        return {
            "scatterers": [[float(x), float(y), float(r)] for (x, y), r in zip(self.centers, self.radii)],
            "cell_offset": [float(v) for v in self.cell_offset],
        }

    def rotated90(self) -> "ScattererLattice":
        """The configuration rotated by a quarter turn, (x, y) -> (-y, x)."""
        c = np.column_stack([-self.centers[:, 1], self.centers[:, 0]])
        return validate_config(list(zip(map(tuple, c), self.radii)))

    def translated(self, shift) -> "ScattererLattice":
        c = np.asarray(self.centers) + np.asarray(shift, dtype=float)
        return validate_config(list(zip(map(tuple, c), self.radii)))


def _boundary_distance(local_centers: np.ndarray) -> np.ndarray:
    x, y = local_centers[:, 0], local_centers[:, 1]
    return np.minimum.reduce([x, 1.0 - x, y, 1.0 - y])


def _clearance(centers, radii, offset) -> float:
    local = np.mod(centers - offset, 1.0)
    return float(np.min(_boundary_distance(local) - radii))


def choose_cell_offset(centers, radii) -> np.ndarray:
    """Offset maximizing the minimum signed gap between disks and cell edges.

    Grid search at resolution 1/64 followed by three rounds of local grid
    refinement.  Ties go to the first grid point in row-major order, so the
    choice is deterministic.
    """
    centers = np.asarray(centers, dtype=float)
    radii = np.asarray(radii, dtype=float)
    best, best_val = np.zeros(2), -np.inf
    g = np.arange(_OFFSET_GRID) / _OFFSET_GRID
    for ox, oy in product(g, g):
        val = _clearance(centers, radii, (ox, oy))
        if val > best_val + 1e-15:
            best, best_val = np.array([ox, oy]), val
    step = 1.0 / _OFFSET_GRID
    for _ in range(3):
        local = np.linspace(-step, step, 17)
        center = best.copy()
        for dx, dy in product(local, local):
            cand = np.mod(center + (dx, dy), 1.0)
            val = _clearance(centers, radii, cand)
            if val > best_val + 1e-15:
                best, best_val = cand, val
        step /= 8
    return best


def validate_config(raw, cell_offset=None, *, strict=False, tol=GAP_TOL) -> ScattererLattice:
    """Validate ``[(center, radius), ...]`` and build a lattice.

    Checks run in the order radius, cell boundary, overlap.  A disk whose
    center lies on the cell boundary, or whose circle is tangent to it, raises
    :class:`BoundaryTouchesCell`.  With ``strict=True`` any circle meeting the
    cell boundary raises as well; that mode cannot hold for a finite-horizon
    configuration, since a cell edge free of scatterers is itself a corridor.
    """
    raw = list(raw)
    if not raw:
        raise ValueError("configuration must contain at least one scatterer")
    centers = np.array([tuple(c) for c, _ in raw], dtype=float).reshape(-1, 2)
    radii = np.array([r for _, r in raw], dtype=float)
    for i, r in enumerate(radii):
        if not r > 0:
            raise NonPositiveRadius(i, r)
    centers = np.mod(centers, 1.0)

    offset = choose_cell_offset(centers, radii) if cell_offset is None else np.asarray(cell_offset, float)
    local = np.mod(centers - offset, 1.0)
    dist = _boundary_distance(local)
    for i in range(len(radii)):
        if dist[i] < tol or abs(dist[i] - radii[i]) < tol or (strict and dist[i] <= radii[i] + tol):
            raise BoundaryTouchesCell(i)

    images = np.array(list(product((-1, 0, 1), repeat=2)), dtype=float)
    for i in range(len(radii)):
        for j in range(i, len(radii)):
            d = np.linalg.norm(centers[i] - (centers[j] + images), axis=1)
            if i == j:
                d = d[np.any(images != 0, axis=1)]
            if np.min(d) <= radii[i] + radii[j] + tol:
                raise OverlappingScatterers((i, j))
    return ScattererLattice(centers, radii, offset)


# ----------------------------------------------------------------------------
# corridors


@dataclass(frozen=True)
class BoundingPoint:
    scatterer: int
    point: tuple
    side: str  # "lower" or "upper" edge of the strip
    curvature: float


@dataclass(frozen=True)
class Corridor:
    direction: tuple
    width: float
    anchor: float
    bounding_points: tuple = ()

    @property
    def spacing(self) -> float:
        return 1.0 / math.hypot(*self.direction)

    @property
    def unit_direction(self) -> np.ndarray:
        w = np.array(self.direction, dtype=float)
        return w / np.linalg.norm(w)

    @property
    def unit_normal(self) -> np.ndarray:
        a, b = self.direction
        return np.array([-b, a], dtype=float) / math.hypot(a, b)

    def to_json(self) -> dict:
        return {
            "direction": [int(self.direction[0]), int(self.direction[1])],
            "width": float(self.width),
            "anchor": float(self.anchor),
            "bounding_points": [
                {"scatterer": p.scatterer, "point": [float(p.point[0]), float(p.point[1])],
                 "side": p.side, "curvature": float(p.curvature)}
                for p in self.bounding_points
            ],
        }


def primitive_directions(max_norm: float):
    """Primitive integer vectors with norm < ``max_norm``, one per +/- pair.

    Canonical representative has a > 0, or a == 0 and b == 1.  Sorted by norm
    then lexicographically.
    """
    m = int(math.ceil(max_norm))
    out = []
    for a in range(0, m + 1):
        for b in range(-m, m + 1):
            if a == 0 and b != 1:
                continue
            if math.gcd(a, abs(b)) != 1:
                continue
            if a * a + b * b < max_norm * max_norm:
                out.append((a, b))
    out.sort(key=lambda w: (w[0] ** 2 + w[1] ** 2, w))
    return out


def projected_gaps(lattice: ScattererLattice, w, tol=GAP_TOL):
    """Uncovered arcs of the normal circle for direction ``w``.

    Returns a list of ``(start, width)`` with start in [0, spacing).
    """
    a, b = w
    norm = math.hypot(a, b)
    h = 1.0 / norm
    n = np.array([-b, a], dtype=float) / norm
    if np.any(2 * lattice.radii >= h - tol):
        return []
    p = np.mod(lattice.centers @ n, h)
    starts = np.mod(p - lattice.radii, h)
    ends = starts + 2 * lattice.radii
    order = np.argsort(starts, kind="stable")
    starts, ends = starts[order], ends[order]
    s0 = starts[0]
    # arcs that wrap past s0 + h cover a contiguous stretch starting at s0
    reach = max(ends[0], float(np.max(ends)) - h)
    gaps = []
    for s, e in zip(starts[1:], ends[1:]):
        if s > reach + tol:
            gaps.append((reach, s - reach))
        reach = max(reach, e)
    if reach < s0 + h - tol:
        gaps.append((reach, s0 + h - reach))
    out = []
    for g0, width in gaps:
        if width > tol:
            g0 = float(np.mod(g0, h))
            if g0 > h - tol:
                g0 = 0.0
            out.append((g0, float(width)))
    return sorted(out)


def _bounding_points(lattice, w, anchor, width, tol=1e-9):
    a, b = w
    norm = math.hypot(a, b)
    h = 1.0 / norm
    n = np.array([-b, a], dtype=float) / norm
    pts = []
    for s, (c, r) in enumerate(zip(lattice.centers, lattice.radii)):
        p = float(c @ n)
        # lower edge: top of the disk projection sits at the anchor
        k_lo = round((anchor - (p + r)) / h)
        if abs(p + r + k_lo * h - anchor) < tol:
            shift = _lattice_shift(w, k_lo)
            q = c + shift + r * n
            pts.append(BoundingPoint(s, (float(q[0]), float(q[1])), "lower", 1.0 / r))
        k_hi = round((anchor + width - (p - r)) / h)
        if abs(p - r + k_hi * h - (anchor + width)) < tol:
            shift = _lattice_shift(w, k_hi)
            q = c + shift - r * n
            pts.append(BoundingPoint(s, (float(q[0]), float(q[1])), "upper", 1.0 / r))
    return tuple(pts)


def _lattice_shift(w, k):
    """An integer vector z with <z, w_perp> = k, i.e. shifting projections by k spacings."""
    a, b = w
    # need -b*x + a*y = k; solve with extended gcd (gcd(a, b) == 1)
    g, x0, y0 = _egcd(-b, a)
    return np.array([x0 * k // g, y0 * k // g], dtype=float)


def _egcd(a, b):
    if b == 0:
        return (abs(a), (1 if a >= 0 else -1), 0)
    g, x, y = _egcd(b, a % b)
    return g, y, x - (a // b) * y


def find_corridors(lattice: ScattererLattice, tol=GAP_TOL) -> list:
    """All corridor classes, ordered by |w|, then w, then anchor."""
    cutoff = 1.0 / (2.0 * lattice.r_min)
    corridors = []
    for w in primitive_directions(cutoff):
        for anchor, width in projected_gaps(lattice, w, tol):
            corridors.append(Corridor(w, width, anchor, _bounding_points(lattice, w, anchor, width)))
    return corridors


@dataclass(frozen=True)
class HorizonClass:
    tag: str  # "Finite", "Infinite", "ParallelOnly"
    corridors: tuple = ()
    direction: tuple = None

    @property
    def is_finite(self) -> bool:
        return self.tag == "Finite"

    def to_json(self) -> dict:
        out = {"tag": self.tag, "corridors": [c.to_json() for c in self.corridors]}
        if self.direction is not None:
            out["direction"] = list(self.direction)
        return out


def classify_horizon(corridors) -> HorizonClass:
    corridors = tuple(corridors)
    if not corridors:
        return HorizonClass("Finite")
    dirs = {tuple(c.direction) for c in corridors}
    if len(dirs) == 1:
        return HorizonClass("ParallelOnly", corridors, next(iter(dirs)))
    return HorizonClass("Infinite", corridors)


def horizon_of(lattice: ScattererLattice) -> HorizonClass:
    return classify_horizon(find_corridors(lattice))


def covariance_geometry(corridors, lattice: ScattererLattice) -> list:
    """Directions, widths, bounding points and their curvatures.

    This is the finite geometric data that determines the superdiffusive
    covariance; no closed form for the covariance is attempted.
    """
    corridors = list(corridors)
    if not corridors:
        raise FiniteHorizon("covariance geometry needs at least one corridor")
    report = []
    for c in corridors:
        report.append({
            "direction": list(c.direction),
            "width": c.width,
            "anchor": c.anchor,
            "bounding_points": [
                {"scatterer": p.scatterer, "point": list(p.point), "side": p.side,
                 "curvature": p.curvature, "radius": float(lattice.radii[p.scatterer])}
                for p in c.bounding_points
            ],
        })
    return report


def strip_is_clear(lattice: ScattererLattice, corridor: Corridor, n_points=1000, rng=None, length=5.0) -> bool:
    """Monte Carlo check that no lifted disk meets the open strip."""
    rng = np.random.default_rng(0) if rng is None else rng
    u = corridor.unit_direction
    n = corridor.unit_normal
    along = rng.uniform(-length, length, n_points)
    across = corridor.anchor + rng.uniform(0.0, 1.0, n_points) * corridor.width
    pts = along[:, None] * u + across[:, None] * n
    for c, r in zip(lattice.centers, lattice.radii):
        rel = pts - c
        # nearest lift of the center to each point
        rel -= np.round(rel)
        if np.any(np.hypot(rel[:, 0], rel[:, 1]) < r):
            return False
    return True
