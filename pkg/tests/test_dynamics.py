import math

import numpy as np
import pytest

from lorentzlab import dynamics as dyn
from lorentzlab import geometry
from lorentzlab.errors import HorizonEscape, NumericalDegeneracy


def test_spec_example_flight():
    lat = geometry.validate_config([((0.5, 0.5), 0.1)])
    x, rec = dyn.next_collision(lat, dyn.PhasePoint(0, math.pi, math.pi))
    assert rec.kappa == (-1, 0)
    assert np.allclose(rec.psi, (-0.8, 0.0), atol=1e-12)
    assert abs(rec.path_length - 0.8) < 1e-12
    assert x.scatterer == 0


def test_outgoing_precondition(infinite_lattice):
    with pytest.raises(ValueError):
        dyn.next_collision(infinite_lattice, dyn.PhasePoint(0, 0.0, math.pi))


def test_reflection_is_involution(rng):
    for _ in range(100):
        v = rng.normal(size=2)
        n = rng.normal(size=2)
        n /= np.linalg.norm(n)
        assert np.allclose(dyn.reflect(dyn.reflect(v, n), n), v)
        assert abs(np.linalg.norm(dyn.reflect(v, n)) - np.linalg.norm(v)) < 1e-12


def test_orbit_outgoing_and_kappa_sum(infinite_lattice):
    x0 = dyn.PhasePoint(0, 0.3, 0.8)
    orb = dyn.billiard_orbit(infinite_lattice, x0, 500)
    for k in range(1, 50):
        assert orb.point(k).is_outgoing()
    # the lift cell equals the cell containing the lifted center
    assert np.array_equal(orb.lift_cells()[-1], np.sum(orb.kappa, axis=0))


def test_step_by_step_matches_orbit(finite_lattice):
    x = dyn.PhasePoint(1, 1.0, 1.4)
    orb = dyn.billiard_orbit(finite_lattice, x, 30)
    for k in range(30):
        x, rec = dyn.next_collision(finite_lattice, x)
        assert tuple(rec.kappa) == tuple(orb.kappa[k])
        assert abs(x.theta - orb.theta[k]) < 1e-12


def test_time_reversal_extended_precision(infinite_lattice):
    x0 = dyn.PhasePoint(0, 0.3, 0.8)
    assert dyn.time_reversal_error_hp(infinite_lattice, x0, 20) < 1e-6


def test_time_reversal_double_short(finite_lattice):
    assert dyn.time_reversal_error(finite_lattice, dyn.PhasePoint(0, 0.5, 1.0), 3) < 1e-6


def test_kappa_consistency_short(infinite_lattice):
    r = dyn.kappa_consistency(infinite_lattice, dyn.PhasePoint(0, 0.3, 0.8), 100_000)
    assert r["mismatches"] == 0 and r["steps"] == 100_000


def test_grazing_is_degenerate():
    lat = geometry.validate_config([((0.5, 0.5), 0.4)])
    with pytest.raises(NumericalDegeneracy):
        dyn.next_collision(lat, dyn.PhasePoint(0, math.pi / 2, 0.0))


def test_escape_on_corridor():
    # from the top of the disk, climbing at slope 1e-7 stays in the horizontal corridor
    lat = geometry.validate_config([((0.5, 0.5), 0.4)])
    x = dyn.PhasePoint(0, math.pi / 2, 1e-7)
    with pytest.raises(HorizonEscape):
        dyn.next_collision(lat, x, max_cells=1000)


def test_merged_step_flags(finite_lattice):
    orb = dyn.billiard_orbit(finite_lattice, dyn.PhasePoint(0, 0.7, 1.1), 2000, merged=True, threshold=0.5)
    plain = dyn.billiard_orbit(finite_lattice, dyn.PhasePoint(0, 0.7, 1.1), 2000)
    assert len(orb) == 2000
    assert orb.merged.any() or not (plain.path_length < 0.5).any()


def test_orbit_csv(tmp_path, infinite_lattice):
    orb = dyn.billiard_orbit(infinite_lattice, dyn.PhasePoint(0, 0.3, 0.8), 5)
    p = tmp_path / "orbit.csv"
    orb.to_csv(p)
    lines = p.read_text().splitlines()
    assert lines[0].startswith("step,scatterer,theta,phi")
    assert len(lines) == 6
