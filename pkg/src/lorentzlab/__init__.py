"""Periodic Lorentz process: billiard dynamics, limit statistics, walk oracles and tower spectra."""

__version__ = "0.1.0"

from .errors import LorentzLabError  # noqa: E402,F401
from .geometry import ScattererLattice, validate_config, find_corridors, classify_horizon, horizon_of  # noqa: E402,F401
from .dynamics import PhasePoint, next_collision, billiard_orbit  # noqa: E402,F401
from .sampling import EnsembleSpec, run_ensemble  # noqa: E402,F401
