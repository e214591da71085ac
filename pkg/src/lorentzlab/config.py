"""Experiment configuration: YAML in, fully populated dict out.

Every default is filled in here and echoed into the manifest, so a report
never depends on a value that is not written down next to it.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import yaml

from .errors import ConfigError

SCENARIOS = ("corridors", "simulate", "clt", "lclt", "tails", "recurrence", "rw-oracle", "spectrum")
NEEDS_LATTICE = {"corridors", "simulate", "clt", "lclt", "tails"}
NEEDS_ENSEMBLE = {"simulate", "clt", "lclt", "tails"}

ENSEMBLE_DEFAULTS = {
    "trajectories": 10_000,
    "n_schedule": [1000, 2000, 4000],
    "observable": "kappa",
    "merged_section": False,
    "threshold": 0.0,
    "kmin": 2,
}

TOLERANCES = {
    "corridors": {"gap_tol": 1e-12},
    "simulate": {"max_drop_fraction": 1e-4},
    "clt": {"drift": 0.10, "ks_alpha": 1e-3, "superdiffusive_drift": 0.20, "min_samples": 10_000},
    "lclt": {"stability": 0.25, "min_events": 20},
    "tails": {"alpha_low": 1.7, "alpha_high": 2.3, "r2_min": 0.95},
    "recurrence": {"z": 3.0, "fit_r2": 0.9},
    "rw-oracle": {"lclt_abs": 0.01},
    "spectrum": {"lambda0": 1e-10, "tail_slope": 1e-3, "sigma2_rel": 0.02, "K_cap": 100.0},
}

OPTIONS = {
    "corridors": {},
    "simulate": {},
    "clt": {},
    "lclt": {"target": [0, 0]},
    "tails": {"u_min": None, "u_max": None},
    "recurrence": {"source": "ssrw", "d": 2, "trajectories": 20_000, "n_max": 1024,
                   "schedule": [16, 32, 64, 128, 256, 512, 1024]},
    "rw-oracle": {"walk": "ssrw", "d": 1, "n": 10_000, "k": 0, "A": 5.0, "eps": 0.5},
    "spectrum": {"breakpoints": [0.0, 0.5, 1.0], "base": [0], "resolution": 4096, "observable": "cos",
                 "frequency": 1, "t_grid": [0.02, 0.04, 0.06, 0.08, 0.1, 0.12, 0.14, 0.16, 0.18, 0.2],
                 "eps": None, "beta": None, "N": None},
}


def _merge(defaults: dict, given: dict, where: str) -> dict:
    out = copy.deepcopy(defaults)
    for key, val in (given or {}).items():
        if key not in defaults:
            raise ConfigError(f"{where}.{key}", "unknown field")
        out[key] = val
    return out


def _require(cond, field, message):
    if not cond:
        raise ConfigError(field, message)


@dataclass
class ExperimentConfig:
    """Validated experiment description (``data`` is the echoed, complete config)."""

    data: dict

    @property
    def scenario(self) -> str:
        return self.data["scenario"]

    @property
    def seed(self) -> int:
        return int(self.data["seed"])

    @property
    def out(self) -> str:
        return self.data["out"]

    @property
    def lattice(self) -> dict | None:
        return self.data.get("lattice")

    @property
    def ensemble(self) -> dict | None:
        return self.data.get("ensemble")

    @property
    def tolerances(self) -> dict:
        return self.data["tolerances"]

    @property
    def options(self) -> dict:
        return self.data["options"]

    def canonical(self) -> str:
        body = {k: v for k, v in self.data.items() if k != "out"}
        return json.dumps(body, sort_keys=True, separators=(",", ":"))

    def hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    def with_overrides(self, **kw) -> "ExperimentConfig":
        raw = copy.deepcopy(self.data)
        apply_overrides(raw, **kw)
        return parse_config(raw)


def apply_overrides(raw: dict, *, seed=None, out=None, n=None, trajectories=None, k=None, d=None):
    """Apply command-line overrides to a raw config dict in place."""
    if seed is not None:
        raw["seed"] = int(seed)
    if out is not None:
        raw["out"] = str(out)
    scen = raw.get("scenario")
    opts = raw.setdefault("options", {}) or {}
    raw["options"] = opts
    if n is not None:
        ns = [int(v) for v in (n if isinstance(n, (list, tuple)) else [n])]
        if scen in NEEDS_ENSEMBLE:
            raw.setdefault("ensemble", {})["n_schedule"] = ns
        elif scen == "recurrence":
            opts["n_max"] = max(ns)
            if len(ns) > 1:
                opts["schedule"] = ns
        else:
            opts["n"] = ns[0]
    if trajectories is not None:
        if scen in NEEDS_ENSEMBLE:
            raw.setdefault("ensemble", {})["trajectories"] = int(trajectories)
        else:
            opts["trajectories"] = int(trajectories)
    if k is not None:
        opts["k"] = int(k)
    if d is not None:
        opts["d"] = int(d)


def parse_config(raw: dict) -> ExperimentConfig:
    """Validate a raw mapping and fill every default explicitly."""
    _require(isinstance(raw, dict), "config", "must be a mapping")
    known = {"scenario", "seed", "out", "lattice", "ensemble", "tolerances", "options"}
    for key in raw:
        _require(key in known, key, "unknown field")
    scen = raw.get("scenario")
    _require(scen in SCENARIOS, "scenario", f"must be one of {', '.join(SCENARIOS)}")
    seed = raw.get("seed", 0)
    _require(isinstance(seed, int) and 0 <= seed < 2**64, "seed", "must be an unsigned 64-bit integer")
    data = {"scenario": scen, "seed": int(seed), "out": str(raw.get("out", f"results/{scen}"))}

    if scen in NEEDS_LATTICE:
        lat = raw.get("lattice")
        _require(isinstance(lat, dict), "lattice", "required for this scenario")
        _require("centers" in lat, "lattice.centers", "missing")
        _require("radii" in lat, "lattice.radii", "missing")
        centers, radii = lat["centers"], lat["radii"]
        _require(isinstance(centers, list) and all(isinstance(c, (list, tuple)) and len(c) == 2 for c in centers),
                 "lattice.centers", "must be a list of [x, y] pairs")
        _require(isinstance(radii, list) and len(radii) == len(centers), "lattice.radii",
                 "must be a list with one radius per center")
        extra = set(lat) - {"centers", "radii", "cell_offset"}
        _require(not extra, f"lattice.{sorted(extra)[0]}" if extra else "lattice", "unknown field")
        data["lattice"] = {"centers": [[float(a), float(b)] for a, b in centers],
                           "radii": [float(r) for r in radii],
                           "cell_offset": None if lat.get("cell_offset") is None else [float(v) for v in lat["cell_offset"]]}

    if scen in NEEDS_ENSEMBLE:
        ens = _merge(ENSEMBLE_DEFAULTS, raw.get("ensemble"), "ensemble")
        _require(isinstance(ens["trajectories"], int) and ens["trajectories"] > 0, "ensemble.trajectories",
                 "must be a positive integer")
        sched = ens["n_schedule"]
        _require(isinstance(sched, list) and sched and all(isinstance(v, int) and v > 0 for v in sched)
                 and sorted(set(sched)) == sched, "ensemble.n_schedule", "must be a strictly increasing list of positive integers")
        _require(ens["observable"] in ("kappa", "psi"), "ensemble.observable", "must be kappa or psi")
        data["ensemble"] = ens
    elif raw.get("ensemble"):
        raise ConfigError("ensemble", f"not used by scenario {scen}")

    data["tolerances"] = _merge(TOLERANCES[scen], raw.get("tolerances"), "tolerances")
    data["options"] = _merge(OPTIONS[scen], raw.get("options"), "options")
    opts = data["options"]
    if scen == "rw-oracle":
        _require(opts["walk"] in ("ssrw", "heavy_tail"), "options.walk", "must be ssrw or heavy_tail")
        _require(opts["d"] in (1, 2, 3), "options.d", "must be 1, 2 or 3")
        _require(opts["walk"] == "ssrw" or opts["d"] == 1, "options.d", "heavy_tail walk is one-dimensional")
        _require(isinstance(opts["n"], int) and opts["n"] > 0, "options.n", "must be a positive integer")
    if scen == "recurrence":
        _require(opts["source"] in ("ssrw", "billiard"), "options.source", "must be ssrw or billiard")
        _require(opts["d"] in (1, 2, 3), "options.d", "must be 1, 2 or 3")
        if opts["source"] == "billiard":
            _require(isinstance(raw.get("lattice"), dict), "lattice", "required for billiard recurrence")
            lat = raw["lattice"]
            _require("radii" in lat, "lattice.radii", "missing")
            _require("centers" in lat, "lattice.centers", "missing")
            data["lattice"] = {"centers": [[float(a), float(b)] for a, b in lat["centers"]],
                               "radii": [float(r) for r in lat["radii"]], "cell_offset": lat.get("cell_offset")}
    if scen == "spectrum":
        _require(opts["observable"] in ("cos", "sawtooth", "coboundary"), "options.observable",
                 "must be cos, sawtooth or coboundary")
        _require(isinstance(opts["resolution"], int) and opts["resolution"] >= 2, "options.resolution",
                 "must be an integer >= 2")
    return ExperimentConfig(data)


def load_raw(path) -> dict:
    """Raw mapping from a YAML file."""
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError("config", f"not valid YAML: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config", "must be a mapping")
    return raw


def load_config(path) -> ExperimentConfig:
    return parse_config(load_raw(path))
