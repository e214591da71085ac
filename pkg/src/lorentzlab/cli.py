"""Command-line front end: scenarios, artifacts, manifests and replay.

Every run writes ``report.json``, CSV curves, ``summary.txt``, PNG figures
and ``manifest.json`` into the output directory.  Floats are printed with 12
significant digits and nothing depends on wall-clock time or worker count,
so equal (config, seed) pairs give byte-identical artifacts.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import shutil
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import __version__, geometry, limits, oracle, plotting, sampling, tower
from .config import SCENARIOS, ExperimentConfig, apply_overrides, load_raw, parse_config
from .errors import ConfigError, DegenerateVariance, LorentzLabError, Mismatch

DIGITS = 12


# ----------------------------------------------------------------------------
# serialization


def _clean(obj):
    """Round floats to DIGITS significant digits; NaN/inf become strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            return str(x)
        return float(f"{x:.{DIGITS}g}")
    if isinstance(obj, complex):
        return [_clean(obj.real), _clean(obj.imag)]
    return obj


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.{DIGITS}g}"
    if isinstance(v, (list, tuple)):
        return " ".join(_fmt(x) for x in v)
    return str(v)


def sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


class Artifacts:
    """Collects files, reports and checks of one run."""

    def __init__(self, outdir: Path):
        self.outdir = Path(outdir)
        self.outdir.mkdir(parents=True, exist_ok=True)
        self.paths = []
        self.reports = []
        self.sections = {}

    def _add(self, name):
        self.paths.append(name)
        return self.outdir / name

    def json(self, name, obj):
        p = self._add(name)
        p.write_text(json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n")

    def csv(self, name, header, rows):
        p = self._add(name)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])
        p.write_text(buf.getvalue())

    def figure(self, name, fn, *args, **kw):
        fn(*args, path=self._add(name), **kw)

    def files(self, paths):
        for p in paths:
            self.paths.append(str(Path(p).relative_to(self.outdir)))

    def report(self, rep: limits.LimitReport):
        self.reports.append(rep)
        return rep

    def check(self, estimator, name, value, tolerance, passed):
        rep = limits.LimitReport(estimator)
        rep.check(name, value, tolerance, passed)
        self.reports.append(rep)
        return passed

    @property
    def checks(self):
        return [dict(c.as_dict(), estimator=r.estimator) for r in self.reports for c in r.checks]

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.checks)

    def report_rows_csv(self, name, rep):
        if rep.rows:
            keys = list(rep.rows[0])
            self.csv(name, keys, [[r.get(k) for k in keys] for r in rep.rows])


# ----------------------------------------------------------------------------
# scenarios


def _lattice(cfg: ExperimentConfig):
    lat = cfg.lattice
    return geometry.validate_config(list(zip(lat["centers"], lat["radii"])), lat.get("cell_offset"))


def _ensemble(cfg, lattice, workers):
    e = cfg.ensemble
    spec = sampling.EnsembleSpec(e["trajectories"], tuple(e["n_schedule"]), cfg.seed, e["observable"],
                                 e["merged_section"], e["threshold"], e["kmin"])
    return spec, sampling.run_ensemble(lattice, spec, workers)


def scenario_corridors(cfg, art: Artifacts, workers):
    lattice = _lattice(cfg)
    cors = geometry.find_corridors(lattice, tol=cfg.tolerances["gap_tol"])
    hz = geometry.classify_horizon(cors)
    art.sections["horizon"] = hz.to_json()
    art.sections["corridor_classes"] = len(cors)
    art.csv("corridors.csv", ["direction_x", "direction_y", "width", "anchor", "spacing", "bounding_points"],
            [[c.direction[0], c.direction[1], c.width, c.anchor, c.spacing, len(c.bounding_points)] for c in cors])
    rng = np.random.Generator(np.random.Philox(key=cfg.seed))
    for c in cors:
        clear = geometry.strip_is_clear(lattice, c, rng=rng)
        art.check("strip_is_clear", f"strip {c.direction[0]},{c.direction[1]} free of scatterers", clear,
                  "no sampled point inside a scatterer", clear)
    art.figure("corridors.png", plotting.corridor_figure, lattice, cors)


def scenario_simulate(cfg, art, workers):
    lattice = _lattice(cfg)
    spec, res = _ensemble(cfg, lattice, workers)
    art.files(res.write(art.outdir, cfg.hash(), DIGITS))
    rows = []
    for n, m in zip(spec.n_schedule, res.moments):
        cov = m.cov
        rows.append([n, m.count, m.mean[0], m.mean[1], cov[0, 0], cov[0, 1], cov[1, 1]])
    art.csv("moments.csv", ["n", "count", "mean_x", "mean_y", "var_x", "cov_xy", "var_y"], rows)
    art.sections.update({"collisions": res.collisions, "drops": res.drops, "horizon": res.horizon,
                         "merged": res.merged_count})
    frac = res.drops / spec.trajectories
    tol = cfg.tolerances["max_drop_fraction"]
    art.check("run_ensemble", "dropped trajectory fraction", frac, f"<= {tol}", frac <= tol)
    n = spec.n_schedule[-1]
    art.figure("scatter.png", plotting.scatter_figure, res.S(n), title=f"S_n at n = {n}")


def scenario_clt(cfg, art, workers):
    lattice = _lattice(cfg)
    spec, res = _ensemble(cfg, lattice, workers)
    samples = {n: res.S(n) for n in spec.n_schedule}
    tol = cfg.tolerances
    art.sections["horizon"] = res.horizon
    if res.horizon == "Finite":
        rep = art.report(limits.clt_check(samples, limits.DIFFUSIVE, drift_tol=tol["drift"],
                                          ks_alpha=tol["ks_alpha"], min_samples=tol["min_samples"]))
        key, label = "trace", "Var(S_n)/n"
    else:
        rep = art.report(limits.superdiffusion_check(samples, drift_tol=tol["superdiffusive_drift"]))
        key, label = "var_over_n", "Var(S_n)/n (robust)"
    art.report_rows_csv("clt.csv", rep)
    art.figure("variance.png", plotting.variance_figure, [r["n"] for r in rep.rows], [r[key] for r in rep.rows],
               ylabel=label)


def scenario_lclt(cfg, art, workers):
    lattice = _lattice(cfg)
    spec, res = _ensemble(cfg, lattice, workers)
    samples = {n: res.S(n) for n in spec.n_schedule}
    scaling = limits.DIFFUSIVE if res.horizon == "Finite" else limits.SUPERDIFFUSIVE
    target = cfg.options["target"]
    rep = art.report(limits.lclt_pointmass(samples, scaling, {n: target for n in samples},
                                           stability_tol=cfg.tolerances["stability"],
                                           min_events=cfg.tolerances["min_events"]))
    art.sections["horizon"] = res.horizon
    art.report_rows_csv("lclt.csv", rep)
    art.figure("lclt.png", plotting.variance_figure, [r["n"] for r in rep.rows], [r["normalized"] for r in rep.rows],
               ylabel="det(B_n) P(S_n = k)")


def scenario_tails(cfg, art, workers):
    lattice = _lattice(cfg)
    spec, res = _ensemble(cfg, lattice, workers)
    hist = limits.TailHistogram.from_ensemble(res)
    tol, opt = cfg.tolerances, cfg.options
    fit = art.report(limits.tail_fit(hist, opt["u_min"], opt["u_max"], alpha_range=(tol["alpha_low"], tol["alpha_high"])))
    tv = art.report(limits.truncated_variance_curve(hist, r2_min=tol["r2_min"]))
    art.sections["collisions"] = res.collisions
    art.csv("survival.csv", ["u", "survival", "exceedances"],
            [[u, s, c] for u, s, c in zip(hist.edges, hist.survival(), hist.exceed_counts()) if c > 0])
    art.report_rows_csv("truncated_variance.csv", tv)
    art.figure("survival.png", plotting.survival_figure, hist.edges, hist.survival(), fit=fit.fitted)


def _ssrw_counters(d, trajectories, n_max, seed, block=2048):
    rng = np.random.Generator(np.random.Philox(key=int(seed)))
    eye = np.concatenate([np.eye(d, dtype=np.int8), -np.eye(d, dtype=np.int8)])
    total = None
    for a in range(0, trajectories, block):
        m = min(block, trajectories - a)
        steps = eye[rng.integers(0, 2 * d, size=(m, n_max))]
        c = limits.ReturnCounters.from_walks(steps)
        total = c if total is None else total.merge(c)
    return total


def scenario_recurrence(cfg, art, workers):
    opt, tol = cfg.options, cfg.tolerances
    sched = [n for n in opt["schedule"] if n <= opt["n_max"]]
    if opt["source"] == "ssrw":
        d = opt["d"]
        counters = _ssrw_counters(d, opt["trajectories"], opt["n_max"], cfg.seed)
        exact = oracle.return_probabilities(d, opt["n_max"])
        rep = art.report(limits.lamperti_statistic(counters, sched, exact=exact, z=tol["z"],
                                                   fit_r2=tol["fit_r2"] if d == 2 else None,
                                                   min_sum=2.0 if d <= 2 else 0.0))
        expect = d <= 2
        art.check("divergence_verdict", f"d={d} partial sums {'diverge' if expect else 'converge'}",
                  rep.fitted["diverging"], f"diverging == {expect}", rep.fitted["diverging"] == expect)
        ex = [r["exact"] for r in rep.rows]
    else:
        lattice = _lattice(cfg)
        spec = sampling.EnsembleSpec(opt["trajectories"], (opt["n_max"],), cfg.seed)
        res = sampling.run_ensemble(lattice, spec, workers)
        rep = art.report(limits.lamperti_statistic(limits.ReturnCounters.from_ensemble(res), sched,
                                                   z=tol["z"], fit_r2=tol["fit_r2"]))
        ex = None
    art.report_rows_csv("recurrence.csv", rep)
    art.figure("partial_sums.png", plotting.partial_sum_figure, [r["n"] for r in rep.rows],
               [r["partial_sum"] for r in rep.rows], exact=ex)


def scenario_rw_oracle(cfg, art, workers):
    opt, tol = cfg.options, cfg.tolerances
    n, d, k = opt["n"], opt["d"], opt["k"]
    if opt["walk"] == "ssrw":
        spec = oracle.LatticeWalkSpec.ssrw(d)
        kvec = [k] + [0] * (d - 1)
        rows = oracle.lclt_limit_check(spec, [n], [kvec])
        r = rows[0]
        art.csv("rw_oracle.csv", ["n", "k", "exact", "normalizer", "normalized", "limit"],
                [[r["n"], r["k"], r["exact"], r["normalizer"], r["normalized"], r["limit"]]])
        err = abs(r["normalized"] - r["limit"])
        art.check("lclt_limit_check", "normalized point mass vs Gaussian limit", err, f"< {tol['lclt_abs']}",
                  err < tol["lclt_abs"])
        if d == 1 and opt["A"] <= opt["eps"] * math.sqrt(n):
            g = oracle.gnedenko_terms(n, opt["A"], opt["eps"], k)
            art.sections["gnedenko"] = g.as_dict()
            art.check("gnedenko_terms", "pi |sqrt(n) P - 2 phi| <= I + II + III + IIII", g.lhs,
                      f"<= {g.total:.6g}", g.lhs <= g.total)
        pmf = oracle.exact_pmf(spec, n) if d < 3 or n <= 200 else None
    else:
        spec = oracle.LatticeWalkSpec.heavy_tail()
        ns = [2**j for j in range(8, int(math.log2(n)) + 1)] or [n]
        rows = oracle.lclt_limit_check(spec, ns)
        art.csv("rw_oracle.csv", ["n", "exact", "normalizer", "normalized", "limit"],
                [[r["n"], r["exact"], r["normalizer"], r["normalized"], r["limit"]] for r in rows])
        drift = limits.relative_drift([r["normalized"] for r in rows])
        art.check("lclt_limit_check", "sqrt(n log n) P(W_n = 0) drift over dyadic n", drift, "< 0.1", drift < 0.1)
        fit = oracle.heavy_tail_charfn_fit(spec)
        art.sections["charfn_fit"] = fit.as_dict()
        art.check("heavy_tail_charfn_fit", "(xi - 1)/t^2 linear in log t", fit.r2, "R^2 > 0.999", fit.r2 > 0.999)
        pmf = oracle.exact_pmf(spec, min(n, 4096))
    if pmf is not None:
        art.figure("pmf.png", plotting.pmf_figure, pmf, n=n)


OBSERVABLES = {
    "cos": lambda fr: (lambda y: np.cos(2 * np.pi * fr * y)),
    "sawtooth": lambda fr: (lambda y: (fr * y) % 1.0 - 0.5),
    "coboundary": lambda fr: (lambda y: np.cos(4 * np.pi * fr * y) - np.cos(2 * np.pi * fr * y)),
}


def scenario_spectrum(cfg, art, workers):
    opt, tol = cfg.options, cfg.tolerances
    tmap = tower.AffineMap(tuple(opt["breakpoints"]))
    tw = tower.build_tower(tmap, tuple(opt["base"]))
    T = tower.transfer_matrix(tw, opt["resolution"], opt["eps"], opt["beta"])
    f = OBSERVABLES[opt["observable"]](opt["frequency"])
    fbar = T.observable(f)
    art.sections["tower"] = {k: v for k, v in tw.to_json().items() if k not in ("tail", "return_words")}
    art.sections["transfer_matrix"] = T.to_json()

    r0 = tower.leading_eigenvalue(T)
    err0 = abs(r0.lam - 1)
    art.check("leading_eigenvalue", "|lambda_0 - 1|", err0, f"< {tol['lambda0']}", err0 < tol["lambda0"])
    art.sections["gap"] = r0.gap
    expected = math.log(1 - tw.base_measure) if tw.base_measure < 1 else -math.inf
    if math.isfinite(expected):
        e = abs(tw.tail_slope - expected)
        art.check("build_tower", "tail slope vs log(1 - |base|)", e, f"< {tol['tail_slope']}", e < tol["tail_slope"])

    ts = np.asarray(opt["t_grid"], float)
    lams = tower.lambda_curve(T, fbar, ts)
    art.csv("lambda_curve.csv", ["t", "re", "im", "abs"], [[t, l.real, l.imag, abs(l)] for t, l in zip(ts, lams)])
    gk = tower.green_kubo(tmap, f)
    art.sections["green_kubo"] = {"sigma2": gk["sigma2"], "mean": gk["mean"]}
    fit = None
    try:
        fit = tower.eigenvalue_expansion_fit(ts, lams).as_dict()
        art.sections["expansion_fit"] = fit
        rel = abs(fit["sigma2_fit"] - gk["sigma2"]) / gk["sigma2"] if gk["sigma2"] > 0 else math.inf
        art.check("eigenvalue_expansion_fit", "sigma^2 vs Green-Kubo (relative)", rel, f"< {tol['sigma2_rel']}",
                  rel < tol["sigma2_rel"])
    except DegenerateVariance as exc:
        art.sections["expansion_fit"] = {"degenerate": str(exc), "sigma2_fit": exc.sigma2}
        coboundary = abs(gk["sigma2"]) < 1e-6
        art.check("eigenvalue_expansion_fit", "degenerate variance matches a zero Green-Kubo sum", gk["sigma2"],
                  "|sigma^2_GK| < 1e-6", coboundary)

    df = tower.doeblin_fortet_check(T, opt["N"], K_cap=tol["K_cap"])
    art.sections["doeblin_fortet"] = {"tau": df.tau, "K": df.K, "N": df.N}
    art.check("doeblin_fortet_check", "tau < 1 with K <= K_cap", df.tau, f"tau < 1, K <= {tol['K_cap']}", df.passed)

    dec = tower.correlation_decay_check(T, fbar, fbar)
    art.sections["correlation_decay"] = {"tau": dec.tau, "C": dec.C, "superexponential": dec.superexponential}
    art.csv("correlations.csv", ["lag", "correlation"], list(zip(dec.lags.tolist(), dec.correlations.tolist())))
    art.figure("spectrum.png", plotting.spectrum_figure, ts, lams, fit)
    art.figure("correlations.png", plotting.decay_figure, dec.lags, dec.correlations)


SCENARIO_FUNCS = {
    "corridors": scenario_corridors,
    "simulate": scenario_simulate,
    "clt": scenario_clt,
    "lclt": scenario_lclt,
    "tails": scenario_tails,
    "recurrence": scenario_recurrence,
    "rw-oracle": scenario_rw_oracle,
    "spectrum": scenario_spectrum,
}


# ----------------------------------------------------------------------------
# run and replay


def run(cfg: ExperimentConfig, workers: int = 1, out=None) -> tuple:
    """Execute a scenario; returns (passed, manifest dict)."""
    outdir = Path(out if out is not None else cfg.out)
    art = Artifacts(outdir)
    SCENARIO_FUNCS[cfg.scenario](cfg, art, max(1, int(workers)))
    report = {"scenario": cfg.scenario, "config_hash": cfg.hash(), "seed": cfg.seed,
              "results": art.sections, "estimators": [r.as_dict() for r in art.reports], "passed": art.passed}
    art.json("report.json", report)
    lines = [f"scenario {cfg.scenario}  seed {cfg.seed}  config {cfg.hash()[:16]}"]
    lines += [r.table() for r in art.reports]
    lines.append("PASSED" if art.passed else "FAILED")
    (outdir / "summary.txt").write_text("\n".join(lines) + "\n")
    art.paths.append("summary.txt")
    manifest = {
        "scenario": cfg.scenario,
        "config": cfg.data | {"out": None},
        "config_hash": cfg.hash(),
        "seed": cfg.seed,
        "version": f"lorentzlab {__version__}",
        "artifacts": [{"path": p, "sha256": sha256(outdir / p)} for p in art.paths],
        "checks": _clean(art.checks),
        "passed": art.passed,
    }
    (outdir / "manifest.json").write_text(json.dumps(_clean(manifest), indent=2, sort_keys=True) + "\n")
    return art.passed, manifest


def _csv_rows(path):
    with open(path, newline="") as fh:
        return [[c.strip() for c in row] for row in csv.reader(fh)]


def replay(manifest_path, workers: int = 1, seed=None, keep=None) -> dict:
    """Re-run the manifest's config and compare every artifact.

    CSV files are compared cell by cell as printed; everything else byte for
    byte, including the regenerated manifest.  Raises :class:`Mismatch` with
    the first differing path.
    """
    manifest_path = Path(manifest_path)
    original_dir = manifest_path.parent
    man = json.loads(manifest_path.read_text())
    raw = dict(man["config"])
    raw.pop("out", None)
    if seed is not None:
        raw["seed"] = int(seed)
    cfg = parse_config(raw)
    tmp = Path(keep) if keep else Path(tempfile.mkdtemp(prefix="replay-"))
    try:
        run(cfg, workers, tmp)
        for art in man["artifacts"]:
            a, b = original_dir / art["path"], tmp / art["path"]
            if not b.exists() or not a.exists():
                raise Mismatch(art["path"], f"artifact missing: {art['path']}")
            if a.suffix == ".csv":
                same = _csv_rows(a) == _csv_rows(b)
            else:
                same = a.read_bytes() == b.read_bytes()
            if not same:
                raise Mismatch(art["path"])
        if (tmp / "manifest.json").read_bytes() != manifest_path.read_bytes():
            raise Mismatch("manifest.json")
    finally:
        if not keep:
            shutil.rmtree(tmp, ignore_errors=True)
    return {"status": "identical", "artifacts": len(man["artifacts"]), "config_hash": man["config_hash"]}


# ----------------------------------------------------------------------------
# entry point


def _parser():
    p = argparse.ArgumentParser(prog="lorentzlab", description="Periodic Lorentz process experiments.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=False):
        sp.add_argument("--config", required=config_required, help="YAML experiment config")
        sp.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
        sp.add_argument("--workers", type=int, default=1, help="worker threads (results do not depend on it)")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--n", type=int, nargs="+", help="step count or n schedule")
        sp.add_argument("--trajectories", type=int, help="number of trajectories")
        sp.add_argument("--k", type=int, help="lattice target for the walk oracle")
        sp.add_argument("--d", type=int, help="walk dimension")

    common(sub.add_parser("run", help="run the scenario named in the config"), config_required=True)
    for s in SCENARIOS:
        common(sub.add_parser(s, help=f"run the {s} scenario"))
    rp = sub.add_parser("replay", help="re-run a manifest and compare artifacts")
    rp.add_argument("manifest")
    rp.add_argument("--workers", type=int, default=1)
    rp.add_argument("--seed", type=int, help="override the seed (expected to mismatch)")
    return p


def build_config(args) -> ExperimentConfig:
    raw = load_raw(args.config) if args.config else {"scenario": args.command}
    if args.command != "run":
        if raw.get("scenario", args.command) != args.command:
            raise ConfigError("scenario", f"config is for {raw['scenario']}, not {args.command}")
        raw["scenario"] = args.command
    apply_overrides(raw, seed=args.seed, out=args.out, n=args.n, trajectories=args.trajectories, k=args.k, d=args.d)
    return parse_config(raw)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "replay":
            info = replay(args.manifest, args.workers, args.seed)
            print(f"replay {info['status']}: {info['artifacts']} artifacts, config {info['config_hash'][:16]}")
            return 0
        cfg = build_config(args)
        passed, manifest = run(cfg, args.workers)
        print((Path(cfg.out) / "summary.txt").read_text(), end="")
        print(f"artifacts written to {cfg.out}")
        return 0 if passed else 1
    except Mismatch as exc:
        print(f"mismatch: {exc.path}", file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except LorentzLabError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
