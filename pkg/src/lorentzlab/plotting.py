"""Report figures.  Everything renders off-screen to PNG with fixed metadata."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.figsize": (5.0, 3.6),
    "figure.dpi": 100,
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "lines.linewidth": 1.2,
    "lines.markersize": 4,
    "savefig.bbox": "tight",
}


def _save(fig, path):
    fig.savefig(path, format="png", metadata={"Software": None})
    plt.close(fig)
    return str(path)


def corridor_figure(lattice, corridors, path, extent=2):
    """Scatterers over a few cells with the corridor strips of each class."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.2, 4.2))
        for i in range(-1, extent + 1):
            for j in range(-1, extent + 1):
                for c, r in zip(lattice.centers, lattice.radii):
                    ax.add_patch(plt.Circle((c[0] + i, c[1] + j), r, color="0.35", lw=0))
        for cor, color in zip(corridors, plt.rcParams["axes.prop_cycle"].by_key()["color"]):
            u = cor.unit_direction
            nvec = cor.unit_normal
            for off in (cor.anchor, cor.anchor + cor.width):
                p = off * nvec
                ax.axline(tuple(p), tuple(p + u), color=color, lw=0.9)
        ax.set_xlim(0, extent)
        ax.set_ylim(0, extent)
        ax.set_aspect("equal")
        ax.set_title(f"{len(corridors)} corridor classes")
        return _save(fig, path)


def variance_figure(ns, values, path, ylabel="Var(S_n)/n", title=None):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot(ns, values, "o-")
        ax.set_xscale("log")
        ax.set_xlabel("n")
        ax.set_ylabel(ylabel)
        if title:
            ax.set_title(title)
        return _save(fig, path)


def survival_figure(x, survival, path, fit=None):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        m = survival > 0
        ax.loglog(x[m], survival[m], ".", label="empirical")
        if fit is not None:
            xs = np.array([fit["u_min"], fit["u_max"]])
            ax.loglog(xs, fit["C"] * xs ** (-fit["alpha"]), "-", label=f"alpha={fit['alpha']:.3f}")
            ax.legend()
        ax.set_xlabel("u")
        ax.set_ylabel("P(|kappa| > u)")
        return _save(fig, path)


def partial_sum_figure(ns, sums, path, exact=None):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot(ns, sums, "o-", label="estimate")
        if exact is not None:
            ax.plot(ns, exact, "--", label="exact")
            ax.legend()
        ax.set_xscale("log")
        ax.set_xlabel("n")
        ax.set_ylabel("sum of return probabilities")
        return _save(fig, path)


def pmf_figure(pmf, path, n):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        arr = pmf.array
        if arr.ndim == 1:
            ks = pmf.origin[0] + np.arange(len(arr))
            m = arr > 0
            ax.plot(ks[m], arr[m], "-")
            ax.set_xlabel("k")
            ax.set_ylabel("P(W_n = k)")
        else:
            mid = arr[:, :, arr.shape[2] // 2] if arr.ndim == 3 else arr
            ax.imshow(mid.T, origin="lower", cmap="viridis")
            ax.set_xlabel("k1")
            ax.set_ylabel("k2")
        ax.set_title(f"n = {n}")
        return _save(fig, path)


def spectrum_figure(ts, lams, fit, path):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ts = np.asarray(ts)
        ax.plot(ts, np.abs(lams), "o", label="|lambda_t|")
        if fit is not None:
            ax.plot(ts, np.exp(-fit["sigma2_fit"] * ts**2 / 2), "-", label="exp(-sigma^2 t^2/2)")
        ax.set_xlabel("t")
        ax.legend()
        return _save(fig, path)


def decay_figure(lags, corr, path):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        m = np.abs(corr) > 0
        ax.semilogy(np.asarray(lags)[m], np.abs(corr)[m], "o-")
        ax.set_xlabel("lag")
        ax.set_ylabel("|Corr(n)|")
        return _save(fig, path)


def scatter_figure(S, path, title=None, limit=5000):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.0, 4.0))
        S = np.asarray(S)[:limit]
        ax.plot(S[:, 0], S[:, 1], ".", ms=1.5, alpha=0.5)
        ax.set_aspect("equal")
        if title:
            ax.set_title(title)
        return _save(fig, path)
