"""Matplotlib figures for the CLI report path.  Everything renders off-screen to files."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .readout import double_exp, interference  # noqa: E402

STYLE = {
    "figure.figsize": (5.0, 3.4),
    "figure.dpi": 120,
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.linewidth": 0.8,
    "legend.fontsize": 8,
    "legend.frameon": False,
    "lines.linewidth": 1.3,
    "lines.markersize": 3.5,
    "xtick.direction": "in",
    "ytick.direction": "in",
    "xtick.top": True,
    "ytick.right": True,
    "savefig.bbox": "tight",
}


def _save(fig, path, tag: str | None):
    # fixed metadata keeps repeated runs byte-identical
    meta = {"Software": None}
    if tag:
        meta["Description"] = tag
    fig.savefig(path, metadata=meta)
    plt.close(fig)
    return path


def ringdown_figure(taus, nbar, fit=None, path="ringdown.png", tag=None, pn=None):
    with plt.rc_context(STYLE):
        ncols = 2 if pn is not None else 1
        fig, axes = plt.subplots(1, ncols, figsize=(5.0 * ncols, 3.4), squeeze=False)
        ax = axes[0, 0]
        t_us = np.asarray(taus) * 1e6
        ax.plot(t_us, nbar, "o", color="k", label="simulation")
        if fit is not None:
            tt = np.linspace(0, np.max(taus), 400)
            p = fit.params
            ax.plot(tt * 1e6, double_exp(tt, p["a1"], p["kappa1"], p["a2"], p["kappa2"]), color="C3", label="double exponential")
        ax.set_yscale("log")
        ax.set_xlabel("delay (us)")
        ax.set_ylabel("mean phonon number")
        ax.legend()
        if pn is not None:
            ax2 = axes[0, 1]
            im = ax2.imshow(
                np.asarray(pn).T, aspect="auto", origin="lower", cmap="viridis",
                extent=(t_us[0], t_us[-1], -0.5, np.asarray(pn).shape[1] - 0.5),
            )
            ax2.set_xlabel("delay (us)")
            ax2.set_ylabel("Fock level n")
            fig.colorbar(im, ax=ax2, label="P(n)")
        return _save(fig, path, tag)


def fringe_figure(phis, nbar_grid, taus, fits=None, path="fringes.png", tag=None, max_curves=6):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        idx = np.unique(np.linspace(0, len(taus) - 1, min(max_curves, len(taus))).astype(int))
        colors = plt.cm.viridis(np.linspace(0, 0.9, idx.size))
        pp = np.linspace(0, 2 * np.pi, 200)
        for c, i in zip(colors, idx):
            ax.plot(phis, nbar_grid[i], "o", color=c, label=f"{taus[i] * 1e6:.2f} us")
            if fits is not None and fits[i] is not None:
                p = fits[i].params
                ax.plot(pp, interference(pp, p["C"], p["phi0"], p["nbar_off"]), color=c)
        ax.set_xlabel("second pulse phase (rad)")
        ax.set_ylabel("mean phonon number")
        ax.legend(ncol=2)
        return _save(fig, path, tag)


def envelope_figure(taus, amplitudes, fit=None, path="t2m.png", tag=None):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot(np.asarray(taus) * 1e6, amplitudes, "o", color="k")
        if fit is not None:
            tt = np.linspace(0, np.max(taus), 200)
            ax.plot(tt * 1e6, fit.params["C0"] * np.exp(-tt * fit.params["gamma_2m"]), color="C3",
                    label=f"T2m = {fit.params['T2m'] * 1e6:.2f} us")
            ax.legend()
        ax.set_xlabel("delay (us)")
        ax.set_ylabel("fringe amplitude")
        return _save(fig, path, tag)


def ramsey_figure(times, values, model_values=None, probs=None, sigmas=None, path="ramsey.png", tag=None):
    with plt.rc_context(STYLE):
        fig, (ax, ax2) = plt.subplots(1, 2, figsize=(8.0, 3.2))
        t_ns = np.asarray(times) * 1e9
        ax.plot(t_ns, values, ".", color="k", label="signal")
        if model_values is not None:
            ax.plot(t_ns, model_values, color="C3", label="fit")
        ax.set_xlabel("Ramsey delay (ns)")
        ax.set_ylabel("signal")
        ax.legend()
        if probs is not None:
            n = np.arange(len(probs))
            ax2.bar(n, probs, yerr=sigmas, color="C0", capsize=2)
            ax2.set_xlabel("Fock level n")
            ax2.set_ylabel("P(n)")
        return _save(fig, path, tag)


def histogram_figure(edges, counts, xlabel, path, tag=None, marker=None):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        edges = np.asarray(edges)
        ax.stairs(counts, edges, fill=True, color="C0", alpha=0.7)
        if marker is not None:
            ax.axvline(marker, color="C3")
        ax.set_xlabel(xlabel)
        ax.set_ylabel("count")
        if edges.size > 1 and edges[0] > 0 and edges[-1] / edges[0] > 20:
            ax.set_xscale("log")
        return _save(fig, path, tag)


def admittance_figure(freq_hz, y, path="admittance.png", tag=None):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        y = np.asarray(y)
        finite = np.isfinite(y)
        f = np.asarray(freq_hz)[finite] / 1e9
        ax.semilogy(f, np.abs(y[finite]), color="k")
        ax.set_xlabel("frequency (GHz)")
        ax.set_ylabel("|Y| (S)")
        return _save(fig, path, tag)
