"""Figures for experiment reports, rendered off-screen to PNG files.

Figures are drawn from the report's tables and results only, so a report
read back from JSON plots the same way as a fresh one.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# fixed metadata keeps the PNG bytes independent of the wall clock
_META = {"Software": None}


def _save(fig, out_dir, name):
    path = os.path.join(out_dir, name)
    fig.tight_layout()
    fig.savefig(path, dpi=110, metadata=_META)
    plt.close(fig)
    return path


def _columns(table, *names):
    idx = [table.header.index(n) for n in names]
    return [[r[i] for r in table.rows] for i in idx]


def plot_convergence(rep, out_dir):
    res = rep.results
    eps = np.array(res["epsilons"])
    med = np.array(res["medians"])
    ci = np.array(res["median_ci"])
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.6))
    ax = axes[0]
    ax.errorbar(eps, med, yerr=[med - ci[:, 0], ci[:, 1] - med], marker="o", capsize=3)
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("eps")
    ax.set_ylabel("median sup_t ||u_eps - ubar||")
    ax.invert_xaxis()
    ax = axes[1]
    for eta, pr in res["exceedance"].items():
        ax.plot(eps, pr, marker="s", label=f"eta = {float(eta):.3g}")
    ax.set_xscale("log")
    ax.invert_xaxis()
    ax.set_ylim(-0.02, 1.02)
    ax.set_xlabel("eps")
    ax.set_ylabel("P(error > eta)")
    ax.legend(fontsize=8)
    return [_save(fig, out_dir, "convergence.png")]


def plot_mixing(rep, out_dir):
    if "distance" not in rep.tables:
        return []
    t, d = (np.array(c, dtype=float) for c in _columns(rep.tables["distance"], "time",
                                                       "mean_distance"))
    fig, ax = plt.subplots(figsize=(5, 3.6))
    ax.semilogy(t, d, label="mean distance")
    res = rep.results
    lo, hi = res.get("fit_window", [t[0], t[-1]])
    keep = (t >= lo) & (t <= hi) & (d > 0)
    if keep.any() and np.isfinite(res["rate"]):
        t0 = t[keep][0]
        d0 = d[keep][0]
        ax.semilogy(t[keep], d0 * np.exp(-res["rate"] * (t[keep] - t0)), "--",
                    label=f"fit rate {res['rate']:.4g}")
    ax.set_xlabel("t")
    ax.set_ylabel("E ||v(t; y1) - v(t; y2)||")
    ax.legend(fontsize=8)
    return [_save(fig, out_dir, "mixing.png")]


def plot_moments(rep, out_dir):
    res = rep.results
    eps = np.array(res["epsilons"])
    fig, ax = plt.subplots(figsize=(5, 3.6))
    for p, d in res["slow"].items():
        ax.errorbar(eps, d["moment"], yerr=d["stderr"], marker="o", capsize=3,
                    label=f"p = {p}")
    ax.set_xscale("log")
    ax.invert_xaxis()
    ax.set_xlabel("eps")
    ax.set_ylabel("E sup_t ||u_eps||^p")
    ax.legend(fontsize=8)
    return [_save(fig, out_dir, "moments.png")]


def plot_khasminskii(rep, out_dir):
    tab = rep.tables["aux_error"]
    e, t, m = (np.array(c, dtype=float) for c in _columns(tab, *tab.header))
    fig, ax = plt.subplots(figsize=(5, 3.6))
    for val in np.unique(e)[::-1]:
        sel = e == val
        ax.plot(t[sel], m[sel], label=f"eps = {val:g}")
    ax.set_yscale("log")
    ax.set_xlabel("t")
    ax.set_ylabel(f"E ||vhat - v||^{rep.results['power']}")
    ax.legend(fontsize=8)
    return [_save(fig, out_dir, "khasminskii.png")]


def plot_time_average(rep, out_dir):
    tab = rep.tables["estimates"]
    state, T, mode, drift, se = _columns(tab, "state", "T_avg", "mode", "drift", "stderr")
    state, mode = np.array(state), np.array(mode, dtype=int)
    T, drift, se = (np.array(c, dtype=float) for c in (T, drift, se))
    fig, ax = plt.subplots(figsize=(5, 3.6))
    for s in dict.fromkeys(state):
        sel = (state == s) & (mode == 1)
        ax.errorbar(T[sel], drift[sel], yerr=2 * se[sel], marker="o", capsize=3, label=s)
    ax.set_xscale("log", base=2)
    ax.set_xlabel("averaging window T")
    ax.set_ylabel("mode-1 averaged drift (+-2 SE)")
    ax.legend(fontsize=8)
    return [_save(fig, out_dir, "time_average.png")]


def plot_almost_periodic(rep, out_dir):
    if "means" not in rep.tables:
        return []
    tab = rep.tables["means"]
    t, q, m, s = _columns(tab, *tab.header)
    q = np.array(q)
    t, m, s = (np.array(c, dtype=float) for c in (t, m, s))
    fig, ax = plt.subplots(figsize=(5, 3.6))
    for name in dict.fromkeys(q):
        sel = q == name
        ax.errorbar(t[sel], m[sel], yerr=2 * s[sel], fmt="o", capsize=3, label=name)
    ax.set_xlabel("t")
    ax.set_ylabel("mode-1 ensemble mean (+-2 SE)")
    ax.legend(fontsize=8)
    return [_save(fig, out_dir, "almost_periodic.png")]


def plot_simulation(rep, out_dir, max_paths=5):
    tab = rep.tables["trajectory"]
    path, t, comp, sup = _columns(tab, "path", "time", "component", "sup_norm")
    path, comp = np.array(path, dtype=int), np.array(comp)
    t, sup = np.array(t, dtype=float), np.array(sup, dtype=float)
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.6), sharex=True)
    for ax, c in zip(axes, ("slow", "fast")):
        for p in np.unique(path)[:max_paths]:
            sel = (path == p) & (comp == c)
            ax.plot(t[sel], sup[sel], lw=1, label=f"path {p}")
        ax.set_xlabel("t")
        ax.set_ylabel(f"sup-norm of {'u' if c == 'slow' else 'v'}")
    axes[0].legend(fontsize=8)
    return [_save(fig, out_dir, "trajectories.png")]


PLOTTERS = {
    "convergence": plot_convergence,
    "mixing": plot_mixing,
    "moments": plot_moments,
    "khasminskii": plot_khasminskii,
    "time_average": plot_time_average,
    "almost_periodic": plot_almost_periodic,
    "simulate": plot_simulation,
}


def plot_report(rep, out_dir):
    """Render the figures of ``rep`` into ``out_dir``; returns the written paths."""
    fn = PLOTTERS.get(rep.kind)
    return fn(rep, out_dir) if fn else []
