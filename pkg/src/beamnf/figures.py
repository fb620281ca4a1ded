"""Figure rendering for experiment outputs.

Every helper takes the data already written to the neighbouring CSV and
a target path, renders a single PNG with the Agg backend (no display
required), and returns the path.  Figures are diagnostic companions to
the delimited files, not a replacement for them.
"""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = [
    "audit_figure",
    "mass_scan_figure",
    "bnf_figure",
    "lifespan_figure",
    "fit_figure",
    "predict_times_figure",
    "trajectory_figure",
]

_DPI = 130


def _save(fig, path) -> str:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return str(path)


def audit_figure(rows, path) -> str:
    """Histogram of divisor-to-bound ratios, split by support size."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    by_d = {}
    for row in rows:
        by_d.setdefault(row.d, []).append(math.log10(row.ratio))
    for d in sorted(by_d):
        ax.hist(by_d[d], bins=40, alpha=0.6, label=f"d = {d}")
    ax.axvline(0.0, color="k", lw=1.0, ls="--")
    ax.set_xlabel(r"$\log_{10}\,(\min_m |\omega\cdot\ell| \,/\, \mathrm{bound})$")
    ax.set_ylabel("count")
    ax.set_title("divisor audit: margin above the lower bound")
    ax.legend()
    return _save(fig, path)


def mass_scan_figure(grid, best, path) -> str:
    """Worst divisor over the family as a function of the mass."""
    fig, ax = plt.subplots(figsize=(7.0, 4.0))
    ax.semilogy(np.asarray(grid), np.asarray(best), lw=0.8)
    ax.set_xlabel("mass m")
    ax.set_ylabel(r"$\min_{\ell} |\omega(m)\cdot\ell|$")
    ax.set_title("smallest divisor across the lattice family")
    ax.grid(True, which="both", alpha=0.3)
    return _save(fig, path)


def bnf_figure(report, path) -> str:
    """Per-step generator norms against the gate budgets."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ks = [s.k for s in report.steps]
    if ks:
        gen = [max(s.generator_norm_upper, 1e-300) for s in report.steps]
        bud = [max(s.delta_k, 1e-300) for s in report.steps]
        ax.semilogy(ks, gen, "o-", label=r"upper $|S_{k+1}|$")
        ax.semilogy(ks, bud, "s--", label=r"budget $\delta_k$")
    ax.set_xlabel("step k")
    ax.set_ylabel("weighted majorant norm")
    title = "normal form iteration"
    if report.rejected:
        title += " (gate rejected)"
    ax.set_title(title)
    ax.legend()
    ax.grid(True, which="both", alpha=0.3)
    return _save(fig, path)


def lifespan_figure(rows, path) -> str:
    """Escape time against amplitude on log-log axes.

    Censored runs (no escape before the horizon) are drawn as open
    upward triangles: lower bounds, not measurements.
    """
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    esc = [(r["delta"], r["escape_time"]) for r in rows if not r["censored"]]
    cen = [(r["delta"], r["escape_time"]) for r in rows if r["censored"]]
    if esc:
        d, t = zip(*esc)
        ax.loglog(d, t, "o", color="C0", label="escape")
    if cen:
        d, t = zip(*cen)
        ax.loglog(d, t, "^", mfc="none", color="C3", label="censored (lower bound)")
    deltas = [r["delta"] for r in rows]
    if deltas:
        ref = np.array(sorted(deltas))
        ax.loglog(ref, 1.0 / ref, "k:", lw=1.0, label=r"$\delta^{-1}$")
    ax.set_xlabel(r"amplitude $\delta$")
    ax.set_ylabel("escape time")
    ax.set_title("stability time against amplitude")
    ax.legend()
    ax.grid(True, which="both", alpha=0.3)
    return _save(fig, path)


def fit_figure(series, fit, path) -> str:
    """Data points with the fitted power law overlaid."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    esc = [(d, T) for d, T, c in series if not c]
    cen = [(d, T) for d, T, c in series if c]
    if esc:
        d, t = zip(*esc)
        ax.loglog(d, t, "o", color="C0", label="data")
        ref = np.array(sorted(d))
        ax.loglog(
            ref,
            np.exp(fit.intercept) * ref ** (-fit.slope),
            "C1-",
            label=rf"$T \propto \delta^{{-{fit.slope:.3g}}}$ ($R^2$={fit.r_squared:.4f})",
        )
    if cen:
        d, t = zip(*cen)
        ax.loglog(d, t, "^", mfc="none", color="C3", label="censored")
    ax.set_xlabel(r"amplitude $\delta$")
    ax.set_ylabel("escape time")
    ax.set_title("power-law fit of the stability time")
    ax.legend()
    ax.grid(True, which="both", alpha=0.3)
    return _save(fig, path)


def predict_times_figure(rows, path) -> str:
    """Predicted stability-time curves for the three regimes."""
    fig, ax = plt.subplots(figsize=(6.5, 4.2))
    labels = {
        "T_sobolev": "fixed regularity",
        "T_coro": "optimized regularity",
        "T_subexp": "sub-exponential",
    }
    for key, style in zip(labels, ("C0o-", "C1s-", "C2^-")):
        pts = [
            (r["delta"], r[key]["log10_time"])
            for r in rows
            if r[key]["within_threshold"] and not isinstance(r[key]["log10_time"], str)
        ]
        if pts:
            d, lt = zip(*pts)
            ax.plot(np.log10(np.asarray(d)), lt, style, label=labels[key])
    ax.set_xlabel(r"$\log_{10}\delta$")
    ax.set_ylabel(r"$\log_{10} T$")
    ax.set_title("predicted stability times")
    ax.legend()
    ax.grid(True, alpha=0.3)
    return _save(fig, path)


def trajectory_figure(result, path) -> str:
    """Weighted norm along one trajectory, with the escape level marked."""
    fig, ax = plt.subplots(figsize=(6.5, 4.0))
    ax.plot(result.times, result.norms, lw=0.9)
    ax.axhline(2.0 * result.delta, color="C3", ls="--", lw=1.0, label=r"$2\delta$")
    ax.set_xlabel("t")
    ax.set_ylabel("weighted norm")
    ax.set_title("trajectory norm history")
    ax.legend()
    ax.grid(True, alpha=0.3)
    return _save(fig, path)
