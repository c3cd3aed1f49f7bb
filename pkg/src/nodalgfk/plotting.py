"""Plot output for a fitted ``ln(zt)/t`` series.

Two whitespace-delimited files are always written: the points with their
error bars (``t  y  sigma``) and a dense sampling of the fitted curve
(``t  a + b/t``).  A PNG figure is optional and needs matplotlib.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np


def curve(fit, n: int = 200, t_lo: float | None = None, t_hi: float | None = None):
    t_lo = min(fit.t) if t_lo is None else t_lo
    t_hi = max(fit.t) if t_hi is None else t_hi
    t = np.linspace(t_lo, t_hi, n)
    return t, fit.a + fit.b / t


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def write_plot_data(fit, points, stem) -> tuple:
    """Write ``<stem>.points.dat`` and ``<stem>.fit.dat``; return both paths."""
    stem = Path(stem)
    pts = stem.with_name(stem.name + ".points.dat")
    fitp = stem.with_name(stem.name + ".fit.dat")
    lines = ["# t ln_zt_over_t sigma"]
    lines += [f"{p.t:g} {p.y:.9f} {p.sigma:.6g}" for p in points]
    _atomic_write(pts, "\n".join(lines) + "\n")
    t, y = curve(fit)
    lines = ["# t a_plus_b_over_t"] + [f"{ti:.6f} {yi:.9f}" for ti, yi in zip(t, y)]
    _atomic_write(fitp, "\n".join(lines) + "\n")
    return pts, fitp


def render_figure(fit, points, path, title: str | None = None):
    """Error-bar plot of the points with the fitted curve, saved to ``path``."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6.0, 6.0 * 0.618))
    ax.errorbar(
        [p.t for p in points],
        [p.y for p in points],
        yerr=[p.sigma for p in points],
        fmt="o",
        mfc="none",
        color="k",
        capsize=3,
        label="walk",
    )
    t, y = curve(fit)
    ax.plot(t, y, "-", color="C0", label=f"a + b/t, t >= {fit.t_min:g}")
    ax.set_xlabel("t")
    ax.set_ylabel("ln(z_t) / t")
    if title:
        ax.set_title(title)
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return Path(path)
