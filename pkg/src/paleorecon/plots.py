"""Static SVG charts for pipeline outputs.

Figures are written with a fixed hash salt and no date stamp so reruns
produce identical files.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_RC = {
    "svg.hashsalt": "paleorecon",
    "svg.fonttype": "none",
    "figure.figsize": (6.0, 3.6),
    "font.size": 9,
    "axes.linewidth": 0.6,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "lines.linewidth": 1.2,
}


def _save(fig, path):
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)
    return path


def variogram_figure(path, lags, gamma, model_lags, curves: dict):
    """Empirical semivariances with one or more model curves."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots()
        ax.plot(lags, gamma, "o", ms=3, color="0.3", label="empirical")
        for label, values in curves.items():
            ax.plot(model_lags, values, label=label)
        ax.set_xlabel("distance (km)")
        ax.set_ylabel("semivariance")
        ax.legend(frameon=False)
        return _save(fig, path)


def calibration_figure(path, y, g, label="g(y)"):
    with plt.rc_context(_RC):
        fig, ax = plt.subplots()
        ax.plot(y, g, color="C0", label=label)
        ax.set_xlabel("kriged index")
        ax.set_ylabel("temperature (°C)")
        return _save(fig, path)


def series_figure(path, years, mean, sd=None, points=None, reference=None, ylabel="temperature (°C)"):
    """A mean path with an optional +-1 sd band, scatter points and reference line."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots()
        if sd is not None:
            ax.fill_between(years, mean - sd, mean + sd, color="C0", alpha=0.25, lw=0, label="±1 sd")
        if points is not None:
            ax.plot(points[0], points[1], ".", ms=2.5, color="0.45", label="calibrated")
        if reference is not None:
            ax.plot(years, reference, color="C1", lw=0.9, label="prior mean")
        ax.plot(years, mean, color="C0", label="posterior mean")
        ax.set_xlabel("year")
        ax.set_ylabel(ylabel)
        ax.legend(frameon=False, fontsize=7)
        return _save(fig, path)


def prior_figure(path, years, mu, m):
    with plt.rc_context(_RC):
        fig, (a1, a2) = plt.subplots(2, 1, sharex=True, figsize=(6.0, 4.4))
        a1.plot(years, mu, color="C0")
        a1.set_ylabel("mean (°C)")
        a2.plot(years[1:], m, color="C2")
        a2.set_ylabel("AR coefficient")
        a2.set_xlabel("year")
        return _save(fig, path)


def correlation_figure(path, locations, table: dict):
    """Grouped bars of correlations per method."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots()
        methods = list(table)
        width = 0.8 / max(len(methods), 1)
        x = np.arange(len(locations))
        for k, name in enumerate(methods):
            ax.bar(x + (k - (len(methods) - 1) / 2) * width, table[name], width, label=name)
        ax.set_xticks(x, locations)
        ax.set_ylabel("correlation with stations")
        ax.axhline(0, color="0.5", lw=0.5)
        ax.legend(frameon=False, fontsize=7)
        return _save(fig, path)
