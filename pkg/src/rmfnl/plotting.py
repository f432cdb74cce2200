"""Figures for fit traces and benchmark tables.

Everything here draws on a bare ``matplotlib.figure.Figure``, so no GUI
backend or global pyplot state is involved and the functions are safe to
call from worker processes.
"""

from __future__ import annotations

from collections import defaultdict

import numpy as np
from matplotlib.figure import Figure

__all__ = ["plot_trace", "plot_convergence", "plot_bench"]

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
}


def _figure(width=4.5, height=3.2):
    import matplotlib as mpl

    with mpl.rc_context(STYLE):
        fig = Figure(figsize=(width, height), dpi=120)
        ax = fig.add_subplot(1, 1, 1)
    return fig, ax


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path)
    return path


def plot_trace(trace, path, title=None):
    """Objective against outer iteration; a warm-up stage is drawn first."""
    fig, ax = _figure()
    offset = 0
    if trace.warmup is not None and len(trace.warmup):
        h = trace.warmup.objectives
        ax.plot(np.arange(h.size), h, "o-", ms=2.5, lw=1, color="0.6", label="warm-up (l1)")
        offset = h.size - 1
    h = trace.objectives
    ax.plot(offset + np.arange(h.size), h, "o-", ms=2.5, lw=1, color="C0", label="main loss")
    ax.set_xlabel("outer iteration")
    ax.set_ylabel("objective")
    if np.all(np.concatenate([h, trace.warmup.objectives if trace.warmup else []]) > 0):
        ax.set_yscale("log")
    if trace.warmup is not None:
        ax.legend(frameon=False)
    if title:
        ax.set_title(title)
    return _save(fig, path)


def plot_convergence(long_rows, path, metric="objective"):
    """One line per run from long-format ``(run, iter, metric, value)`` rows."""
    series = defaultdict(list)
    for run, it, name, value in long_rows:
        if name == metric:
            series[run].append((int(it), float(value)))
    fig, ax = _figure()
    methods = sorted({run.split("/")[0] for run in series})
    colour = {m: f"C{i % 10}" for i, m in enumerate(methods)}
    seen = set()
    for run in sorted(series):
        pts = sorted(series[run])
        method = run.split("/")[0]
        ax.plot([p[0] for p in pts], [p[1] for p in pts], lw=1, color=colour[method],
                label=None if method in seen else method)
        seen.add(method)
    ax.set_xlabel("outer iteration")
    ax.set_ylabel(metric)
    if series and all(v > 0 for pts in series.values() for _, v in pts):
        ax.set_yscale("log")
    if seen:
        ax.legend(frameon=False)
    return _save(fig, path)


def plot_bench(summary_rows, path, metric="rmse"):
    """Bar chart of mean metric with one-std error bars per method."""
    rows = [r for r in summary_rows if np.isfinite(r.get(f"{metric}_mean", np.nan))]
    fig, ax = _figure(width=max(3.0, 0.8 * len(rows) + 1.5))
    x = np.arange(len(rows))
    ax.bar(x, [r[f"{metric}_mean"] for r in rows], yerr=[r[f"{metric}_std"] for r in rows],
           color="0.75", edgecolor="0.2", capsize=3)
    ax.set_xticks(x)
    ax.set_xticklabels([r["method"] for r in rows])
    ax.set_ylabel(f"test {metric.upper()}")
    if rows and max(r[f"{metric}_mean"] for r in rows) > 20 * min(r[f"{metric}_mean"] for r in rows):
        ax.set_yscale("log")
    return _save(fig, path)
