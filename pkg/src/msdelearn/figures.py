"""Report figures rendered straight to files.

Every function here writes one PNG next to the delimited report output and
returns the path.  The Agg backend keeps rendering headless, and explicit
metadata keeps the bytes stable across repeated runs on one machine.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = [
    "parity_figure",
    "trajectory_overlay_figure",
    "wasserstein_curve_figure",
    "curve_comparison_figure",
]

_DPI = 120
_METADATA = {"Software": "msdelearn"}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.savefig(path, dpi=_DPI, metadata=_METADATA)
    plt.close(fig)
    return path


def parity_figure(true_values, fitted_values, path, title="drift parity",
                  max_points=5000):
    """Scatter fitted against true component values on occupation samples.

    Parameters
    ----------
    true_values, fitted_values : ndarray, shape (n, D_out)
        Matching evaluations of the reference and fitted maps.
    max_points : int
        Deterministic thinning stride is chosen so at most this many
        points per component are drawn.
    """
    true_values = np.asarray(true_values, dtype=float)
    fitted_values = np.asarray(fitted_values, dtype=float)
    if true_values.ndim == 1:
        true_values = true_values[:, None]
        fitted_values = fitted_values[:, None]
    stride = max(1, -(-true_values.shape[0] // max_points))
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    for j in range(true_values.shape[1]):
        ax.plot(true_values[::stride, j], fitted_values[::stride, j],
                ".", markersize=2, label=f"component {j}")
    lo = min(true_values.min(), fitted_values.min())
    hi = max(true_values.max(), fitted_values.max())
    pad = 0.05 * (hi - lo if hi > lo else 1.0)
    ax.plot([lo - pad, hi + pad], [lo - pad, hi + pad], "k--", linewidth=0.8)
    ax.set_xlabel("true value")
    ax.set_ylabel("fitted value")
    ax.set_title(title)
    if true_values.shape[1] <= 6:
        ax.legend(fontsize=8)
    fig.tight_layout()
    return _save(fig, path)


def trajectory_overlay_figure(reference, replayed, path, n_show=4,
                              coordinate=0, title="replayed trajectories"):
    """Overlay one coordinate of reference (solid) and replayed (dashed)
    paths driven by the same noise."""
    n_show = min(n_show, reference.M)
    fig, ax = plt.subplots(figsize=(6.0, 3.5))
    colors = plt.rcParams["axes.prop_cycle"].by_key()["color"]
    for m in range(n_show):
        c = colors[m % len(colors)]
        ax.plot(reference.times, reference.states[m, :, coordinate],
                color=c, linewidth=1.0)
        ax.plot(replayed.times, replayed.states[m, :, coordinate],
                color=c, linewidth=1.0, linestyle="--")
    ax.set_xlabel("t")
    ax.set_ylabel(f"state[{coordinate}]")
    ax.set_title(title + " (solid true, dashed fitted)")
    fig.tight_layout()
    return _save(fig, path)


def wasserstein_curve_figure(snapshots, path, reference=None,
                             title="snapshot transport distance"):
    """Plot per-snapshot distances; optional reference values as crosses.

    Parameters
    ----------
    snapshots : sequence of SnapshotDistance
    reference : sequence of (time, distance) pairs or None
    """
    times = [s.time for s in snapshots]
    dists = [s.distance for s in snapshots]
    fig, ax = plt.subplots(figsize=(5.0, 3.5))
    ax.plot(times, dists, "o-", label="this run")
    if reference:
        rt = [p[0] for p in reference]
        rd = [p[1] for p in reference]
        ax.plot(rt, rd, "kx", markersize=8, label="reference")
    ax.set_xlabel("t")
    ax.set_ylabel("W2")
    ax.set_ylim(bottom=0.0)
    ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    return _save(fig, path)


def curve_comparison_figure(grid, true_curve, fitted_curve, path,
                            xlabel="r", ylabel="value",
                            title="kernel comparison"):
    """Overlay a true and a fitted scalar function of one variable."""
    grid = np.asarray(grid, dtype=float)
    fig, ax = plt.subplots(figsize=(5.0, 3.5))
    if true_curve is not None:
        ax.plot(grid, np.asarray(true_curve, dtype=float), "-", label="true")
    ax.plot(grid, np.asarray(fitted_curve, dtype=float), "--", label="fitted")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    return _save(fig, path)
