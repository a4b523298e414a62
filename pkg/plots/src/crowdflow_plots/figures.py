"""The three figure families built from run and report artifacts.

Everything renders through :class:`matplotlib.figure.Figure` directly —
no pyplot, no global figure registry — so repeated calls are independent
and renders are reproducible byte for byte.  ``svg.hashsalt`` is pinned at
import time for the same reason: without it the SVG writer salts its
element ids with the process id.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib
import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

from .schema import (
    PlotInputError,
    list_snapshots,
    read_diagnostics,
    read_report,
    read_snapshot,
)

matplotlib.rcParams["svg.hashsalt"] = "crowdflow-plots"

#: Keyword arguments shared by every ``savefig`` call; ``Date: None``
#: strips the timestamp the SVG writer would otherwise embed.
SAVEFIG_KWARGS = {"metadata": {"Date": None}, "dpi": 130}


def _figure(figsize: tuple[float, float]) -> Figure:
    fig = Figure(figsize=figsize, constrained_layout=True)
    FigureCanvasAgg(fig)
    return fig


def _midline_cut(frame):
    """Reduce a 2D snapshot to the row of cells nearest mid-height."""
    y = frame["y"].to_numpy()
    mid = y[np.argmin(np.abs(y - 0.5 * (y.min() + y.max())))]
    cut = frame[frame["y"] == mid]
    return cut.sort_values("x"), mid


def plot_profiles(run_dir: str | Path) -> list[tuple[str, Figure]]:
    """One figure per snapshot: density, congestion ratio and capacity.

    Each figure overlays rho, Z and rhostar against x with the congestion
    level Z = 1 marked as a dashed line.  Two-dimensional runs are shown
    along the horizontal midline.

    Returns ``(name, figure)`` pairs where *name* is the snapshot stem
    (``snapshot_0003`` → ``profiles_0003``).

    Raises
    ------
    PlotInputError
        If *run_dir* contains no snapshot files.
    """
    run_dir = Path(run_dir)
    paths = list_snapshots(run_dir)
    if not paths:
        raise PlotInputError(f"no snapshot files in {run_dir}")
    out = []
    for path in paths:
        frame = read_snapshot(path)
        title = path.stem.replace("snapshot_", "output ")
        if "y" in frame.columns:
            frame, mid = _midline_cut(frame)
            title += f" (midline y = {mid:g})"
        fig = _figure((6.4, 4.0))
        ax = fig.subplots()
        x = frame["x"].to_numpy()
        ax.plot(x, frame["rho"], label="rho", color="tab:blue")
        ax.plot(x, frame["rhostar"], label="rhostar", color="tab:green")
        ax.plot(x, frame["Z"], label="Z", color="tab:red")
        ax.axhline(1.0, color="black", linestyle="--", linewidth=1.0,
                   label="congestion level")
        ax.set_xlabel("x")
        ax.set_title(title)
        ax.legend(loc="best", fontsize="small")
        out.append((path.stem.replace("snapshot", "profiles"), fig))
    return out


def plot_energy_and_ledgers(run_dir: str | Path) -> tuple[Figure, bool]:
    """Energy budget, residual trace and mass-ledger defects for one run.

    Three stacked panels over time: the kinetic/potential split with the
    accumulated dissipation on top, the energy-inequality residual, and
    the mass-ledger defects for rho and Z.  The zero line is emphasised on
    the last two panels — the residual and the defects are the quantities
    whose sign carries the guarantee.

    Returns the figure and a flag that is True when the diagnostics file
    was truncated and only its complete prefix was plotted.

    Raises
    ------
    PlotInputError
        If ``diagnostics.csv`` is absent from *run_dir*.
    """
    run_dir = Path(run_dir)
    path = run_dir / "diagnostics.csv"
    if not path.is_file():
        raise PlotInputError(f"no diagnostics.csv in {run_dir}")
    frame, truncated = read_diagnostics(path)
    t = frame["time"].to_numpy()

    fig = _figure((6.4, 7.2))
    axes = fig.subplots(3, 1, sharex=True)

    ax = axes[0]
    ax.stackplot(t, frame["kinetic"], frame["potential"], frame["dissipation"],
                 labels=("kinetic", "potential", "dissipated"),
                 colors=("tab:blue", "tab:orange", "tab:gray"), alpha=0.8)
    ax.plot(t, frame["kinetic"] + frame["potential"], color="black",
            linewidth=1.2, label="energy")
    ax.set_ylabel("energy")
    ax.legend(loc="best", fontsize="small")
    title = "energy budget"
    if truncated:
        title += " (truncated diagnostics: partial data)"
    ax.set_title(title)

    ax = axes[1]
    ax.axhline(0.0, color="black", linewidth=1.4, zorder=1)
    ax.plot(t, frame["energy_residual"], color="tab:red", zorder=2)
    ax.set_ylabel("energy residual")

    ax = axes[2]
    ax.axhline(0.0, color="black", linewidth=1.4, zorder=1)
    ax.plot(t, frame["defect_rho"], color="tab:blue", label="rho ledger", zorder=2)
    ax.plot(t, frame["defect_Z"], color="tab:green", label="Z ledger", zorder=2)
    ax.set_ylabel("mass defect")
    ax.set_xlabel("time")
    ax.legend(loc="best", fontsize="small")
    return fig, truncated


def plot_complementarity_decay(report: str | Path) -> Figure:
    """Integrated complementarity defect against epsilon, log-log.

    *report* is a continuation directory (containing ``report.csv``) or
    the file itself.  Members are ordered by decreasing epsilon and the
    figure is annotated with whether the defect decreases monotonically
    along the sweep.

    Raises
    ------
    PlotInputError
        With fewer than two sweep members there is no trend to show.
    """
    report = Path(report)
    path = report / "report.csv" if report.is_dir() else report
    if not path.is_file():
        raise PlotInputError(f"no report.csv at {path}")
    frame = read_report(path)
    if len(frame) < 2:
        raise PlotInputError(
            f"decay figure needs at least 2 sweep members, found {len(frame)}"
        )
    frame = frame.sort_values("epsilon", ascending=False)
    eps = frame["epsilon"].to_numpy()
    defect = frame["int_pi_one_minus_Z"].to_numpy()
    monotone = bool(np.all(np.diff(defect) < 0)) if len(defect) > 1 else True

    fig = _figure((5.6, 4.2))
    ax = fig.subplots()
    ax.loglog(eps, defect, marker="o", color="tab:purple")
    ax.invert_xaxis()
    ax.set_xlabel("epsilon (stiff limit to the right)")
    ax.set_ylabel("integrated pi(1 - Z)")
    ax.set_title("complementarity defect along the sweep")
    note = "monotone decrease" if monotone else "NOT monotone"
    ax.annotate(note, xy=(0.03, 0.06), xycoords="axes fraction",
                fontsize="small",
                color="tab:green" if monotone else "tab:red")
    return fig
