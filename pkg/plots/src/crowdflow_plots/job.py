"""Plot jobs: figure selection, rendering and file output.

A :class:`PlotJob` binds an input directory to a figure selection, an
output directory and a format.  Jobs never write into the input
directory — inputs are read-only by contract — and rendering the same
inputs twice produces byte-identical files.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .figures import (
    SAVEFIG_KWARGS,
    plot_complementarity_decay,
    plot_energy_and_ledgers,
    plot_profiles,
)
from .schema import PlotInputError

#: Every figure family the package knows how to draw.
FIGURE_NAMES = ("profiles", "energy", "decay")

FORMATS = ("svg", "png")


def available_figures(input_dir: str | Path) -> tuple[str, ...]:
    """Figure families the artifacts in *input_dir* can support.

    A run directory (snapshots and/or diagnostics present) supports
    ``profiles`` and ``energy``; a continuation directory (``report.csv``
    present) supports ``decay``.  A directory may be both.
    """
    input_dir = Path(input_dir)
    found = []
    if any(input_dir.glob("snapshot_*.csv")):
        found.append("profiles")
    if (input_dir / "diagnostics.csv").is_file():
        found.append("energy")
    if (input_dir / "report.csv").is_file():
        found.append("decay")
    return tuple(found)


@dataclass
class PlotJob:
    """One rendering request.

    Parameters
    ----------
    input_dir:
        Run or continuation directory to read.
    out_dir:
        Where the figure files go; created if absent.  Must not be the
        input directory.
    figures:
        Families to draw, a subset of :data:`FIGURE_NAMES`.  Empty means
        "whatever the input supports".
    format:
        ``svg`` (vector, the default) or ``png`` (raster).
    """

    input_dir: Path
    out_dir: Path
    figures: tuple[str, ...] = field(default_factory=tuple)
    format: str = "svg"

    def __post_init__(self):
        self.input_dir = Path(self.input_dir)
        self.out_dir = Path(self.out_dir)
        self.figures = tuple(self.figures)


def run_job(job: PlotJob) -> list[Path]:
    """Render every figure the job selects; return the files written.

    Raises
    ------
    PlotInputError
        For an unknown figure or format name, a selection the input
        cannot support, an input directory with no plottable artifacts,
        or an output directory that would overwrite the inputs.
    FileNotFoundError
        If the input directory does not exist.
    """
    if not job.input_dir.is_dir():
        raise FileNotFoundError(f"input directory {job.input_dir} does not exist")
    if job.format not in FORMATS:
        raise PlotInputError(
            f"unknown format {job.format!r}; choose from {', '.join(FORMATS)}"
        )
    for name in job.figures:
        if name not in FIGURE_NAMES:
            raise PlotInputError(
                f"unknown figure {name!r}; choose from {', '.join(FIGURE_NAMES)}"
            )
    if job.out_dir.resolve() == job.input_dir.resolve():
        raise PlotInputError("output directory must differ from the input directory")

    supported = available_figures(job.input_dir)
    selected = job.figures or supported
    if not selected:
        raise PlotInputError(
            f"{job.input_dir} holds no snapshots, diagnostics.csv or report.csv"
        )
    unsupported = [n for n in selected if n not in supported]
    if unsupported:
        raise PlotInputError(
            f"{job.input_dir} has no artifacts for figure {unsupported[0]!r}"
        )

    rendered: list[tuple[str, object]] = []
    if "profiles" in selected:
        rendered.extend(plot_profiles(job.input_dir))
    if "energy" in selected:
        fig, _ = plot_energy_and_ledgers(job.input_dir)
        rendered.append(("energy_ledgers", fig))
    if "decay" in selected:
        rendered.append(("complementarity_decay",
                         plot_complementarity_decay(job.input_dir)))

    job.out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for name, fig in rendered:
        path = job.out_dir / f"{name}.{job.format}"
        fig.savefig(path, format=job.format, **SAVEFIG_KWARGS)
        written.append(path)
    return written
