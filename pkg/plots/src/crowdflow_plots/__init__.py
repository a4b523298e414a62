"""Figure generation for crowdflow run and continuation artifacts.

This package is deliberately decoupled from the simulator: it reads only
the documented CSV artifacts (snapshots, diagnostics.csv, report.csv) and
never imports the solver.
"""

from .figures import (
    plot_complementarity_decay,
    plot_energy_and_ledgers,
    plot_profiles,
)
from .job import FIGURE_NAMES, FORMATS, PlotJob, available_figures, run_job
from .schema import (
    DIAGNOSTICS_REQUIRED,
    REPORT_REQUIRED,
    SNAPSHOT_1D,
    SNAPSHOT_2D,
    PlotInputError,
    SchemaError,
    list_snapshots,
    read_diagnostics,
    read_report,
    read_snapshot,
)

__version__ = "0.1.0"

__all__ = [
    "DIAGNOSTICS_REQUIRED",
    "FIGURE_NAMES",
    "FORMATS",
    "PlotInputError",
    "PlotJob",
    "REPORT_REQUIRED",
    "SNAPSHOT_1D",
    "SNAPSHOT_2D",
    "SchemaError",
    "available_figures",
    "list_snapshots",
    "plot_complementarity_decay",
    "plot_energy_and_ledgers",
    "plot_profiles",
    "read_diagnostics",
    "read_report",
    "read_snapshot",
    "run_job",
    "__version__",
]
