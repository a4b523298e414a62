"""Column contracts and validated readers for the simulator's CSV artifacts.

The plotter consumes three file families, all plain comma-separated text
with a single header row:

* field snapshots ``snapshot_NNNN.csv`` (one per output time),
* the per-run time-series ``diagnostics.csv``,
* the continuation summary ``report.csv`` (one row per sweep member).

Everything here validates against the column tuples below and converts to
``pandas.DataFrame``.  A file whose header does not match raises
:class:`SchemaError` naming the first offending column, so a renamed or
reordered column fails loudly instead of silently plotting the wrong
quantity.
"""

from __future__ import annotations

import io
import warnings
from pathlib import Path

import pandas as pd

#: Snapshot header for one-dimensional runs.
SNAPSHOT_1D = ("x", "rho", "Z", "rhostar", "u", "pi")

#: Snapshot header for two-dimensional runs (x-major row order).
SNAPSHOT_2D = ("x", "y", "rho", "Z", "rhostar", "u", "v", "pi")

#: Columns the energy/ledger figure needs from ``diagnostics.csv``.  The
#: file carries many more; extras are kept but never required.
DIAGNOSTICS_REQUIRED = (
    "time",
    "kinetic",
    "potential",
    "dissipation",
    "energy_residual",
    "defect_rho",
    "defect_Z",
)

#: Columns the decay figure needs from ``report.csv``.
REPORT_REQUIRED = ("epsilon", "int_pi_one_minus_Z")


class PlotInputError(Exception):
    """Raised when an input directory or file cannot be plotted."""


class SchemaError(PlotInputError):
    """Raised when a CSV header does not match its contract."""


def _split_header(line: str) -> list[str]:
    return [c.strip() for c in line.rstrip("\n").split(",")]


def _first_mismatch(found: list[str], expected: tuple[str, ...]) -> str:
    """Name the first column where *found* departs from *expected*."""
    for got, want in zip(found, expected):
        if got != want:
            return f"found {got!r} where {want!r} was expected"
    if len(found) < len(expected):
        return f"column {expected[len(found)]!r} is missing"
    return f"unexpected trailing column {found[len(expected)]!r}"


def read_snapshot(path: str | Path) -> pd.DataFrame:
    """Read one field snapshot, validating the exact column layout.

    Accepts either the 1D or the 2D layout; anything else raises
    :class:`SchemaError` with the first offending column named.
    """
    path = Path(path)
    try:
        with open(path) as fh:
            header = _split_header(fh.readline())
    except OSError as exc:
        raise PlotInputError(f"cannot read snapshot {path}: {exc}") from exc
    if header == [""]:
        raise SchemaError(f"{path} is empty")
    if tuple(header) not in (SNAPSHOT_1D, SNAPSHOT_2D):
        expected = SNAPSHOT_2D if "y" in header else SNAPSHOT_1D
        raise SchemaError(
            f"{path} does not match the snapshot layout: "
            + _first_mismatch(header, expected)
        )
    frame = pd.read_csv(path, dtype=float)
    if frame.empty:
        raise SchemaError(f"{path} has a header but no data rows")
    return frame


def read_diagnostics(path: str | Path) -> tuple[pd.DataFrame, bool]:
    """Read ``diagnostics.csv``, tolerating a truncated final row.

    A run that was killed mid-write can leave a short last line.  Rather
    than refuse the whole file, incomplete trailing rows are dropped with
    a warning and the complete prefix is returned.  The second element of
    the returned pair is True when anything was dropped.

    Raises
    ------
    SchemaError
        If a column required for plotting is absent, or no complete data
        row survives.
    """
    path = Path(path)
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise PlotInputError(f"cannot read diagnostics {path}: {exc}") from exc
    if not lines:
        raise SchemaError(f"{path} is empty")
    header = _split_header(lines[0])
    missing = [c for c in DIAGNOSTICS_REQUIRED if c not in header]
    if missing:
        raise SchemaError(f"{path} lacks required column {missing[0]!r}")
    width = len(header)
    complete, dropped = [], 0
    for line in lines[1:]:
        if not line.strip():
            continue
        if len(line.split(",")) == width:
            complete.append(line)
        else:
            dropped += 1
    if dropped:
        warnings.warn(
            f"{path} is truncated: dropped {dropped} incomplete row(s), "
            f"kept {len(complete)}",
            stacklevel=2,
        )
    if not complete:
        raise SchemaError(f"{path} has no complete data rows")
    frame = pd.read_csv(io.StringIO("\n".join([lines[0]] + complete)), dtype=float)
    return frame, bool(dropped)


def read_report(path: str | Path) -> pd.DataFrame:
    """Read a continuation ``report.csv`` (one row per sweep member)."""
    path = Path(path)
    try:
        with open(path) as fh:
            header = _split_header(fh.readline())
    except OSError as exc:
        raise PlotInputError(f"cannot read report {path}: {exc}") from exc
    missing = [c for c in REPORT_REQUIRED if c not in header]
    if missing:
        raise SchemaError(f"{path} lacks required column {missing[0]!r}")
    frame = pd.read_csv(path, dtype=float)
    return frame


def list_snapshots(run_dir: str | Path) -> list[Path]:
    """Snapshot files of a run directory in time order (name order)."""
    return sorted(Path(run_dir).glob("snapshot_*.csv"))
