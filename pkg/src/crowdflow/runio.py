"""File artifacts for runs and continuation sweeps.

Everything a run leaves behind goes through this module: per-output-time
field snapshots, the diagnostics table, the scenario echo, the validation
summary, continuation reports, and (for 2D runs) optional legacy-VTK dumps.
All numbers are written with 17 significant digits so every ledger identity
can be re-checked from the files alone, and nothing time- or host-dependent
is ever written — two identical runs produce byte-identical artifacts.

A run owns its output directory exclusively while it is writing: a lock
file is taken on entry and dropped on exit, and a second writer targeting
the same directory fails up front with :class:`OutputLocked`.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from .continuation import CAUCHY_ROW_FIELDS, LIMIT_ROW_FIELDS, LimitReport
from .diagnostics import cell_velocity
from .errors import OutputLocked
from .pressure import PressureParams
from .runner import RECORD_FIELDS, DiagnosticsRecord
from .scenario import ScenarioSpec, serialize_scenario
from .solver import State, law_pressure

LOCK_NAME = ".lock"
ROOT_ENV = "CROWDFLOW_OUTPUT_ROOT"

SNAPSHOT_COLUMNS_1D = ("x", "rho", "Z", "rhostar", "u", "pi")
SNAPSHOT_COLUMNS_2D = ("x", "y", "rho", "Z", "rhostar", "u", "v", "pi")


def _fmt(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return "%.17g" % float(value)


def output_root() -> Path:
    """Base directory for relative output paths (env override supported)."""
    return Path(os.environ.get(ROOT_ENV, "."))


def resolve_output_dir(spec: ScenarioSpec, override: str | None = None) -> Path:
    """Where a run for ``spec`` writes: CLI override beats the config value."""
    raw = Path(override if override is not None else spec.directory)
    return raw if raw.is_absolute() else output_root() / raw


def write_snapshot(path, state: State, params: PressureParams) -> None:
    """One CSV of every cell-centered field at one output time.

    Velocity components are averaged from faces to centers so each row is
    one cell; ``pi`` is the pressure law applied to the Z column.
    """
    grid = state.grid
    vel = cell_velocity(grid, state.u)
    pi = law_pressure(state.Z, params)
    with open(path, "w", newline="\n") as fh:
        if grid.dimension == 1:
            fh.write(",".join(SNAPSHOT_COLUMNS_1D) + "\n")
            x = grid.centers(0)
            for i in range(grid.cells[0]):
                row = (x[i], state.rho[i], state.Z[i], state.rhostar[i],
                       vel[0][i], pi[i])
                fh.write(",".join(_fmt(v) for v in row) + "\n")
        else:
            fh.write(",".join(SNAPSHOT_COLUMNS_2D) + "\n")
            x = grid.centers(0)
            y = grid.centers(1)
            nx, ny = grid.cells
            for i in range(nx):
                for j in range(ny):
                    row = (x[i], y[j], state.rho[i, j], state.Z[i, j],
                           state.rhostar[i, j], vel[0][i, j], vel[1][i, j],
                           pi[i, j])
                    fh.write(",".join(_fmt(v) for v in row) + "\n")


def write_vtk_snapshot(path, state: State) -> None:
    """Legacy-VTK structured-points dump of a 2D state (cell data)."""
    grid = state.grid
    if grid.dimension != 2:
        raise ValueError("VTK output is only produced for 2D runs")
    nx, ny = grid.cells
    dx, dy = grid.spacing
    vel = cell_velocity(grid, state.u)
    with open(path, "w", newline="\n") as fh:
        fh.write("# vtk DataFile Version 3.0\n")
        fh.write(f"crowdflow fields at t={_fmt(state.t)}\n")
        fh.write("ASCII\nDATASET STRUCTURED_POINTS\n")
        fh.write(f"DIMENSIONS {nx + 1} {ny + 1} 1\n")
        fh.write("ORIGIN 0 0 0\n")
        fh.write(f"SPACING {_fmt(dx)} {_fmt(dy)} 1\n")
        fh.write(f"CELL_DATA {nx * ny}\n")
        for name, field in (("rho", state.rho), ("Z", state.Z),
                            ("rhostar", state.rhostar)):
            fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
            # VTK cell order: x fastest, then y
            for j in range(ny):
                for i in range(nx):
                    fh.write(_fmt(field[i, j]) + "\n")
        fh.write("VECTORS velocity double\n")
        for j in range(ny):
            for i in range(nx):
                fh.write(f"{_fmt(vel[0][i, j])} {_fmt(vel[1][i, j])} 0\n")


class RunDirectory:
    """Context manager owning one run's output directory.

    Takes the lock on entry, echoes the scenario, and exposes ``sink`` in
    the shape the runner streams to — each record lands in
    ``diagnostics.csv`` (flushed row by row, so an abort leaves everything
    up to the failure on disk) and each state becomes a numbered snapshot.
    """

    def __init__(self, path, spec: ScenarioSpec | None = None,
                 vtk: bool = False):
        self.path = Path(path)
        self.spec = spec
        self.vtk = vtk
        self._diag = None
        self._count = 0

    def __enter__(self) -> "RunDirectory":
        try:
            self.path.mkdir(parents=True, exist_ok=True)
            fd = os.open(self.path / LOCK_NAME,
                         os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise OutputLocked(
                f"output directory {self.path} is locked by another run "
                f"(remove {self.path / LOCK_NAME} if that run is dead)"
            ) from None
        except OSError as err:
            raise OutputLocked(
                f"cannot take ownership of {self.path}: {err}") from None
        with os.fdopen(fd, "w") as fh:
            fh.write(f"{os.getpid()}\n")
        if self.spec is not None:
            (self.path / "scenario.ini").write_text(
                serialize_scenario(self.spec), newline="\n")
        return self

    def __exit__(self, *exc) -> bool:
        if self._diag is not None:
            self._diag.close()
            self._diag = None
        try:
            (self.path / LOCK_NAME).unlink()
        except FileNotFoundError:
            pass
        return False

    @property
    def snapshots_written(self) -> int:
        return self._count

    def write_validation(self, report) -> None:
        (self.path / "validation.txt").write_text(
            report.summary() + "\n", newline="\n")

    def sink(self, row: DiagnosticsRecord, state: State) -> None:
        if self._diag is None:
            self._diag = open(self.path / "diagnostics.csv", "w",
                              newline="\n")
            self._diag.write(",".join(RECORD_FIELDS) + "\n")
        values = (getattr(row, name) for name in RECORD_FIELDS)
        self._diag.write(",".join(_fmt(v) for v in values) + "\n")
        self._diag.flush()
        write_snapshot(self.path / f"snapshot_{self._count:04d}.csv",
                       state, self._params())
        if self.vtk and state.grid.dimension == 2:
            write_vtk_snapshot(self.path / f"snapshot_{self._count:04d}.vtk",
                               state)
        self._count += 1

    def _params(self) -> PressureParams:
        if self.spec is not None:
            return self.spec.pressure
        return PressureParams()


def member_dirname(epsilon: float) -> str:
    # repr is the shortest round-tripping decimal, so distinct members
    # always get distinct directories
    return "eps_" + repr(float(epsilon))


def write_limit_report(path, report: LimitReport) -> None:
    """Persist a continuation sweep: report.csv, cauchy.csv, summary.txt."""
    path = Path(path)
    with open(path / "report.csv", "w", newline="\n") as fh:
        fh.write(",".join(LIMIT_ROW_FIELDS) + "\n")
        for row in report.rows:
            values = (getattr(row, name) for name in LIMIT_ROW_FIELDS)
            fh.write(",".join(_fmt(v) for v in values) + "\n")
    with open(path / "cauchy.csv", "w", newline="\n") as fh:
        fh.write(",".join(CAUCHY_ROW_FIELDS) + "\n")
        for row in report.cauchy:
            values = (getattr(row, name) for name in CAUCHY_ROW_FIELDS)
            fh.write(",".join(_fmt(v) for v in values) + "\n")
    lines = [
        f"members completed: {len(report.rows)} of "
        f"{len(report.plan.epsilons)}",
        f"admissibility alternative: {report.admissibility}",
        f"monotone stiffening (max Z nonincreasing as epsilon drops): "
        f"{'yes' if report.monotone_stiffening else 'no'}",
    ]
    if report.aborted:
        lines.append(f"plan aborted: {report.abort_reason}")
    (path / "summary.txt").write_text("\n".join(lines) + "\n", newline="\n")
