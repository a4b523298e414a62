"""Artifact layout, CSV schemas, lock discipline, and CLI exit codes."""

import math

import numpy as np
import pytest

from crowdflow.cli import main
from crowdflow.continuation import ContinuationPlan, run_continuation
from crowdflow.errors import OutputLocked
from crowdflow.pressure import PressureParams
from crowdflow.runio import (LOCK_NAME, RunDirectory, member_dirname,
                             resolve_output_dir, write_limit_report,
                             write_snapshot)
from crowdflow.runner import RECORD_FIELDS, simulate
from crowdflow.scenario import parse_scenario, preset
from crowdflow.solver import law_pressure

BOX = """
[grid]
dimension = 1
length_x = 1.0
cells_x = 40

[time]
horizon = 0.1
scheme = imex

[pressure]
epsilon = 0.1
delta = 0.01

[initial]
rho = bump:0.5,0.2,0.3,0.3
rhostar = 1.0
u = sine:0.0,0.2,1.0

[boundary]
left_u = 0.0
right_u = 0.0

[output]
interval = 0.05
directory = boxrun
"""

PIPE_2D = """
[grid]
dimension = 2
length_x = 1.0
cells_x = 8
length_y = 1.0
cells_y = 6

[time]
horizon = 0.05

[pressure]
epsilon = 0.1

[initial]
rho = 0.4
rhostar = 1.0
u = 0.5
v = 0.0

[boundary]
left_u = 0.5
left_rho = 0.4
left_rhostar = 1.0
right_u = 0.5
bottom_u = 0.0
top_u = 0.0

[output]
interval = 0.025
"""


def run_into(tmp_path, text=BOX, **kwargs):
    spec = parse_scenario(text)
    out = tmp_path / "run"
    with RunDirectory(out, spec=spec, **kwargs) as rd:
        result = simulate(spec, sink=rd.sink)
    return spec, out, result


def read_csv(path):
    lines = path.read_text().splitlines()
    header = lines[0].split(",")
    rows = [[float(tok) for tok in line.split(",")] for line in lines[1:]]
    return header, rows


# -- snapshots and diagnostics ------------------------------------------------


def test_output_completeness(tmp_path):
    spec, out, result = run_into(tmp_path)
    expected = math.floor(spec.horizon / spec.output_interval) + 1
    snaps = sorted(out.glob("snapshot_*.csv"))
    assert len(snaps) == expected == 3
    header, rows = read_csv(out / "diagnostics.csv")
    assert header == list(RECORD_FIELDS)
    assert len(rows) == len(result.records) == expected
    times = [r[0] for r in rows]
    assert times == sorted(times)


def test_snapshot_schema_and_full_precision(tmp_path):
    spec, out, result = run_into(tmp_path)
    header, rows = read_csv(out / "snapshot_0002.csv")
    assert header == ["x", "rho", "Z", "rhostar", "u", "pi"]
    assert len(rows) == 40
    data = np.array(rows)
    final = result.final_state
    # 17 significant digits round-trip bitwise
    assert np.array_equal(data[:, 1], final.rho)
    assert np.array_equal(data[:, 2], final.Z)
    assert np.array_equal(data[:, 3], final.rhostar)
    # u column is the face average, pi the law applied to the Z column
    assert np.array_equal(
        data[:, 4], 0.5 * (final.u[0][:-1] + final.u[0][1:]))
    assert np.array_equal(data[:, 5], law_pressure(final.Z, spec.pressure))


def test_2d_snapshot_schema(tmp_path):
    spec, out, result = run_into(tmp_path, text=PIPE_2D)
    header, rows = read_csv(out / "snapshot_0000.csv")
    assert header == ["x", "y", "rho", "Z", "rhostar", "u", "v", "pi"]
    assert len(rows) == 8 * 6
    # rows ordered x-major: y cycles fastest
    ys = [r[1] for r in rows[:6]]
    assert ys == sorted(ys)
    assert rows[6][0] > rows[0][0]


def test_vtk_written_only_for_2d(tmp_path):
    _, out1, _ = run_into(tmp_path / "a", vtk=True)  # 1D: flag is inert
    assert list(out1.glob("*.vtk")) == []
    _, out2, _ = run_into(tmp_path / "b", text=PIPE_2D, vtk=True)
    vtks = sorted(out2.glob("*.vtk"))
    assert len(vtks) == 3
    head = vtks[0].read_text().splitlines()
    assert head[0] == "# vtk DataFile Version 3.0"
    assert "DIMENSIONS 9 7 1" in head
    assert f"CELL_DATA {8 * 6}" in head


# -- directory ownership ------------------------------------------------------


def test_lock_taken_and_released(tmp_path):
    spec, out, _ = run_into(tmp_path)
    assert not (out / LOCK_NAME).exists()
    # the directory can be reused once the first owner is gone
    with RunDirectory(out, spec=spec):
        assert (out / LOCK_NAME).exists()


def test_lock_conflict(tmp_path):
    out = tmp_path / "run"
    out.mkdir()
    (out / LOCK_NAME).write_text("12345\n")
    with pytest.raises(OutputLocked, match="locked by another run"):
        RunDirectory(out).__enter__()


def test_partial_output_survives_abort(tmp_path):
    import dataclasses

    # walls with a fast interior stream: the forced step (clipped to the
    # output interval, still 5x the material bound) cannot be taken
    fast = BOX.replace("u = sine:0.0,0.2,1.0", "u = 1.0")
    spec = dataclasses.replace(parse_scenario(fast), dt_override=50.0,
                               horizon=0.4)
    out = tmp_path / "run"
    with RunDirectory(out, spec=spec) as rd:
        result = simulate(spec, sink=rd.sink)
    assert result.aborted
    # whatever was emitted before the failure is on disk and readable
    snaps = sorted(out.glob("snapshot_*.csv"))
    assert len(snaps) >= 1
    header, rows = read_csv(out / "diagnostics.csv")
    assert len(rows) == len(snaps)
    assert not (out / LOCK_NAME).exists()


def test_output_root_env_override(tmp_path, monkeypatch):
    import pathlib

    spec = parse_scenario(BOX)
    monkeypatch.setenv("CROWDFLOW_OUTPUT_ROOT", str(tmp_path / "elsewhere"))
    assert resolve_output_dir(spec) == tmp_path / "elsewhere" / "boxrun"
    # an absolute override ignores the root entirely
    assert resolve_output_dir(spec, "/abs/path") == pathlib.Path("/abs/path")


def test_member_dirnames_unique():
    eps = (1e-1, 1e-2, 1.2e-3, 1e-3, 1e-4)
    names = {member_dirname(e) for e in eps}
    assert len(names) == len(eps)


# -- continuation artifacts ---------------------------------------------------


def test_limit_report_files(tmp_path):
    import dataclasses

    spec = dataclasses.replace(preset("closed-end"), cells=(50,),
                               horizon=0.2, output_interval=0.1)
    plan = ContinuationPlan(spec, (0.1, 0.05))
    report = run_continuation(plan, keep_states=True)
    write_limit_report(tmp_path, report)
    header, rows = read_csv(tmp_path / "report.csv")
    assert header[0] == "epsilon"
    assert len(rows) == 2
    assert rows[0][0] == 0.1 and rows[1][0] == 0.05
    header, rows = read_csv(tmp_path / "cauchy.csv")
    assert len(rows) == 1
    summary = (tmp_path / "summary.txt").read_text()
    assert "members completed: 2 of 2" in summary
    assert "admissibility alternative: mass-margin" in summary


# -- CLI ----------------------------------------------------------------------


def test_cli_list_presets(capsys):
    assert main(["list-presets"]) == 0
    out = capsys.readouterr().out
    for name in ("corridor-evac", "closed-end", "two-gate-2d",
                 "equilibrium", "proportional"):
        assert name in out


def test_cli_validate_ok(capsys):
    assert main(["validate", "equilibrium"]) == 0
    assert "nonnegative-net-flux" in capsys.readouterr().out


def test_cli_validate_rejects_negative_flux(tmp_path, capsys):
    cfg = tmp_path / "neg.ini"
    cfg.write_text(BOX.replace("left_u = 0.0", "left_u = 1.0\n"
                               "left_rho = 0.4\nleft_rhostar = 1.0"))
    assert main(["validate", str(cfg)]) == 2
    err = capsys.readouterr().err
    assert "nonnegative-net-flux" in err


def test_cli_validate_flags_no_guarantee(capsys):
    import dataclasses
    from crowdflow.scenario import serialize_scenario

    long = dataclasses.replace(preset("closed-end"), horizon=1.5)
    cfg_text = serialize_scenario(long)
    # accepted (exit 0) but loudly not certified
    import pathlib
    import tempfile
    with tempfile.TemporaryDirectory() as td:
        cfg = pathlib.Path(td) / "long.ini"
        cfg.write_text(cfg_text)
        assert main(["validate", str(cfg)]) == 0
    out = capsys.readouterr().out
    assert "no guarantee" in out


def test_cli_run_and_rerun_bitwise(tmp_path, capsys):
    cfg = tmp_path / "box.ini"
    cfg.write_text(BOX)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", str(cfg), "--out", str(a)]) == 0
    assert main(["run", str(cfg), "--out", str(b)]) == 0
    files_a = sorted(p.name for p in a.iterdir())
    assert "diagnostics.csv" in files_a and "scenario.ini" in files_a
    for name in files_a:
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_cli_run_abort_exit3(tmp_path, capsys):
    cfg = tmp_path / "blow.ini"
    cfg.write_text(BOX.replace("scheme = imex",
                               "scheme = imex\ndt_override = 50.0")
                   .replace("u = sine:0.0,0.2,1.0", "u = 1.0"))
    out = tmp_path / "blow"
    assert main(["run", str(cfg), "--out", str(out)]) == 3
    err = capsys.readouterr().err
    assert "solver abort" in err and "partial output" in err
    assert (out / "diagnostics.csv").exists()


def test_cli_locked_output_exit4(tmp_path, capsys):
    cfg = tmp_path / "box.ini"
    cfg.write_text(BOX)
    out = tmp_path / "busy"
    out.mkdir()
    (out / LOCK_NAME).write_text("1\n")
    assert main(["run", str(cfg), "--out", str(out)]) == 4
    assert "locked" in capsys.readouterr().err


def test_cli_missing_config_exit4(capsys):
    assert main(["run", "nosuch.ini"]) == 4
    assert "neither a preset" in capsys.readouterr().err


def test_cli_config_error_exit2(tmp_path, capsys):
    cfg = tmp_path / "bad.ini"
    cfg.write_text(BOX.replace("epsilon", "epsilom"))
    assert main(["validate", str(cfg)]) == 2
    assert "did you mean" in capsys.readouterr().err


def test_cli_continuation_writes_tree(tmp_path, capsys):
    import dataclasses
    from crowdflow.scenario import serialize_scenario

    small = dataclasses.replace(preset("closed-end"), cells=(50,),
                                horizon=0.2, output_interval=0.1)
    cfg = tmp_path / "sweep.ini"
    cfg.write_text(serialize_scenario(small))
    out = tmp_path / "sweep"
    code = main(["continuation", str(cfg), "--epsilons", "1e-1,1e-2",
                 "--out", str(out)])
    assert code == 0
    assert (out / "report.csv").exists()
    assert (out / "cauchy.csv").exists()
    for eps in (0.1, 0.01):
        mdir = out / "members" / member_dirname(eps)
        assert (mdir / "diagnostics.csv").exists()
        assert len(list(mdir.glob("snapshot_*.csv"))) == 3
    assert "admissibility = mass-margin" in capsys.readouterr().out


def test_cli_continuation_bad_plan_exit2(tmp_path, capsys):
    assert main(["continuation", "equilibrium",
                 "--epsilons", "1e-2,1e-1"]) == 2
    assert "bad continuation plan" in capsys.readouterr().err


def test_cli_echo_round_trips(capsys):
    assert main(["echo", "corridor-evac"]) == 0
    text = capsys.readouterr().out
    got = parse_scenario(text, name="corridor-evac")
    assert got == preset("corridor-evac")
