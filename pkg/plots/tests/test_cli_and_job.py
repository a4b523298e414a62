"""End-to-end jobs through the command line: selection, formats, codes."""

import pytest

from crowdflow_plots import PlotInputError, PlotJob, available_figures, run_job
from crowdflow_plots.cli import main


def tree_bytes(root):
    """Map of every file under *root* to its exact content."""
    return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_run_directory_renders_profiles_and_energy(run_congested, tmp_path, capsys):
    out = tmp_path / "figs"
    assert main([str(run_congested), "--out", str(out)]) == 0
    stdout = capsys.readouterr().out
    names = sorted(p.name for p in out.iterdir())
    assert names == [
        "energy_ledgers.svg",
        "profiles_0000.svg",
        "profiles_0001.svg",
        "profiles_0002.svg",
        "profiles_0003.svg",
        "profiles_0004.svg",
    ]
    for name in names:
        assert (out / name).read_bytes().startswith(b"<?xml")
        assert name in stdout  # every written file is announced


def test_inputs_stay_byte_identical(run_congested, report_dir, tmp_path):
    before = {d: tree_bytes(d) for d in (run_congested, report_dir)}
    assert main([str(run_congested), "--out", str(tmp_path / "a")]) == 0
    assert main([str(report_dir), "--out", str(tmp_path / "b")]) == 0
    for d, snapshot in before.items():
        assert tree_bytes(d) == snapshot


def test_rendering_is_deterministic_svg(run_congested, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main([str(run_congested), "--out", str(a)]) == 0
    assert main([str(run_congested), "--out", str(b)]) == 0
    assert tree_bytes(a) == tree_bytes(b)
    assert any(tree_bytes(a))


def test_rendering_is_deterministic_png(run_flat, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main([str(run_flat), "--out", str(a), "--format", "png"]) == 0
    assert main([str(run_flat), "--out", str(b), "--format", "png"]) == 0
    assert tree_bytes(a) == tree_bytes(b)
    for content in tree_bytes(a).values():
        assert content.startswith(b"\x89PNG")


def test_report_directory_defaults_to_decay(report_dir, tmp_path):
    out = tmp_path / "figs"
    assert main([str(report_dir), "--out", str(out)]) == 0
    assert [p.name for p in out.iterdir()] == ["complementarity_decay.svg"]


def test_figures_subset(run_congested, tmp_path):
    out = tmp_path / "figs"
    assert main([str(run_congested), "--out", str(out), "--figures", "energy"]) == 0
    assert [p.name for p in out.iterdir()] == ["energy_ledgers.svg"]


def test_unknown_figure_name(run_flat, tmp_path, capsys):
    code = main([str(run_flat), "--out", str(tmp_path / "f"), "--figures", "contours"])
    assert code == 2
    assert "unknown figure 'contours'" in capsys.readouterr().err


def test_selection_unsupported_by_input(run_flat, tmp_path, capsys):
    code = main([str(run_flat), "--out", str(tmp_path / "f"), "--figures", "decay"])
    assert code == 2
    assert "no artifacts for figure 'decay'" in capsys.readouterr().err


def test_missing_input_directory(tmp_path, capsys):
    code = main([str(tmp_path / "nowhere"), "--out", str(tmp_path / "f")])
    assert code == 4
    assert "does not exist" in capsys.readouterr().err


def test_directory_without_artifacts(tmp_path, capsys):
    empty = tmp_path / "empty"
    empty.mkdir()
    code = main([str(empty), "--out", str(tmp_path / "f")])
    assert code == 2
    assert "no snapshots" in capsys.readouterr().err


def test_output_into_input_is_refused(run_flat, capsys):
    code = main([str(run_flat), "--out", str(run_flat)])
    assert code == 2
    assert "must differ" in capsys.readouterr().err


def test_job_rejects_unknown_format(run_flat, tmp_path):
    job = PlotJob(input_dir=run_flat, out_dir=tmp_path / "f", format="pdf")
    with pytest.raises(PlotInputError, match="unknown format 'pdf'"):
        run_job(job)


def test_available_figures(run_congested, report_dir, tmp_path):
    assert available_figures(run_congested) == ("profiles", "energy")
    assert available_figures(report_dir) == ("decay",)
    assert available_figures(tmp_path) == ()
