"""Figure content checks: the drawn artists, not just absence of errors."""

import shutil

import numpy as np
import pytest

from crowdflow_plots import (
    PlotInputError,
    plot_complementarity_decay,
    plot_energy_and_ledgers,
    plot_profiles,
)


def lines_by_label(ax):
    return {line.get_label(): line for line in ax.get_lines()}


def test_profiles_flat_run_draws_constant_lines(run_flat):
    figures = plot_profiles(run_flat)
    assert len(figures) == 3
    for name, fig in figures:
        assert name.startswith("profiles_")
        lines = lines_by_label(fig.axes[0])
        assert set(lines) == {"rho", "rhostar", "Z", "congestion level"}
        for label in ("rho", "rhostar", "Z"):
            y = np.asarray(lines[label].get_ydata())
            assert np.all(y == y[0]), f"{label} is not flat in {name}"
        assert np.all(np.asarray(lines["congestion level"].get_ydata()) == 1.0)


def test_profiles_congested_run_shows_plateau(run_congested):
    figures = plot_profiles(run_congested)
    assert len(figures) == 5
    z_final = lines_by_label(figures[-1][1].axes[0])["Z"].get_ydata()
    # the jam against the closed end reads as a plateau hugging Z = 1
    assert np.max(z_final) > 0.9
    assert np.mean(z_final > 0.85) > 0.1


def test_profiles_two_dimensional_midline(tmp_path, snapshot_2d_text):
    (tmp_path / "snapshot_0000.csv").write_text(snapshot_2d_text)
    figures = plot_profiles(tmp_path)
    assert len(figures) == 1
    ax = figures[0][1].axes[0]
    assert "midline" in ax.get_title()
    assert list(lines_by_label(ax)["rho"].get_xdata()) == [0.25, 0.75]


def test_profiles_empty_directory(tmp_path):
    with pytest.raises(PlotInputError, match="no snapshot files"):
        plot_profiles(tmp_path)


def test_energy_panels_and_ledger_sign(run_congested):
    fig, truncated = plot_energy_and_ledgers(run_congested)
    assert not truncated
    assert len(fig.axes) == 3
    residual_ax, ledger_ax = fig.axes[1], fig.axes[2]
    for ax in (residual_ax, ledger_ax):
        zero = [ln for ln in ax.get_lines() if np.all(np.asarray(ln.get_ydata()) == 0.0)]
        assert zero, "zero guide line missing"
    # walls everywhere: the ledger defect never goes positive
    for line in ledger_ax.get_lines():
        assert np.all(np.asarray(line.get_ydata()) <= 1e-12)


def test_energy_truncated_diagnostics_gives_partial_plot(run_flat, tmp_path):
    run = tmp_path / "run"
    shutil.copytree(run_flat, run)
    path = run / "diagnostics.csv"
    lines = path.read_text().splitlines()
    lines[-1] = lines[-1][: len(lines[-1]) // 2]
    path.write_text("\n".join(lines))
    with pytest.warns(UserWarning, match="truncated"):
        fig, truncated = plot_energy_and_ledgers(run)
    assert truncated
    assert "partial" in fig.axes[0].get_title()


def test_energy_requires_diagnostics(tmp_path):
    (tmp_path / "snapshot_0000.csv").write_text("x,rho,Z,rhostar,u,pi\n0,0,0,1,0,0\n")
    with pytest.raises(PlotInputError, match="no diagnostics.csv"):
        plot_energy_and_ledgers(tmp_path)


def test_decay_figure_from_reference_sweep(report_dir):
    fig = plot_complementarity_decay(report_dir)
    ax = fig.axes[0]
    assert ax.get_xscale() == "log" and ax.get_yscale() == "log"
    y = ax.get_lines()[0].get_ydata()
    assert len(y) == 4
    assert (np.diff(y) < 0).all()
    assert "monotone decrease" in [t.get_text() for t in ax.texts]


def test_decay_accepts_file_path(report_dir):
    fig = plot_complementarity_decay(report_dir / "report.csv")
    assert fig.axes


def test_decay_single_member_is_an_error(tmp_path):
    (tmp_path / "report.csv").write_text(
        "epsilon,int_pi_one_minus_Z\n0.1,0.08\n"
    )
    with pytest.raises(PlotInputError, match="at least 2 sweep members, found 1"):
        plot_complementarity_decay(tmp_path)


def test_decay_degenerate_sweep_still_renders(tmp_path):
    (tmp_path / "report.csv").write_text(
        "epsilon,int_pi_one_minus_Z\n0.1,0.08\n0.1,0.08\n"
    )
    fig = plot_complementarity_decay(tmp_path)
    assert "NOT monotone" in [t.get_text() for t in fig.axes[0].texts]


def test_decay_missing_report(tmp_path):
    with pytest.raises(PlotInputError, match="no report.csv"):
        plot_complementarity_decay(tmp_path)
