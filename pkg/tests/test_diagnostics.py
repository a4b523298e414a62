"""Diagnostics evaluators and the runner's record stream."""

import dataclasses

import numpy as np
import pytest

from crowdflow.diagnostics import (
    Window,
    complementarity_scan,
    constraint_monitor,
    plateau_weight,
    recovery_check,
    renormalized_residual,
)
from crowdflow.domain import Grid
from crowdflow.errors import DomainError, GridMismatch
from crowdflow.pressure import PressureParams
from crowdflow.runner import RECORD_FIELDS, simulate
from crowdflow.scenario import build_problem, parse_scenario, preset
from crowdflow.solver import State, init_state

UNIFORM_STREAM = """
[grid]
dimension = 1
length_x = 1.0
cells_x = 80

[time]
horizon = 0.2
scheme = imex

[pressure]
epsilon = 0.1
delta = 0.01

[initial]
rho = 0.5
rhostar = 1.0
u = 1.0

[boundary]
left_u = 1.0
left_rho = 0.5
left_rhostar = 1.0
right_u = 1.0

[output]
interval = 0.05
"""

DECAY_BOX = """
[grid]
dimension = 1
length_x = 1.0
cells_x = 100

[time]
horizon = 0.3
scheme = imex
viscosity = 0.05

[pressure]
epsilon = 0.1
delta = 0.01

[initial]
rho = 0.4
rhostar = 1.0
u = sine:0.0,0.4,0.5

[boundary]
left_u = 0.0
right_u = 0.0

[output]
interval = 0.1
"""


def state_from(config_text):
    prob = build_problem(parse_scenario(config_text))
    return prob, init_state(prob.grid, prob.rho0, prob.rhostar0, prob.u0,
                            prob.bdata)


# -- pointwise monitors ------------------------------------------------------


def test_constraint_monitor_hand_values():
    g = Grid(lengths=(1.0,), cells=(4,))
    rho = np.array([0.2, 0.5, 0.3, 0.1])
    rhostar = np.array([0.5, 0.625, 1.0, 1.0])
    Z = rho / rhostar
    st = State(grid=g, rho=rho, Z=Z, rhostar=rhostar,
               u=(np.zeros(5),), t=0.0)
    rep = constraint_monitor(st, c_lower=1.0, c_upper=2.0,
                             inward_outflow_events=3)
    assert rep.max_Z == pytest.approx(0.8)
    assert rep.min_rho == pytest.approx(0.1)
    assert rep.min_rhostar_minus_rho == pytest.approx(0.125)
    # low side: max(1.0 * rho - Z)+ = max over (0.2-0.4, 0.5-0.8, 0, 0)+ = 0
    assert rep.comparison_defect_low == 0.0
    # high side: max(Z - 2 rho)+ = 0 here, so tighten c_upper to see one
    assert rep.comparison_defect_high == 0.0
    rep2 = constraint_monitor(st, c_lower=1.0, c_upper=1.0)
    assert rep2.comparison_defect_high == pytest.approx(0.3)
    assert rep.inward_outflow_events == 3


def test_recovery_defect_vanishes_at_init_and_sees_drift():
    _, st = state_from(UNIFORM_STREAM)
    rep = recovery_check(st)
    assert rep.max_defect <= 1e-13
    assert rep.l1_defect <= 1e-13
    st.rhostar = st.rhostar + 0.25
    drifted = recovery_check(st)
    assert drifted.max_defect == pytest.approx(0.25, rel=1e-12)
    assert drifted.l1_defect == pytest.approx(0.25, rel=1e-12)


def test_recovery_ignores_vacuum_cells():
    g = Grid(lengths=(1.0,), cells=(4,))
    Z = np.array([0.0, 0.0, 0.5, 0.5])
    rho = np.array([0.0, 0.0, 0.25, 0.25])
    rhostar = np.array([7.0, 9.0, 0.5, 0.5])
    st = State(grid=g, rho=rho, Z=Z, rhostar=rhostar, u=(np.zeros(5),))
    assert recovery_check(st).max_defect <= 1e-13


# -- complementarity ---------------------------------------------------------


def test_plateau_weight_shape():
    g = Grid(lengths=(1.0,), cells=(8,))
    psi = plateau_weight(g)
    assert psi[0] == pytest.approx(0.25)
    assert psi[3] == 1.0 and psi[4] == 1.0
    assert np.allclose(psi, psi[::-1])

    g2 = Grid(lengths=(1.0, 2.0), cells=(8, 6))
    psi2 = plateau_weight(g2)
    py = plateau_weight(Grid(lengths=(2.0,), cells=(6,)))
    assert np.array_equal(psi2, psi[:, None] * py[None, :])


def test_scan_is_linear_in_the_pressure_scale():
    _, st = state_from(DECAY_BOX)
    st.Z = 0.3 + 0.6 * np.linspace(0.0, 1.0, st.Z.size)  # graded congestion
    p1 = PressureParams(epsilon=0.1, delta=0.02)
    p2 = PressureParams(epsilon=0.2, delta=0.02)
    a = complementarity_scan(st, p1)
    b = complementarity_scan(st, p2)
    assert b.pi_mass == pytest.approx(2.0 * a.pi_mass, rel=1e-15)
    assert b.pi_Z_mass == pytest.approx(2.0 * a.pi_Z_mass, rel=1e-15)
    assert b.pi_one_minus_Z == pytest.approx(2.0 * a.pi_one_minus_Z, rel=1e-15)
    # threshold quantities ignore the scale entirely
    assert b.congested_fraction == a.congested_fraction
    assert b.congested_divu_l2 == a.congested_divu_l2


def test_scan_counts_congested_cells():
    _, st = state_from(DECAY_BOX)
    st.Z[:] = 0.5
    st.Z[10:20] = 0.97
    rep = complementarity_scan(st, PressureParams(epsilon=0.1), theta=0.05)
    assert rep.congested_fraction == pytest.approx(10 / st.Z.size)
    with pytest.raises(DomainError):
        complementarity_scan(st, PressureParams(epsilon=0.1), theta=0.7)


# -- renormalized residual ---------------------------------------------------


def make_transport_states(n, steps):
    g = Grid(lengths=(1.0,), cells=(n,))
    x = g.centers(0)
    speed = 0.7
    times = np.linspace(0.0, 0.25, steps + 1)
    states = []
    for t in times:
        prof = 0.4 + 0.2 * np.sin(2.0 * np.pi * (x - speed * t))
        states.append(
            State(grid=g, rho=prof.copy(), Z=prof.copy(),
                  rhostar=np.ones(n), u=(np.full(n + 1, speed),), t=float(t))
        )
    return states


def test_residual_vanishes_exactly_at_rest():
    result = simulate(preset("equilibrium"), keep_states=True)
    win = Window(x_center=0.5, x_halfwidth=0.3, t_center=0.25,
                 t_halfwidth=0.2)
    assert renormalized_residual(result.states, [win]) == [0.0]


def test_residual_decays_on_manufactured_transport():
    win = Window(x_center=0.5, x_halfwidth=0.3, t_center=0.125,
                 t_halfwidth=0.1)
    coarse = abs(renormalized_residual(make_transport_states(40, 16), [win])[0])
    fine = abs(renormalized_residual(make_transport_states(80, 32), [win])[0])
    assert coarse > 1e-8
    assert fine <= coarse / 1.6


def test_residual_rejects_bad_windows():
    states = make_transport_states(20, 4)
    with pytest.raises(DomainError, match="boundary"):
        renormalized_residual(states, [Window(0.1, 0.2, 0.125, 0.05)])
    with pytest.raises(DomainError, match="time"):
        renormalized_residual(states, [Window(0.5, 0.2, 0.25, 0.2)])
    with pytest.raises(GridMismatch):
        renormalized_residual(states[:1], [Window(0.5, 0.2, 0.1, 0.05)])


# -- energy budget through the runner ----------------------------------------


def test_equilibrium_budget_is_exactly_zero():
    result = simulate(preset("equilibrium"))
    assert not result.aborted
    assert len(result.records) == 6
    for row in result.records:
        assert row.energy_residual == 0.0
        assert row.kinetic == 0.0
        assert row.dissipation == 0.0
        assert row.max_Z == pytest.approx(0.4)
        assert row.defect_rho == 0.0
        assert row.inward_outflow_events == 0


def test_equilibrium_budget_survives_many_steps():
    spec = dataclasses.replace(preset("equilibrium"), max_dt=0.0005)
    result = simulate(spec)
    assert sum(r.steps for r in result.records) == 1000
    assert result.records[-1].energy_residual == 0.0


def test_uniform_stream_budget_matches_boundary_flux():
    spec = parse_scenario(UNIFORM_STREAM)
    result = simulate(spec)
    assert not result.aborted
    # relative velocity vanishes, so the only live term is the potential
    # carried in by the inflow: residual(t) = -t * H(1/2) * |u_B . n|
    p = spec.pressure
    h_half = p.epsilon * 0.5 * ((1 - 0.5) ** (1 - p.beta) - 1) / (p.beta - 1)
    for row in result.records:
        assert row.kinetic <= 1e-20
        assert row.dissipation <= 1e-22
        assert row.boundary_H_flux == pytest.approx(row.time * h_half,
                                                    rel=1e-9, abs=1e-15)
        assert row.energy_residual == pytest.approx(-row.time * h_half,
                                                    rel=1e-9, abs=1e-12)


def test_decay_box_dissipates():
    result = simulate(parse_scenario(DECAY_BOX))
    first, last = result.records[0], result.records[-1]
    assert last.kinetic < 0.2 * first.kinetic
    assert last.dissipation > 0.0
    # closed box: every budget source is zero, so the balance says
    # kinetic + potential + dissipation <= initial energy up to scheme error
    assert last.energy_residual < 1e-4
    assert last.kinetic + last.potential <= first.kinetic + first.potential


# -- ledgers and record stream -----------------------------------------------


def test_corridor_ledgers_close():
    spec = dataclasses.replace(preset("corridor-evac"), horizon=0.2)
    result = simulate(spec)
    assert not result.aborted
    assert [round(r.time, 10) for r in result.records] == [
        0.0, 0.05, 0.1, 0.15, 0.2]
    last = result.records[-1]
    assert last.inflow_rho == pytest.approx(0.2 * 0.5, rel=1e-12)
    for row in result.records:
        for defect, outflow in ((row.defect_rho, row.outflow_rho),
                                (row.defect_Z, row.outflow_Z)):
            assert abs(defect + outflow) <= 1e-12 * max(1.0, abs(outflow))
            assert defect <= 1e-12


def test_proportional_preset_comparison_defect_is_zero():
    result = simulate(preset("proportional"))
    assert not result.aborted
    for row in result.records:
        assert row.comparison_defect_low == 0.0
        assert row.comparison_defect_high == 0.0
    assert result.records[-1].max_Z < 1.0


def test_record_stream_and_sink():
    seen = []
    spec = dataclasses.replace(preset("corridor-evac"), horizon=0.1)
    result = simulate(spec, sink=lambda row, st: seen.append(st.t))
    assert len(seen) == len(result.records) == 3
    assert result.final_state.t == pytest.approx(0.1)
    assert all(hasattr(result.records[0], name) for name in RECORD_FIELDS)
    assert result.records[0].steps == 0
    assert all(r.steps > 0 for r in result.records[1:])


def test_absurd_forced_dt_aborts_cleanly():
    spec = dataclasses.replace(preset("corridor-evac"), horizon=0.2,
                               dt_override=50.0)
    result = simulate(spec)
    assert result.aborted
    assert "forced dt" in result.abort_reason
    assert len(result.records) >= 1  # the initial record survived
