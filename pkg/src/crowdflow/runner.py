"""Time-loop orchestration: from a scenario spec to diagnostics records.

The runner validates the problem data, builds the boundary extension,
marches the stepper to the horizon, and emits one diagnostics record per
output time.  Budget terms and weighted pressure masses are accumulated
every accepted step (trapezoid in time), not just at output times, so their
quadrature error refines with dt.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from .diagnostics import (
    EnergyBudget,
    MassLedger,
    complementarity_scan,
    constraint_monitor,
    recovery_check,
)
from .domain import ValidationReport, build_extension, validate_problem_data
from .errors import SolverAbort
from .scenario import ProblemData, ScenarioSpec, build_problem
from .solver import State, Stepper, init_state


@dataclass
class DiagnosticsRecord:
    """One row of the run's diagnostics table.

    Step statistics (``steps`` through ``halvings_total``) cover the window
    since the previous record; ``inward_outflow_events`` counts from the
    start of the run.  Fields ending in ``_acc`` are trapezoid time
    integrals from the start of the run.
    """

    time: float
    steps: int
    dt_min: float
    dt_max: float
    newton_total: int
    halvings_total: int
    kinetic: float
    potential: float
    dissipation: float
    pressure_work: float
    convective_work: float
    viscous_cross: float
    boundary_H_flux: float
    forcing_work: float
    energy_residual: float
    mass_rho: float
    inflow_rho: float
    outflow_rho: float
    defect_rho: float
    mass_Z: float
    inflow_Z: float
    outflow_Z: float
    defect_Z: float
    max_Z: float
    min_rho: float
    min_rhostar_minus_rho: float
    comparison_defect_low: float
    comparison_defect_high: float
    inward_outflow_events: int
    pi_one_minus_Z: float
    pi_one_minus_Z_acc: float
    congested_fraction: float
    congested_divu_l2: float
    congested_divu_sq_acc: float
    pi_mass_acc: float
    pi_Z_mass_acc: float
    recovery_max: float
    recovery_l1: float


RECORD_FIELDS = tuple(f.name for f in fields(DiagnosticsRecord))


@dataclass
class RunResult:
    """Everything a finished (or aborted) run hands back."""

    spec: ScenarioSpec
    validation: ValidationReport
    records: list
    final_state: State
    states: list | None
    aborted: bool = False
    abort_reason: str | None = None

    @property
    def times(self):
        return [r.time for r in self.records]


def simulate(spec: ScenarioSpec, *, keep_states: bool = False, sink=None,
             theta: float = 0.05, max_steps: int = 2_000_000) -> RunResult:
    """Run one scenario to its horizon.

    Validation failures raise; solver aborts are caught and reported via
    the result so everything already written survives.  ``sink``, when
    given, is called as ``sink(record, state)`` at every output time.
    """
    prob = build_problem(spec)
    report = validate_problem_data(
        prob.grid, prob.bdata, prob.rho0, prob.rhostar0, prob.params,
        spec.horizon,
    )
    report.raise_if_failed()
    return _march(spec, prob, report, keep_states=keep_states, sink=sink,
                  theta=theta, max_steps=max_steps)


def _march(spec: ScenarioSpec, prob: ProblemData, report: ValidationReport,
           *, keep_states: bool, sink, theta: float,
           max_steps: int) -> RunResult:
    grid = prob.grid
    ext = build_extension(grid, prob.bdata)
    state = init_state(grid, prob.rho0, prob.rhostar0, prob.u0, prob.bdata)
    stepper = Stepper(grid, prob.bdata, prob.step_config, prob.params, ext,
                      w=prob.w)

    budget = EnergyBudget(grid, ext, prob.params, prob.step_config.mu,
                          prob.step_config.lam, prob.bdata, stepper.partition,
                          w=prob.w)
    budget.begin(state)
    ledger_rho = MassLedger(grid, prob.rho0, prob.bdata.rho, prob.bdata,
                            stepper.partition)
    ledger_Z = MassLedger(grid, state.Z, stepper.traces_Z, prob.bdata,
                          stepper.partition)

    acc = {"pi_one_minus_Z": 0.0, "divu_sq": 0.0, "pi_mass": 0.0,
           "pi_Z_mass": 0.0}
    prev_scan = complementarity_scan(state, prob.params, theta)

    window = {"steps": 0, "dt_min": math.inf, "dt_max": 0.0,
              "newton": 0, "halvings": 0}

    records: list[DiagnosticsRecord] = []
    states: list[State] | None = [] if keep_states else None

    def emit(st: State):
        energy = budget.report(st)
        lrho = ledger_rho.report(st.rho)
        lZ = ledger_Z.report(st.Z)
        cons = constraint_monitor(st, report.c_lower, report.c_upper,
                                  stepper.reversal_events)
        comp = complementarity_scan(st, prob.params, theta)
        rec = recovery_check(st)
        row = DiagnosticsRecord(
            time=st.t,
            steps=window["steps"],
            dt_min=0.0 if window["steps"] == 0 else window["dt_min"],
            dt_max=window["dt_max"],
            newton_total=window["newton"],
            halvings_total=window["halvings"],
            kinetic=energy.kinetic,
            potential=energy.potential,
            dissipation=energy.dissipation,
            pressure_work=energy.pressure_work,
            convective_work=energy.convective_work,
            viscous_cross=energy.viscous_cross,
            boundary_H_flux=energy.boundary_H_flux,
            forcing_work=energy.forcing_work,
            energy_residual=energy.residual,
            mass_rho=lrho.mass,
            inflow_rho=lrho.inflow,
            outflow_rho=lrho.outflow,
            defect_rho=lrho.defect,
            mass_Z=lZ.mass,
            inflow_Z=lZ.inflow,
            outflow_Z=lZ.outflow,
            defect_Z=lZ.defect,
            max_Z=cons.max_Z,
            min_rho=cons.min_rho,
            min_rhostar_minus_rho=cons.min_rhostar_minus_rho,
            comparison_defect_low=cons.comparison_defect_low,
            comparison_defect_high=cons.comparison_defect_high,
            inward_outflow_events=cons.inward_outflow_events,
            pi_one_minus_Z=comp.pi_one_minus_Z,
            pi_one_minus_Z_acc=acc["pi_one_minus_Z"],
            congested_fraction=comp.congested_fraction,
            congested_divu_l2=comp.congested_divu_l2,
            congested_divu_sq_acc=acc["divu_sq"],
            pi_mass_acc=acc["pi_mass"],
            pi_Z_mass_acc=acc["pi_Z_mass"],
            recovery_max=rec.max_defect,
            recovery_l1=rec.l1_defect,
        )
        records.append(row)
        if states is not None:
            states.append(st.copy())
        if sink is not None:
            sink(row, st)
        window.update(steps=0, dt_min=math.inf, dt_max=0.0, newton=0,
                      halvings=0)

    t_end = spec.horizon
    interval = spec.output_interval
    n_out = math.floor(t_end / interval + 1e-9)
    tiny = 1e-9 * interval

    emit(state)
    k = 1
    total_steps = 0
    aborted = False
    reason = None
    while state.t < t_end - tiny:
        if total_steps >= max_steps:
            aborted = True
            reason = f"step budget exhausted after {total_steps} steps"
            break
        next_out = k * interval if k <= n_out else t_end
        if next_out - state.t < tiny:
            emit(state)
            k += 1
            continue
        cap = next_out - state.t
        if spec.max_dt is not None:
            cap = min(cap, spec.max_dt)
        try:
            state, stats = stepper.advance(state, cap)
        except SolverAbort as err:
            aborted = True
            reason = str(err)
            break
        total_steps += 1

        budget.step(state, stats.dt)
        ledger_rho.record(stats.dt, stats.outflux_rho)
        ledger_Z.record(stats.dt, stats.outflux_Z)
        scan = complementarity_scan(state, prob.params, theta)
        acc["pi_one_minus_Z"] += 0.5 * stats.dt * (
            prev_scan.pi_one_minus_Z + scan.pi_one_minus_Z)
        acc["divu_sq"] += 0.5 * stats.dt * (
            prev_scan.congested_divu_l2 ** 2 + scan.congested_divu_l2 ** 2)
        acc["pi_mass"] += 0.5 * stats.dt * (prev_scan.pi_mass + scan.pi_mass)
        acc["pi_Z_mass"] += 0.5 * stats.dt * (
            prev_scan.pi_Z_mass + scan.pi_Z_mass)
        prev_scan = scan

        window["steps"] += 1
        window["dt_min"] = min(window["dt_min"], stats.dt)
        window["dt_max"] = max(window["dt_max"], stats.dt)
        window["newton"] += stats.newton_iters
        window["halvings"] += stats.halvings

        if k <= n_out and state.t >= k * interval - tiny:
            emit(state)
            k += 1

    return RunResult(
        spec=spec,
        validation=report,
        records=records,
        final_state=state,
        states=states,
        aborted=aborted,
        abort_reason=reason,
    )
