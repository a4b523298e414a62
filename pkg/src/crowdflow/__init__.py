"""Finite-volume tools for congestion-limited two-phase flow.

The package simulates a mixture whose local congestion ratio z = rho/rhostar
must stay below 1.  A steep barrier pressure enforces the constraint at finite
stiffness; a continuation driver sweeps the stiffness down and reports how the
hard-congestion limit is approached.
"""

from .continuation import (CAUCHY_ROW_FIELDS, LIMIT_ROW_FIELDS, CauchyRow,
                           ContinuationPlan, LimitReport, LimitRow,
                           cauchy_table, pi_epsilon_identity_check,
                           run_continuation)
from .diagnostics import (ComplementarityReport, ConstraintReport,
                          EnergyBudget, LedgerReport, MassLedger,
                          RecoveryReport, cell_velocity,
                          complementarity_scan, constraint_monitor,
                          plateau_weight, recovery_check,
                          renormalized_residual)
from .domain import (BoundaryData, BoundaryPartition, ExtensionField, Grid,
                     ValidationReport, build_extension, classify_boundary,
                     divergence, net_boundary_flux, validate_problem_data)
from .errors import (CflViolation, ConfigError, CrowdflowError, DomainError,
                     GridMismatch, NewtonFailure, OutputLocked, SolverAbort,
                     ValidationFailure)
from .pressure import (PressureParams, energy_potential, pressure_derivative,
                       singular_pressure, sound_speed,
                       truncated_energy_potential, truncated_pressure)
from .runio import RunDirectory, resolve_output_dir, write_limit_report
from .runner import RECORD_FIELDS, DiagnosticsRecord, RunResult, simulate
from .scenario import (PRESET_NAMES, ProblemData, ScenarioSpec, build_problem,
                       parse_scenario, preset, serialize_scenario)
from .solver import State, Stepper, compute_dt, init_state, law_pressure

__version__ = "0.1.0"

__all__ = [
    "BoundaryData", "BoundaryPartition", "CAUCHY_ROW_FIELDS", "CauchyRow",
    "CflViolation", "ComplementarityReport", "ConfigError",
    "ConstraintReport", "ContinuationPlan", "CrowdflowError",
    "DiagnosticsRecord", "DomainError", "EnergyBudget", "ExtensionField",
    "Grid", "GridMismatch", "LIMIT_ROW_FIELDS", "LedgerReport", "LimitReport",
    "LimitRow", "MassLedger", "NewtonFailure", "OutputLocked", "PRESET_NAMES",
    "PressureParams", "ProblemData", "RECORD_FIELDS", "RecoveryReport",
    "RunDirectory", "RunResult", "ScenarioSpec", "SolverAbort", "State",
    "Stepper", "ValidationFailure", "ValidationReport", "build_extension",
    "build_problem", "cauchy_table", "cell_velocity", "classify_boundary",
    "complementarity_scan", "compute_dt", "constraint_monitor", "divergence",
    "energy_potential", "init_state", "law_pressure", "net_boundary_flux",
    "parse_scenario", "pi_epsilon_identity_check", "plateau_weight",
    "preset", "pressure_derivative", "recovery_check",
    "renormalized_residual", "resolve_output_dir", "run_continuation",
    "serialize_scenario", "simulate", "singular_pressure", "sound_speed",
    "truncated_energy_potential", "truncated_pressure",
    "validate_problem_data", "write_limit_report", "__version__",
]
