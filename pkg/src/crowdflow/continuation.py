"""Stiffness continuation: sweep the pressure scale toward the hard limit.

A plan fixes one scenario (grid, horizon, data) and a strictly decreasing
sequence of pressure scales; each member runs with the truncation width
tied to the scale (or held fixed), and the report collects the trends that
certify the congestion limit: the complementarity defect, the congested
divergence, the weighted pressure masses, and Cauchy differences between
consecutive members on the shared grid.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .errors import DomainError, GridMismatch, ValidationFailure
from .pressure import PressureParams, singular_pressure
from .runner import RunResult, simulate
from .scenario import ScenarioSpec, with_pressure


@dataclass(frozen=True)
class ContinuationPlan:
    """A scenario plus the pressure scales to sweep, largest first.

    ``delta_rule`` is either ``"equal"`` (truncation width equals the
    scale, the default) or ``"fixed:<value>"`` for a constant width.
    All members share the scenario's grid and horizon by construction.
    """

    scenario: ScenarioSpec
    epsilons: tuple
    delta_rule: str = "equal"

    def __post_init__(self):
        eps = tuple(float(e) for e in self.epsilons)
        if len(eps) == 0:
            raise DomainError("a continuation plan needs at least one scale")
        if any(e <= 0.0 for e in eps):
            raise DomainError("pressure scales must be positive")
        if any(b >= a for a, b in zip(eps, eps[1:])):
            raise DomainError(
                "pressure scales must decrease strictly along the plan"
            )
        object.__setattr__(self, "epsilons", eps)
        self.delta_for(eps[0])  # validate the rule eagerly

    def delta_for(self, epsilon: float) -> float:
        if self.delta_rule == "equal":
            return epsilon
        if self.delta_rule.startswith("fixed:"):
            value = float(self.delta_rule.split(":", 1)[1])
            if value <= 0.0:
                raise DomainError("fixed truncation width must be positive")
            return value
        raise DomainError(
            f"unknown delta rule {self.delta_rule!r}; use 'equal' or "
            "'fixed:<value>'"
        )

    def member_spec(self, epsilon: float) -> ScenarioSpec:
        return with_pressure(self.scenario, epsilon=epsilon,
                             delta=self.delta_for(epsilon))


@dataclass
class LimitRow:
    """Per-member trend quantities of a continuation."""

    epsilon: float
    delta: float
    max_Z: float
    final_pi_one_minus_Z: float
    int_pi_one_minus_Z: float
    final_congested_fraction: float
    max_congested_fraction: float
    final_congested_divu_l2: float
    int_congested_divu_sq: float
    int_pi_mass: float
    int_pi_Z_mass: float
    steps_total: int
    newton_total: int


LIMIT_ROW_FIELDS = tuple(f.name for f in fields(LimitRow))


@dataclass
class CauchyRow:
    """Differences of the final fields between consecutive members."""

    eps_coarse: float
    eps_fine: float
    l1_Z: float
    linf_Z: float
    l1_rho: float
    linf_rho: float
    l1_u: float
    linf_u: float


CAUCHY_ROW_FIELDS = tuple(f.name for f in fields(CauchyRow))


@dataclass
class LimitReport:
    """Everything a finished (or cut short) continuation hands back."""

    plan: ContinuationPlan
    admissibility: str
    rows: list
    cauchy: list
    monotone_stiffening: bool
    members: list
    aborted: bool = False
    abort_reason: str | None = None


def _admissibility(validation) -> str:
    if validation.net_flux > 1e-14:
        return "positive-flux"
    if validation.smallness_lhs < validation.domain_volume:
        return "mass-margin"
    return "none"


def _limit_row(epsilon, delta, result: RunResult) -> LimitRow:
    rows = result.records
    last = rows[-1]
    return LimitRow(
        epsilon=epsilon,
        delta=delta,
        max_Z=max(r.max_Z for r in rows),
        final_pi_one_minus_Z=last.pi_one_minus_Z,
        int_pi_one_minus_Z=last.pi_one_minus_Z_acc,
        final_congested_fraction=last.congested_fraction,
        max_congested_fraction=max(r.congested_fraction for r in rows),
        final_congested_divu_l2=last.congested_divu_l2,
        int_congested_divu_sq=last.congested_divu_sq_acc,
        int_pi_mass=last.pi_mass_acc,
        int_pi_Z_mass=last.pi_Z_mass_acc,
        steps_total=sum(r.steps for r in rows),
        newton_total=sum(r.newton_total for r in rows),
    )


def run_continuation(plan: ContinuationPlan, *, theta: float = 0.05,
                     keep_states: bool = False, sink=None) -> LimitReport:
    """Run every member of the plan on the shared grid and horizon.

    A member that fails validation or aborts mid-run cuts the plan short;
    whatever completed stays in the report.  ``sink(epsilon, result)`` is
    called after every member that produced a run result — including the
    member whose abort cut the plan — so partial output is already
    persisted when the sweep stops early.
    """
    rows: list[LimitRow] = []
    members: list[RunResult] = []
    admissibility = "unknown"
    aborted = False
    reason = None
    for epsilon in plan.epsilons:
        spec = plan.member_spec(epsilon)
        try:
            result = simulate(spec, keep_states=keep_states, theta=theta)
        except ValidationFailure as err:
            aborted = True
            reason = f"member epsilon={epsilon:g} failed validation: {err}"
            break
        if admissibility == "unknown":
            admissibility = _admissibility(result.validation)
        members.append(result)
        if result.aborted:
            aborted = True
            reason = (
                f"member epsilon={epsilon:g} aborted: {result.abort_reason}"
            )
            if sink is not None:
                sink(epsilon, result)
            break
        rows.append(_limit_row(epsilon, plan.delta_for(epsilon), result))
        if sink is not None:
            sink(epsilon, result)

    cauchy = []
    if len(rows) >= 2:
        finals = [m.final_state for m in members[: len(rows)]]
        cauchy = cauchy_table([r.epsilon for r in rows], finals)
    monotone = all(
        b.max_Z <= a.max_Z + 1e-12 for a, b in zip(rows, rows[1:])
    )
    return LimitReport(
        plan=plan,
        admissibility=admissibility,
        rows=rows,
        cauchy=cauchy,
        monotone_stiffening=monotone,
        members=members,
        aborted=aborted,
        abort_reason=reason,
    )


def cauchy_table(epsilons, states) -> list:
    """L1 and max-norm differences of final fields, consecutive pairs.

    All states must live on one grid; anything else is a hard error, not a
    large difference.
    """
    if len(states) < 2:
        raise GridMismatch("a Cauchy table needs at least two members")
    grid = states[0].grid
    for s in states[1:]:
        if s.grid.cells != grid.cells or s.grid.lengths != grid.lengths:
            raise GridMismatch("members live on different grids")
    dV = grid.cell_volume
    out = []
    for (ea, sa), (eb, sb) in zip(zip(epsilons, states),
                                  zip(epsilons[1:], states[1:])):
        dz = np.abs(sa.Z - sb.Z)
        dr = np.abs(sa.rho - sb.rho)
        l1_u = 0.0
        linf_u = 0.0
        for ca, cb in zip(sa.u, sb.u):
            du = np.abs(ca - cb)
            l1_u += float(np.sum(du)) * dV
            linf_u = max(linf_u, float(du.max()))
        out.append(CauchyRow(
            eps_coarse=ea, eps_fine=eb,
            l1_Z=float(np.sum(dz)) * dV, linf_Z=float(dz.max()),
            l1_rho=float(np.sum(dr)) * dV, linf_rho=float(dr.max()),
            l1_u=l1_u, linf_u=linf_u,
        ))
    return out


def pi_epsilon_identity_check(Z, params: PressureParams) -> float:
    """Largest relative defect of z pi - pi + eps z^a (1-z)^(1-b) = 0.

    Evaluated only where the law is genuinely singular (at or below the
    truncation branch point); the truncated tail obeys a different formula
    by construction.
    """
    z = np.asarray(Z, dtype=float).ravel()
    cap = params.branch_point if params.delta > 0.0 else 1.0
    z = z[(z >= 0.0) & (z <= cap)]
    if z.size == 0:
        return 0.0
    pi = np.asarray(singular_pressure(z, params))
    g = params.epsilon * z ** params.alpha * (1.0 - z) ** (1.0 - params.beta)
    defect = np.abs(z * pi - pi + g)
    scale = np.maximum(np.abs(pi) + g, 1e-30)
    return float((defect / scale).max())
