"""Run diagnostics: energy budget, ledgers, constraint and residual monitors.

Every spatial integral is a midpoint sum over cells (exact for cell-constant
fields); every time integral is a trapezoid accumulation over the accepted
steps.  Velocities live on faces, so cell values are arithmetic face
averages and cell gradients come from face differences (normal derivatives)
or centered differences of the averaged field (shear derivatives).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .domain import BoundaryPartition, DomainError, ExtensionField, Grid, divergence
from .errors import GridMismatch
from .pressure import (
    PressureParams,
    energy_potential,
    truncated_energy_potential,
)
from .solver import State, law_pressure


def law_potential(z, params: PressureParams):
    """Energy potential under the run's truncation rule (see law_pressure)."""
    if params.delta > 0.0:
        return truncated_energy_potential(z, params)
    return energy_potential(z, params)


def cell_velocity(grid: Grid, u: tuple) -> tuple:
    """Face velocity averaged to cell centers, one array per component."""
    if grid.dimension == 1:
        return (0.5 * (u[0][:-1] + u[0][1:]),)
    ux, uy = u
    return (0.5 * (ux[:-1, :] + ux[1:, :]), 0.5 * (uy[:, :-1] + uy[:, 1:]))


def _cell_gradients(grid: Grid, comps: tuple):
    """Per-cell velocity gradients.

    Normal derivatives (d ux/dx, d uy/dy) are exact face differences; the
    shear derivatives use centered differences of the cell-averaged
    components with one-sided stencils at the walls.
    """
    if grid.dimension == 1:
        dx = grid.spacing[0]
        return {"xx": (comps[0][1:] - comps[0][:-1]) / dx}
    dx, dy = grid.spacing
    ux, uy = comps
    cux, cuy = cell_velocity(grid, comps)
    return {
        "xx": (ux[1:, :] - ux[:-1, :]) / dx,
        "yy": (uy[:, 1:] - uy[:, :-1]) / dy,
        "xy": np.gradient(cux, dy, axis=1),
        "yx": np.gradient(cuy, dx, axis=0),
    }


def _stress_terms(grads: dict, mu: float, lam: float):
    """2 mu |D|^2 + lam (div)^2 cellwise, plus the pieces for cross terms."""
    if "yy" not in grads:
        dxx = grads["xx"]
        return (2.0 * mu + lam) * dxx * dxx
    dxx, dyy = grads["xx"], grads["yy"]
    dxy = 0.5 * (grads["xy"] + grads["yx"])
    div = dxx + dyy
    return 2.0 * mu * (dxx * dxx + dyy * dyy + 2.0 * dxy * dxy) + lam * div * div


def _stress_contraction(ga: dict, gb: dict, mu: float, lam: float):
    """S(grad a) : D(grad b) cellwise."""
    if "yy" not in ga:
        return (2.0 * mu + lam) * ga["xx"] * gb["xx"]
    da_xy = 0.5 * (ga["xy"] + ga["yx"])
    db_xy = 0.5 * (gb["xy"] + gb["yx"])
    diva = ga["xx"] + ga["yy"]
    divb = gb["xx"] + gb["yy"]
    return (
        2.0 * mu * (ga["xx"] * gb["xx"] + ga["yy"] * gb["yy"] + 2.0 * da_xy * db_xy)
        + lam * diva * divb
    )


# ---------------------------------------------------------------------------
# energy budget
# ---------------------------------------------------------------------------


@dataclass
class EnergyReport:
    """One evaluation of the relative-energy balance.

    ``kinetic`` and ``potential`` are instantaneous; the other terms are
    time integrals accumulated since the budget began.  ``residual`` is the
    balance defect (left side minus right side); the semidiscrete estimate
    makes it nonpositive up to discretization error.
    """

    time: float
    kinetic: float
    potential: float
    dissipation: float
    pressure_work: float
    convective_work: float
    viscous_cross: float
    boundary_H_flux: float
    forcing_work: float
    initial_energy: float

    @property
    def residual(self) -> float:
        lhs = self.kinetic + self.potential + self.dissipation + self.pressure_work
        rhs = (
            self.initial_energy
            + self.convective_work
            + self.viscous_cross
            + self.boundary_H_flux
            + self.forcing_work
        )
        return lhs - rhs


class EnergyBudget:
    """Trapezoid accumulator for the relative-energy inequality.

    Feed it every accepted step via :meth:`step`; ask for an
    :class:`EnergyReport` whenever a record is due.  The reference velocity
    is the boundary extension, so a run whose velocity equals the extension
    has zero relative energy throughout.
    """

    def __init__(self, grid: Grid, ext: ExtensionField, params: PressureParams,
                 mu: float, lam: float, bdata, partition: BoundaryPartition,
                 w: tuple | None = None):
        self.grid = grid
        self.ext = ext
        self.params = params
        self.mu = mu
        self.lam = lam
        self.w = w
        self._ext_cell = cell_velocity(grid, ext.components)
        self._ext_grads = _cell_gradients(grid, ext.components)
        self._bH_rate = self._boundary_potential_rate(bdata, partition)
        self._acc = {
            "dissipation": 0.0, "pressure_work": 0.0, "convective_work": 0.0,
            "viscous_cross": 0.0, "boundary_H_flux": 0.0, "forcing_work": 0.0,
        }
        self._prev = None
        self._e0 = None
        self._t0 = None

    def _boundary_potential_rate(self, bdata, partition) -> float:
        rate = 0.0
        for side, mask in partition.inflow.items():
            if not np.any(mask):
                continue
            zb = bdata.rho[side] / bdata.rhostar[side]
            un = bdata.normal_velocity(side)
            h = np.asarray(law_potential(zb, self.params))
            rate -= float(np.sum(h[mask] * un[mask]) * self.grid.side_area(side))
        return rate

    def _relative_velocity(self, state: State):
        return tuple(c - e for c, e in zip(state.u, self.ext.components))

    def kinetic(self, state: State) -> float:
        v = cell_velocity(self.grid, self._relative_velocity(state))
        sq = sum(c * c for c in v)
        return 0.5 * float(np.sum(state.rho * sq)) * self.grid.cell_volume

    def potential(self, state: State) -> float:
        h = law_potential(state.Z, self.params)
        return float(np.sum(h)) * self.grid.cell_volume

    def rates(self, state: State) -> dict:
        grid = self.grid
        dV = grid.cell_volume
        rel = self._relative_velocity(state)
        v = cell_velocity(grid, rel)
        grads = _cell_gradients(grid, rel)

        dissipation = float(np.sum(_stress_terms(grads, self.mu, self.lam))) * dV
        pressure_work = float(
            np.sum(law_pressure(state.Z, self.params) * self.ext.div)
        ) * dV

        ucell = cell_velocity(grid, state.u)
        conv = np.zeros(grid.scalar_shape())
        if grid.dimension == 1:
            conv += ucell[0] * self._ext_grads["xx"] * v[0]
        else:
            conv += (ucell[0] * self._ext_grads["xx"] + ucell[1] * self._ext_grads["xy"]) * v[0]
            conv += (ucell[0] * self._ext_grads["yx"] + ucell[1] * self._ext_grads["yy"]) * v[1]
        convective = -float(np.sum(state.rho * conv)) * dV

        cross = -float(
            np.sum(_stress_contraction(self._ext_grads, grads, self.mu, self.lam))
        ) * dV

        forcing = 0.0
        if self.w is not None:
            wc = cell_velocity(grid, self.w)
            dot = sum((wi - ui) * vi for wi, ui, vi in zip(wc, ucell, v))
            forcing = float(np.sum(state.rho * dot)) * dV

        return {
            "dissipation": dissipation,
            "pressure_work": pressure_work,
            "convective_work": convective,
            "viscous_cross": cross,
            "boundary_H_flux": self._bH_rate,
            "forcing_work": forcing,
        }

    def begin(self, state: State):
        self._prev = self.rates(state)
        self._e0 = self.kinetic(state) + self.potential(state)
        self._t0 = state.t

    def step(self, state: State, dt: float):
        if self._prev is None:
            raise RuntimeError("EnergyBudget.begin was never called")
        now = self.rates(state)
        for key, acc in self._acc.items():
            self._acc[key] = acc + 0.5 * dt * (self._prev[key] + now[key])
        self._prev = now

    def report(self, state: State) -> EnergyReport:
        if self._e0 is None:
            raise RuntimeError("EnergyBudget.begin was never called")
        return EnergyReport(
            time=state.t,
            kinetic=self.kinetic(state),
            potential=self.potential(state),
            initial_energy=self._e0,
            **self._acc,
        )


def energy_budget(states, ext, params, mu, lam, bdata, partition,
                  w=None) -> list:
    """Budget reports along a stored history (coarse trapezoid in time)."""
    budget = EnergyBudget(states[0].grid, ext, params, mu, lam, bdata,
                          partition, w)
    budget.begin(states[0])
    out = [budget.report(states[0])]
    for prev, cur in zip(states, states[1:]):
        budget.step(cur, cur.t - prev.t)
        out.append(budget.report(cur))
    return out


# ---------------------------------------------------------------------------
# mass ledgers
# ---------------------------------------------------------------------------


@dataclass
class LedgerReport:
    """Mass bookkeeping for one conserved field at one time.

    ``defect`` is current mass minus initial mass minus accumulated inflow;
    the conservative update makes it equal minus the accumulated outflow,
    so it is nonpositive whenever the field is nonnegative.
    """

    mass: float
    initial_mass: float
    inflow: float
    outflow: float

    @property
    def defect(self) -> float:
        return self.mass - self.initial_mass - self.inflow


class MassLedger:
    """Accumulates boundary fluxes of one cell field across a run."""

    def __init__(self, grid: Grid, initial: np.ndarray, traces: dict,
                 bdata, partition: BoundaryPartition):
        self.grid = grid
        self.initial_mass = float(np.sum(initial)) * grid.cell_volume
        rate = 0.0
        for side, mask in partition.inflow.items():
            if not np.any(mask):
                continue
            un = bdata.normal_velocity(side)
            tr = np.atleast_1d(np.asarray(traces[side], dtype=float))
            rate -= float(np.sum(tr[mask] * un[mask]) * grid.side_area(side))
        self.influx_rate = rate  # nonnegative for admissible data
        self._inflow = 0.0
        self._dt_outflux = 0.0

    def record(self, dt: float, outflux: float):
        """Fold in one accepted step's net outward boundary flux."""
        self._inflow += dt * self.influx_rate
        self._dt_outflux += dt * outflux

    @property
    def inflow(self) -> float:
        return self._inflow

    @property
    def outflow(self) -> float:
        """Accumulated gross outflow (net outward flux plus the inflow)."""
        return self._dt_outflux + self._inflow

    def report(self, field: np.ndarray) -> LedgerReport:
        return LedgerReport(
            mass=float(np.sum(field)) * self.grid.cell_volume,
            initial_mass=self.initial_mass,
            inflow=self._inflow,
            outflow=self.outflow,
        )


# ---------------------------------------------------------------------------
# pointwise constraint monitor
# ---------------------------------------------------------------------------


@dataclass
class ConstraintReport:
    """Extrema tied to the hard bounds the scheme must respect."""

    max_Z: float
    min_rho: float
    min_rhostar_minus_rho: float
    comparison_defect_low: float
    comparison_defect_high: float
    inward_outflow_events: int


def constraint_monitor(state: State, c_lower: float, c_upper: float,
                       inward_outflow_events: int = 0) -> ConstraintReport:
    """Extrema of the congestion bounds and the two-sided comparison.

    ``c_lower`` and ``c_upper`` are the proportionality constants from the
    validation report (reciprocals of the congestion-density extrema): the
    transported structure keeps c_lower * rho <= Z <= c_upper * rho, and the
    defects report the largest violation of either side.
    """
    low = c_lower * state.rho - state.Z
    high = state.Z - c_upper * state.rho
    return ConstraintReport(
        max_Z=float(state.Z.max()),
        min_rho=float(state.rho.min()),
        min_rhostar_minus_rho=float((state.rhostar - state.rho).min()),
        comparison_defect_low=float(np.maximum(low, 0.0).max()),
        comparison_defect_high=float(np.maximum(high, 0.0).max()),
        inward_outflow_events=inward_outflow_events,
    )


# ---------------------------------------------------------------------------
# complementarity monitor
# ---------------------------------------------------------------------------


@dataclass
class ComplementarityReport:
    """Instantaneous congestion/pressure compatibility measures."""

    pi_one_minus_Z: float
    congested_fraction: float
    congested_divu_l2: float
    pi_mass: float
    pi_Z_mass: float


def plateau_weight(grid: Grid) -> np.ndarray:
    """Interior weight: 1 on the middle half, linear ramp over each quarter."""

    def ramp(axis):
        x = grid.centers(axis)
        L = grid.lengths[axis]
        return np.clip(4.0 * np.minimum(x, L - x) / L, 0.0, 1.0)

    psi = ramp(0)
    if grid.dimension == 2:
        psi = psi[:, None] * ramp(1)[None, :]
    return psi


def complementarity_scan(state: State, params: PressureParams,
                         theta: float = 0.05) -> ComplementarityReport:
    """Pressure-versus-congestion compatibility at one time.

    ``theta`` in (0, 1/2) sets the congestion threshold 1 - theta.  The
    weighted masses use the plateau weight, so they see only the interior
    and depend linearly on the pressure law.
    """
    if not 0.0 < theta < 0.5:
        raise DomainError("theta must lie in (0, 1/2)")
    grid = state.grid
    dV = grid.cell_volume
    pi = np.asarray(law_pressure(state.Z, params))
    psi = plateau_weight(grid)
    congested = state.Z >= 1.0 - theta
    divu = divergence(grid, state.u)
    return ComplementarityReport(
        pi_one_minus_Z=float(np.sum(pi * (1.0 - state.Z))) * dV,
        congested_fraction=float(np.count_nonzero(congested)) / state.Z.size,
        congested_divu_l2=math.sqrt(float(np.sum(divu[congested] ** 2)) * dV),
        pi_mass=float(np.sum(psi * pi)) * dV,
        pi_Z_mass=float(np.sum(psi * pi * state.Z)) * dV,
    )


# ---------------------------------------------------------------------------
# congestion-density recovery
# ---------------------------------------------------------------------------


@dataclass
class RecoveryReport:
    """Agreement between the transported congestion density and rho/Z."""

    max_defect: float
    l1_defect: float


def recovery_check(state: State, threshold: float = 1e-6) -> RecoveryReport:
    """Compare rhostar against rho/Z wherever Z is meaningfully positive."""
    mask = state.Z > threshold
    if not np.any(mask):
        return RecoveryReport(0.0, 0.0)
    defect = np.abs(state.rhostar[mask] - state.rho[mask] / state.Z[mask])
    return RecoveryReport(
        max_defect=float(defect.max()),
        l1_defect=float(np.sum(defect)) * state.grid.cell_volume,
    )


# ---------------------------------------------------------------------------
# renormalized transport residual
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Window:
    """Tensor-product hat test function on a space-time box.

    The support must sit strictly inside the domain and strictly inside the
    recorded time range; boundary-touching windows are rejected so the
    residual never sees boundary terms.
    """

    x_center: float
    x_halfwidth: float
    t_center: float
    t_halfwidth: float
    y_center: float = 0.0
    y_halfwidth: float = 0.0


def _hat(x, center, halfwidth):
    return np.maximum(0.0, 1.0 - np.abs(x - center) / halfwidth)


def _xlogx(z):
    z = np.asarray(z, dtype=float)
    out = np.zeros(z.shape)
    pos = z > 0.0
    out[pos] = z[pos] * np.log(z[pos])
    return out


def renormalized_residual(states, windows) -> list:
    """Weak residual of the congestion-ratio transport in entropy form.

    The transported quantity is b(Z) = Z log Z; testing the transport
    equation with a compact hat leaves the time term, the flux term, and
    the Z div u term (the entropy's defect b'(Z) Z - b(Z) collapses to Z).
    Each window's residual is normalized by its space-time mass so refining
    the history shows the scheme's first-order decay directly.
    """
    if len(states) < 2:
        raise GridMismatch("need at least two stored states")
    grid = states[0].grid
    for s in states:
        if s.grid.cells != grid.cells:
            raise GridMismatch("stored states live on different grids")
    times = [s.t for s in states]
    dV = grid.cell_volume

    out = []
    for win in windows:
        if not (win.x_halfwidth > 0.0 and win.t_halfwidth > 0.0):
            raise DomainError("window halfwidths must be positive")
        if (win.x_center - win.x_halfwidth <= 0.0
                or win.x_center + win.x_halfwidth >= grid.lengths[0]):
            raise DomainError("window support touches the domain boundary")
        if grid.dimension == 2:
            if win.y_halfwidth <= 0.0:
                raise DomainError("2D windows need a y halfwidth")
            if (win.y_center - win.y_halfwidth <= 0.0
                    or win.y_center + win.y_halfwidth >= grid.lengths[1]):
                raise DomainError("window support touches the domain boundary")
        if (win.t_center - win.t_halfwidth < times[0]
                or win.t_center + win.t_halfwidth > times[-1]):
            raise DomainError("window support leaves the recorded time range")

        phi = _hat(grid.centers(0), win.x_center, win.x_halfwidth)
        if grid.dimension == 2:
            phi = phi[:, None] * _hat(grid.centers(1), win.y_center,
                                      win.y_halfwidth)[None, :]

        def spatial_terms(s):
            b = _xlogx(s.Z)
            # flux term: - sum over interior faces of u b (phi jump) / h,
            # the discrete integration by parts of div(u b) against phi
            if grid.dimension == 1:
                dx = grid.spacing[0]
                bf = 0.5 * (b[:-1] + b[1:])
                dphi = (phi[1:] - phi[:-1]) / dx
                flux = -float(np.sum(s.u[0][1:-1] * bf * dphi)) * dV
            else:
                dx, dy = grid.spacing
                bfx = 0.5 * (b[:-1, :] + b[1:, :])
                dphix = (phi[1:, :] - phi[:-1, :]) / dx
                flux = -float(np.sum(s.u[0][1:-1, :] * bfx * dphix)) * dV
                bfy = 0.5 * (b[:, :-1] + b[:, 1:])
                dphiy = (phi[:, 1:] - phi[:, :-1]) / dy
                flux -= float(np.sum(s.u[1][:, 1:-1] * bfy * dphiy)) * dV
            zdiv = float(np.sum(s.Z * divergence(grid, s.u) * phi)) * dV
            return flux + zdiv

        residual = 0.0
        mass = 0.0
        spatial_prev = spatial_terms(states[0])
        phi_mass = float(np.sum(phi)) * dV
        for sa, sb in zip(states, states[1:]):
            dt = sb.t - sa.t
            tmid = 0.5 * (sa.t + sb.t)
            wt = float(_hat(np.array([tmid]), win.t_center, win.t_halfwidth)[0])
            spatial_next = spatial_terms(sb)
            if wt > 0.0:
                db = float(np.sum((_xlogx(sb.Z) - _xlogx(sa.Z)) * phi)) * dV
                residual += wt * (db + 0.5 * dt * (spatial_prev + spatial_next))
                mass += wt * dt * phi_mass
            spatial_prev = spatial_next
        if mass <= 0.0:
            raise DomainError("window mass vanishes on the recorded times")
        out.append(residual / mass)
    return out
