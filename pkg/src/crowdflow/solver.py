"""Time stepping for the congested two-phase model.

The scheme is a first-order donor-cell finite-volume method on a staggered
grid: densities and the congestion ratio live at cell centers, velocity
components at face centers.  Two pressure treatments are available:

``explicit``
    Transport and the barrier-pressure gradient are both explicit; the time
    step carries the acoustic restriction ``dx / (|u| + c)``.

``imex``
    The pressure gradient and the congestion-ratio transport are advanced
    together by a backward-Euler subsystem solved with Newton iteration on
    the ratio field, the face velocities being eliminated.  Only the
    material restriction ``dx / |u|`` remains.

Both modes advect the mass density and the congestion ratio through the
*same* flux routine with the *same* upwind decisions, so Z0 = c * rho0 with
matching boundary traces propagates to Z = c * rho after every step — exactly
in floating point when c is a power of two.

Viscosity and the velocity relaxation are implicit (backward Euler); the
relaxation rate is the unit rate of the model, switched on by supplying a
target field w.  Faces whose interpolated density falls below ``VACUUM_RHO``
drop out of the momentum balance and take the extension-field velocity.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.linalg import solve_banded
from scipy.sparse.linalg import spsolve

from .domain import (
    ZERO_FLUX_TOL,
    BoundaryData,
    BoundaryPartition,
    ExtensionField,
    Grid,
    tangential_target,
    classify_boundary,
)
from .errors import CflViolation, DomainError, NewtonFailure, SolverAbort
from .pressure import (
    PressureParams,
    pressure_derivative,
    singular_pressure,
    sound_speed,
    truncated_pressure,
)

VACUUM_RHO = 1e-12
# a congestion ratio this far above 1 means the run has left the regime the
# truncated law can control; treated as blow-up
OVERSHOOT_LIMIT = 1.2
# Newton iterates are clamped into [0, ZMAX_UNTRUNCATED] when the barrier law
# is used without truncation (delta = 0), where the law needs z < 1
ZMAX_UNTRUNCATED = 1.0 - 1e-9


def law_pressure(z, p: PressureParams):
    """Pressure law actually integrated: truncated if delta > 0, barrier else."""
    if p.delta > 0.0:
        return truncated_pressure(z, p)
    return singular_pressure(z, p)


def law_derivative(z, p: PressureParams):
    return pressure_derivative(z, p, truncated=p.delta > 0.0)


@dataclass(frozen=True)
class StepConfig:
    """Numerical knobs for the time stepper.

    Parameters
    ----------
    mode : str
        "imex" (default) or "explicit" pressure treatment.
    cfl : float
        Courant number in (0, 1); 0.4 unless overridden.
    newton_tol : float
        Max-norm residual tolerance of the implicit congestion solve.
    newton_max_iters : int
        Iteration cap before the step falls back to a halved dt.
    eta : float
        Artificial-diffusion coefficient applied to rho and Z (0 disables).
    mu, lam : float
        Shear and bulk viscosity; mu > 0, lam >= 0.
    max_halvings : int
        How many dt halvings a single step may attempt before aborting.
    force_dt : float, optional
        Debugging lever: skip the stability-based dt choice and take this
        step size (clipped to the caller's cap).  A forced step that trips
        the stability or convergence guards aborts instead of halving.
    """

    mode: str = "imex"
    cfl: float = 0.4
    newton_tol: float = 1e-10
    newton_max_iters: int = 30
    eta: float = 0.0
    mu: float = 0.1
    lam: float = 0.0
    max_halvings: int = 10
    force_dt: float | None = None

    def __post_init__(self):
        if self.mode not in ("imex", "explicit"):
            raise ValueError(f"unknown stepping mode {self.mode!r}")
        if not 0.0 < self.cfl < 1.0:
            raise ValueError("cfl must lie in (0, 1)")
        if self.force_dt is not None and self.force_dt <= 0.0:
            raise ValueError("force_dt must be positive when given")
        if self.mu <= 0.0:
            raise ValueError("mu must be positive")
        if self.lam < 0.0:
            raise ValueError("lam must be nonnegative")
        if self.eta < 0.0:
            raise ValueError("eta must be nonnegative")


@dataclass
class State:
    """Discrete unknowns at one time level.

    ``rho`` and ``rhostar`` are cell fields, ``Z`` the cell congestion
    ratio, ``u`` the tuple of staggered velocity components (one per axis,
    boundary faces included).
    """

    grid: Grid
    rho: np.ndarray
    Z: np.ndarray
    rhostar: np.ndarray
    u: tuple
    t: float = 0.0

    def copy(self):
        return State(
            grid=self.grid,
            rho=self.rho.copy(),
            Z=self.Z.copy(),
            rhostar=self.rhostar.copy(),
            u=tuple(c.copy() for c in self.u),
            t=self.t,
        )


@dataclass
class StepStats:
    """Bookkeeping for one accepted step.

    ``outflux_rho`` and ``outflux_Z`` are the realized net outward boundary
    fluxes of the step (area-integrated, per unit time), exactly the
    quantities whose time integral the cell sums respond to.
    ``reversal_events`` counts outflow faces whose nearest interior face
    pulled inward during this step.
    """

    dt: float
    newton_iters: int = 0
    halvings: int = 0
    reversal_events: int = 0
    outflux_rho: float = 0.0
    outflux_Z: float = 0.0


def init_state(grid: Grid, rho0, rhostar0, u0, bdata: BoundaryData) -> State:
    """Assemble the initial state; the ratio is the pointwise quotient.

    Boundary faces of the velocity are overwritten with the prescribed
    traces so the first step starts from consistent data.
    """
    rho = np.array(rho0, dtype=float)
    rhostar = np.array(rhostar0, dtype=float)
    if rho.shape != grid.scalar_shape() or rhostar.shape != grid.scalar_shape():
        raise DomainError("initial cell fields do not match the grid")
    if np.any(rho < 0.0):
        raise DomainError("initial density must be nonnegative")
    if np.any(rhostar <= 0.0):
        raise DomainError("initial congestion density must be positive")
    Z = rho / rhostar
    if np.any(Z >= 1.0):
        raise DomainError(
            "initial congestion ratio reaches 1 somewhere; the initial "
            "potential energy is infinite"
        )
    comps = [np.array(c, dtype=float) for c in u0]
    shapes = grid.velocity_shapes()
    if len(comps) != len(shapes) or any(c.shape != s for c, s in zip(comps, shapes)):
        raise DomainError("initial velocity does not match the staggered layout")
    _pin_boundary_faces(grid, comps, bdata)
    return State(grid=grid, rho=rho, Z=Z, rhostar=rhostar, u=tuple(comps), t=0.0)


def _pin_boundary_faces(grid, comps, bdata):
    if grid.dimension == 1:
        comps[0][0] = bdata.u["left"][0]
        comps[0][-1] = bdata.u["right"][0]
    else:
        comps[0][0, :] = bdata.u["left"]
        comps[0][-1, :] = bdata.u["right"]
        comps[1][:, 0] = bdata.u["bottom"]
        comps[1][:, -1] = bdata.u["top"]


# ---------------------------------------------------------------------------
# upwind machinery shared by every transported cell field
# ---------------------------------------------------------------------------


def upwind_weights(u: np.ndarray) -> np.ndarray:
    """Donor-cell weight of the *lower-index* neighbor at each face.

    1 where the face velocity is positive, 0 where negative, 1/2 at exact
    zeros (the flux vanishes there; the average only matters for
    reconstruction diagnostics).
    """
    w = np.where(u > 0.0, 1.0, 0.0)
    return np.where(u == 0.0, 0.5, w)


def _face_values_1d(X, trace_left, trace_right, w):
    """Upwind-reconstructed values at all faces of a 1D cell field."""
    vals = np.empty(X.size + 1)
    vals[1:-1] = w[1:-1] * X[:-1] + (1.0 - w[1:-1]) * X[1:]
    left = X[0] if trace_left is None else trace_left
    right = X[-1] if trace_right is None else trace_right
    vals[0] = w[0] * left + (1.0 - w[0]) * X[0]
    vals[-1] = w[-1] * X[-1] + (1.0 - w[-1]) * right
    return vals


def _trace_or_none(traces, side, partition):
    """Boundary value used on the upwind side of a boundary face.

    Inflow faces must carry a trace; outflow faces never need one (the
    upwind value is interior there), so missing traces are fine.
    """
    tr = traces.get(side)
    if tr is None and np.any(partition.inflow[side]):
        raise DomainError(f"missing inflow trace on side {side!r}")
    return tr


def mass_fluxes(grid, X, u, traces, partition):
    """Donor-cell fluxes of a cell field through every face.

    Parameters
    ----------
    X : ndarray
        Cell field.
    u : tuple of ndarray
        Face velocities (boundary faces carry the prescribed traces).
    traces : dict
        side -> boundary value array for X (only consulted upwind of
        inflow faces).
    partition : BoundaryPartition

    Returns
    -------
    fluxes : tuple of ndarray
        One per axis, at the faces of that axis.
    outward : float
        Net outward boundary flux (volume integral rate of change is its
        negative), exact by construction.
    """
    if grid.dimension == 1:
        w = upwind_weights(u[0])
        tl = _trace_or_none(traces, "left", partition)
        tr = _trace_or_none(traces, "right", partition)
        vals = _face_values_1d(
            X, None if tl is None else tl[0], None if tr is None else tr[0], w
        )
        F = u[0] * vals
        outward = F[-1] - F[0]
        return (F,), float(outward)

    nx, ny = grid.cells
    dx, dy = grid.spacing
    ux, uy = u
    wx = upwind_weights(ux)
    wy = upwind_weights(uy)
    Fx = np.empty((nx + 1, ny))
    Fx[1:nx] = ux[1:nx] * (wx[1:nx] * X[:-1] + (1.0 - wx[1:nx]) * X[1:])
    tl = _trace_or_none(traces, "left", partition)
    tr = _trace_or_none(traces, "right", partition)
    left = X[0] if tl is None else tl
    right = X[-1] if tr is None else tr
    Fx[0] = ux[0] * (wx[0] * left + (1.0 - wx[0]) * X[0])
    Fx[nx] = ux[nx] * (wx[nx] * X[-1] + (1.0 - wx[nx]) * right)

    Fy = np.empty((nx, ny + 1))
    Fy[:, 1:ny] = uy[:, 1:ny] * (
        wy[:, 1:ny] * X[:, :-1] + (1.0 - wy[:, 1:ny]) * X[:, 1:]
    )
    tb = _trace_or_none(traces, "bottom", partition)
    tt = _trace_or_none(traces, "top", partition)
    bottom = X[:, 0] if tb is None else tb
    top = X[:, -1] if tt is None else tt
    Fy[:, 0] = uy[:, 0] * (wy[:, 0] * bottom + (1.0 - wy[:, 0]) * X[:, 0])
    Fy[:, ny] = uy[:, ny] * (wy[:, ny] * X[:, -1] + (1.0 - wy[:, ny]) * top)

    outward = (
        (Fx[nx].sum() - Fx[0].sum()) * dy + (Fy[:, ny].sum() - Fy[:, 0].sum()) * dx
    )
    return (Fx, Fy), float(outward)


def flux_divergence(grid, fluxes):
    """Cellwise divergence of face fluxes."""
    if grid.dimension == 1:
        return np.diff(fluxes[0]) / grid.spacing[0]
    dx, dy = grid.spacing
    Fx, Fy = fluxes
    return np.diff(Fx, axis=0) / dx + np.diff(Fy, axis=1) / dy


def advective_cfl_ok(grid, u, dt):
    """Donor-cell stability: no face may empty more than its donor cell."""
    for axis, comp in enumerate(u):
        vmax = float(np.max(np.abs(comp)))
        if dt * vmax > grid.spacing[axis] * (1.0 + 1e-12):
            return False
    return True


def advect_conservative(grid, X, u, traces, partition, dt):
    """One donor-cell step of d/dt X + div(X u) = 0.

    Returns the updated field and the net outward boundary flux; the total
    cell sum changes by exactly ``-dt * outward * face_area`` (telescoping).
    """
    if not advective_cfl_ok(grid, u, dt):
        raise CflViolation("advective step exceeds the donor-cell limit")
    fluxes, outward = mass_fluxes(grid, X, u, traces, partition)
    return X - dt * flux_divergence(grid, fluxes), outward


def advect_rhostar(grid, X, u, traces, partition, dt):
    """Upwind step of the transport (non-divergence) form d/dt X + u.grad X = 0.

    Constant fields are preserved exactly whatever div u is, and the update
    is a convex combination of stencil values (boundary trace included)
    under the step's CFL bound, so no new extrema appear.
    """
    if grid.dimension == 1:
        dx = grid.spacing[0]
        un = u[0]
        up = np.maximum(un[:-1], 0.0)
        um = np.minimum(un[1:], 0.0)
        tl = _trace_or_none(traces, "left", partition)
        tr = _trace_or_none(traces, "right", partition)
        Xl = np.concatenate(([X[0] if tl is None else tl[0]], X[:-1]))
        Xr = np.concatenate((X[1:], [X[-1] if tr is None else tr[0]]))
        return X - dt / dx * (up * (X - Xl) + um * (Xr - X))

    dx, dy = grid.spacing
    ux, uy = u
    tl = _trace_or_none(traces, "left", partition)
    tr = _trace_or_none(traces, "right", partition)
    tb = _trace_or_none(traces, "bottom", partition)
    tt = _trace_or_none(traces, "top", partition)
    Xl = np.vstack(([X[0] if tl is None else tl], X[:-1]))
    Xr = np.vstack((X[1:], [X[-1] if tr is None else tr]))
    Xb = np.hstack(((X[:, :1] if tb is None else tb[:, None]), X[:, :-1]))
    Xt = np.hstack((X[:, 1:], (X[:, -1:] if tt is None else tt[:, None])))
    upx = np.maximum(ux[:-1], 0.0)
    umx = np.minimum(ux[1:], 0.0)
    upy = np.maximum(uy[:, :-1], 0.0)
    umy = np.minimum(uy[:, 1:], 0.0)
    return X - dt * (
        (upx * (X - Xl) + umx * (Xr - X)) / dx
        + (upy * (X - Xb) + umy * (Xt - X)) / dy
    )


# ---------------------------------------------------------------------------
# momentum
# ---------------------------------------------------------------------------


def dual_masses(grid, rho):
    """Cell density averaged to faces (the momentum-carrying mass)."""
    if grid.dimension == 1:
        m = np.empty(rho.size + 1)
        m[1:-1] = 0.5 * (rho[:-1] + rho[1:])
        m[0] = rho[0]
        m[-1] = rho[-1]
        return (m,)
    nx, ny = grid.cells
    mu_ = np.empty((nx + 1, ny))
    mu_[1:nx] = 0.5 * (rho[:-1] + rho[1:])
    mu_[0] = rho[0]
    mu_[nx] = rho[-1]
    mv = np.empty((nx, ny + 1))
    mv[:, 1:ny] = 0.5 * (rho[:, :-1] + rho[:, 1:])
    mv[:, 0] = rho[:, 0]
    mv[:, ny] = rho[:, -1]
    return (mu_, mv)


def _upwind_by_flux(G, a, b):
    """Donor value between a (low side) and b, selected by the flux sign."""
    w = upwind_weights(G)
    return w * a + (1.0 - w) * b


def convective_momentum_1d(grid, rho_fluxes, u):
    """Explicit convection increment for the face momentum (1D).

    Dual-cell fluxes are the averages of adjacent face mass fluxes, which
    makes the dual continuity identity exact: the dual mass responds to
    exactly these fluxes.
    """
    dx = grid.spacing[0]
    F = rho_fluxes[0]
    G = 0.5 * (F[:-1] + F[1:])  # at cell centers
    ubar = _upwind_by_flux(G, u[:-1], u[1:])
    conv = np.zeros_like(u)
    conv[1:-1] = (G[1:] * ubar[1:] - G[:-1] * ubar[:-1]) / dx
    return conv


def convective_momentum_2d(grid, rho_fluxes, u, v, bdata):
    """Explicit convection increments for both momentum components (2D).

    Dual fluxes through boundary corner rows carry momentum in and out of
    open boundaries; the donor value there is the tangential trace on the
    inflowing side and the interior face value on the outflowing side.
    """
    nx, ny = grid.cells
    dx, dy = grid.spacing
    Fx, Fy = rho_fluxes
    ut_b = tangential_target(bdata, "bottom", nx + 1)
    ut_t = tangential_target(bdata, "top", nx + 1)
    ut_l = tangential_target(bdata, "left", ny + 1)
    ut_r = tangential_target(bdata, "right", ny + 1)

    # u-momentum: x-dual-fluxes at cell centers, y-dual-fluxes at corners
    Gxx = 0.5 * (Fx[:-1] + Fx[1:])  # (nx, ny)
    ubar_x = _upwind_by_flux(Gxx, u[:-1], u[1:])
    conv_u = np.zeros_like(u)
    conv_u[1:nx] = np.diff(Gxx * ubar_x, axis=0) / dx

    Gxy = np.zeros((nx + 1, ny + 1))  # at mesh corners
    Gxy[1:nx] = 0.5 * (Fy[:-1] + Fy[1:])
    wcy = upwind_weights(Gxy)
    ubar_y = np.empty((nx + 1, ny + 1))
    ubar_y[:, 1:ny] = wcy[:, 1:ny] * u[:, :-1] + (1.0 - wcy[:, 1:ny]) * u[:, 1:]
    ubar_y[:, 0] = wcy[:, 0] * ut_b + (1.0 - wcy[:, 0]) * u[:, 0]
    ubar_y[:, ny] = wcy[:, ny] * u[:, -1] + (1.0 - wcy[:, ny]) * ut_t
    conv_u[1:nx] += np.diff((Gxy * ubar_y)[1:nx], axis=1) / dy

    # v-momentum: y-dual-fluxes at cell centers, x-dual-fluxes at corners
    Gyy = 0.5 * (Fy[:, :-1] + Fy[:, 1:])  # (nx, ny)
    vbar_y = _upwind_by_flux(Gyy, v[:, :-1], v[:, 1:])
    conv_v = np.zeros_like(v)
    conv_v[:, 1:ny] = np.diff(Gyy * vbar_y, axis=1) / dy

    Gyx = np.zeros((nx + 1, ny + 1))
    Gyx[:, 1:ny] = 0.5 * (Fx[:, :-1] + Fx[:, 1:])
    wcx = upwind_weights(Gyx)
    vbar_x = np.empty((nx + 1, ny + 1))
    vbar_x[1:nx] = wcx[1:nx] * v[:-1] + (1.0 - wcx[1:nx]) * v[1:]
    vbar_x[0] = wcx[0] * ut_l + (1.0 - wcx[0]) * v[0]
    vbar_x[nx] = wcx[nx] * v[-1] + (1.0 - wcx[nx]) * ut_r
    conv_v[:, 1:ny] += np.diff((Gyx * vbar_x)[:, 1:ny], axis=0) / dx

    return conv_u, conv_v


def _solve_momentum_1d(grid, mhat_new, rhs, u_old, bdata, ext, cfg, dt, relax):
    """Backward-Euler viscosity + relaxation solve for the 1D velocity.

    mhat_new are the post-advection dual masses; rhs already contains the
    momentum predictor (and the explicit pressure term in explicit mode).
    Boundary faces are pinned to the traces, vacuum faces to the extension
    velocity.
    """
    n = u_old.size
    dx = grid.spacing[0]
    visc = (2.0 * cfg.mu + cfg.lam) / dx**2
    uL = bdata.u["left"][0]
    uR = bdata.u["right"][0]

    diag = mhat_new[1:-1] * (1.0 + (dt if relax else 0.0)) + 2.0 * dt * visc
    off = -dt * visc
    b = rhs[1:-1].copy()
    b[0] -= off * uL
    b[-1] -= off * uR

    m = n - 2
    ab = np.zeros((3, m))
    ab[0, 1:] = off
    ab[1] = diag
    ab[2, :-1] = off
    # vacuum faces drop out of the balance and ride the extension field:
    # replace their rows with the identity (neighbor rows may keep their
    # coupling to the pinned value; the direct solve resolves it exactly)
    vac = mhat_new[1:-1] < VACUUM_RHO
    if np.any(vac):
        idx = np.nonzero(vac)[0]
        ab[1, idx] = 1.0
        up = idx[idx <= m - 2] + 1
        ab[0, up] = 0.0
        lo = idx[idx >= 1] - 1
        ab[2, lo] = 0.0
        b[idx] = ext.components[0][1:-1][idx]
    sol = solve_banded((1, 1), ab, b)
    u = np.empty(n)
    u[0] = uL
    u[-1] = uR
    u[1:-1] = sol
    return u


def _momentum_matrix_2d(grid, mhat, bdata, cfg, dt, relax):
    """Assemble the implicit 2D momentum system over interior faces.

    Unknowns: interior u faces then interior v faces.  The operator is
    mass + dt * (relax mass) - dt * div S, with S the full symmetric
    stress; Dirichlet traces and tangential ghosts are eliminated into the
    right-hand-side transform returned alongside the matrix.
    """
    nx, ny = grid.cells
    dx, dy = grid.spacing
    mu_, mv = mhat
    nu_ = (nx - 1) * ny
    nv = nx * (ny - 1)

    def idu(i, j):
        return (i - 1) * ny + j

    def idv(i, j):
        return nu_ + i * (ny - 1) + (j - 1)

    rows, cols, vals = [], [], []
    rhs_fix = np.zeros(nu_ + nv)
    relax_f = 1.0 + (dt if relax else 0.0)

    c_xx = cfg.mu / dx**2
    c_yy = cfg.mu / dy**2
    c_div = (cfg.mu + cfg.lam)

    ut_b = np.asarray(bdata.ut.get("bottom", np.zeros(nx + 1)), dtype=float)
    ut_t = np.asarray(bdata.ut.get("top", np.zeros(nx + 1)), dtype=float)
    ut_l = np.asarray(bdata.ut.get("left", np.zeros(ny + 1)), dtype=float)
    ut_r = np.asarray(bdata.ut.get("right", np.zeros(ny + 1)), dtype=float)

    uB_l, uB_r = bdata.u["left"], bdata.u["right"]
    vB_b, vB_t = bdata.u["bottom"], bdata.u["top"]

    def add(r, c, vv):
        rows.append(r)
        cols.append(c)
        vals.append(vv)

    def u_known(i, j):
        # value of a u face that is not an unknown (boundary column)
        return uB_l[j] if i == 0 else uB_r[j]

    def v_known(i, j):
        return vB_b[i] if j == 0 else vB_t[i]

    # u-momentum rows
    for i in range(1, nx):
        for j in range(ny):
            r = idu(i, j)
            diag = mu_[i, j] * relax_f
            # mu * d2/dx2 (plus the grad-div x part folds into an effective
            # coefficient on the same stencil: (2mu+lam) in x for u)
            cx = (2.0 * cfg.mu + cfg.lam) / dx**2
            for ii in (i - 1, i + 1):
                if 1 <= ii <= nx - 1:
                    add(r, idu(ii, j), -dt * cx)
                else:
                    rhs_fix[r] += dt * cx * u_known(ii, j)
            diag += 2.0 * dt * cx
            # mu * d2/dy2 with tangential ghosts at walls
            if j > 0:
                add(r, idu(i, j - 1), -dt * c_yy)
            else:
                # ghost below: u_ghost = 2*ut - u(i,0)
                diag += dt * c_yy
                rhs_fix[r] += 2.0 * dt * c_yy * ut_b[i]
            if j < ny - 1:
                add(r, idu(i, j + 1), -dt * c_yy)
            else:
                diag += dt * c_yy
                rhs_fix[r] += 2.0 * dt * c_yy * ut_t[i]
            diag += 2.0 * dt * c_yy
            # (mu+lam) d/dx(dv/dy) cross term enters the left side as
            # -dt * (mu+lam) * d2v/dxdy: couples to the four v faces around
            # the two neighboring cells
            coef = dt * c_div / (dx * dy)
            for (ci, sgn_cell) in ((i, 1.0), (i - 1, -1.0)):
                for (jj, sgn_face) in ((j + 1, 1.0), (j, -1.0)):
                    s = -sgn_cell * sgn_face * coef
                    if 1 <= jj <= ny - 1:
                        add(r, idv(ci, jj), s)
                    else:
                        rhs_fix[r] -= s * v_known(ci, jj)
            add(r, r, diag)

    # v-momentum rows
    for i in range(nx):
        for j in range(1, ny):
            r = idv(i, j)
            diag = mv[i, j] * relax_f
            cy = (2.0 * cfg.mu + cfg.lam) / dy**2
            for jj in (j - 1, j + 1):
                if 1 <= jj <= ny - 1:
                    add(r, idv(i, jj), -dt * cy)
                else:
                    rhs_fix[r] += dt * cy * v_known(i, jj)
            diag += 2.0 * dt * cy
            if i > 0:
                add(r, idv(i - 1, j), -dt * c_xx)
            else:
                diag += dt * c_xx
                rhs_fix[r] += 2.0 * dt * c_xx * ut_l[j]
            if i < nx - 1:
                add(r, idv(i + 1, j), -dt * c_xx)
            else:
                diag += dt * c_xx
                rhs_fix[r] += 2.0 * dt * c_xx * ut_r[j]
            diag += 2.0 * dt * c_xx
            coef = dt * c_div / (dx * dy)
            for (cj, sgn_cell) in ((j, 1.0), (j - 1, -1.0)):
                for (ii, sgn_face) in ((i + 1, 1.0), (i, -1.0)):
                    s = -sgn_cell * sgn_face * coef
                    if 1 <= ii <= nx - 1:
                        add(r, idu(ii, cj), s)
                    else:
                        rhs_fix[r] -= s * u_known(ii, cj)
            add(r, r, diag)

    A = sp.coo_matrix((vals, (rows, cols)), shape=(nu_ + nv, nu_ + nv)).tocsr()
    return A, rhs_fix, (idu, idv, nu_, nv)


def _solve_momentum_2d(grid, mhat_new, rhs_u, rhs_v, bdata, ext, cfg, dt, relax):
    nx, ny = grid.cells
    A, rhs_fix, (idu, idv, nu_, nv) = _momentum_matrix_2d(
        grid, mhat_new, bdata, cfg, dt, relax
    )
    b = np.empty(nu_ + nv)
    b[:nu_] = rhs_u[1:nx].reshape(-1)
    b[nu_:] = rhs_v[:, 1:ny].reshape(-1)
    b += rhs_fix

    # vacuum faces: replace the row with u = extension velocity
    mu_, mv = mhat_new
    vac_u = mu_[1:nx].reshape(-1) < VACUUM_RHO
    vac_v = mv[:, 1:ny].reshape(-1) < VACUUM_RHO
    vac = np.concatenate([vac_u, vac_v])
    if np.any(vac):
        A = A.tolil()
        ext_u, ext_v = ext.components
        pinned = np.concatenate(
            [ext_u[1:nx].reshape(-1), ext_v[:, 1:ny].reshape(-1)]
        )
        for r in np.nonzero(vac)[0]:
            A.rows[r] = [r]
            A.data[r] = [1.0]
            b[r] = pinned[r]
        A = A.tocsr()
    sol = spsolve(A, b)

    u = np.empty((nx + 1, ny))
    v = np.empty((nx, ny + 1))
    u[1:nx] = sol[:nu_].reshape(nx - 1, ny)
    v[:, 1:ny] = sol[nu_:].reshape(nx, ny - 1)
    u[0] = bdata.u["left"]
    u[nx] = bdata.u["right"]
    v[:, 0] = bdata.u["bottom"]
    v[:, ny] = bdata.u["top"]
    return u, v


def pressure_gradient_faces(grid, pi):
    """Discrete gradient of a cell pressure at interior faces (0 at boundary)."""
    if grid.dimension == 1:
        g = np.zeros(pi.size + 1)
        g[1:-1] = np.diff(pi) / grid.spacing[0]
        return (g,)
    nx, ny = grid.cells
    dx, dy = grid.spacing
    gx = np.zeros((nx + 1, ny))
    gx[1:nx] = np.diff(pi, axis=0) / dx
    gy = np.zeros((nx, ny + 1))
    gy[:, 1:ny] = np.diff(pi, axis=1) / dy
    return (gx, gy)


def momentum_step(grid, state, rho_fluxes, rho_new, bdata, ext, cfg, dt, w,
                  pressure_cells=None):
    """Advance the velocity one implicit step.

    Explicit upwind convection built from the *same* mass fluxes that moved
    the density, then a backward-Euler solve for viscosity (and relaxation
    toward ``w`` when given).  ``pressure_cells``, if supplied, enters the
    right-hand side explicitly (the explicit-mode pressure gradient).
    """
    mhat_old = dual_masses(grid, state.rho)
    mhat_new = dual_masses(grid, rho_new)
    relax = w is not None

    if grid.dimension == 1:
        u = state.u[0]
        conv = convective_momentum_1d(grid, rho_fluxes, u)
        rhs = mhat_old[0] * u - dt * conv
        if pressure_cells is not None:
            rhs -= dt * pressure_gradient_faces(grid, pressure_cells)[0]
        if relax:
            rhs += dt * mhat_new[0] * w[0]
        un = _solve_momentum_1d(
            grid, mhat_new[0], rhs, u, bdata, ext, cfg, dt, relax
        )
        return (un,)

    u, v = state.u
    conv_u, conv_v = convective_momentum_2d(grid, rho_fluxes, u, v, bdata)
    rhs_u = mhat_old[0] * u - dt * conv_u
    rhs_v = mhat_old[1] * v - dt * conv_v
    if pressure_cells is not None:
        gx, gy = pressure_gradient_faces(grid, pressure_cells)
        rhs_u -= dt * gx
        rhs_v -= dt * gy
    if relax:
        rhs_u += dt * mhat_new[0] * w[0]
        rhs_v += dt * mhat_new[1] * w[1]
    un, vn = _solve_momentum_2d(
        grid, mhat_new, rhs_u, rhs_v, bdata, ext, cfg, dt, relax
    )
    return (un, vn)


# ---------------------------------------------------------------------------
# implicit congestion-pressure stage
# ---------------------------------------------------------------------------


def _clamped_pi(z, params):
    zc = np.maximum(z, 0.0)
    if params.delta <= 0.0:
        zc = np.minimum(zc, ZMAX_UNTRUNCATED)
    return law_pressure(zc, params)


def _clamped_dpi(z, params):
    zc = np.maximum(z, 0.0)
    if params.delta <= 0.0:
        zc = np.minimum(zc, ZMAX_UNTRUNCATED)
    d = law_derivative(zc, params)
    # outside the clamp the law is continued flat; a zero slope there would
    # stall Newton, so keep the boundary slope
    return d


def imex_pressure_solve_1d(grid, state, ustar, mhat, traces_Z, traces_rho,
                           partition, params, cfg, dt, relax):
    """Backward-Euler congestion stage, Newton on the cell ratio field.

    The face velocities are eliminated through the implicit pressure
    gradient; the residual is the flux-form ratio update at those
    velocities.  Returns the new (Z, rho, u) — both cell fields rebuilt in
    flux form with identical upwind decisions — plus iteration count and
    the realized boundary fluxes of rho and Z.
    """
    dx = grid.spacing[0]
    relax_f = 1.0 + (dt if relax else 0.0)
    Z0 = state.Z
    n = Z0.size
    zl = _trace_or_none(traces_Z, "left", partition)
    zr = _trace_or_none(traces_Z, "right", partition)
    zl = None if zl is None else zl[0]
    zr = None if zr is None else zr[0]

    Z = Z0.copy()
    mh = np.maximum(mhat[1:-1], VACUUM_RHO)
    coef = dt / (mh * relax_f * dx)  # interior faces
    # vacuum faces stay pinned to the extension velocity: no pressure kick
    coef[mhat[1:-1] < VACUUM_RHO] = 0.0

    def velocity(Zk):
        pi = _clamped_pi(Zk, params)
        u = ustar.copy()
        u[1:-1] = ustar[1:-1] - coef * np.diff(pi)
        return u, pi

    def residual(Zk):
        u, pi = velocity(Zk)
        w = upwind_weights(u)
        vals = _face_values_1d(Zk, zl, zr, w)
        F = u * vals
        return Zk - Z0 + dt / dx * np.diff(F), u, w

    R, u, wgt = residual(Z)
    rnorm = float(np.max(np.abs(R)))
    iters = 0
    while rnorm > cfg.newton_tol:
        if iters >= cfg.newton_max_iters:
            raise NewtonFailure(
                f"congestion solve stalled at residual {rnorm:.3e}"
            )
        pi_d = _clamped_dpi(Z, params)
        # dR_i/dZ_j over the tridiagonal band: flux at face k depends on
        # Z_{k-1}, Z_k through the upwind value and through the eliminated
        # velocity's pressure gradient
        lower = np.zeros(n)
        diag = np.ones(n)
        upper = np.zeros(n)
        w_in = wgt[1:-1]
        zhat_in = w_in * Z[:-1] + (1.0 - w_in) * Z[1:]
        # face k (interior, between cells k-1 and k), k = 1..n-1:
        # dF_k/dZ_{k-1} = u_k * w_k + zhat_k * (+coef * dpi_{k-1}) ... sign:
        # u_k = ustar - coef*(pi_k - pi_{k-1}) => du/dZ_{k-1} = +coef*dpi_{k-1}
        dF_dm = u[1:-1] * w_in + zhat_in * (coef * pi_d[:-1])
        dF_dp = u[1:-1] * (1.0 - w_in) + zhat_in * (-coef * pi_d[1:])
        # boundary faces: velocity fixed, only the upwind value can depend
        # on the interior cell (outflow); inflow faces contribute nothing
        dF0_d0 = u[0] * (1.0 - wgt[0])
        dFn_dn = u[-1] * wgt[-1]
        # R_i = Z_i - Z0_i + dt/dx (F_{i+1} - F_i)
        r = dt / dx
        # contribution of F_{i+1}: for i = 0..n-2 it is an interior face
        diag[: n - 1] += r * dF_dm
        upper[: n - 1] += r * dF_dp
        diag[n - 1] += r * dFn_dn
        # contribution of -F_i: for i = 1..n-1 interior
        diag[1:] -= r * dF_dp
        lower[1:] -= r * dF_dm
        diag[0] -= r * dF0_d0
        ab = np.zeros((3, n))
        ab[0, 1:] = upper[: n - 1]
        ab[1] = diag
        ab[2, :-1] = lower[1:]
        try:
            dZ = solve_banded((1, 1), ab, -R)
        except Exception as exc:  # singular Jacobian
            raise NewtonFailure(f"congestion Jacobian solve failed: {exc}")
        # damped update: accept the first candidate that reduces the residual
        lam_damp = 1.0
        for _ in range(5):
            Zc = Z + lam_damp * dZ
            Rc, uc, wc = residual(Zc)
            rn = float(np.max(np.abs(Rc)))
            if rn < rnorm:
                break
            lam_damp *= 0.5
        Z, R, u, wgt, rnorm = Zc, Rc, uc, wc, rn
        iters += 1

    # final state in flux form with one shared set of upwind decisions; the
    # density faces are reconstructed from the implicit ratio times the
    # lagged congestion density, so rho rides the same (converged) face
    # values as Z, scaled cellwise — donor selection keeps the product exact
    vals_Z = _face_values_1d(Z, zl, zr, wgt)
    FZ = u * vals_Z
    rl = _trace_or_none(traces_rho, "left", partition)
    rr = _trace_or_none(traces_rho, "right", partition)
    vals_rho = _face_values_1d(
        Z * state.rhostar,
        None if rl is None else rl[0],
        None if rr is None else rr[0],
        wgt,
    )
    Frho = u * vals_rho
    Z_new = Z0 - dt / dx * np.diff(FZ)
    rho_new = state.rho - dt / dx * np.diff(Frho)
    out_Z = float(FZ[-1] - FZ[0])
    out_rho = float(Frho[-1] - Frho[0])
    return Z_new, rho_new, (u,), iters, out_rho, out_Z


def imex_pressure_solve_2d(grid, state, ustar, mhat, traces_Z, traces_rho,
                           partition, params, cfg, dt, relax):
    """2D counterpart of the implicit congestion stage (5-point Jacobian)."""
    nx, ny = grid.cells
    dx, dy = grid.spacing
    relax_f = 1.0 + (dt if relax else 0.0)
    Z0 = state.Z
    n = nx * ny
    usx, usy = ustar
    mhx = np.maximum(mhat[0][1:nx], VACUUM_RHO)
    mhy = np.maximum(mhat[1][:, 1:ny], VACUUM_RHO)
    cfx = dt / (mhx * relax_f * dx)
    cfy = dt / (mhy * relax_f * dy)
    # vacuum faces stay pinned to the extension velocity: no pressure kick
    cfx[mhat[0][1:nx] < VACUUM_RHO] = 0.0
    cfy[mhat[1][:, 1:ny] < VACUUM_RHO] = 0.0

    def velocity(Zk):
        pi = _clamped_pi(Zk, params)
        ux = usx.copy()
        uy = usy.copy()
        ux[1:nx] = usx[1:nx] - cfx * np.diff(pi, axis=0)
        uy[:, 1:ny] = usy[:, 1:ny] - cfy * np.diff(pi, axis=1)
        return (ux, uy), pi

    def residual(Zk):
        u, pi = velocity(Zk)
        fluxes, _ = mass_fluxes(grid, Zk, u, traces_Z, partition)
        R = Zk - Z0 + dt * flux_divergence(grid, fluxes)
        return R, u

    Z = Z0.copy()
    R, u = residual(Z)
    rnorm = float(np.max(np.abs(R)))
    iters = 0

    def cid(i, j):
        return i * ny + j

    while rnorm > cfg.newton_tol:
        if iters >= cfg.newton_max_iters:
            raise NewtonFailure(
                f"congestion solve stalled at residual {rnorm:.3e}"
            )
        pi_d = _clamped_dpi(Z, params)
        ux, uy = u
        wx = upwind_weights(ux)
        wy = upwind_weights(uy)
        rows, cols, vals = [], [], []

        def add(r, c, vv):
            rows.append(r)
            cols.append(c)
            vals.append(vv)

        rx = dt / dx
        ry = dt / dy
        for i in range(nx):
            for j in range(ny):
                c = cid(i, j)
                add(c, c, 1.0)
                # face (i+1, j) in x: flux F = u * zhat
                if i + 1 <= nx - 1:
                    wf = wx[i + 1, j]
                    zh = wf * Z[i, j] + (1.0 - wf) * Z[i + 1, j]
                    add(c, c, rx * (ux[i + 1, j] * wf + zh * cfx[i, j] * pi_d[i, j]))
                    add(
                        c,
                        cid(i + 1, j),
                        rx
                        * (
                            ux[i + 1, j] * (1.0 - wf)
                            - zh * cfx[i, j] * pi_d[i + 1, j]
                        ),
                    )
                else:
                    add(c, c, rx * ux[nx, j] * wx[nx, j])
                # face (i, j) in x enters with minus sign
                if i >= 1:
                    wf = wx[i, j]
                    zh = wf * Z[i - 1, j] + (1.0 - wf) * Z[i, j]
                    add(
                        c,
                        c,
                        -rx
                        * (ux[i, j] * (1.0 - wf) - zh * cfx[i - 1, j] * pi_d[i, j]),
                    )
                    add(
                        c,
                        cid(i - 1, j),
                        -rx * (ux[i, j] * wf + zh * cfx[i - 1, j] * pi_d[i - 1, j]),
                    )
                else:
                    add(c, c, -rx * ux[0, j] * (1.0 - wx[0, j]))
                # face (i, j+1) in y
                if j + 1 <= ny - 1:
                    wf = wy[i, j + 1]
                    zh = wf * Z[i, j] + (1.0 - wf) * Z[i, j + 1]
                    add(c, c, ry * (uy[i, j + 1] * wf + zh * cfy[i, j] * pi_d[i, j]))
                    add(
                        c,
                        cid(i, j + 1),
                        ry
                        * (
                            uy[i, j + 1] * (1.0 - wf)
                            - zh * cfy[i, j] * pi_d[i, j + 1]
                        ),
                    )
                else:
                    add(c, c, ry * uy[i, ny] * wy[i, ny])
                # face (i, j) in y with minus sign
                if j >= 1:
                    wf = wy[i, j]
                    zh = wf * Z[i, j - 1] + (1.0 - wf) * Z[i, j]
                    add(
                        c,
                        c,
                        -ry
                        * (uy[i, j] * (1.0 - wf) - zh * cfy[i, j - 1] * pi_d[i, j]),
                    )
                    add(
                        c,
                        cid(i, j - 1),
                        -ry * (uy[i, j] * wf + zh * cfy[i, j - 1] * pi_d[i, j - 1]),
                    )
                else:
                    add(c, c, -ry * uy[i, 0] * (1.0 - wy[i, 0]))
        J = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
        try:
            dZ = spsolve(J, -R.reshape(-1)).reshape(nx, ny)
        except Exception as exc:
            raise NewtonFailure(f"congestion Jacobian solve failed: {exc}")
        lam_damp = 1.0
        for _ in range(5):
            Zc = Z + lam_damp * dZ
            Rc, uc = residual(Zc)
            rn = float(np.max(np.abs(Rc)))
            if rn < rnorm:
                break
            lam_damp *= 0.5
        Z, R, u, rnorm = Zc, Rc, uc, rn
        iters += 1

    fluxZ, out_Z = mass_fluxes(grid, Z, u, traces_Z, partition)
    # rho rides the same converged face values as Z, scaled by the lagged
    # congestion density (donor selection keeps the product exact cellwise)
    fluxR, out_rho = mass_fluxes(grid, Z * state.rhostar, u, traces_rho,
                                 partition)
    Z_new = Z0 - dt * flux_divergence(grid, fluxZ)
    rho_new = state.rho - dt * flux_divergence(grid, fluxR)
    return Z_new, rho_new, u, iters, out_rho, out_Z


# ---------------------------------------------------------------------------
# artificial diffusion
# ---------------------------------------------------------------------------


def eta_diffusion_step(grid, X, eta, dt):
    """Implicit heat step with no-extra-flux walls.

    The advective fluxes already carry exactly the prescribed boundary
    totals, so the diffusive correction must add none: homogeneous Neumann.
    The cell sum is conserved to round-off and the operator is linear, so
    proportional fields stay proportional.
    """
    if eta <= 0.0:
        return X
    if grid.dimension == 1:
        n = X.size
        r = eta * dt / grid.spacing[0] ** 2
        diag = np.full(n, 1.0 + 2.0 * r)
        diag[0] -= r
        diag[-1] -= r
        ab = np.zeros((3, n))
        ab[0, 1:] = -r
        ab[1] = diag
        ab[2, :-1] = -r
        return solve_banded((1, 1), ab, X)
    nx, ny = grid.cells
    dx, dy = grid.spacing
    rx = eta * dt / dx**2
    ry = eta * dt / dy**2
    n = nx * ny

    def cid(i, j):
        return i * ny + j

    rows, cols, vals = [], [], []
    for i in range(nx):
        for j in range(ny):
            c = cid(i, j)
            d = 1.0
            for ii, r_ in ((i - 1, rx), (i + 1, rx)):
                if 0 <= ii < nx:
                    rows.append(c), cols.append(cid(ii, j)), vals.append(-r_)
                    d += r_
            for jj, r_ in ((j - 1, ry), (j + 1, ry)):
                if 0 <= jj < ny:
                    rows.append(c), cols.append(cid(i, jj)), vals.append(-r_)
                    d += r_
            rows.append(c), cols.append(c), vals.append(d)
    A = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    return spsolve(A, X.reshape(-1)).reshape(nx, ny)


# ---------------------------------------------------------------------------
# step control
# ---------------------------------------------------------------------------


def compute_dt(grid, state, cfg, params, cap):
    """Largest admissible step, never exceeding ``cap``.

    Explicit mode pays the acoustic restriction; imex only the material
    one.  Both include the compression bound that keeps the congestion
    transport a convex combination.
    """
    for comp in state.u:
        if not np.all(np.isfinite(comp)):
            raise SolverAbort("non-finite velocity entering dt selection")
    dt = float(cap)
    if grid.dimension == 1:
        dx = grid.spacing[0]
        un = state.u[0]
        speeds = np.abs(un)
        if cfg.mode == "explicit":
            zeval = state.Z if params.delta > 0.0 else np.minimum(state.Z, ZMAX_UNTRUNCATED)
            c = sound_speed(
                np.maximum(state.rho, VACUUM_RHO), np.maximum(zeval, 0.0), params
            )
            cface = np.concatenate(([c[0]], np.maximum(c[:-1], c[1:]), [c[-1]]))
            speeds = speeds + cface
        vmax = float(np.max(speeds))
        if vmax > 0.0:
            dt = min(dt, cfg.cfl * dx / vmax)
        # convex-combination bound for the transport form
        spread = np.maximum(un[:-1], 0.0) - np.minimum(un[1:], 0.0)
        smax = float(np.max(spread))
        if smax > 0.0:
            dt = min(dt, cfg.cfl * dx / smax)
        return dt

    dx, dy = grid.spacing
    ux, uy = state.u
    if cfg.mode == "explicit":
        zeval = state.Z if params.delta > 0.0 else np.minimum(state.Z, ZMAX_UNTRUNCATED)
        c = sound_speed(
            np.maximum(state.rho, VACUUM_RHO),
            np.maximum(zeval, 0.0),
            params,
        )
        cmax = float(np.max(c))
    else:
        cmax = 0.0
    vx = float(np.max(np.abs(ux))) + cmax
    vy = float(np.max(np.abs(uy))) + cmax
    if vx > 0.0:
        dt = min(dt, cfg.cfl * dx / vx)
    if vy > 0.0:
        dt = min(dt, cfg.cfl * dy / vy)
    spread_x = np.maximum(ux[:-1], 0.0) - np.minimum(ux[1:], 0.0)
    spread_y = np.maximum(uy[:, :-1], 0.0) - np.minimum(uy[:, 1:], 0.0)
    sm = max(
        float(np.max(spread_x)) / dx if spread_x.size else 0.0,
        float(np.max(spread_y)) / dy if spread_y.size else 0.0,
    )
    if sm > 0.0:
        dt = min(dt, cfg.cfl / sm)
    return dt


@dataclass
class Stepper:
    """One stepping context: grid, data, partition, and invariant guards."""

    grid: Grid
    bdata: BoundaryData
    cfg: StepConfig
    params: PressureParams
    ext: ExtensionField
    w: tuple | None = None
    partition: BoundaryPartition = None
    traces_rho: dict = field(default_factory=dict)
    traces_rhostar: dict = field(default_factory=dict)
    traces_Z: dict = field(default_factory=dict)
    rhostar_bounds: tuple = None
    reversal_events: int = 0

    def __post_init__(self):
        if self.partition is None:
            self.partition = classify_boundary(self.grid, self.bdata)
        for side in self.grid.sides:
            tr = self.bdata.rho.get(side)
            ts = self.bdata.rhostar.get(side)
            if tr is not None:
                self.traces_rho[side] = np.atleast_1d(np.asarray(tr, float))
            if ts is not None:
                self.traces_rhostar[side] = np.atleast_1d(np.asarray(ts, float))
            if tr is not None and ts is not None:
                self.traces_Z[side] = self.traces_rho[side] / self.traces_rhostar[side]

    def _init_rhostar_bounds(self, state):
        lo = float(state.rhostar.min())
        hi = float(state.rhostar.max())
        for side, tr in self.traces_rhostar.items():
            if np.any(self.partition.inflow[side]):
                lo = min(lo, float(tr.min()))
                hi = max(hi, float(tr.max()))
        self.rhostar_bounds = (lo, hi)

    def advance(self, state: State, cap: float):
        """One accepted time step; halves dt on solver trouble.

        Returns the new state and the step's bookkeeping.
        """
        if self.rhostar_bounds is None:
            self._init_rhostar_bounds(state)
        if self.cfg.force_dt is not None:
            for comp in state.u:
                if not np.all(np.isfinite(comp)):
                    raise SolverAbort("velocity field is not finite")
            dt = min(cap, self.cfg.force_dt)
        else:
            dt = compute_dt(self.grid, state, self.cfg, self.params, cap)
        halvings = 0
        while True:
            try:
                new, iters, out_rho, out_Z = self._try_step(state, dt)
                break
            except (NewtonFailure, CflViolation) as err:
                if self.cfg.force_dt is not None:
                    # a forced step size is taken as-is or not at all
                    raise SolverAbort(
                        f"forced dt={dt:.6g} failed at t={state.t:.6g}: {err}"
                    )
                halvings += 1
                if halvings > self.cfg.max_halvings:
                    raise SolverAbort(
                        f"step at t={state.t:.6g} failed after "
                        f"{self.cfg.max_halvings} dt halvings"
                    )
                dt *= 0.5
        self._check_invariants(new)
        events = self._count_reversals(new)
        self.reversal_events += events
        stats = StepStats(dt=dt, newton_iters=iters, halvings=halvings,
                          reversal_events=events, outflux_rho=out_rho,
                          outflux_Z=out_Z)
        return new, stats

    # -- internals ---------------------------------------------------------

    def _try_step(self, state: State, dt: float):
        if self.cfg.mode == "explicit":
            return self._explicit_step(state, dt)
        return self._imex_step(state, dt)

    def _explicit_step(self, state, dt):
        grid = self.grid
        if not advective_cfl_ok(grid, state.u, dt):
            raise CflViolation("dt exceeds the donor-cell limit")
        fluxR, out_rho = mass_fluxes(grid, state.rho, state.u, self.traces_rho,
                                     self.partition)
        fluxZ, out_Z = mass_fluxes(grid, state.Z, state.u, self.traces_Z,
                                   self.partition)
        rho_new = state.rho - dt * flux_divergence(grid, fluxR)
        Z_new = state.Z - dt * flux_divergence(grid, fluxZ)
        rho_new = eta_diffusion_step(grid, rho_new, self.cfg.eta, dt)
        Z_new = eta_diffusion_step(grid, Z_new, self.cfg.eta, dt)
        rhostar_new = advect_rhostar(
            grid, state.rhostar, state.u, self.traces_rhostar, self.partition, dt
        )
        pi = _clamped_pi(Z_new, self.params)
        u_new = momentum_step(
            grid, state, fluxR, rho_new, self.bdata, self.ext, self.cfg, dt,
            self.w, pressure_cells=pi,
        )
        out = State(grid=grid, rho=rho_new, Z=Z_new, rhostar=rhostar_new,
                    u=u_new, t=state.t + dt)
        return out, 0, out_rho, out_Z

    def _imex_step(self, state, dt):
        grid = self.grid
        if not advective_cfl_ok(grid, state.u, dt):
            raise CflViolation("dt exceeds the donor-cell limit")
        # momentum predictor: convection from the current mass fluxes,
        # implicit viscosity/relaxation, no pressure yet
        fluxR0, _ = mass_fluxes(grid, state.rho, state.u, self.traces_rho,
                                self.partition)
        rho_prov = state.rho - dt * flux_divergence(grid, fluxR0)
        ustar = momentum_step(
            grid, state, fluxR0, rho_prov, self.bdata, self.ext, self.cfg, dt,
            self.w, pressure_cells=None,
        )
        mhat = dual_masses(grid, rho_prov)
        relax = self.w is not None
        if grid.dimension == 1:
            Z_new, rho_new, u_new, iters, out_rho, out_Z = imex_pressure_solve_1d(
                grid, state, ustar[0], mhat[0], self.traces_Z,
                self.traces_rho, self.partition, self.params, self.cfg, dt,
                relax,
            )
        else:
            Z_new, rho_new, u_new, iters, out_rho, out_Z = imex_pressure_solve_2d(
                grid, state, ustar, mhat, self.traces_Z, self.traces_rho,
                self.partition, self.params, self.cfg, dt, relax,
            )
        # the final velocity must itself satisfy the advective bound the
        # transported fields were advanced with
        if not advective_cfl_ok(grid, u_new, dt):
            raise CflViolation("implicit stage accelerated past the CFL bound")
        rho_new = eta_diffusion_step(grid, rho_new, self.cfg.eta, dt)
        Z_new = eta_diffusion_step(grid, Z_new, self.cfg.eta, dt)
        rhostar_new = advect_rhostar(
            grid, state.rhostar, u_new, self.traces_rhostar, self.partition, dt
        )
        out = State(grid=grid, rho=rho_new, Z=Z_new, rhostar=rhostar_new,
                    u=u_new, t=state.t + dt)
        return out, iters, out_rho, out_Z

    def _check_invariants(self, state):
        for name, arr in (("rho", state.rho), ("Z", state.Z),
                          ("rhostar", state.rhostar)):
            if not np.all(np.isfinite(arr)):
                raise SolverAbort(f"non-finite {name} field after step")
        for comp in state.u:
            if not np.all(np.isfinite(comp)):
                raise SolverAbort("non-finite velocity after step")
        if float(state.rho.min()) < -1e-12:
            raise SolverAbort("negative density after step")
        if float(state.Z.min()) < -1e-12:
            raise SolverAbort("negative congestion ratio after step")
        np.maximum(state.rho, 0.0, out=state.rho)
        np.maximum(state.Z, 0.0, out=state.Z)
        zmax = float(state.Z.max())
        if zmax > OVERSHOOT_LIMIT:
            raise SolverAbort(
                f"congestion ratio blew past the overshoot guard ({zmax:.4f})"
            )
        lo, hi = self.rhostar_bounds
        slack = 1e-11 * max(1.0, abs(hi))
        if state.rhostar.min() < lo - slack or state.rhostar.max() > hi + slack:
            raise SolverAbort("congestion density left its initial bounds")

    def _count_reversals(self, state):
        """Outflow boundary faces whose neighboring interior face pulls inward.

        Inward means against the outward normal: +x at the left boundary,
        -x at the right, and so on.  Returns the count for this step.
        """
        grid = self.grid
        if grid.dimension == 1:
            un = state.u[0]
            events = 0
            if self.partition.outflow("left")[0] and un[1] > ZERO_FLUX_TOL:
                events += 1
            if self.partition.outflow("right")[0] and un[-2] < -ZERO_FLUX_TOL:
                events += 1
            return events
        ux, uy = state.u
        events = int(
            np.sum(self.partition.outflow("left") & (ux[1] > ZERO_FLUX_TOL))
        )
        events += int(
            np.sum(self.partition.outflow("right") & (ux[-2] < -ZERO_FLUX_TOL))
        )
        events += int(
            np.sum(self.partition.outflow("bottom") & (uy[:, 1] > ZERO_FLUX_TOL))
        )
        events += int(
            np.sum(self.partition.outflow("top") & (uy[:, -2] < -ZERO_FLUX_TOL))
        )
        return events
