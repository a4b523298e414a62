"""Mesh, boundary bookkeeping, extension field, and data admissibility.

Scalars live at cell centres, velocities at the faces of a staggered mesh.
In 1D a velocity field has ``n + 1`` entries including the two boundary
faces; in 2D the x-component has shape ``(nx + 1, ny)`` and the y-component
``(nx, ny + 1)``.  Each boundary side is classified face by face into inflow
(boundary velocity points inward) and outflow (everything else, including
tangential or zero traces).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from .errors import DomainError, GridMismatch, ValidationFailure
from .pressure import PressureParams, energy_potential

# Velocities with |u . n| below this are treated as exactly zero traces and
# land on the outflow side of the partition.
ZERO_FLUX_TOL = 1e-14

SIDES_1D = ("left", "right")
SIDES_2D = ("left", "right", "bottom", "top")

# outward normal: axis the side is orthogonal to, and the sign of n there
_SIDE_AXIS = {"left": 0, "right": 0, "bottom": 1, "top": 1}
_SIDE_SIGN = {"left": -1.0, "right": 1.0, "bottom": -1.0, "top": 1.0}


@dataclass(frozen=True)
class Grid:
    """Uniform axis-aligned mesh on [0, Lx] (x [0, Ly])."""

    lengths: tuple[float, ...]
    cells: tuple[int, ...]

    def __post_init__(self):
        if len(self.lengths) != len(self.cells):
            raise ValueError("lengths and cells must have matching dimension")
        if len(self.lengths) not in (1, 2):
            raise ValueError("only 1D and 2D meshes are supported")
        if any(L <= 0 for L in self.lengths):
            raise ValueError("domain lengths must be positive")
        if any(n < 3 for n in self.cells):
            raise ValueError("need at least 3 cells per axis")

    @property
    def dimension(self) -> int:
        return len(self.lengths)

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(L / n for L, n in zip(self.lengths, self.cells))

    @property
    def cell_volume(self) -> float:
        vol = 1.0
        for h in self.spacing:
            vol *= h
        return vol

    @property
    def volume(self) -> float:
        vol = 1.0
        for L in self.lengths:
            vol *= L
        return vol

    @property
    def sides(self) -> tuple[str, ...]:
        return SIDES_1D if self.dimension == 1 else SIDES_2D

    def centers(self, axis: int = 0) -> np.ndarray:
        h = self.spacing[axis]
        return (np.arange(self.cells[axis]) + 0.5) * h

    def face_positions(self, axis: int = 0) -> np.ndarray:
        h = self.spacing[axis]
        return np.arange(self.cells[axis] + 1) * h

    def side_size(self, side: str) -> int:
        """Number of boundary faces on a side."""
        if self.dimension == 1:
            return 1
        axis = _SIDE_AXIS[side]
        return self.cells[1 - axis]

    def side_area(self, side: str) -> float:
        """Area of one boundary face on a side."""
        if self.dimension == 1:
            return 1.0
        axis = _SIDE_AXIS[side]
        return self.spacing[1 - axis]

    def normal_axis(self, side: str) -> int:
        return _SIDE_AXIS[side]

    def normal_sign(self, side: str) -> float:
        return _SIDE_SIGN[side]

    def scalar_shape(self) -> tuple[int, ...]:
        return self.cells

    def velocity_shapes(self) -> tuple[tuple[int, ...], ...]:
        if self.dimension == 1:
            (n,) = self.cells
            return ((n + 1,),)
        nx, ny = self.cells
        return ((nx + 1, ny), (nx, ny + 1))


@dataclass
class BoundaryData:
    """Traces on the boundary plus the bulk drift target.

    ``u`` holds the coordinate component of the prescribed velocity normal
    to each side (x on left/right, y on bottom/top), sampled at that side's
    boundary faces.  ``ut`` holds the tangential component, sampled at the
    tangential face positions along the side (2D only).  ``rho``/``rhostar``
    are required on faces the partition classifies as inflow.  ``w`` is the
    relaxation target, sampled on the same staggered layout as the velocity.
    """

    grid: Grid
    u: dict[str, np.ndarray]
    rho: dict[str, np.ndarray | None] = field(default_factory=dict)
    rhostar: dict[str, np.ndarray | None] = field(default_factory=dict)
    ut: dict[str, np.ndarray] = field(default_factory=dict)
    w: tuple[np.ndarray, ...] | None = None

    def __post_init__(self):
        for side in self.grid.sides:
            if side not in self.u:
                raise ValueError(f"missing velocity trace on side {side!r}")
            self.u[side] = np.atleast_1d(np.asarray(self.u[side], dtype=float))
            if self.u[side].shape != (self.grid.side_size(side),):
                raise GridMismatch(f"velocity trace on {side!r} has wrong length")
        for name in ("rho", "rhostar"):
            d = getattr(self, name)
            for side in self.grid.sides:
                if d.get(side) is None:
                    d[side] = None
                else:
                    arr = np.atleast_1d(np.asarray(d[side], dtype=float))
                    if arr.shape != (self.grid.side_size(side),):
                        raise GridMismatch(f"{name} trace on {side!r} has wrong length")
                    d[side] = arr

    def normal_velocity(self, side: str) -> np.ndarray:
        """u_B . n on a side (negative means inflow)."""
        return self.u[side] * self.grid.normal_sign(side)

    def congestion_trace(self, side: str) -> np.ndarray | None:
        r, rs = self.rho.get(side), self.rhostar.get(side)
        if r is None or rs is None:
            return None
        return r / rs


@dataclass(frozen=True)
class BoundaryPartition:
    """Face-by-face inflow/outflow split of the boundary."""

    grid: Grid
    inflow: dict[str, np.ndarray]

    def outflow(self, side: str) -> np.ndarray:
        return ~self.inflow[side]

    def has_inflow(self, side: str) -> bool:
        return bool(np.any(self.inflow[side]))

    def inflow_face_count(self) -> int:
        return int(sum(np.count_nonzero(m) for m in self.inflow.values()))


def classify_boundary(grid: Grid, bdata: BoundaryData) -> BoundaryPartition:
    """Split boundary faces by the sign of u_B . n.

    Faces with u_B . n < -1e-14 are inflow; zero normal velocity counts as
    outflow, so the two sets partition the boundary exactly.
    """
    inflow = {}
    for side in grid.sides:
        un = bdata.normal_velocity(side)
        inflow[side] = un < -ZERO_FLUX_TOL
    return BoundaryPartition(grid=grid, inflow=inflow)


def net_boundary_flux(grid: Grid, bdata: BoundaryData) -> float:
    """Integral of u_B . n over the boundary (outflow minus inflow)."""
    total = 0.0
    for side in grid.sides:
        un = bdata.normal_velocity(side)
        total += float(np.sum(un)) * grid.side_area(side)
    return total


@dataclass(frozen=True)
class ExtensionField:
    """Divergence-controlled interior extension of the boundary velocity."""

    grid: Grid
    components: tuple[np.ndarray, ...]
    div: np.ndarray
    net_flux: float
    min_div: float
    trace_error: float


def divergence(grid: Grid, components: tuple[np.ndarray, ...]) -> np.ndarray:
    """Cell-centred discrete divergence of a face velocity field."""
    if grid.dimension == 1:
        (u,) = components
        return np.diff(u) / grid.spacing[0]
    u, v = components
    dx, dy = grid.spacing
    return np.diff(u, axis=0) / dx + np.diff(v, axis=1) / dy


def build_extension(
    grid: Grid, bdata: BoundaryData, supplied: tuple[np.ndarray, ...] | None = None
) -> ExtensionField:
    """Extend the boundary velocity into the domain with uniform divergence.

    The construction spreads the net boundary flux K evenly, so the discrete
    divergence equals K / |domain| in every cell: nonnegative whenever the
    data is admissible, strictly positive when K > 0.  In 1D this is linear
    interpolation between the two face traces.  In 2D a potential solve
    matches every normal trace exactly and a stream-function layer (3 cells
    wide, divergence-free by construction) corrects the tangential trace away
    from the corners.

    A caller may hand in a precomputed field instead; it is then only
    verified (normal trace match, divergence floor) and repackaged.
    """
    K = net_boundary_flux(grid, bdata)
    if supplied is not None:
        return _verify_supplied(grid, bdata, supplied, K)
    if grid.dimension == 1:
        uL = float(bdata.u["left"][0])
        uR = float(bdata.u["right"][0])
        x = grid.face_positions(0)
        u = uL + (uR - uL) * x / grid.lengths[0]
        comps = (u,)
        trace_err = 0.0
    else:
        comps, trace_err = _extension_2d(grid, bdata, K)
    div = divergence(grid, comps)
    return ExtensionField(
        grid=grid,
        components=comps,
        div=div,
        net_flux=K,
        min_div=float(div.min()),
        trace_error=trace_err,
    )


def _verify_supplied(grid, bdata, comps, K):
    shapes = grid.velocity_shapes()
    if len(comps) != len(shapes) or any(
        c.shape != s for c, s in zip(comps, shapes)
    ):
        raise GridMismatch("supplied extension has wrong component shapes")
    err = 0.0
    for side in grid.sides:
        axis = grid.normal_axis(side)
        comp = comps[axis]
        idx = 0 if side in ("left", "bottom") else -1
        vals = comp[idx] if axis == 0 else comp[:, idx]
        vals = np.atleast_1d(vals)
        err = max(err, float(np.max(np.abs(vals - bdata.u[side]))))
    if err > 1e-12:
        raise DomainError(f"supplied extension does not match the trace ({err:.2e})")
    div = divergence(grid, comps)
    if float(div.min()) < -1e-8:
        raise DomainError("supplied extension has negative divergence")
    return ExtensionField(
        grid=grid,
        components=tuple(np.asarray(c, dtype=float) for c in comps),
        div=div,
        net_flux=K,
        min_div=float(div.min()),
        trace_error=err,
    )


def _extension_2d(grid, bdata, K):
    nx, ny = grid.cells
    dx, dy = grid.spacing
    vol = grid.cell_volume
    target = K / grid.volume

    # FV Poisson with prescribed boundary-face fluxes; bordered system pins
    # the constant nullspace without breaking any cell equation.
    n = nx * ny

    def cid(i, j):
        return i * ny + j

    rows, cols, vals = [], [], []
    rhs = np.full(n, target * vol)
    ax = dy / dx
    ay = dx / dy
    for i in range(nx):
        for j in range(ny):
            c = cid(i, j)
            diag = 0.0
            if i > 0:
                rows.append(c), cols.append(cid(i - 1, j)), vals.append(ax)
                diag -= ax
            else:
                rhs[c] += bdata.u["left"][j] * dy
            if i < nx - 1:
                rows.append(c), cols.append(cid(i + 1, j)), vals.append(ax)
                diag -= ax
            else:
                rhs[c] -= bdata.u["right"][j] * dy
            if j > 0:
                rows.append(c), cols.append(cid(i, j - 1)), vals.append(ay)
                diag -= ay
            else:
                rhs[c] += bdata.u["bottom"][i] * dx
            if j < ny - 1:
                rows.append(c), cols.append(cid(i, j + 1)), vals.append(ay)
                diag -= ay
            else:
                rhs[c] -= bdata.u["top"][i] * dx
            rows.append(c), cols.append(c), vals.append(diag)
    A = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    ones = np.ones((n, 1))
    bordered = sp.bmat([[A, ones], [ones.T, None]], format="csc")
    sol = spsolve(bordered, np.concatenate([rhs, [0.0]]))
    phi = sol[:n].reshape(nx, ny)

    u = np.empty((nx + 1, ny))
    u[1:nx] = (phi[1:] - phi[:-1]) / dx
    u[0] = bdata.u["left"]
    u[nx] = bdata.u["right"]
    v = np.empty((nx, ny + 1))
    v[:, 1:ny] = (phi[:, 1:] - phi[:, :-1]) / dy
    v[:, 0] = bdata.u["bottom"]
    v[:, ny] = bdata.u["top"]

    psi = _tangential_stream(grid, bdata, u, v)
    u[:, :] += np.diff(psi, axis=1) / dy
    v[:, :] -= np.diff(psi, axis=0) / dx

    trace_err = _tangential_trace_error(grid, bdata, u, v)
    return (u, v), trace_err


def tangential_target(bdata, side, size):
    ut = bdata.ut.get(side)
    if ut is None:
        return np.zeros(size)
    ut = np.atleast_1d(np.asarray(ut, dtype=float))
    if ut.shape != (size,):
        raise GridMismatch(f"tangential trace on {side!r} has wrong length")
    return ut


def _tangential_stream(grid, bdata, u, v):
    """Node stream function whose curl fixes tangential traces.

    The stream function stays identically zero on every boundary node, so
    the curl cannot touch the normal traces.  Interior node rings within a
    few cells of each wall are set so the wall-adjacent tangential face
    receives exactly the requested correction, tapering linearly into the
    interior.  Where the layers of two adjacent walls overlap near a corner
    the corrections superpose; the leftover mismatch is what
    :func:`_tangential_trace_error` reports.
    """
    nx, ny = grid.cells
    dx, dy = grid.spacing
    psi = np.zeros((nx + 1, ny + 1))
    width = min(3, nx - 1, ny - 1)

    # bottom/top: tangential component is u on the wall-adjacent cell row
    for side, j0 in (("bottom", 0), ("top", ny - 1)):
        g = tangential_target(bdata, side, nx + 1) - u[:, j0]
        sign = 1.0 if side == "bottom" else -1.0
        for k in range(1, width + 1):
            j = k if side == "bottom" else ny - k
            psi[1:nx, j] += sign * dy * g[1:nx] * (1.0 - (k - 1) / width)
    # left/right: tangential component is v on the wall-adjacent cell column
    for side in ("left", "right"):
        col = 0 if side == "left" else nx - 1
        g = tangential_target(bdata, side, ny + 1) - v[col, :]
        sign = -1.0 if side == "left" else 1.0
        for k in range(1, width + 1):
            i = k if side == "left" else nx - k
            psi[i, 1:ny] += sign * dx * g[1:ny] * (1.0 - (k - 1) / width)
    return psi


def _tangential_trace_error(grid, bdata, u, v):
    nx, ny = grid.cells
    err = 0.0
    err = max(err, float(np.max(np.abs(u[:, 0] - tangential_target(bdata, "bottom", nx + 1)))))
    err = max(err, float(np.max(np.abs(u[:, -1] - tangential_target(bdata, "top", nx + 1)))))
    err = max(err, float(np.max(np.abs(v[0, :] - tangential_target(bdata, "left", ny + 1)))))
    err = max(err, float(np.max(np.abs(v[-1, :] - tangential_target(bdata, "right", ny + 1)))))
    return err


def interior_divergence_floor(ext: ExtensionField, margin: int = 3) -> float:
    """Minimum extension divergence over cells at least ``margin`` from the wall."""
    div = ext.div
    grid = ext.grid
    if grid.dimension == 1:
        m = min(margin, grid.cells[0] // 3)
        inner = div[m : grid.cells[0] - m]
    else:
        mx = min(margin, grid.cells[0] // 3)
        my = min(margin, grid.cells[1] // 3)
        inner = div[mx : grid.cells[0] - mx, my : grid.cells[1] - my]
    if inner.size == 0:
        inner = div
    return float(inner.min())


@dataclass
class Check:
    name: str
    ok: bool
    mandatory: bool
    detail: str


@dataclass
class ValidationReport:
    """Outcome of the admissibility screen on problem data."""

    checks: list[Check]
    net_flux: float
    c_lower: float
    c_upper: float
    initial_energy: float
    domain_volume: float
    smallness_lhs: float
    guarantee: bool
    beta_reading: str

    @property
    def passed(self) -> bool:
        return all(c.ok for c in self.checks if c.mandatory)

    def failures(self) -> list[Check]:
        return [c for c in self.checks if not c.ok]

    def raise_if_failed(self):
        for c in self.checks:
            if c.mandatory and not c.ok:
                raise ValidationFailure(
                    f"hypothesis {c.name!r} violated: {c.detail}", hypothesis=c.name
                )

    def summary(self) -> str:
        lines = []
        for c in self.checks:
            tag = "ok" if c.ok else ("FAIL" if c.mandatory else "warn")
            lines.append(f"[{tag:4s}] {c.name}: {c.detail}")
        lines.append(
            f"net boundary flux K = {self.net_flux:.6g}; "
            f"congestion bounds c_low = {self.c_lower:.6g}, c_up = {self.c_upper:.6g}"
        )
        lines.append(
            f"initial barrier energy = {self.initial_energy:.6g}; "
            f"mass margin {self.smallness_lhs:.6g} vs volume {self.domain_volume:.6g}"
        )
        lines.append(f"beta bound applied: {self.beta_reading}")
        if not self.guarantee:
            lines.append(
                "no guarantee: neither K > 0 nor the mass-margin inequality holds; "
                "the congestion-limit trends are not certified for this horizon"
            )
        return "\n".join(lines)


def validate_problem_data(
    grid: Grid,
    bdata: BoundaryData,
    rho0: np.ndarray,
    rhostar0: np.ndarray,
    params: PressureParams,
    horizon: float,
) -> ValidationReport:
    """Screen initial and boundary data against the model hypotheses.

    Mandatory checks: strict separation 0 < rho0 < rhostar0 (and the same on
    inflow traces), finite barrier energy of the initial ratio, nonnegative
    net boundary flux, bounded drift target, admissible law exponents for the
    mesh dimension.  The stiff-limit guarantee (either K > 0 or the mass
    margin inequality) is advisory: failing it only downgrades the report.
    """
    checks: list[Check] = []
    partition = classify_boundary(grid, bdata)

    rho0 = np.asarray(rho0, dtype=float)
    rhostar0 = np.asarray(rhostar0, dtype=float)
    if rho0.shape != grid.scalar_shape() or rhostar0.shape != grid.scalar_shape():
        raise GridMismatch("initial fields do not match the mesh")

    gap0 = float((rhostar0 - rho0).min())
    ok = bool(rho0.min() > 0.0 and gap0 > 0.0)
    checks.append(
        Check(
            "initial-separation",
            ok,
            True,
            f"min rho0 = {rho0.min():.6g}, min (rhostar0 - rho0) = {gap0:.6g}",
        )
    )

    rhostar_vals = [rhostar0]
    btexts, bok = [], True
    for side in grid.sides:
        mask = partition.inflow[side]
        if not np.any(mask):
            continue
        r, rs = bdata.rho.get(side), bdata.rhostar.get(side)
        if r is None or rs is None:
            bok = False
            btexts.append(f"{side}: inflow without rho/rhostar trace")
            continue
        gap = float((rs[mask] - r[mask]).min())
        if not (r[mask].min() > 0.0 and gap > 0.0):
            bok = False
        btexts.append(f"{side}: min gap {gap:.6g}")
        rhostar_vals.append(rs[mask])
    checks.append(
        Check(
            "inflow-trace-separation",
            bok,
            True,
            "; ".join(btexts) if btexts else "no inflow faces",
        )
    )

    z0 = rho0 / rhostar0
    energy = np.inf
    ok = bool(z0.max() < 1.0)
    if ok:
        base = PressureParams(
            epsilon=params.epsilon,
            delta=0.0,
            alpha=params.alpha,
            beta=params.beta,
            gamma=params.gamma,
        )
        energy = float(np.sum(energy_potential(z0, base)) * grid.cell_volume)
        ok = bool(np.isfinite(energy))
    checks.append(
        Check(
            "finite-initial-energy",
            ok,
            True,
            f"max z0 = {z0.max():.6g}, barrier energy = {energy:.6g}",
        )
    )

    K = net_boundary_flux(grid, bdata)
    okK = bool(K >= -ZERO_FLUX_TOL)
    checks.append(
        Check("nonnegative-net-flux", okK, True, f"K = {K:.6g}")
    )

    w_ok = True
    if bdata.w is not None:
        w_ok = all(np.all(np.isfinite(wc)) for wc in bdata.w)
    checks.append(Check("bounded-drift-target", w_ok, True, "finite" if w_ok else "non-finite values"))

    d = grid.dimension
    beta_min = 2.5 if d == 3 else 2.0
    reading = (
        "beta > 5/2 (three dimensions)" if d == 3 else f"beta > 2 ({d}D mesh, planar rule)"
    )
    pok = bool(params.beta > beta_min and params.gamma > d)
    checks.append(
        Check(
            "law-exponents",
            pok,
            True,
            f"beta = {params.beta} against {reading}; gamma = {params.gamma} > d = {d}",
        )
    )

    all_rhostar = np.concatenate([np.ravel(a) for a in rhostar_vals])
    c_lower = 1.0 / float(all_rhostar.max())
    c_upper = 1.0 / float(all_rhostar.min())

    mass0 = float(np.sum(z0) * grid.cell_volume)
    influx = 0.0
    for side in grid.sides:
        mask = partition.inflow[side]
        if not np.any(mask):
            continue
        zb = bdata.congestion_trace(side)
        if zb is None:
            continue
        un = bdata.normal_velocity(side)
        influx += float(np.sum(zb[mask] * np.abs(un[mask]))) * grid.side_area(side)
    smallness_lhs = mass0 + horizon * influx
    guarantee = bool(K > ZERO_FLUX_TOL or smallness_lhs < grid.volume)
    checks.append(
        Check(
            "stiff-limit-guarantee",
            guarantee,
            False,
            f"K = {K:.6g}; mass margin {smallness_lhs:.6g} vs volume {grid.volume:.6g}",
        )
    )

    return ValidationReport(
        checks=checks,
        net_flux=K,
        c_lower=c_lower,
        c_upper=c_upper,
        initial_energy=energy,
        domain_volume=grid.volume,
        smallness_lhs=smallness_lhs,
        guarantee=guarantee,
        beta_reading=reading,
    )
