"""Scenario configuration: parsing, presets, serialization, assembly.

Configs are flat key-value files with bracketed sections::

    [grid]
    dimension = 1
    length_x = 1.0
    cells_x = 200

Values are numbers, booleans, or *profiles*.  A profile is either a bare
number (uniform) or ``kind:arg,arg,...`` with kinds

``uniform:v``
    constant v
``linear:a,b``
    a at the low end of the axis, b at the high end
``sine:base,amp,k``
    base + amp * sin(2 pi k x / L)
``bump:center,width,base,amp``
    base plus a compactly supported cosine-squared bump
``gate:lo,hi,inside,outside``
    inside on [lo, hi], outside elsewhere (boundary segments)
``table:v1,v2,...``
    explicit per-point values (length must match)

Initial scalar fields are evaluated at cell centers, velocities at face
positions, boundary segments along the side coordinate.  In two dimensions
the initial and forcing profiles vary along x only (uniform across y);
boundary profiles vary along their side.
"""

from __future__ import annotations

import difflib
import re
from dataclasses import dataclass, field, replace

import numpy as np

from .domain import BoundaryData, Grid
from .errors import ConfigError
from .pressure import PressureParams
from .solver import StepConfig

_SIDES_1D = ("left", "right")
_SIDES_2D = ("left", "right", "bottom", "top")
_BOUNDARY_FIELDS = ("u", "rho", "rhostar", "ut")

_KNOWN_KEYS = {
    "grid": ("dimension", "length_x", "cells_x", "length_y", "cells_y"),
    "time": (
        "horizon", "scheme", "cfl", "viscosity", "bulk_viscosity",
        "diffusion", "max_dt", "dt_override",
    ),
    "pressure": ("epsilon", "delta", "alpha", "beta", "gamma"),
    "initial": ("rho", "rhostar", "u", "v"),
    "boundary": tuple(
        f"{s}_{f}" for s in _SIDES_2D for f in _BOUNDARY_FIELDS
    ),
    "forcing": ("w", "w_x", "w_y"),
    "output": ("interval", "directory", "vtk"),
}
_REQUIRED_SECTIONS = ("grid", "time", "pressure", "initial", "boundary")
_SECTION_ORDER = (
    "grid", "time", "pressure", "initial", "boundary", "forcing", "output"
)

PRESET_NAMES = (
    "corridor-evac", "closed-end", "two-gate-2d", "equilibrium", "proportional"
)


@dataclass(frozen=True)
class Profile:
    """One named spatial profile; ``evaluate`` samples it on a coordinate."""

    kind: str
    args: tuple

    def evaluate(self, coords: np.ndarray, length: float) -> np.ndarray:
        x = np.asarray(coords, dtype=float)
        a = self.args
        if self.kind == "uniform":
            return np.full(x.shape, a[0])
        if self.kind == "linear":
            return a[0] + (a[1] - a[0]) * x / length
        if self.kind == "sine":
            return a[0] + a[1] * np.sin(2.0 * np.pi * a[2] * x / length)
        if self.kind == "bump":
            c, w, base, amp = a
            out = np.full(x.shape, base)
            inside = np.abs(x - c) < w
            out[inside] += amp * np.cos(np.pi * (x[inside] - c) / (2.0 * w)) ** 2
            return out
        if self.kind == "gate":
            lo, hi, inside, outside = a
            return np.where((x >= lo) & (x <= hi), inside, outside)
        if self.kind == "table":
            if len(a) != x.size:
                raise ConfigError(
                    f"table profile has {len(a)} entries but the target "
                    f"needs {x.size}"
                )
            return np.array(a, dtype=float)
        raise ConfigError(f"unknown profile kind {self.kind!r}")

    def text(self) -> str:
        return self.kind + ":" + ",".join(repr(float(v)) for v in self.args)


_PROFILE_KINDS = {
    "uniform": 1, "linear": 2, "sine": 3, "bump": 4, "gate": 4, "table": None
}


def _parse_profile(raw: str, *, where: str, line: int) -> Profile:
    raw = raw.strip()
    if ":" not in raw:
        try:
            return Profile("uniform", (float(raw),))
        except ValueError:
            raise ConfigError(
                f"{where}: expected a number or kind:args profile, got "
                f"{raw!r}", line=line,
            )
    kind, _, rest = raw.partition(":")
    kind = kind.strip()
    if kind not in _PROFILE_KINDS:
        hint = difflib.get_close_matches(kind, _PROFILE_KINDS, n=1)
        extra = f"; did you mean {hint[0]!r}?" if hint else ""
        raise ConfigError(
            f"{where}: unknown profile kind {kind!r}{extra}", line=line
        )
    try:
        args = tuple(float(v) for v in rest.split(","))
    except ValueError:
        raise ConfigError(
            f"{where}: profile arguments must be numbers, got {rest!r}",
            line=line,
        )
    arity = _PROFILE_KINDS[kind]
    if arity is not None and len(args) != arity:
        raise ConfigError(
            f"{where}: profile kind {kind!r} takes {arity} arguments, "
            f"got {len(args)}", line=line,
        )
    return Profile(kind, args)


@dataclass(frozen=True)
class ScenarioSpec:
    """Everything needed to set up and run one scenario."""

    dimension: int
    lengths: tuple
    cells: tuple
    horizon: float
    scheme: str = "imex"
    cfl: float = 0.4
    viscosity: float = 0.1
    bulk_viscosity: float = 0.0
    diffusion: float = 0.0
    max_dt: float | None = None
    dt_override: float | None = None
    pressure: PressureParams = field(default_factory=PressureParams)
    initial: dict = field(default_factory=dict)
    boundary: dict = field(default_factory=dict)
    forcing: dict = field(default_factory=dict)
    output_interval: float = 0.1
    directory: str = "runs/scenario"
    vtk: bool = False
    name: str | None = None

    @property
    def sides(self):
        return _SIDES_1D if self.dimension == 1 else _SIDES_2D


class _Entry:
    __slots__ = ("value", "line")

    def __init__(self, value, line):
        self.value = value
        self.line = line


def _read_sections(text: str) -> dict:
    sections: dict[str, dict[str, _Entry]] = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        m = re.fullmatch(r"\[([a-z][a-z0-9_-]*)\]", line)
        if m:
            name = m.group(1)
            if name not in _KNOWN_KEYS:
                raise ConfigError(
                    f"unknown section [{name}]", section=name, line=lineno
                )
            if name in sections:
                raise ConfigError(
                    f"duplicate section [{name}]", section=name, line=lineno
                )
            sections[name] = {}
            current = name
            continue
        if "=" not in line:
            raise ConfigError(
                f"expected 'key = value', got {line!r}", section=current,
                line=lineno,
            )
        if current is None:
            raise ConfigError(
                f"key outside any section: {line!r}", line=lineno
            )
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        known = _KNOWN_KEYS[current]
        if key not in known:
            hint = difflib.get_close_matches(key, known, n=1)
            extra = f"; did you mean {hint[0]!r}?" if hint else ""
            raise ConfigError(
                f"unknown key {key!r} in [{current}]{extra}",
                section=current, line=lineno,
            )
        if key in sections[current]:
            raise ConfigError(
                f"duplicate key {key!r} in [{current}]", section=current,
                line=lineno,
            )
        sections[current][key] = _Entry(value, lineno)
    for name in _REQUIRED_SECTIONS:
        if name not in sections:
            raise ConfigError(f"missing [{name}] section", section=name)
    return sections


def _take(section, name, key, conv, default=...):
    entry = section.pop(key, None)
    if entry is None:
        if default is ...:
            raise ConfigError(f"missing key {key!r} in [{name}]", section=name)
        return default
    try:
        return conv(entry.value)
    except ConfigError:
        raise
    except ValueError:
        raise ConfigError(
            f"bad value for {key!r} in [{name}]: {entry.value!r}",
            section=name, line=entry.line,
        )


def _as_bool(raw: str) -> bool:
    low = raw.lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ValueError(raw)


def _as_optional_float(raw: str):
    if raw.lower() == "none":
        return None
    return float(raw)


def parse_scenario(text: str, name: str | None = None) -> ScenarioSpec:
    """Parse a config text into a fully defaulted :class:`ScenarioSpec`.

    Raises :class:`ConfigError` with section and line context on malformed
    input; semantic admissibility is checked later by the validation stage.
    """
    sections = _read_sections(text)

    g = sections["grid"]
    dim = _take(g, "grid", "dimension", int)
    if dim not in (1, 2):
        raise ConfigError("dimension must be 1 or 2", section="grid")
    lengths = [_take(g, "grid", "length_x", float)]
    cells = [_take(g, "grid", "cells_x", int)]
    if dim == 2:
        lengths.append(_take(g, "grid", "length_y", float))
        cells.append(_take(g, "grid", "cells_y", int))
    else:
        for key in ("length_y", "cells_y"):
            if key in g:
                raise ConfigError(
                    f"{key!r} given but dimension = 1", section="grid",
                    line=g[key].line,
                )

    tsec = sections["time"]
    horizon = _take(tsec, "time", "horizon", float)
    scheme = _take(tsec, "time", "scheme", str, "imex")
    if scheme not in ("imex", "explicit"):
        raise ConfigError(
            f"scheme must be 'imex' or 'explicit', got {scheme!r}",
            section="time",
        )
    cfl = _take(tsec, "time", "cfl", float, 0.4)
    viscosity = _take(tsec, "time", "viscosity", float, 0.1)
    bulk = _take(tsec, "time", "bulk_viscosity", float, 0.0)
    diffusion = _take(tsec, "time", "diffusion", float, 0.0)
    max_dt = _take(tsec, "time", "max_dt", _as_optional_float, None)
    dt_override = _take(tsec, "time", "dt_override", _as_optional_float, None)

    p = sections["pressure"]
    params = PressureParams(
        epsilon=_take(p, "pressure", "epsilon", float),
        delta=_take(p, "pressure", "delta", float, 0.0),
        alpha=_take(p, "pressure", "alpha", float, 2.0),
        beta=_take(p, "pressure", "beta", float, 3.0),
        gamma=_take(p, "pressure", "gamma", float, 6.0),
    )

    ini = sections["initial"]
    initial = {}
    for key in ("rho", "rhostar", "u"):
        entry = ini.pop(key, None)
        if entry is None:
            raise ConfigError(
                f"missing key {key!r} in [initial]", section="initial"
            )
        initial[key] = _parse_profile(
            entry.value, where=f"[initial] {key}", line=entry.line
        )
    if dim == 2:
        entry = ini.pop("v", None)
        if entry is None:
            raise ConfigError("missing key 'v' in [initial]", section="initial")
        initial["v"] = _parse_profile(
            entry.value, where="[initial] v", line=entry.line
        )
    elif "v" in ini:
        raise ConfigError(
            "'v' given but dimension = 1", section="initial",
            line=ini["v"].line,
        )

    sides = _SIDES_1D if dim == 1 else _SIDES_2D
    bsec = sections["boundary"]
    boundary = {}
    for key, entry in list(bsec.items()):
        side = key.split("_", 1)[0]
        if side not in sides:
            raise ConfigError(
                f"{key!r} names side {side!r}, absent in {dim}D",
                section="boundary", line=entry.line,
            )
        boundary[key] = _parse_profile(
            entry.value, where=f"[boundary] {key}", line=entry.line
        )
    for side in sides:
        if f"{side}_u" not in boundary:
            raise ConfigError(
                f"missing key '{side}_u' in [boundary] (every side needs "
                "its normal velocity)", section="boundary",
            )

    fsec = sections.get("forcing", {})
    forcing = {}
    wanted = ("w",) if dim == 1 else ("w_x", "w_y")
    for key, entry in list(fsec.items()):
        if key not in wanted:
            raise ConfigError(
                f"{key!r} is not a forcing key in {dim}D (use "
                f"{' and '.join(map(repr, wanted))})",
                section="forcing", line=entry.line,
            )
        if entry.value.strip().lower() == "none":
            forcing[key] = None
        else:
            forcing[key] = _parse_profile(
                entry.value, where=f"[forcing] {key}", line=entry.line
            )

    osec = sections.get("output", {})
    interval = _take(osec, "output", "interval", float, horizon / 10.0)
    directory = _take(osec, "output", "directory", str, "runs/scenario")
    vtk = _take(osec, "output", "vtk", _as_bool, False)

    return ScenarioSpec(
        dimension=dim,
        lengths=tuple(lengths),
        cells=tuple(cells),
        horizon=horizon,
        scheme=scheme,
        cfl=cfl,
        viscosity=viscosity,
        bulk_viscosity=bulk,
        diffusion=diffusion,
        max_dt=max_dt,
        dt_override=dt_override,
        pressure=params,
        initial=initial,
        boundary=boundary,
        forcing=forcing,
        output_interval=interval,
        directory=directory,
        vtk=vtk,
        name=name,
    )


def serialize_scenario(spec: ScenarioSpec) -> str:
    """Canonical config text; parse(serialize(spec)) == spec."""
    out = []

    def sec(name):
        out.append(f"[{name}]")

    def kv(key, value):
        out.append(f"{key} = {value}")

    sec("grid")
    kv("dimension", spec.dimension)
    kv("length_x", repr(spec.lengths[0]))
    kv("cells_x", spec.cells[0])
    if spec.dimension == 2:
        kv("length_y", repr(spec.lengths[1]))
        kv("cells_y", spec.cells[1])
    out.append("")
    sec("time")
    kv("horizon", repr(spec.horizon))
    kv("scheme", spec.scheme)
    kv("cfl", repr(spec.cfl))
    kv("viscosity", repr(spec.viscosity))
    kv("bulk_viscosity", repr(spec.bulk_viscosity))
    kv("diffusion", repr(spec.diffusion))
    if spec.max_dt is not None:
        kv("max_dt", repr(spec.max_dt))
    if spec.dt_override is not None:
        kv("dt_override", repr(spec.dt_override))
    out.append("")
    sec("pressure")
    kv("epsilon", repr(spec.pressure.epsilon))
    kv("delta", repr(spec.pressure.delta))
    kv("alpha", repr(spec.pressure.alpha))
    kv("beta", repr(spec.pressure.beta))
    kv("gamma", repr(spec.pressure.gamma))
    out.append("")
    sec("initial")
    for key, prof in spec.initial.items():
        kv(key, prof.text())
    out.append("")
    sec("boundary")
    for key, prof in spec.boundary.items():
        kv(key, prof.text())
    out.append("")
    sec("forcing")
    for key, prof in spec.forcing.items():
        kv(key, "none" if prof is None else prof.text())
    out.append("")
    sec("output")
    kv("interval", repr(spec.output_interval))
    kv("directory", spec.directory)
    kv("vtk", "true" if spec.vtk else "false")
    out.append("")
    return "\n".join(out)


# ---------------------------------------------------------------------------
# assembly into solver inputs
# ---------------------------------------------------------------------------


@dataclass
class ProblemData:
    """Arrays and parameter objects ready for validation and stepping."""

    grid: Grid
    bdata: BoundaryData
    rho0: np.ndarray
    rhostar0: np.ndarray
    u0: tuple
    w: tuple | None
    params: PressureParams
    step_config: StepConfig


def _side_coords(grid: Grid, side: str, nodes: bool) -> np.ndarray:
    if grid.dimension == 1:
        # a 1D side is a single face; profiles degenerate to their value
        # at the side position
        pos = 0.0 if side == "left" else grid.lengths[0]
        return np.array([pos])
    axis = 1 if side in ("left", "right") else 0
    return grid.face_positions(axis) if nodes else grid.centers(axis)


def _side_length(grid: Grid, side: str) -> float:
    if grid.dimension == 1:
        return grid.lengths[0]
    return grid.lengths[1 if side in ("left", "right") else 0]


def build_problem(spec: ScenarioSpec) -> ProblemData:
    """Evaluate every profile of the spec on the grid it declares."""
    grid = Grid(lengths=spec.lengths, cells=spec.cells)
    L = spec.lengths[0]
    x = grid.centers(0)
    xf = grid.face_positions(0)

    def cell_field(prof: Profile) -> np.ndarray:
        vals = prof.evaluate(x, L)
        if grid.dimension == 2:
            vals = np.repeat(vals[:, None], grid.cells[1], axis=1)
        return vals

    rho0 = cell_field(spec.initial["rho"])
    rhostar0 = cell_field(spec.initial["rhostar"])

    ux = spec.initial["u"].evaluate(xf, L)
    if grid.dimension == 1:
        u0 = (ux,)
    else:
        nx, ny = grid.cells
        u0x = np.repeat(ux[:, None], ny, axis=1)
        vx = spec.initial["v"].evaluate(x, L)
        u0y = np.repeat(vx[:, None], ny + 1, axis=1)
        u0 = (u0x, u0y)

    bu, brho, brhostar, but = {}, {}, {}, {}
    for key, prof in spec.boundary.items():
        side, field_name = key.split("_", 1)
        nodes = field_name == "ut"
        coords = _side_coords(grid, side, nodes)
        vals = prof.evaluate(coords, _side_length(grid, side))
        {"u": bu, "rho": brho, "rhostar": brhostar, "ut": but}[field_name][
            side
        ] = vals

    if spec.dimension == 1:
        wprof = spec.forcing.get("w")
        w = None if wprof is None else (wprof.evaluate(xf, L),)
    else:
        wx = spec.forcing.get("w_x")
        wy = spec.forcing.get("w_y")
        if wx is None and wy is None:
            w = None
        else:
            nx, ny = grid.cells
            wxa = np.zeros((nx + 1, ny)) if wx is None else np.repeat(
                wx.evaluate(xf, L)[:, None], ny, axis=1
            )
            wya = np.zeros((nx, ny + 1)) if wy is None else np.repeat(
                wy.evaluate(x, L)[:, None], ny + 1, axis=1
            )
            w = (wxa, wya)

    bdata = BoundaryData(
        grid=grid, u=bu, rho=brho, rhostar=brhostar, ut=but, w=w
    )
    cfg = StepConfig(
        mode=spec.scheme,
        cfl=spec.cfl,
        mu=spec.viscosity,
        lam=spec.bulk_viscosity,
        eta=spec.diffusion,
        force_dt=spec.dt_override,
    )
    return ProblemData(
        grid=grid, bdata=bdata, rho0=rho0, rhostar0=rhostar0, u0=u0, w=w,
        params=spec.pressure, step_config=cfg,
    )


# ---------------------------------------------------------------------------
# presets
# ---------------------------------------------------------------------------

_PRESETS = {
    # Straight corridor with matched inflow and outflow speed (zero net
    # boundary flux): crowd streams through, the congestion density varies
    # along the corridor, nothing jams.
    "corridor-evac": """
[grid]
dimension = 1
length_x = 1.0
cells_x = 200

[time]
horizon = 0.75
scheme = imex
cfl = 0.4
viscosity = 0.1

[pressure]
epsilon = 0.1
delta = 0.01

[initial]
rho = uniform:0.5
rhostar = sine:1.0,0.2,1.0
u = uniform:1.0

[boundary]
left_u = 1.0
left_rho = 0.5
left_rhostar = 1.0
right_u = 1.0

[forcing]
w = none

[output]
interval = 0.05
directory = runs/corridor-evac
""",
    # Inflow keeps feeding a lane that runs into a counterflow zone: the
    # drift target turns hard against the stream over [0.55, 0.75], so the
    # arrivals pile up into a queue that genuinely reaches the congestion
    # ceiling, while the matched outlet speed keeps the net boundary flux
    # zero.  The jam strength scales with how long the feed runs, so the
    # mass-margin guarantee depends on the horizon.
    "closed-end": """
[grid]
dimension = 1
length_x = 1.0
cells_x = 200

[time]
horizon = 0.8
scheme = imex
cfl = 0.4
viscosity = 0.01

[pressure]
epsilon = 0.1
delta = 0.1

[initial]
rho = gate:0.0,0.55,0.45,0.08
rhostar = uniform:1.0
u = uniform:1.0

[boundary]
left_u = 1.0
left_rho = 0.5
left_rhostar = 1.0
right_u = 1.0

[forcing]
w = gate:0.55,0.75,-4.5,1.0

[output]
interval = 0.1
directory = runs/closed-end
""",
    # Rectangular hall, one entry gate on the left, a slightly faster exit
    # gate on the right (strictly positive net outflow), side walls.
    "two-gate-2d": """
[grid]
dimension = 2
length_x = 2.0
cells_x = 64
length_y = 1.0
cells_y = 32

[time]
horizon = 0.25
scheme = imex
cfl = 0.4
viscosity = 0.1

[pressure]
epsilon = 0.1
delta = 0.01

[initial]
rho = uniform:0.4
rhostar = uniform:1.0
u = uniform:0.0
v = uniform:0.0

[boundary]
left_u = gate:0.25,0.75,1.0,0.0
left_rho = 0.5
left_rhostar = 1.0
right_u = gate:0.25,0.75,1.25,0.0
bottom_u = 0.0
top_u = 0.0

[forcing]
w_x = none
w_y = none

[output]
interval = 0.05
directory = runs/two-gate-2d
""",
    # Everything at rest between walls; every diagnostic must stay frozen.
    "equilibrium": """
[grid]
dimension = 1
length_x = 1.0
cells_x = 100

[time]
horizon = 0.5
scheme = imex
cfl = 0.4
viscosity = 0.1

[pressure]
epsilon = 0.1
delta = 0.0

[initial]
rho = uniform:0.4
rhostar = uniform:1.0
u = uniform:0.0

[boundary]
left_u = 0.0
right_u = 0.0

[forcing]
w = none

[output]
interval = 0.1
directory = runs/equilibrium
""",
    # Congestion ratio set to exactly half the density (uniform congestion
    # density 2): the two fields must remain proportional to the bit.
    "proportional": """
[grid]
dimension = 1
length_x = 1.0
cells_x = 128

[time]
horizon = 0.5
scheme = imex
cfl = 0.4
viscosity = 0.1

[pressure]
epsilon = 0.1
delta = 0.02

[initial]
rho = bump:0.5,0.3,0.5,0.8
rhostar = uniform:2.0
u = sine:0.0,0.3,0.5

[boundary]
left_u = 0.0
right_u = 0.0

[forcing]
w = none

[output]
interval = 0.1
directory = runs/proportional
""",
}


def preset(name: str) -> ScenarioSpec:
    """Return a built-in scenario by name (see :data:`PRESET_NAMES`)."""
    text = _PRESETS.get(name)
    if text is None:
        raise ConfigError(
            f"unknown preset {name!r}; available: {', '.join(PRESET_NAMES)}"
        )
    return parse_scenario(text, name=name)


def preset_text(name: str) -> str:
    text = _PRESETS.get(name)
    if text is None:
        raise ConfigError(
            f"unknown preset {name!r}; available: {', '.join(PRESET_NAMES)}"
        )
    return text


def with_pressure(spec: ScenarioSpec, **kwargs) -> ScenarioSpec:
    """Spec with some pressure parameters replaced (used by sweeps)."""
    return replace(spec, pressure=replace(spec.pressure, **kwargs))
