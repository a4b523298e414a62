"""Config parsing, presets, serialization, and problem assembly."""

import dataclasses

import numpy as np
import pytest

from crowdflow.domain import net_boundary_flux, validate_problem_data
from crowdflow.errors import ConfigError
from crowdflow.scenario import (
    PRESET_NAMES,
    Profile,
    build_problem,
    parse_scenario,
    preset,
    preset_text,
    serialize_scenario,
    with_pressure,
)

MINIMAL = """
[grid]
dimension = 1
length_x = 1.0
cells_x = 40

[time]
horizon = 0.5

[pressure]
epsilon = 0.1

[initial]
rho = 0.4
rhostar = 1.0
u = 0.0

[boundary]
left_u = 0.0
right_u = 0.0
"""


def validate(spec):
    prob = build_problem(spec)
    return validate_problem_data(
        prob.grid, prob.bdata, prob.rho0, prob.rhostar0, prob.params,
        spec.horizon,
    )


# -- parsing and errors ------------------------------------------------------


def test_minimal_config_gets_defaults():
    spec = parse_scenario(MINIMAL)
    assert spec.dimension == 1
    assert spec.cells == (40,)
    assert spec.scheme == "imex"
    assert spec.cfl == 0.4
    assert spec.viscosity == 0.1
    assert spec.pressure.delta == 0.0
    assert spec.pressure.alpha == 2.0
    assert spec.output_interval == pytest.approx(0.05)
    assert spec.max_dt is None


def test_misspelled_key_suggests_the_near_miss():
    bad = MINIMAL.replace("[time]\nhorizon = 0.5",
                          "[time]\nhorizon = 0.5\nviscocity = 0.2")
    with pytest.raises(ConfigError) as err:
        parse_scenario(bad)
    assert "viscocity" in str(err.value)
    assert "'viscosity'" in str(err.value)
    assert err.value.section == "time"
    assert err.value.line is not None


def test_missing_boundary_section_is_named():
    bad = MINIMAL[: MINIMAL.index("[boundary]")]
    with pytest.raises(ConfigError, match=r"missing \[boundary\] section"):
        parse_scenario(bad)


def test_unknown_section_rejected_with_line():
    bad = MINIMAL + "\n[outputs]\ninterval = 0.1\n"
    with pytest.raises(ConfigError, match=r"unknown section"):
        parse_scenario(bad)


def test_duplicate_key_rejected():
    bad = MINIMAL.replace("left_u = 0.0", "left_u = 0.0\nleft_u = 0.1")
    with pytest.raises(ConfigError, match="duplicate key 'left_u'"):
        parse_scenario(bad)


def test_bad_number_reports_its_line():
    bad = MINIMAL.replace("cells_x = 40", "cells_x = forty")
    with pytest.raises(ConfigError) as err:
        parse_scenario(bad)
    assert err.value.line is not None
    assert "cells_x" in str(err.value)


def test_dimension_mismatched_keys_rejected():
    with pytest.raises(ConfigError, match="dimension = 1"):
        parse_scenario(MINIMAL.replace("cells_x = 40",
                                       "cells_x = 40\nlength_y = 1.0"))
    with pytest.raises(ConfigError, match="dimension = 1"):
        parse_scenario(MINIMAL.replace("u = 0.0", "u = 0.0\nv = 0.0", 1))
    with pytest.raises(ConfigError, match="forcing"):
        parse_scenario(MINIMAL + "\n[forcing]\nw_x = 0.1\n")


def test_scheme_vocabulary_enforced():
    bad = MINIMAL.replace("horizon = 0.5", "horizon = 0.5\nscheme = magic")
    with pytest.raises(ConfigError, match="imex"):
        parse_scenario(bad)


def test_missing_side_velocity_rejected():
    bad = MINIMAL.replace("right_u = 0.0", "")
    with pytest.raises(ConfigError, match="right_u"):
        parse_scenario(bad)


def test_key_outside_section_rejected():
    with pytest.raises(ConfigError, match="outside any section"):
        parse_scenario("dimension = 1\n" + MINIMAL)


# -- profiles ----------------------------------------------------------------


def test_profile_shapes_and_values():
    x = np.linspace(0.0, 1.0, 11)
    lin = Profile("linear", (2.0, 4.0)).evaluate(x, 1.0)
    assert lin[0] == 2.0 and lin[-1] == 4.0 and lin[5] == pytest.approx(3.0)

    sine = Profile("sine", (1.0, 0.2, 1.0)).evaluate(x, 1.0)
    assert sine[0] == pytest.approx(1.0)
    assert np.max(sine) == pytest.approx(1.2, abs=1e-2)

    bump = Profile("bump", (0.5, 0.2, 1.0, 3.0)).evaluate(x, 1.0)
    assert bump[0] == 1.0 and bump[-1] == 1.0
    assert bump[5] == pytest.approx(4.0)

    gate = Profile("gate", (0.25, 0.75, 1.0, 0.0)).evaluate(x, 1.0)
    assert gate[0] == 0.0 and gate[5] == 1.0 and gate[-1] == 0.0


def test_table_profile_length_must_match():
    with pytest.raises(ConfigError, match="table"):
        Profile("table", (1.0, 2.0)).evaluate(np.zeros(3), 1.0)


def test_unknown_profile_kind_suggests():
    bad = MINIMAL.replace("rho = 0.4", "rho = unifrom:0.4")
    with pytest.raises(ConfigError, match="uniform"):
        parse_scenario(bad)


# -- round trips -------------------------------------------------------------


@pytest.mark.parametrize("name", PRESET_NAMES)
def test_presets_round_trip_exactly(name):
    spec = parse_scenario(preset_text(name))
    again = parse_scenario(serialize_scenario(spec))
    assert again == spec


def test_round_trip_keeps_optional_time_keys():
    spec = dataclasses.replace(parse_scenario(MINIMAL), max_dt=0.125,
                               dt_override=0.0625)
    again = parse_scenario(serialize_scenario(spec))
    assert again.max_dt == 0.125
    assert again.dt_override == 0.0625


def test_unknown_preset_lists_choices():
    with pytest.raises(ConfigError, match="corridor-evac"):
        preset("corridor")


# -- preset content ----------------------------------------------------------


def test_corridor_assembly_and_admissibility():
    spec = preset("corridor-evac")
    prob = build_problem(spec)
    assert prob.rho0.shape == (200,)
    assert prob.u0[0].shape == (201,)
    assert np.all(prob.rho0 == 0.5)
    assert prob.w is None
    assert net_boundary_flux(prob.grid, prob.bdata) == pytest.approx(0.0)

    report = validate(spec)
    assert report.passed
    assert report.guarantee
    # mass margin by hand: initial congestion ratio plus inflow contribution
    dx = prob.grid.spacing[0]
    lhs = float(np.sum(prob.rho0 / prob.rhostar0) * dx) + 0.75 * 0.5 * 1.0
    assert report.smallness_lhs == pytest.approx(lhs, rel=1e-12)
    assert lhs < 1.0


def test_two_gate_preset_has_positive_net_flux():
    spec = preset("two-gate-2d")
    prob = build_problem(spec)
    assert prob.grid.cells == (64, 32)
    assert prob.u0[0].shape == (65, 32)
    assert prob.u0[1].shape == (64, 33)
    gate = prob.bdata.u["left"]
    assert gate.shape == (32,)
    assert int(np.count_nonzero(gate)) == 16
    assert net_boundary_flux(prob.grid, prob.bdata) == pytest.approx(0.125)
    report = validate(spec)
    assert report.passed and report.guarantee


def test_closed_end_guarantee_depends_on_horizon():
    spec = preset("closed-end")
    prob = build_problem(spec)
    assert prob.w is not None
    # drift faces: with the stream at both ends, against it mid-lane
    assert prob.w[0][0] == pytest.approx(1.0)
    assert prob.w[0][120] == pytest.approx(-4.5)  # face x = 0.6
    assert prob.w[0][-1] == pytest.approx(1.0)

    short = validate(spec)
    assert short.passed and short.guarantee
    # initial mass 110*0.45/200 + 90*0.08/200 = 0.2835, inflow rate 0.5:
    # the margin dies at T = 1.433
    assert short.smallness_lhs == pytest.approx(0.2835 + 0.8 * 0.5, rel=1e-12)
    long = validate(dataclasses.replace(spec, horizon=1.5))
    assert long.passed
    assert not long.guarantee


@pytest.mark.parametrize("name", ["equilibrium", "proportional"])
def test_closed_presets_validate(name):
    report = validate(preset(name))
    assert report.passed and report.guarantee


def test_with_pressure_swaps_only_pressure():
    spec = preset("corridor-evac")
    swept = with_pressure(spec, epsilon=1e-3, delta=1e-3)
    assert swept.pressure.epsilon == 1e-3
    assert swept.pressure.delta == 1e-3
    assert swept.cells == spec.cells
    assert swept.initial == spec.initial
