"""Command-line front end.

Verbs: ``validate`` screens a config against the model hypotheses, ``run``
executes one scenario and writes its artifacts, ``continuation`` sweeps a
scenario over a decreasing stiffness sequence, ``list-presets`` names the
built-in scenarios.  Configs are given as a file path or a preset name.

Exit codes: 0 success; 2 config or hypothesis rejection; 3 solver abort
(partial artifacts are already on disk); 4 IO failure (missing config,
locked or unwritable output directory).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .continuation import ContinuationPlan, run_continuation
from .errors import ConfigError, DomainError, OutputLocked
from .runio import (RunDirectory, member_dirname, resolve_output_dir,
                    write_limit_report)
from .runner import simulate
from .scenario import (PRESET_NAMES, build_problem, parse_scenario, preset,
                       serialize_scenario)

_PRESET_BLURBS = {
    "corridor-evac": "streaming corridor, matched inflow/outflow, no jam",
    "closed-end": "feed against a counterflow zone; a queue congests",
    "two-gate-2d": "rectangular hall, entry and exit gates, net outflow",
    "equilibrium": "walls and rest state; nothing may move",
    "proportional": "Z locked to 0.5*rho; comparison-principle check",
}


def _load_spec(arg: str):
    """A preset name or a config file path, in that order of precedence."""
    if arg in PRESET_NAMES:
        return preset(arg)
    path = Path(arg)
    if not path.exists():
        raise FileNotFoundError(
            f"{arg!r} is neither a preset ({', '.join(PRESET_NAMES)}) "
            f"nor a config file"
        )
    return parse_scenario(path.read_text(), name=path.stem)


def _validate(spec):
    from .domain import validate_problem_data

    prob = build_problem(spec)
    return validate_problem_data(prob.grid, prob.bdata, prob.rho0,
                                 prob.rhostar0, prob.params, spec.horizon)


def cmd_validate(args) -> int:
    spec = _load_spec(args.config)
    report = _validate(spec)
    print(report.summary())
    if not report.passed:
        for check in report.failures():
            print(f"hypothesis {check.name} violated: {check.detail}",
                  file=sys.stderr)
        return 2
    return 0


def cmd_run(args) -> int:
    spec = _load_spec(args.config)
    report = _validate(spec)
    if not report.passed:
        for check in report.failures():
            print(f"hypothesis {check.name} violated: {check.detail}",
                  file=sys.stderr)
        return 2
    outdir = resolve_output_dir(spec, args.out)
    with RunDirectory(outdir, spec=spec, vtk=args.vtk) as rd:
        rd.write_validation(report)
        result = simulate(spec, sink=rd.sink)
    if result.aborted:
        print(f"solver abort: {result.abort_reason}\n"
              f"partial output kept in {outdir}", file=sys.stderr)
        return 3
    print(f"run complete: {len(result.records)} output times, "
          f"final t = {result.final_state.t:.6g} -> {outdir}")
    if not report.guarantee:
        print("note: no guarantee — see validation.txt")
    return 0


def cmd_continuation(args) -> int:
    spec = _load_spec(args.config)
    try:
        epsilons = tuple(float(tok) for tok in args.epsilons.split(","))
        plan = ContinuationPlan(spec, epsilons, delta_rule=args.delta_rule)
    except (ValueError, DomainError) as err:
        print(f"bad continuation plan: {err}", file=sys.stderr)
        return 2
    report = _validate(spec)
    if not report.passed:
        for check in report.failures():
            print(f"hypothesis {check.name} violated: {check.detail}",
                  file=sys.stderr)
        return 2
    outdir = resolve_output_dir(spec, args.out)

    def member_sink(eps, result):
        mdir = outdir / "members" / member_dirname(eps)
        with RunDirectory(mdir, spec=plan.member_spec(eps)) as rd:
            rd.write_validation(result.validation)
            for row, st in zip(result.records, result.states):
                rd.sink(row, st)

    with RunDirectory(outdir, spec=spec) as rd:
        rd.write_validation(report)
        limit = run_continuation(plan, keep_states=True, sink=member_sink)
        write_limit_report(outdir, limit)
    if limit.aborted:
        kind = 2 if "failed validation" in (limit.abort_reason or "") else 3
        print(f"continuation stopped early: {limit.abort_reason}\n"
              f"partial report kept in {outdir}", file=sys.stderr)
        return kind
    print(f"continuation complete: {len(limit.rows)} members, "
          f"admissibility = {limit.admissibility} -> {outdir}")
    return 0


def cmd_list_presets(_args) -> int:
    for name in PRESET_NAMES:
        print(f"{name:15s} {_PRESET_BLURBS[name]}")
    return 0


def cmd_echo(args) -> int:
    print(serialize_scenario(_load_spec(args.config)), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crowdflow",
        description="two-phase congestion flow: validate, run, sweep",
    )
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("validate", help="screen a config, print the report")
    p.add_argument("config", help="preset name or config file")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("run", help="run one scenario and write artifacts")
    p.add_argument("config", help="preset name or config file")
    p.add_argument("--out", help="output directory (defaults to the config's)")
    p.add_argument("--vtk", action="store_true",
                   help="also write legacy VTK snapshots (2D only)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("continuation",
                       help="sweep a scenario over decreasing epsilon")
    p.add_argument("config", help="preset name or config file")
    p.add_argument("--epsilons", default="1e-1,1e-2,1e-3,1e-4",
                   help="comma-separated strictly decreasing values")
    p.add_argument("--delta-rule", default="equal",
                   help="'equal' (delta = epsilon) or 'fixed:<value>'")
    p.add_argument("--out", help="output directory (defaults to the config's)")
    p.set_defaults(func=cmd_continuation)

    p = sub.add_parser("list-presets", help="name the built-in scenarios")
    p.set_defaults(func=cmd_list_presets)

    p = sub.add_parser("echo",
                       help="parse a config and print its canonical form")
    p.add_argument("config", help="preset name or config file")
    p.set_defaults(func=cmd_echo)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except FileNotFoundError as err:
        print(str(err), file=sys.stderr)
        return 4
    except OutputLocked as err:
        print(str(err), file=sys.stderr)
        return 4
    except OSError as err:
        print(f"io failure: {err}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
