"""Command-line entry point: ``crowdflow-plots <dir> [options]``.

Exit codes mirror the simulator's convention: 0 on success, 2 for bad
input (unknown figure or format, schema mismatch, nothing to plot, too
few sweep members), 4 for a missing input directory or other IO failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .job import FIGURE_NAMES, FORMATS, PlotJob, run_job
from .schema import PlotInputError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crowdflow-plots",
        description="Render figures from a run or continuation directory.",
    )
    parser.add_argument("input_dir", help="run or continuation directory to read")
    parser.add_argument(
        "--figures",
        default="",
        help="comma-separated subset of: " + ", ".join(FIGURE_NAMES)
        + " (default: whatever the input supports)",
    )
    parser.add_argument(
        "--out",
        default="figures",
        help="output directory for the figure files (default: ./figures)",
    )
    parser.add_argument("--format", default="svg", choices=FORMATS,
                        help="figure file format (default: svg)")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    figures = tuple(f.strip() for f in args.figures.split(",") if f.strip())
    job = PlotJob(
        input_dir=Path(args.input_dir),
        out_dir=Path(args.out),
        figures=figures,
        format=args.format,
    )
    try:
        written = run_job(job)
    except PlotInputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    for path in written:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
