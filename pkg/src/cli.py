"""
Command-line entry point: `python -m src.cli <command> ...`.

Exit codes: 0 all pass-checks passed, 1 a check failed, 2 configuration error,
3 runtime or artifact error.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from src.services import drift_spectral as ds
from src.services.geometry_core import ShrinkerCylinder
from src.services.scenario_runner import (
    ScenarioContext, bundled_path, emit_plots, load_config, run_batch, run_scenario,
)
from src.utils.errors import ConfigError, LabError
from src.utils.io import to_jsonable, write_json, write_table
from src.utils.polynomial import Polynomial
from src.utils.settings import TOOL_NAME, TOOL_VERSION, configure_logging, default_output_root

logger = logging.getLogger("cli")

EXIT_OK, EXIT_FAILED, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3


def _out_dir(args, name: str) -> Path:
    return Path(args.out) if args.out else default_output_root() / name


def _context(args) -> ScenarioContext:
    if not args.config:
        raise ConfigError("this command needs --config", key="--config")
    config = load_config(args.config)
    if config.geometry is None:
        raise ConfigError("this command needs a [geometry] section", key="geometry")
    if args.seed is not None:
        config = config.model_copy(update={"seed": args.seed})
    out_dir = _out_dir(args, config.name)
    out_dir.mkdir(parents=True, exist_ok=True)
    return ScenarioContext(config, out_dir, threads=args.threads)


def cmd_flow(args) -> int:
    ctx = _context(args)
    trace = ctx.rescaled
    write_json(to_jsonable(trace.summary()), ctx.out_dir / "flow.json")
    logger.info(f"✅ Rescaled flow: {len(trace.j)} integer times, termination '{trace.termination}'")
    return EXIT_OK


def cmd_arrival(args) -> int:
    ctx = _context(args)
    field = ctx.arrival
    report = ctx.critical
    write_json(to_jsonable({"field": field.summary(), "critical": report.as_dict(), **ctx.notes}),
               ctx.out_dir / "critical.json")
    logger.info(f"✅ Arrival field {field.values.shape} with {len(report.points)} critical point(s)")
    return EXIT_OK


def cmd_trace(args) -> int:
    ctx = _context(args)
    lines = ctx.lines
    write_json({"lines": [to_jsonable(line.summary()) for line in lines]}, ctx.out_dir / "lines.json")
    logger.info(f"✅ Traced {len(lines)} flow lines")
    return EXIT_OK


def cmd_spectral(args) -> int:
    out_dir = _out_dir(args, f"spectral_n{args.n}_k{args.k}")
    try:
        basis = ds.kernel_basis(args.n, args.k)
    except ValueError as e:
        raise ConfigError(str(e), key="--k") from e
    cyl = ShrinkerCylinder.standard(args.n, args.k)
    points = ds.cylinder_points(cyl, 100, seed=args.seed or 0)
    residuals = [ds.eigen_residual(b.function(cyl), 1.0, points) for b in basis]
    payload = {"n": args.n, "k": args.k, "dimension": len(basis),
               "expected_dimension": ds.kernel_dimension(args.n, args.k),
               "max_eigen_residual": max(residuals, default=0.0),
               "elements": [b.as_dict() for b in basis]}
    write_json(to_jsonable(payload), out_dir / "kernel_basis.json")
    logger.info(f"✅ ker(L+1) on the n={args.n}, k={args.k} cylinder has dimension {len(basis)}")
    return EXIT_OK


def cmd_frequency(args) -> int:
    out_dir = _out_dir(args, "frequency")
    if args.hermite:
        index = (list(args.hermite) + [0] * args.n)[:args.n]
        u, potential, series = Polynomial.hermite_tensor(index, nvars=args.n), sum(index) / 2.0, f"hermite{index}"
    else:
        u, potential, series = ds.RadialFunction.power(args.degree, args.n), 0.0, f"|x|^{args.degree:g}"
    radii = np.linspace(args.r_min, args.r_max, args.points)
    prob = ds.FrequencyProblem(n=args.n, u=u, potential=potential, r_max=args.r_max + 1.0)
    curve = ds.frequency_curve(prob, radii)
    write_table([{"series": series, **row} for row in curve.rows()], out_dir / "frequency.csv")
    logger.info(f"✅ Frequency curve for {series} on {len(radii)} radii written to {out_dir}")
    return EXIT_OK


def _scenario_sources(args) -> List[Path]:
    sources = [Path(p) for p in (args.config or [])]
    sources += [bundled_path(name) for name in (args.bundled or [])]
    if not sources:
        raise ConfigError("give at least one --config or --bundled scenario", key="--config")
    return sources


def cmd_scenario(args) -> int:
    sources = _scenario_sources(args)
    if len(sources) == 1:
        config = load_config(sources[0])
        report = run_scenario(config, _out_dir(args, config.name), seed=args.seed,
                              tolerance_scale=args.tolerance_scale, threads=args.threads)
        return report.exit_code
    reports = run_batch(sources, _out_dir(args, "batch"), threads=args.threads, seed=args.seed,
                        tolerance_scale=args.tolerance_scale)
    return max(r.exit_code for r in reports)


def cmd_plots(args) -> int:
    written = emit_plots(args.report_dir)
    for path in written:
        print(path)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help="Output directory (default: $MCFLAB_OUTPUT_ROOT/<name>)")
    common.add_argument("--seed", type=int, default=None, help="Override the scenario seed")
    common.add_argument("--threads", type=int, default=1, help="Worker threads/processes")
    common.add_argument("--tolerance-scale", type=float, default=1.0, dest="tolerance_scale",
                        help="Multiply every pass threshold by this factor")

    parser = argparse.ArgumentParser(prog=TOOL_NAME, description="Mean curvature flow and arrival-time lab")
    parser.add_argument("--version", action="version", version=f"{TOOL_NAME} {TOOL_VERSION}")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, func, text in (("flow", cmd_flow, "Rescaled MCF of the configured geometry"),
                             ("arrival", cmd_arrival, "Arrival time and critical-set analysis"),
                             ("trace", cmd_trace, "Gradient flow lines of the arrival time")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--config", required=True, help="Scenario TOML with a [geometry] section")
        p.set_defaults(func=func)

    p = sub.add_parser("spectral", parents=[common], help="Kernel of L+1 on a shrinking cylinder")
    p.add_argument("--n", type=int, default=2)
    p.add_argument("--k", type=int, default=1)
    p.set_defaults(func=cmd_spectral)

    p = sub.add_parser("frequency", parents=[common], help="Frequency curve U(r)")
    p.add_argument("--n", type=int, default=2)
    p.add_argument("--degree", type=float, default=2.0, help="d for u = |x|^d")
    p.add_argument("--hermite", type=int, nargs="+", help="Hermite multi-index instead of a power")
    p.add_argument("--r-min", type=float, default=0.5, dest="r_min")
    p.add_argument("--r-max", type=float, default=6.0, dest="r_max")
    p.add_argument("--points", type=int, default=12)
    p.set_defaults(func=cmd_frequency)

    p = sub.add_parser("scenario", parents=[common], help="Run one or more scenarios")
    p.add_argument("--config", action="append", help="Scenario TOML (repeatable)")
    p.add_argument("--bundled", action="append", help="Bundled scenario name (repeatable)")
    p.set_defaults(func=cmd_scenario)

    p = sub.add_parser("plots", help="Emit plot-ready tables from a report directory")
    p.add_argument("report_dir")
    p.set_defaults(func=cmd_plots)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    configure_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        logger.error(f"❌ Configuration error ({e.key}): {str(e)}")
        return EXIT_CONFIG
    except (LabError, ValueError) as e:
        logger.error(f"❌ {type(e).__name__}: {str(e)}")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
