"""Command-line entry point: ``smagfem {run,converge,validate,info}``.

Exit codes: 0 success, 1 instability abort or failed check, 2 usage or
configuration error. Progress goes to stdout, logging to stderr.
"""

import argparse
import logging
import sys
from dataclasses import replace
from typing import Optional, Sequence

import numpy as np

from .assembly import set_assembly_threads
from .cases import CASES
from .config import config_for_case, load_config, resolve_output_dir, serialize_config
from .diagnostics import ReportRecord, vorticity
from .errors import ConfigError, MeshError, SmagfemError
from .output import atomic_write, write_timeseries, write_vtk
from .properties import run_all
from .solver import convergence_study, run_simulation
from .spaces import Field, FESystem

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="smagfem",
                                     description="Smagorinsky-stabilized Navier-Stokes solver on macro elements")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    parser.add_argument("--threads", type=int, default=1, help="assembly threads (default: 1)")
    parser.add_argument("--deterministic", action="store_true",
                        help="single-threaded, bit-reproducible assembly")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="simulate a case")
    run.add_argument("--config", help="configuration file")
    run.add_argument("--case", help="case id (when no config file is given)")
    run.add_argument("--out", help="output directory")

    converge = sub.add_parser("converge", help="mesh-sequence study of a manufactured case")
    converge.add_argument("--case", default="mms_linear")
    converge.add_argument("--levels", type=int, default=4)

    validate = sub.add_parser("validate", help="run the property suites")
    validate.add_argument("--seed", type=int, default=0)
    validate.add_argument("--quick", action="store_true", help="10x fewer samples")

    sub.add_parser("info", help="list the built-in cases")
    return parser


def _shifted_pressure(system: FESystem, p: Field) -> Field:
    areas = system.mesh.macro_areas
    return Field("pressure", p.coeffs - float(areas @ p.coeffs) / float(areas.sum()))


def cmd_run(args) -> int:
    if args.config:
        config = load_config(args.config)
    else:
        config = config_for_case(args.case or "shear_layer")
    if args.out:
        config = replace(config, output_dir=args.out)
    out = resolve_output_dir(config)
    out.mkdir(parents=True, exist_ok=True)
    atomic_write(out / "config.cfg", serialize_config(config))
    print(f"Running {config.case} for {config.n_steps} steps (dt={config.dt:g}) -> {out}")

    def on_output(record: ReportRecord, system: FESystem, u: Field, p: Field) -> None:
        print(f"  step {record.step:6d}  t={record.t:9.4f}  energy={record.energy:.6e}  "
              f"max|w|={record.max_vorticity:.4e}  |Bu|={record.div_weak:.2e}")
        if config.write_vtk:
            write_vtk(out / f"snapshot_{record.step:06d}.vtk", system.mesh,
                      {"velocity": u, "vorticity": vorticity(system, u),
                       "pressure": _shifted_pressure(system, p)},
                      node_of_vertex=system.node_of_vertex)

    report = run_simulation(config, on_output)
    write_timeseries(out / "timeseries.csv", report)
    print(f"Finished: {report.steps} steps, flag {report.flag.value}, "
          f"stabilization integral {report.stab_integral:.6e}, {report.wall_time:.1f}s")
    if report.final_errors:
        print(f"Final errors: L2 {report.final_errors[0]:.6e}, H1 {report.final_errors[1]:.6e}")
    if report.aborted:
        print(f"INSTABILITY: {report.abort_reason}")
        return EXIT_FAILURE
    return EXIT_OK


def cmd_converge(args) -> int:
    study = convergence_study(args.case, levels=args.levels)
    print(f"Convergence study: {study.case}")
    print(study.table())
    return EXIT_OK


def cmd_validate(args) -> int:
    results = run_all(seed=args.seed, quick=args.quick)
    width = max(len(r.name) for r in results)
    for r in results:
        status = "ok" if r.passed else "FAILED"
        print(f"{r.name:<{width}}  {status:<6}  worst={r.worst: .3e}  samples={r.samples}  {r.detail}")
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} property suites passed")
    return EXIT_FAILURE if failed else EXIT_OK


def cmd_info(args) -> int:
    print(f"{len(CASES)} cases:")
    for case in CASES.values():
        kind = "verification" if case.is_verification else "benchmark"
        print(f"  {case.id:<12} {kind:<12} {case.title}")
        defaults = ", ".join(f"{k}={v}" for k, v in case.defaults.items())
        print(f"      defaults: {defaults}")
        if case.variants:
            print(f"      variants: {', '.join(case.variants)}")
    return EXIT_OK


COMMANDS = {"run": cmd_run, "converge": cmd_converge, "validate": cmd_validate, "info": cmd_info}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s", stream=sys.stderr)
    try:
        set_assembly_threads(1 if args.deterministic else args.threads)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    np.seterr(over="ignore", invalid="ignore")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, MeshError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SmagfemError, ValueError) as exc:
        logger.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
