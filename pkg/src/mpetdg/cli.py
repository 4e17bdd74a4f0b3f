"""Command-line entry point: ``run``, ``study`` and ``check``."""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from .config import ConfigError, parse_config

log = logging.getLogger("mpetdg")


def _thread_limit(n):
    if not n:
        return nullcontext()
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


def _load(path):
    try:
        return parse_config(Path(path))
    except ConfigError as exc:
        raise SystemExit(f"config error: {exc}")


class FieldWriter:
    """Observer writing a field file every ``stride`` steps."""

    name = "fields"

    def __init__(self, system, directory: Path, stride: int):
        self.system, self.directory, self.stride = system, directory, stride
        self.records: list = []

    def __call__(self, k, state, stepper):
        from .fields import write_fields
        if self.stride and k % self.stride == 0:
            self.records.append(write_fields(state, self.system, self.directory / f"fields_{k:06d}.vtk"))


def cmd_run(args) -> int:
    from .analysis import EnergyTrace, RateTable, error_report, write_rate_csv
    from .assembly import FaceClassification, RhsAssembler, assemble_system, dump_matrices
    from .fields import write_fields
    from .model import boundary_data_from_exact
    from .study import build_mesh
    from .timestepper import initialize_state, run_transient

    cfg = _load(args.config)
    out = Path(args.output_dir or cfg.output.directory)
    mesh = build_mesh(cfg.mesh, seed=args.seed)
    case = cfg.case()
    boundary = boundary_data_from_exact(case, cfg.neumann_u, cfg.neumann_p)
    faces = FaceClassification.from_boundary_data(mesh, boundary)
    system = assemble_system(mesh, cfg.params, cfg.p, cfg.q, cfg.penalty, faces)
    out.mkdir(parents=True, exist_ok=True)
    if args.dump_matrices:
        for path in dump_matrices(system, out / "matrices"):
            log.info("wrote %s", path)
    rhs = RhsAssembler(system, boundary, case.f, case.g)
    state = initialize_state(system, rhs, case)
    observers = []
    energy = None
    if cfg.output.energy_stride:
        energy = EnergyTrace(system, cfg.output.energy_stride)
        observers.append(energy)
    if cfg.output.fields and cfg.output.field_stride:
        observers.append(FieldWriter(system, out, cfg.output.field_stride))
    result = run_transient(system, rhs, state, cfg.time, observers, cfg.solver)
    report = error_report(result.final, case, system)
    table = RateTable(report.pairing, [report.h], [report.err_u_dg], [report.err_p_l2], [None], [None])
    write_rate_csv([table], out / cfg.output.csv)
    if cfg.output.fields:
        write_fields(result.final, system, out / "fields_final.vtk")
    if energy is not None:
        rec = energy.records
        with open(out / "energy.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(list(rec))
            for row in zip(*rec.values()):
                w.writerow([f"{v:.10e}" for v in row])
    print(f"{report.pairing} h={report.h:.4g} err_u_dg={report.err_u_dg:.6e} "
          f"err_p_l2={report.err_p_l2:.6e} steps={result.n_steps} solver={result.solver_method}")
    return 0


def cmd_study(args) -> int:
    from .study import run_convergence_study

    cfg = _load(args.config)
    try:
        res = run_convergence_study(cfg, args.output_dir, args.seed)
    except ValueError as exc:
        raise SystemExit(f"study error: {exc}")
    with open(res.csv_path) as fh:
        sys.stdout.write(fh.read())
    if res.figure_path:
        log.info("figure: %s", res.figure_path)
    for name, point, msg in res.failures:
        print(f"FAILED {name} at {point}: {msg}", file=sys.stderr)
    return 1 if res.failures else 0


def cmd_check(args) -> int:
    from .checks import run_invariant_suite

    results = run_invariant_suite(seed=args.seed or 0, n_steps=args.steps)
    for r in results:
        print(r.line())
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--output-dir", help="override output.directory from the config")
    common.add_argument("--threads", type=int, default=None, help="BLAS/LAPACK thread limit")
    common.add_argument("--seed", type=int, default=None, help="agglomeration / RNG seed")
    common.add_argument("--dump-matrices", action="store_true",
                        help="write assembled matrices as 'row col value' text")
    common.add_argument("-v", "--verbose", action="count", default=0)

    parser = argparse.ArgumentParser(prog="mpetdg", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", parents=[common], help="single transient run with error report")
    p.add_argument("config")
    p.set_defaults(func=cmd_run)
    p = sub.add_parser("study", parents=[common], help="h- or p-convergence sweep")
    p.add_argument("config")
    p.set_defaults(func=cmd_study)
    p = sub.add_parser("check", parents=[common], help="run the invariant suite")
    p.add_argument("--steps", type=int, default=1000, help="time steps for the energy checks")
    p.set_defaults(func=cmd_check)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    if args.seed is not None:
        np.random.seed(args.seed)
    with _thread_limit(args.threads):
        return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
