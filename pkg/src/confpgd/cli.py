"""Command-line entry point: ``confpgd solve | verify | export-matrices``."""
from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from contextlib import nullcontext
from pathlib import Path

from .config import ConfigError, RunConfig, config_echo, load_config
from .lowrank import dumps_json, format_float, save_modes
from .pgd import SolveError, greedy_solve
from .problems import build_problem
from .spaces import DomainParameterError

log = logging.getLogger("confpgd")

EXIT_CODES = {"converged": 0, "stagnated": 2, "max_modes": 3}
EXIT_ERROR = 1
CSV_HEADER = "N,delta_E,rq,tau,sweeps,theta_hat,energy_error_sq"


def _thread_limit():
    raw = os.environ.get("PGD_THREADS", "1")
    try:
        n = max(1, int(raw))
    except ValueError:
        raise ConfigError(f"PGD_THREADS must be an integer, got {raw!r}") from None
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover
        return nullcontext()
    return threadpool_limits(limits=n)


def _csv_field(v) -> str:
    return "" if v is None else format_float(v)


def report_rows(records) -> list[str]:
    rows = [CSV_HEADER]
    for r in records:
        rows.append(",".join([str(r.N), _csv_field(r.delta_E), _csv_field(r.rq), _csv_field(r.tau),
                              str(r.sweeps), _csv_field(r.theta_hat), _csv_field(r.energy_error_sq)]))
    return rows


def run(config: RunConfig) -> int:
    """Solve one configured problem and write report, summary and modes."""
    start = time.perf_counter()
    try:
        problem = build_problem(config.problem)
        result = greedy_solve(problem, config.greedy, config.als, config.diagnostics)
    except SolveError as exc:
        log.error("numerical failure at iteration %d: %s", exc.iteration, exc.cause)
        return EXIT_ERROR
    except (DomainParameterError, ValueError) as exc:
        log.error("invalid problem: %s", exc)
        return EXIT_ERROR
    elapsed_ms = (time.perf_counter() - start) * 1e3

    out = config.output
    for path in (out.report, out.summary, out.modes):
        Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(out.report, "w", encoding="ascii", newline="") as fh:
        fh.write("\n".join(report_rows(result.records)) + "\n")
    summary = {
        "status": result.status,
        "modes": result.n_modes,
        "final_delta_E": result.final_delta_E,
        "min_theta_hat": result.min_theta_hat,
        "config": config_echo(config),
        "wall_time_ms": elapsed_ms if out.wall_time else None,
    }
    with open(out.summary, "w", encoding="utf-8") as fh:
        fh.write(dumps_json(summary) + "\n")
    save_modes(out.modes, result.solution)
    log.info("%s after %d modes", result.status, result.n_modes)
    return EXIT_CODES[result.status]


def export_matrices(config: RunConfig, out_dir) -> int:
    from .assembly import write_matrix_market

    problem = build_problem(config.problem)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for ops in (problem.ops_x, problem.ops_y):
        label = ops.interval.label
        note = f"alpha = {ops.interval.alpha!r}, structure = {ops.structure_tag}"
        write_matrix_market(out / f"A_{label}.mtx", ops.A, note)
        write_matrix_market(out / f"M_{label}.mtx", ops.M, note)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="confpgd", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="run greedy PGD on a configured problem")
    p.add_argument("--config", type=Path)
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")

    p = sub.add_parser("verify", help="run the built-in invariant suites")
    p.add_argument("--level", choices=("fast", "full"), default="fast")
    p.add_argument("--inject-fault", choices=("symmetry",), help=argparse.SUPPRESS)

    p = sub.add_parser("export-matrices", help="write MatrixMarket dumps of the 1-D operators")
    p.add_argument("--config", type=Path)
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--out", type=Path, required=True)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with _thread_limit():
            if args.command == "verify":
                from .verify import verify
                return verify(args.level, inject_fault=args.inject_fault)
            config = load_config(args.config, args.overrides)
            if args.command == "solve":
                return run(config)
            return export_matrices(config, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
