"""Command line: ``evolproc [flags] <command> <config>``.

Exit codes: 0 success, 1 a run finished but a check or stage failed (the
report is still written), 2 usage error or missing file, 3 invalid config,
4 numerical failure before any report could be written.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from ._io import atomic_write_json
from .config import EXAMPLES, example_config, load_config
from .errors import ConfigError, EvolProcError
from .harness import (
    check_hypotheses,
    run_absorbing_experiment,
    run_propagate,
    run_rate_experiment,
    run_solve,
    write_rate_outputs,
)
from .process import save_process

log = logging.getLogger("evolproc")

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3, 4


def _flags(p: argparse.ArgumentParser, default) -> None:
    p.add_argument("--out", type=Path, default=default, help="output directory (default: current directory)")
    p.add_argument("--threads", type=int, default=default, help="work-pool size")
    p.add_argument("--seed", type=int, default=default, help="seed for sampled initial states")
    p.add_argument("--verbose", "-v", action="count", default=default)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="evolproc", description=__doc__.splitlines()[0])
    _flags(parser, None)
    common = argparse.ArgumentParser(add_help=False)
    # subcommand copies of the flags must not clobber values given before the command
    _flags(common, argparse.SUPPRESS)
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    for name, text in (("check-hypotheses", "measure sector, Hölder and distance constants"),
                       ("propagate", "build the limit process and report the axiom checks"),
                       ("solve", "semilinear trajectories as CSV"),
                       ("rates", "full convergence-rate experiment")):
        sp = sub.add_parser(name, parents=[common], help=text)
        sp.add_argument("config", type=Path)
        if name == "propagate":
            sp.add_argument("--eps", type=float, default=0.0, help="parameter value of the family (default 0)")
            sp.add_argument("--dump", action="store_true", help="also write process.npz")
    ex = sub.add_parser("example", parents=[common], help="write a ready-made config")
    ex.add_argument("name", choices=sorted(EXAMPLES))
    return parser


def _load(path: Path):
    if not path.is_file():
        raise FileNotFoundError(path)
    return load_config(path)


def _cmd_example(args) -> int:
    path = args.out / f"{args.name}.json"
    atomic_write_json(path, example_config(args.name))
    print(path)
    return EXIT_OK


def _cmd_check(args) -> int:
    rep = check_hypotheses(_load(args.config), args.threads)
    print(atomic_write_json(args.out / "hypotheses.json", rep))
    return EXIT_OK


def _cmd_propagate(args) -> int:
    proc, rep = run_propagate(_load(args.config), args.eps, args.threads)
    print(atomic_write_json(args.out / "process_axioms.json", rep))
    if args.dump:
        print(save_process(proc, args.out / "process.npz"))
    ok = rep["axioms"].get("cocycle_ok")
    return EXIT_OK if ok in (True, None) else EXIT_CHECK


def _cmd_solve(args) -> int:
    cfg = _load(args.config)
    summary, trajectories = run_solve(cfg, args.threads, args.seed)
    for eps, tr in sorted(trajectories.items()):
        tag = f"{eps:g}"
        tr.to_csv(args.out / f"trajectory_eps_{tag}.csv", args.out / f"trajectory_eps_{tag}_states.csv")
    code = EXIT_OK if summary["failure"] is None else EXIT_CHECK
    if cfg["absorbing"] is not None:
        rep, ab = run_absorbing_experiment(cfg, args.threads)
        summary["absorbing"] = ab
    print(atomic_write_json(args.out / "solution.json", summary))
    return code


def _cmd_rates(args) -> int:
    rep, trajectories = run_rate_experiment(_load(args.config), args.threads, args.seed)
    for p in write_rate_outputs(rep, trajectories, args.out):
        log.info("wrote %s", p)
    axioms = rep.extra.get("limit_axioms")
    if axioms is not None:
        atomic_write_json(args.out / "process_axioms.json",
                          {"schema": "evolproc.report/1", "kind": "process_axioms", "epsilon": 0.0,
                           "axioms": axioms, "provenance": rep.provenance})
    print(args.out / "report.json")
    for name, chk in sorted(rep.checks.items()):
        print(f"{name}: {'pass' if chk.get('passed') else 'FAIL'}")
    if rep.failure is not None:
        print(f"stage {rep.failure['stage']} failed at eps={rep.failure['eps']:g}: {rep.failure['message']}",
              file=sys.stderr)
    return EXIT_OK if rep.ok else EXIT_CHECK


COMMANDS = {"example": _cmd_example, "check-hypotheses": _cmd_check, "propagate": _cmd_propagate,
            "solve": _cmd_solve, "rates": _cmd_rates}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    args.out = args.out or Path(".")
    args.threads = max(1, args.threads or 1)
    verbose = args.verbose or 0
    logging.basicConfig(level=logging.WARNING - 10 * min(verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except FileNotFoundError as exc:
        print(f"evolproc: no such file: {exc.filename or exc.args[0]}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"evolproc: invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except EvolProcError as exc:
        print(f"evolproc: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
