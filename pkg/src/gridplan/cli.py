"""Command-line interface.

Subcommands: validate (grid lint), catalog (measure counts), oracle (brute
force), plan (one run), benchmark (full comparison). Exit codes: 0 success,
1 usage error, 2 data/configuration error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import __version__
from .errors import GridPlanError
from .gridfile import (
    default_config_document,
    load_grid,
    load_run_config,
    parse_grid_file,
)
from .harness import (
    BenchmarkConfig,
    brute_force_oracle,
    build_problem,
    record_path,
    record_to_dict,
    run_benchmark,
    summarize,
    emit_reports,
    write_record,
)
from .heuristics import ALGORITHMS, Budget, run_heuristic
from .measures import build_catalog

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        sys.exit(EXIT_USAGE)


def _build_parser() -> _Parser:
    parser = _Parser(prog="gridplan", description=__doc__)
    parser.add_argument("--version", action="version", version=f"gridplan {__version__}")
    parser.add_argument(
        "--print-config",
        action="store_true",
        help="print every configuration default as JSON and exit",
    )
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("validate", parents=[], help="lint a grid file")
    p.add_argument("--grid", required=True, help="grid file to check")

    p = sub.add_parser("catalog", help="print the measure catalog of a grid")
    p.add_argument("--grid", required=True)
    p.add_argument("--config", help="run config supplying the catalog settings")
    p.add_argument("--list", action="store_true", help="also list every measure")

    p = sub.add_parser("oracle", help="brute-force optimum over all candidates")
    p.add_argument("--grid", help="grid file (overrides the config's problem grid)")
    p.add_argument("--config", required=True, help="run config with the problem definition")
    p.add_argument("--max-bits", type=int, default=20)

    p = sub.add_parser("plan", help="run one heuristic on one problem")
    p.add_argument("--config", required=True)
    p.add_argument("--grid", help="grid file (overrides the config's problem grid)")
    p.add_argument("--algo", choices=ALGORITHMS, help="overrides the config's first algorithm")
    p.add_argument("--seed", type=int, help="overrides the config seed")
    p.add_argument("--eval-limit", type=int, help="overrides the budget")
    p.add_argument("--time-limit", type=float, help="wall-clock budget in seconds")
    p.add_argument("--pf-limit", type=int, help="budget in power-flow-stage evaluations")
    p.add_argument("--out", default="record.json", help="record file to write")
    p.add_argument(
        "--timing",
        choices=("auto", "on", "off"),
        default="auto",
        help="wall-clock fields in the record (auto: only with a time limit)",
    )

    p = sub.add_parser("benchmark", help="run a problems x algorithms comparison")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="output directory (overrides the config)")
    p.add_argument("--workers", type=int, help="worker processes (or env GRIDPLAN_WORKERS)")

    return parser


def _cmd_validate(args) -> int:
    grid, violations = parse_grid_file(args.grid)
    if violations:
        for v in violations:
            print(v)
        print(f"{len(violations)} violation(s) found")
        return EXIT_DATA
    print(
        f"ok: {len(grid.buses)} buses, {len(grid.branches)} branches, "
        f"{len(grid.switches)} switches, {len(grid.injections)} injections"
    )
    return EXIT_OK


def _problem_from_args(args):
    cfg = load_run_config(args.config)
    spec = cfg.problems[0]
    if getattr(args, "grid", None):
        spec.grid_file = args.grid
    return cfg, spec


def _cmd_catalog(args) -> int:
    if args.config:
        _, spec = _problem_from_args(args)
        grid = load_grid(spec.grid_file)
        catalog = build_catalog(grid, spec.catalog)
    else:
        grid = load_grid(args.grid)
        catalog = build_catalog(grid)
    counts = catalog.counts()
    print(f"REPL: {counts['REPL']}")
    print(f"SWITCH: {counts['SWITCH']}")
    print(f"AL: {counts['AL']}")
    print(f"total: {catalog.size}")
    if args.list:
        for m in catalog.measures:
            print(f"  [{m.index}] {m.describe()}  cost={m.invest_cost:.0f}")
    return EXIT_OK


def _cmd_oracle(args) -> int:
    cfg, spec = _problem_from_args(args)
    problem = build_problem(spec)
    result, bits = brute_force_oracle(problem, max_bits=args.max_bits)
    applied = [problem.catalog.measures[i].describe() for i in range(len(bits)) if bits[i]]
    print(f"optimum level: {result.level}")
    print(f"optimum raw cost: {result.raw_cost!r}")
    print(f"optimum normalized: {result.normalized!r}")
    if result.invest_eur is not None:
        print(f"optimum investment: {result.invest_eur!r} EUR")
    print(f"candidate bits: {''.join(str(int(b)) for b in bits)}")
    print(f"applied measures: {applied if applied else '(none)'}")
    return EXIT_OK


def _cmd_plan(args) -> int:
    cfg, spec = _problem_from_args(args)
    problem = build_problem(spec)

    algo = args.algo or (cfg.algorithms[0].algo if cfg.algorithms else "ils")
    params = next((a.params for a in cfg.algorithms if a.algo == algo), {})
    seed = cfg.seed if args.seed is None else args.seed

    budget = cfg.budget
    if args.eval_limit is not None or args.time_limit is not None or args.pf_limit is not None:
        budget = Budget(
            time_limit_s=args.time_limit, eval_limit=args.eval_limit, pf_limit=args.pf_limit
        )
    budget.validate()

    record = run_heuristic(algo, problem, budget, seed, params)
    include_timing = (
        budget.time_limit_s is not None if args.timing == "auto" else args.timing == "on"
    )
    rec_dict = record_to_dict(record, spec.name, algo, 0, include_timing)
    write_record(Path(args.out), rec_dict)

    best = record.best_result
    if best is None:
        print("no evaluation performed")
    else:
        line = f"best: level {best.level}, raw cost {best.raw_cost!r}"
        if best.invest_eur is not None:
            line += f", investment {best.invest_eur!r} EUR"
        print(line)
        print(f"evaluations: {record.total_evals} (to best: {record.evals_to_best})")
    print(f"record written to {args.out}")
    return EXIT_OK


def _cmd_benchmark(args) -> int:
    cfg = load_run_config(args.config)
    workers = args.workers
    if workers is None:
        workers = int(os.environ.get("GRIDPLAN_WORKERS", cfg.workers))
    bench = BenchmarkConfig(
        problems=cfg.problems,
        algorithms=cfg.algorithms,
        runs_per_cell=cfg.runs_per_cell,
        budget=cfg.budget,
        seed_base=cfg.seed_base,
        out_dir=args.out or cfg.out_dir,
        workers=workers,
    )
    done = {"n": 0}

    def progress(rec):
        done["n"] += 1
        print(f"[{done['n']}] {rec['problem']} / {rec['algorithm']} run {rec['run']}: {rec['status']}")

    records = run_benchmark(bench, progress=progress)
    checkpoints = cfg.checkpoints or _default_checkpoints(cfg.budget)
    tables = summarize(records, checkpoints, axis=cfg.checkpoint_axis)
    paths = emit_reports(tables, records, bench.out_dir)
    print(f"{len(records)} records, reports:")
    for p in paths:
        print(f"  {p}")
    return EXIT_OK


def _default_checkpoints(budget: Budget) -> list[float]:
    if budget.eval_limit:
        n = budget.eval_limit
    elif budget.pf_limit:
        n = budget.pf_limit
    else:
        return [budget.time_limit_s / 12, budget.time_limit_s / 2, budget.time_limit_s]
    return [n / 12, n / 2, n]


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)

    if args.print_config:
        json.dump(default_config_document(), sys.stdout, indent=2)
        print()
        return EXIT_OK
    if args.command is None:
        parser.print_help()
        return EXIT_USAGE

    handlers = {
        "validate": _cmd_validate,
        "catalog": _cmd_catalog,
        "oracle": _cmd_oracle,
        "plan": _cmd_plan,
        "benchmark": _cmd_benchmark,
    }
    try:
        return handlers[args.command](args)
    except GridPlanError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
