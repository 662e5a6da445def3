"""Multi-run comparison harness: cells, oracle, summary tables, report files.

A benchmark is a grid of cells (problem x algorithm), each run ``runs_per_cell``
times with schedule seed = seed_base*10^6 + cell_index*10^3 + run_index, so any
cell can be reproduced in isolation. Every run is persisted as one JSON record
as soon as it finishes; re-running skips records that already exist, which
makes the harness crash-safe and resumable.

Wall-clock fields are only written when the budget includes a time limit (or
when explicitly requested): eval-budget records and every report derived from
them are byte-reproducible across machines.
"""

from __future__ import annotations

import csv
import json
import os
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, GridPlanError
from .evaluation import EvaluationResult, Evaluator, compare_lex
from .heuristics import Budget, Problem, RunRecord, resolve_params, run_heuristic
from .measures import CatalogConfig, build_catalog, candidate_from_int
from .model import LoadCase
from .powerflow import PfOptions

RECORD_FORMAT = "gridplan-record"
BEST_TIE_REL = 1e-9  # relative investment tolerance for shared-best counting
CLIP_FACTOR = 5.0


@dataclass
class ProblemSpec:
    """One benchmark problem: a grid file plus its evaluation configuration."""

    name: str
    grid_file: str
    load_cases: list[LoadCase] = field(default_factory=list)
    catalog: CatalogConfig = field(default_factory=CatalogConfig)
    pf_opts: PfOptions = field(default_factory=PfOptions)
    cost_scale_eur: float = 1e6
    limits: dict | None = None  # global limit overrides applied after load


@dataclass
class AlgorithmSpec:
    algo: str
    params: dict = field(default_factory=dict)
    label: str = ""

    def __post_init__(self):
        if not self.label:
            self.label = self.algo


@dataclass
class BenchmarkConfig:
    problems: list[ProblemSpec]
    algorithms: list[AlgorithmSpec]
    runs_per_cell: int
    budget: Budget
    seed_base: int = 1
    out_dir: str = "benchmark_out"
    workers: int = 1
    include_timing: bool | None = None  # None: timing iff a time limit is set

    def validate(self) -> None:
        if self.runs_per_cell < 1:
            raise ConfigError(f"runs_per_cell must be >= 1, got {self.runs_per_cell}")
        if not self.problems or not self.algorithms:
            raise ConfigError("benchmark needs at least one problem and one algorithm")
        self.budget.validate()
        labels = [a.label for a in self.algorithms]
        if len(set(labels)) != len(labels):
            raise ConfigError(f"algorithm labels must be unique, got {labels}")
        names = [p.name for p in self.problems]
        if len(set(names)) != len(names):
            raise ConfigError(f"problem names must be unique, got {names}")

    def timing_enabled(self) -> bool:
        if self.include_timing is not None:
            return self.include_timing
        return self.budget.time_limit_s is not None


def schedule_seed(seed_base: int, cell_index: int, run_index: int) -> int:
    return seed_base * 10**6 + cell_index * 10**3 + run_index


def build_problem(spec: ProblemSpec) -> Problem:
    from .gridfile import apply_limit_overrides, load_grid

    grid = load_grid(spec.grid_file)
    if spec.limits:
        grid = apply_limit_overrides(grid, spec.limits)
    catalog = build_catalog(grid, spec.catalog)
    load_cases = spec.load_cases or [LoadCase(name="base")]
    return Problem(
        grid=grid,
        load_cases=load_cases,
        catalog=catalog,
        pf_opts=spec.pf_opts,
        cost_scale_eur=spec.cost_scale_eur,
    )


def brute_force_oracle(
    problem: Problem, max_bits: int = 20
) -> tuple[EvaluationResult, np.ndarray]:
    """Exhaustive enumeration of all 2^M candidates; ground truth for small M.

    Ties are broken by the lowest candidate integer value (bit i weights 2^i).
    """
    m = problem.catalog.size
    if m > max_bits:
        raise ConfigError(
            f"catalog has {m} measures; refusing brute force above the cap of {max_bits} bits"
        )
    evaluator = Evaluator(
        problem.grid, problem.load_cases, problem.catalog, problem.pf_opts,
        problem.cost_scale_eur,
    )
    best = None
    best_bits = None
    for value in range(2**m):
        bits = candidate_from_int(value, m)
        result = evaluator.evaluate(bits)
        if best is None or compare_lex(result, best) < 0:
            best, best_bits = result, bits
    return best, best_bits


# --- record (de)serialization -------------------------------------------------


def record_to_dict(
    record: RunRecord, problem: str, label: str, run: int, include_timing: bool
) -> dict:
    best = None
    if record.best_result is not None:
        br = record.best_result
        best = {
            "level": br.level,
            "raw_cost": br.raw_cost,
            "normalized": br.normalized,
            "invest_eur": br.invest_eur,
            "candidate": [int(b) for b in record.best_candidate],
            "hash": _traj_hash(record),
        }
    d = {
        "format": RECORD_FORMAT,
        "version": 1,
        "problem": problem,
        "algorithm": label,
        "run": run,
        "seed": record.seed,
        "algo_id": record.algorithm,
        "catalog_size": record.catalog_size,
        "cost_scale_eur": record.cost_scale_eur,
        "budget": {
            "time_limit_s": record.budget.time_limit_s,
            "eval_limit": record.budget.eval_limit,
            "pf_limit": record.budget.pf_limit,
        },
        "params": record.params,
        "status": "ok",
        "flags": list(record.flags),
        "best": best,
        "evals": {
            "total": record.total_evals,
            "counts": dict(record.eval_counts),
            "evals_to_best": record.evals_to_best,
        },
        "trajectory": [
            {
                "eval": p.eval_count,
                "level": p.level,
                "raw_cost": p.raw_cost,
                "normalized": p.normalized,
                "hash": p.candidate_hash,
            }
            for p in record.trajectory
        ],
    }
    if include_timing:
        d["timing"] = {
            "total_s": record.total_time_s,
            "init_s": record.init_time_s,
            "time_to_best_s": record.time_to_best_s,
            "class_time_s": dict(record.eval_times),
            "trajectory_elapsed_s": [p.elapsed_s for p in record.trajectory],
        }
    return d


def _traj_hash(record: RunRecord) -> str:
    return record.trajectory[-1].candidate_hash if record.trajectory else ""


def failed_record_dict(
    problem: str, label: str, run: int, seed: int, algo: str, error: str
) -> dict:
    return {
        "format": RECORD_FORMAT,
        "version": 1,
        "problem": problem,
        "algorithm": label,
        "run": run,
        "seed": seed,
        "algo_id": algo,
        "status": "failed",
        "error": error,
        "flags": [],
        "best": None,
        "evals": {"total": 0, "counts": {"topology": 0, "powerflow": 0, "cost": 0}, "evals_to_best": 0},
        "trajectory": [],
    }


def write_record(path: Path, record_dict: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(record_dict, fh, indent=2)
        fh.write("\n")
    os.replace(tmp, path)


def _safe(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "-", name)


def record_path(out_dir: str | Path, problem: str, label: str, run: int) -> Path:
    return Path(out_dir) / "records" / f"{_safe(problem)}__{_safe(label)}__r{run:03d}.json"


def _execute_run(pspec: ProblemSpec, aspec: AlgorithmSpec, budget: Budget,
                 seed: int, run: int, include_timing: bool) -> dict:
    try:
        problem = build_problem(pspec)
        record = run_heuristic(aspec.algo, problem, budget, seed, aspec.params)
        return record_to_dict(record, pspec.name, aspec.label, run, include_timing)
    except GridPlanError as exc:
        return failed_record_dict(pspec.name, aspec.label, run, seed, aspec.algo, str(exc))


def run_benchmark(cfg: BenchmarkConfig, progress=None) -> list[dict]:
    """Run (or resume) every cell; returns all record dicts, persisted ones included."""
    cfg.validate()
    for aspec in cfg.algorithms:
        resolve_params(aspec.algo, aspec.params)  # fail fast on bad parameters
    # fail fast on unloadable grids before any run
    for pspec in cfg.problems:
        build_problem(pspec)

    include_timing = cfg.timing_enabled()
    cells = [(p, a) for p in cfg.problems for a in cfg.algorithms]
    pending = []
    records: list[tuple[tuple, dict]] = []
    for cell_index, (pspec, aspec) in enumerate(cells):
        for run in range(cfg.runs_per_cell):
            key = (cell_index, run)
            path = record_path(cfg.out_dir, pspec.name, aspec.label, run)
            if path.exists():
                with open(path, encoding="utf-8") as fh:
                    records.append((key, json.load(fh)))
            else:
                seed = schedule_seed(cfg.seed_base, cell_index, run)
                pending.append((key, pspec, aspec, seed, run, path))

    def finish(key, path, rec_dict):
        write_record(path, rec_dict)
        records.append((key, rec_dict))
        if progress is not None:
            progress(rec_dict)

    if cfg.workers > 1 and pending:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            futures = [
                (key, path, pool.submit(_execute_run, pspec, aspec, cfg.budget, seed, run, include_timing))
                for key, pspec, aspec, seed, run, path in pending
            ]
            for key, path, fut in futures:
                finish(key, path, fut.result())
    else:
        for key, pspec, aspec, seed, run, path in pending:
            finish(key, path, _execute_run(pspec, aspec, cfg.budget, seed, run, include_timing))

    records.sort(key=lambda kr: kr[0])
    return [rec for _, rec in records]


# --- summaries ----------------------------------------------------------------


@dataclass
class SummaryTables:
    global_best: dict[str, float | None]  # per problem; None = no feasible run
    normalized_rows: list[dict]
    checkpoint_rows: list[dict]
    share_rows: list[dict]


def _best_at_checkpoint(record: dict, checkpoint: float, axis: str):
    """Last trajectory improvement at or before the checkpoint, or None."""
    timing = record.get("timing", {})
    elapsed = timing.get("trajectory_elapsed_s", [])
    best = None
    for i, point in enumerate(record.get("trajectory", [])):
        position = point["eval"] if axis == "evals" else (elapsed[i] if i < len(elapsed) else None)
        if position is None or position > checkpoint:
            break
        best = point
    return best


def summarize(records: list[dict], checkpoints: list[float], axis: str = "evals") -> SummaryTables:
    """Aggregate record dicts into the comparison tables.

    axis selects the checkpoint coordinate: "evals" (always available) or
    "time" (requires records with timing data).
    """
    if not records:
        raise ConfigError("summarize needs at least one record")
    if axis not in ("evals", "time"):
        raise ConfigError(f"checkpoint axis must be 'evals' or 'time', got {axis!r}")

    problems = sorted({r["problem"] for r in records})
    global_best: dict[str, float | None] = {}
    for prob in problems:
        invests = [
            r["best"]["invest_eur"]
            for r in records
            if r["problem"] == prob
            and r.get("best") is not None
            and r["best"]["level"] == 0
        ]
        global_best[prob] = min(invests) if invests else None

    def sort_key(r):
        return (r["problem"], r["algorithm"], r["run"])

    normalized_rows = []
    for r in sorted(records, key=sort_key):
        best = r.get("best")
        feasible = best is not None and best["level"] == 0
        gbest = global_best[r["problem"]]
        norm = None
        clipped = False
        if feasible and gbest is not None:
            if gbest > 0:
                norm = best["invest_eur"] / gbest
            else:
                norm = 1.0 if best["invest_eur"] <= 0 else float("inf")
            clipped = norm > CLIP_FACTOR
        timing = r.get("timing", {})
        normalized_rows.append(
            {
                "problem": r["problem"],
                "algorithm": r["algorithm"],
                "run": r["run"],
                "seed": r["seed"],
                "status": r["status"],
                "level": best["level"] if best else None,
                "invest_eur": best["invest_eur"] if feasible else None,
                "normalized_cost": norm,
                "clipped": clipped,
                "evals_to_best": r.get("evals", {}).get("evals_to_best"),
                "time_to_best_s": timing.get("time_to_best_s"),
            }
        )

    checkpoint_rows = []
    algorithms = sorted({r["algorithm"] for r in records})
    for prob in problems:
        gbest = global_best[prob]
        for algo in algorithms:
            cell = [r for r in records if r["problem"] == prob and r["algorithm"] == algo]
            for cp in checkpoints:
                count = 0
                for r in cell:
                    if gbest is None:
                        continue
                    point = _best_at_checkpoint(r, cp, axis)
                    if point is None or point["level"] != 0:
                        continue
                    invest = point["raw_cost"] * _cost_scale_of(r)
                    if invest <= gbest * (1 + BEST_TIE_REL):
                        count += 1
                checkpoint_rows.append(
                    {
                        "problem": prob,
                        "algorithm": algo,
                        "checkpoint": cp,
                        "axis": axis,
                        "best_count": count,
                        "runs": len(cell),
                    }
                )
    # cross-grid aggregation (per-run winners summed over all problems)
    for algo in algorithms:
        for cp in checkpoints:
            rows = [
                row
                for row in checkpoint_rows
                if row["algorithm"] == algo and row["checkpoint"] == cp and row["problem"] != "(all)"
            ]
            checkpoint_rows.append(
                {
                    "problem": "(all)",
                    "algorithm": algo,
                    "checkpoint": cp,
                    "axis": axis,
                    "best_count": sum(r["best_count"] for r in rows),
                    "runs": sum(r["runs"] for r in rows),
                }
            )

    share_rows = []
    for r in sorted(records, key=sort_key):
        counts = r["evals"]["counts"]
        total = r["evals"]["total"]
        timing = r.get("timing", {})
        class_time = timing.get("class_time_s")
        row = {
            "problem": r["problem"],
            "algorithm": r["algorithm"],
            "run": r["run"],
            "basis": "count",
            "total_evals": total,
        }
        for cls in ("topology", "powerflow", "cost"):
            row[f"{cls}_share"] = counts[cls] / total if total else 0.0
        share_rows.append(row)
        if class_time:
            time_total = sum(class_time.values())
            trow = dict(row)
            trow["basis"] = "time"
            for cls in ("topology", "powerflow", "cost"):
                trow[f"{cls}_share"] = class_time[cls] / time_total if time_total else 0.0
            share_rows.append(trow)

    return SummaryTables(
        global_best=global_best,
        normalized_rows=normalized_rows,
        checkpoint_rows=checkpoint_rows,
        share_rows=share_rows,
    )


def _cost_scale_of(record: dict) -> float:
    return float(record.get("cost_scale_eur", 1e6))


# --- report emission ------------------------------------------------------------


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def emit_reports(tables: SummaryTables, records: list[dict], out_dir: str | Path) -> list[Path]:
    """Write the delimited report files; byte-stable for identical inputs."""
    out = Path(out_dir)
    written = []

    cells = sorted({(r["problem"], r["algorithm"]) for r in records})
    for prob, algo in cells:
        rows = []
        cell_records = sorted(
            (r for r in records if r["problem"] == prob and r["algorithm"] == algo),
            key=lambda r: r["run"],
        )
        for r in cell_records:
            elapsed = r.get("timing", {}).get("trajectory_elapsed_s", [])
            for i, p in enumerate(r["trajectory"]):
                rows.append(
                    [
                        r["run"],
                        r["seed"],
                        p["eval"],
                        _fmt(elapsed[i]) if i < len(elapsed) else "",
                        p["level"],
                        _fmt(p["raw_cost"]),
                        _fmt(p["normalized"]),
                        p["hash"],
                    ]
                )
        path = out / "trajectories" / f"{_safe(prob)}__{_safe(algo)}.csv"
        _write_csv(
            path,
            ["run", "seed", "eval_count", "elapsed_s", "level", "raw_cost", "normalized", "candidate_hash"],
            rows,
        )
        written.append(path)

    path = out / "normalized_costs.csv"
    _write_csv(
        path,
        [
            "problem", "algorithm", "run", "seed", "status", "level", "invest_eur",
            "normalized_cost", "clipped", "evals_to_best", "time_to_best_s",
        ],
        [
            [
                row["problem"], row["algorithm"], row["run"], row["seed"], row["status"],
                _fmt(row["level"]), _fmt(row["invest_eur"]), _fmt(row["normalized_cost"]),
                _fmt(row["clipped"]), _fmt(row["evals_to_best"]), _fmt(row["time_to_best_s"]),
            ]
            for row in tables.normalized_rows
        ],
    )
    written.append(path)

    path = out / "checkpoint_best_counts.csv"
    _write_csv(
        path,
        ["problem", "algorithm", "checkpoint", "axis", "best_count", "runs"],
        [
            [row["problem"], row["algorithm"], _fmt(row["checkpoint"]), row["axis"], row["best_count"], row["runs"]]
            for row in sorted(
                tables.checkpoint_rows,
                key=lambda r: (r["problem"], r["algorithm"], r["checkpoint"]),
            )
        ],
    )
    written.append(path)

    path = out / "eval_class_shares.csv"
    _write_csv(
        path,
        ["problem", "algorithm", "run", "basis", "total_evals", "topology_share", "powerflow_share", "cost_share"],
        [
            [
                row["problem"], row["algorithm"], row["run"], row["basis"], row["total_evals"],
                _fmt(row["topology_share"]), _fmt(row["powerflow_share"]), _fmt(row["cost_share"]),
            ]
            for row in tables.share_rows
        ],
    )
    written.append(path)
    return written
