"""Grid and run-configuration file formats (versioned JSON documents).

The grid schema mirrors the data model field-for-field, with units embedded in
the names (r_ohm, p_mw, vn_kv, ...). Unknown fields are rejected with their
location; a loaded grid must pass validation. Run configuration files bundle
problem, algorithm, budget and output settings for the CLI.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields as dc_fields, replace
from pathlib import Path

from .errors import ConfigError, DataError
from .heuristics import ALGORITHMS, DEFAULT_PARAMS, Budget
from .measures import CatalogConfig, LineTemplate
from .model import (
    Branch,
    Bus,
    Grid,
    Injection,
    InjectionOverride,
    LoadCase,
    Switch,
    Violation,
    validate_grid,
)
from .powerflow import PfOptions

GRID_FORMAT = "gridplan-grid"
RUN_FORMAT = "gridplan-run"


def _require(obj: dict, key: str, where: str):
    if key not in obj:
        raise DataError(f"{where}: missing required field {key!r}")
    return obj[key]


def _known_fields(cls) -> set[str]:
    return {f.name for f in dc_fields(cls)}


def _build_element(cls, raw: dict, where: str, converters: dict | None = None):
    known = _known_fields(cls)
    for key in raw:
        if key not in known:
            raise DataError(f"{where}: unknown field {key!r}")
    data = dict(raw)
    for key, conv in (converters or {}).items():
        if key in data and data[key] is not None:
            data[key] = conv(data[key])
    try:
        return cls(**data)
    except TypeError as exc:
        raise DataError(f"{where}: {exc}") from exc


def parse_grid_document(doc: dict, source: str = "<grid>") -> tuple[Grid, list[Violation]]:
    if not isinstance(doc, dict):
        raise DataError(f"{source}: grid document must be a JSON object")
    fmt = doc.get("format")
    if fmt != GRID_FORMAT:
        raise DataError(f"{source}: format must be {GRID_FORMAT!r}, got {fmt!r}")
    version = doc.get("version")
    if version != 1:
        raise DataError(f"{source}: unsupported version {version!r}")
    allowed = {"format", "version", "base_mva", "buses", "branches", "switches", "injections"}
    for key in doc:
        if key not in allowed:
            raise DataError(f"{source}: unknown section {key!r}")

    def collect(section: str, cls, converters=None) -> dict:
        out = {}
        for i, raw in enumerate(doc.get(section, [])):
            where = f"{source}: {section}[{i}]"
            if not isinstance(raw, dict):
                raise DataError(f"{where}: expected an object")
            element = _build_element(cls, raw, where, converters)
            if element.id in out:
                raise DataError(f"{where}: duplicate id {element.id}")
            out[element.id] = element
        return out

    grid = Grid(
        buses=collect("buses", Bus, {"geo": lambda g: tuple(float(x) for x in g)}),
        branches=collect("branches", Branch),
        switches=collect("switches", Switch),
        injections=collect("injections", Injection),
        base_mva=float(doc.get("base_mva", 100.0)),
    )
    return grid, validate_grid(grid)


def parse_grid_file(path: str | Path) -> tuple[Grid, list[Violation]]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"grid file not found: {path}")
    text = path.read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: parse error at byte offset {exc.pos}: {exc.msg}") from exc
    return parse_grid_document(doc, str(path))


def load_grid(path: str | Path) -> Grid:
    """Parse and validate a grid file; raises DataError on any defect."""
    grid, violations = parse_grid_file(path)
    if violations:
        listing = "; ".join(str(v) for v in violations)
        raise DataError(f"{path}: grid validation failed: {listing}")
    return grid


def grid_to_document(grid: Grid) -> dict:
    def dump(elements: dict, element_fields) -> list[dict]:
        rows = []
        for key in sorted(elements):
            e = elements[key]
            row = {}
            for f in element_fields:
                value = getattr(e, f)
                if isinstance(value, tuple):
                    value = list(value)
                row[f] = value
            rows.append(row)
        return rows

    return {
        "format": GRID_FORMAT,
        "version": 1,
        "base_mva": grid.base_mva,
        "buses": dump(grid.buses, [f.name for f in dc_fields(Bus)]),
        "branches": dump(grid.branches, [f.name for f in dc_fields(Branch)]),
        "switches": dump(grid.switches, [f.name for f in dc_fields(Switch)]),
        "injections": dump(grid.injections, [f.name for f in dc_fields(Injection)]),
    }


def save_grid(grid: Grid, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(grid_to_document(grid), fh, indent=2)
        fh.write("\n")


def apply_limit_overrides(grid: Grid, overrides: dict) -> Grid:
    """New grid with global voltage/loading limits replaced.

    Supported keys: min_vm_pu, max_vm_pu (all buses), max_loading_percent
    (all branches).
    """
    allowed = {"min_vm_pu", "max_vm_pu", "max_loading_percent"}
    unknown = set(overrides) - allowed
    if unknown:
        raise ConfigError(f"unknown limit overrides: {sorted(unknown)}")
    buses = grid.buses
    branches = grid.branches
    bus_kwargs = {k: overrides[k] for k in ("min_vm_pu", "max_vm_pu") if k in overrides}
    if bus_kwargs:
        buses = {k: replace(b, **bus_kwargs) for k, b in grid.buses.items()}
    if "max_loading_percent" in overrides:
        branches = {
            k: replace(b, max_loading_percent=overrides["max_loading_percent"])
            for k, b in grid.branches.items()
        }
    return Grid(
        buses=buses,
        branches=branches,
        switches=grid.switches,
        injections=grid.injections,
        base_mva=grid.base_mva,
    )


# --- run configuration ----------------------------------------------------------


@dataclass
class RunConfig:
    problems: list  # list[harness.ProblemSpec]
    algorithms: list  # list[harness.AlgorithmSpec]
    budget: Budget
    seed: int = 0
    runs_per_cell: int = 1
    seed_base: int = 1
    out_dir: str = "benchmark_out"
    checkpoints: list[float] = field(default_factory=list)
    checkpoint_axis: str = "evals"
    workers: int = 1


def _parse_load_case(raw: dict, where: str) -> LoadCase:
    allowed = {"name", "switch_states", "outages", "injection_overrides"}
    for key in raw:
        if key not in allowed:
            raise DataError(f"{where}: unknown field {key!r}")
    overrides = {}
    for k, ov in (raw.get("injection_overrides") or {}).items():
        overrides[int(k)] = _build_element(
            InjectionOverride, ov, f"{where}: injection_overrides[{k}]"
        )
    return LoadCase(
        name=_require(raw, "name", where),
        switch_states={int(k): bool(v) for k, v in (raw.get("switch_states") or {}).items()},
        outages=frozenset(int(x) for x in (raw.get("outages") or [])),
        injection_overrides=overrides,
    )


def _parse_catalog_config(raw: dict, where: str) -> CatalogConfig:
    raw = dict(raw)
    template_raw = raw.pop("al_template", None)
    known = _known_fields(CatalogConfig)
    for key in raw:
        if key not in known:
            raise DataError(f"{where}: unknown field {key!r}")
    template = (
        _build_element(LineTemplate, template_raw, f"{where}: al_template")
        if template_raw is not None
        else LineTemplate()
    )
    return CatalogConfig(al_template=template, **raw)


def _parse_problem(raw: dict, where: str, base_dir: Path):
    from .harness import ProblemSpec

    allowed = {"name", "grid", "load_cases", "catalog", "pf_options", "cost_scale_eur", "limits"}
    for key in raw:
        if key not in allowed:
            raise DataError(f"{where}: unknown field {key!r}")
    grid_path = Path(_require(raw, "grid", where))
    if not grid_path.is_absolute():
        grid_path = base_dir / grid_path
    return ProblemSpec(
        name=raw.get("name", grid_path.stem.replace(".grid", "")),
        grid_file=str(grid_path),
        load_cases=[
            _parse_load_case(lc, f"{where}: load_cases[{i}]")
            for i, lc in enumerate(raw.get("load_cases", []))
        ],
        catalog=_parse_catalog_config(raw.get("catalog", {}), f"{where}: catalog"),
        pf_opts=_build_element(PfOptions, raw.get("pf_options", {}), f"{where}: pf_options"),
        cost_scale_eur=float(raw.get("cost_scale_eur", 1e6)),
        limits=raw.get("limits"),
    )


def load_run_config(path: str | Path) -> RunConfig:
    from .harness import AlgorithmSpec

    path = Path(path)
    if not path.exists():
        raise DataError(f"run config not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: parse error at byte offset {exc.pos}: {exc.msg}") from exc
    source = str(path)
    if doc.get("format") != RUN_FORMAT:
        raise DataError(f"{source}: format must be {RUN_FORMAT!r}, got {doc.get('format')!r}")
    if doc.get("version") != 1:
        raise DataError(f"{source}: unsupported version {doc.get('version')!r}")
    allowed = {
        "format", "version", "problem", "problems", "algorithms", "budget",
        "seed", "runs_per_cell", "seed_base", "out_dir", "checkpoints",
        "checkpoint_axis", "workers",
    }
    for key in doc:
        if key not in allowed:
            raise DataError(f"{source}: unknown section {key!r}")

    base_dir = path.parent
    raw_problems = doc.get("problems")
    if raw_problems is None:
        raw_problems = [doc["problem"]] if "problem" in doc else []
    if not raw_problems:
        raise DataError(f"{source}: needs a 'problem' or non-empty 'problems' section")
    problems = [
        _parse_problem(p, f"{source}: problems[{i}]", base_dir)
        for i, p in enumerate(raw_problems)
    ]

    algorithms = []
    for i, raw in enumerate(doc.get("algorithms", [])):
        where = f"{source}: algorithms[{i}]"
        if isinstance(raw, str):
            raw = {"algo": raw}
        for key in raw:
            if key not in {"algo", "params", "label"}:
                raise DataError(f"{where}: unknown field {key!r}")
        algo = _require(raw, "algo", where)
        if algo not in ALGORITHMS:
            raise DataError(f"{where}: unknown algorithm {algo!r}")
        algorithms.append(
            AlgorithmSpec(algo=algo, params=raw.get("params", {}), label=raw.get("label", algo))
        )

    budget_raw = doc.get("budget", {})
    budget = _build_element(Budget, budget_raw, f"{source}: budget")

    return RunConfig(
        problems=problems,
        algorithms=algorithms,
        budget=budget,
        seed=int(doc.get("seed", 0)),
        runs_per_cell=int(doc.get("runs_per_cell", 1)),
        seed_base=int(doc.get("seed_base", 1)),
        out_dir=str(doc.get("out_dir", "benchmark_out")),
        checkpoints=[float(c) for c in doc.get("checkpoints", [])],
        checkpoint_axis=str(doc.get("checkpoint_axis", "evals")),
        workers=int(doc.get("workers", 1)),
    )


def default_config_document() -> dict:
    """Every configuration default, as printed by --print-config."""
    template = LineTemplate()
    return {
        "format": RUN_FORMAT,
        "version": 1,
        "problem": {
            "name": "<grid-file-stem>",
            "grid": "<path/to/grid.json>",
            "load_cases": [],
            "catalog": {
                "enable_al": CatalogConfig.enable_al,
                "detour_factor": CatalogConfig.detour_factor,
                "switch_cost": CatalogConfig.switch_cost,
                "al_template": {
                    f.name: getattr(template, f.name) for f in dc_fields(LineTemplate)
                },
            },
            "pf_options": {"tol_mva": None, "max_iter": 30, "init": "flat"},
            "cost_scale_eur": 1e6,
            "limits": None,
        },
        "algorithms": [{"algo": algo, "params": DEFAULT_PARAMS[algo]} for algo in ALGORITHMS],
        "budget": {"time_limit_s": None, "eval_limit": None, "pf_limit": None},
        "seed": 0,
        "runs_per_cell": 1,
        "seed_base": 1,
        "out_dir": "benchmark_out",
        "checkpoints": [],
        "checkpoint_axis": "evals",
        "workers": 1,
    }
