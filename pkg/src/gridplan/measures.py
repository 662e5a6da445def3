"""Measure catalog construction, candidate application and pricing.

Three measure kinds over a grid:

* REPL  - replace an existing line, modeled as a parallel line of the same
  type (doubled admittance), one per replaceable in-service line;
* SWITCH - toggle one switch away from its load-case-effective state;
* AL    - build a new line between two substations, candidates taken from a
  Delaunay triangulation of the bus coordinates.

A candidate is a binary vector over the catalog; application is set-based and
never mutates the base grid.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial import Delaunay, QhullError

from .errors import ConfigError, DataError
from .model import Branch, Grid

REPL, SWITCH, AL = "REPL", "SWITCH", "AL"


@dataclass(frozen=True)
class LineTemplate:
    """Electrical parameters per km for additional-line candidates."""

    r_ohm_per_km: float = 0.12
    x_ohm_per_km: float = 0.39
    b_us_per_km: float = 3.0
    max_i_ka: float = 0.535
    max_loading_percent: float = 100.0
    cost_per_km: float = 250_000.0


@dataclass(frozen=True)
class CatalogConfig:
    enable_al: bool = False
    al_template: LineTemplate = field(default_factory=LineTemplate)
    detour_factor: float = 1.3  # line length vs straight-line distance
    switch_cost: float = 0.0


@dataclass(frozen=True)
class Measure:
    index: int
    kind: str  # REPL | SWITCH | AL
    invest_cost: float
    branch: int | None = None  # REPL target
    switch: int | None = None  # SWITCH target
    from_bus: int | None = None  # AL endpoints
    to_bus: int | None = None
    length_km: float | None = None  # AL only
    template: LineTemplate | None = None  # AL only

    def describe(self) -> str:
        if self.kind == REPL:
            return f"REPL branch {self.branch}"
        if self.kind == SWITCH:
            return f"SWITCH {self.switch}"
        return f"AL {self.from_bus}-{self.to_bus} ({self.length_km:.2f} km)"


@dataclass(frozen=True)
class MeasureCatalog:
    """Ordered measures: REPL block, then SWITCH, then AL. Deterministic."""

    measures: tuple[Measure, ...]

    @property
    def size(self) -> int:
        return len(self.measures)

    def counts(self) -> dict[str, int]:
        out = {REPL: 0, SWITCH: 0, AL: 0}
        for m in self.measures:
            out[m.kind] += 1
        return out

    def cost_vector(self) -> np.ndarray:
        return np.array([m.invest_cost for m in self.measures], dtype=float)


@dataclass(frozen=True)
class GridOverlay:
    """A candidate applied to a grid: derived grid plus pending switch toggles.

    Switch toggles are applied after load-case overrides, so they are carried
    separately instead of being baked into switch defaults.
    """

    grid: Grid
    switch_toggles: frozenset[int]


def empty_candidate(catalog: MeasureCatalog) -> np.ndarray:
    return np.zeros(catalog.size, dtype=np.uint8)


def candidate_hash(bits: np.ndarray) -> str:
    h = hashlib.sha1()
    h.update(len(bits).to_bytes(4, "little"))
    h.update(np.packbits(np.asarray(bits, dtype=np.uint8)).tobytes())
    return h.hexdigest()[:12]


def candidate_from_int(value: int, size: int) -> np.ndarray:
    bits = np.zeros(size, dtype=np.uint8)
    for i in range(size):
        bits[i] = (value >> i) & 1
    return bits


def delaunay_al_candidates(grid: Grid, cfg: CatalogConfig) -> list[tuple[int, int, float]]:
    """Delaunay edges over bus coordinates minus pairs already joined by a line.

    Returns (from_bus, to_bus, length_km) tuples, sorted by bus pair; the
    length is the Euclidean distance scaled by the detour factor.
    """
    live = [b for b in grid.buses.values() if b.in_service]
    missing = [b.id for b in live if b.geo is None]
    if missing:
        raise ConfigError(
            f"additional lines require coordinates on every in-service bus; missing on {missing}"
        )
    if len(live) < 3:
        raise DataError(f"Delaunay triangulation needs >= 3 buses, got {len(live)}")

    ids = [b.id for b in live]
    pts = np.array([b.geo for b in live], dtype=float)
    try:
        tri = Delaunay(pts)
    except QhullError as exc:
        raise DataError(f"degenerate bus geometry (collinear points?): {exc}") from exc

    existing = set()
    for br in grid.branches.values():
        if br.kind == "line" and br.in_service:
            existing.add(frozenset((br.from_bus, br.to_bus)))

    edges = set()
    for simplex in tri.simplices:
        for i in range(3):
            a, b = ids[simplex[i]], ids[simplex[(i + 1) % 3]]
            if frozenset((a, b)) not in existing:
                edges.add((min(a, b), max(a, b)))

    out = []
    for a, b in sorted(edges):
        dist = math.dist(grid.buses[a].geo, grid.buses[b].geo)
        out.append((a, b, dist * cfg.detour_factor))
    return out


def build_catalog(grid: Grid, cfg: CatalogConfig | None = None) -> MeasureCatalog:
    """All available measures for this grid, in stable REPL/SWITCH/AL order."""
    cfg = cfg if cfg is not None else CatalogConfig()
    measures: list[Measure] = []

    for key in sorted(grid.branches):
        br = grid.branches[key]
        if br.kind == "line" and br.replaceable and br.in_service:
            measures.append(
                Measure(
                    index=len(measures),
                    kind=REPL,
                    invest_cost=br.repl_cost_per_km * br.length_km,
                    branch=key,
                )
            )

    for key in sorted(grid.switches):
        measures.append(
            Measure(index=len(measures), kind=SWITCH, invest_cost=cfg.switch_cost, switch=key)
        )

    if cfg.enable_al:
        for a, b, length in delaunay_al_candidates(grid, cfg):
            measures.append(
                Measure(
                    index=len(measures),
                    kind=AL,
                    invest_cost=cfg.al_template.cost_per_km * length,
                    from_bus=a,
                    to_bus=b,
                    length_km=length,
                    template=cfg.al_template,
                )
            )

    return MeasureCatalog(measures=tuple(measures))


def al_branch(measure: Measure, branch_id: int) -> Branch:
    """Materialize an additional-line measure as a branch."""
    t = measure.template
    return Branch(
        id=branch_id,
        from_bus=measure.from_bus,
        to_bus=measure.to_bus,
        kind="line",
        r_ohm=t.r_ohm_per_km * measure.length_km,
        x_ohm=t.x_ohm_per_km * measure.length_km,
        b_total_us=t.b_us_per_km * measure.length_km,
        length_km=measure.length_km,
        max_i_ka=t.max_i_ka,
        max_loading_percent=t.max_loading_percent,
        parallel=1,
        in_service=True,
        replaceable=False,
        repl_cost_per_km=0.0,
    )


def apply_measures(grid: Grid, catalog: MeasureCatalog, candidate: np.ndarray) -> GridOverlay:
    """Apply the set bits of a candidate; result is independent of bit order."""
    if len(candidate) != catalog.size:
        raise ConfigError(
            f"candidate length {len(candidate)} does not match catalog size {catalog.size}"
        )

    branches = dict(grid.branches)
    toggles = set()
    next_id = max(branches, default=-1) + 1

    for measure in catalog.measures:
        if not candidate[measure.index]:
            continue
        if measure.kind == REPL:
            br = branches[measure.branch]
            branches[measure.branch] = replace(br, parallel=br.parallel * 2)
        elif measure.kind == SWITCH:
            toggles.add(measure.switch)
        else:  # AL; ids assigned in catalog order, so bit order cannot matter
            branches[next_id] = al_branch(measure, next_id)
            next_id += 1

    new_grid = Grid(
        buses=grid.buses,
        branches=branches,
        switches=grid.switches,
        injections=grid.injections,
        base_mva=grid.base_mva,
    )
    return GridOverlay(grid=new_grid, switch_toggles=frozenset(toggles))


def candidate_cost(catalog: MeasureCatalog, candidate: np.ndarray) -> float:
    """Investment of a candidate: sum of invest_cost over its set bits."""
    if len(candidate) != catalog.size:
        raise ConfigError(
            f"candidate length {len(candidate)} does not match catalog size {catalog.size}"
        )
    return float(catalog.cost_vector() @ np.asarray(candidate, dtype=float))
