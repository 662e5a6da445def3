"""Immutable network data model and load-case overlays.

A :class:`Grid` holds keyed collections of buses, branches, switches and
injections. A :class:`LoadCase` overlays one loading situation on top of the
grid defaults (switch states, outages, injection values); applying it yields
a :class:`GridState` working snapshot that the topology and power-flow layers
consume. The grid itself is never mutated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

from .errors import DataError

BRANCH_KINDS = ("line", "transformer")
SWITCH_KINDS = ("bus-bus", "bus-line")
INJECTION_KINDS = ("load", "generator", "slack")


@dataclass(frozen=True)
class Bus:
    id: int
    name: str = ""
    vn_kv: float = 110.0
    min_vm_pu: float = 0.9
    max_vm_pu: float = 1.1
    geo: tuple[float, float] | None = None  # planar coordinates in km
    in_service: bool = True


@dataclass(frozen=True)
class Branch:
    id: int
    from_bus: int
    to_bus: int
    kind: str = "line"
    r_ohm: float = 0.0
    x_ohm: float = 0.0
    b_total_us: float = 0.0  # total shunt susceptance, referred to from-side base
    length_km: float = 0.0  # transformers use 0
    max_i_ka: float = 1.0
    max_loading_percent: float = 100.0
    parallel: int = 1
    in_service: bool = True
    replaceable: bool = False
    repl_cost_per_km: float = 0.0


@dataclass(frozen=True)
class Switch:
    id: int
    kind: str  # "bus-bus" or "bus-line"
    bus: int
    other: int  # bus key (bus-bus) or branch key (bus-line)
    closed_default: bool = True


@dataclass(frozen=True)
class Injection:
    """One injection at a bus.

    Field usage by kind:
      load:      p_mw, q_mvar (consumption, positive)
      generator: p_mw plus either q_mvar (PQ style) or vm_pu (PV style)
      slack:     vm_pu, va_degree
    """

    id: int
    bus: int
    kind: str
    p_mw: float | None = None
    q_mvar: float | None = None
    vm_pu: float | None = None
    va_degree: float | None = None

    @property
    def is_pv(self) -> bool:
        return self.kind == "generator" and self.vm_pu is not None


@dataclass(frozen=True)
class InjectionOverride:
    """Per-load-case replacement values for one injection (None = keep default)."""

    p_mw: float | None = None
    q_mvar: float | None = None
    vm_pu: float | None = None


@dataclass(frozen=True)
class LoadCase:
    name: str
    switch_states: dict[int, bool] = field(default_factory=dict)
    outages: frozenset[int] = frozenset()
    injection_overrides: dict[int, InjectionOverride] = field(default_factory=dict)


@dataclass(frozen=True)
class Grid:
    """Immutable network description. Treat all collections as read-only."""

    buses: dict[int, Bus]
    branches: dict[int, Branch]
    switches: dict[int, Switch]
    injections: dict[int, Injection]
    base_mva: float = 100.0


@dataclass(frozen=True)
class Violation:
    element: str  # "bus", "branch", "switch", "injection", "grid"
    key: int | None
    reason: str

    def __str__(self) -> str:
        where = f"{self.element} {self.key}" if self.key is not None else self.element
        return f"{where}: {self.reason}"


@dataclass(frozen=True)
class EffectiveInjection:
    """Injection values after load-case overrides."""

    kind: str
    bus: int
    p_mw: float | None
    q_mvar: float | None
    vm_pu: float | None
    va_degree: float | None

    @property
    def is_pv(self) -> bool:
        return self.kind == "generator" and self.vm_pu is not None


@dataclass(frozen=True)
class GridState:
    """Working snapshot of a grid under one load case.

    Per-evaluation private value; the underlying grid is shared and immutable.
    """

    grid: Grid
    closed: dict[int, bool]  # effective state of every switch
    in_service_branches: frozenset[int]
    injections: dict[int, EffectiveInjection]

    def with_switch_toggles(self, toggles) -> "GridState":
        """Return a copy with the given switches flipped from their effective state."""
        if not toggles:
            return self
        closed = dict(self.closed)
        for sw in toggles:
            closed[sw] = not closed[sw]
        return replace(self, closed=closed)


def _check_finite(report: list[Violation], element: str, key: int, **values) -> None:
    for name, v in values.items():
        if v is not None and not math.isfinite(v):
            report.append(Violation(element, key, f"{name} is not finite"))


def validate_grid(grid: Grid) -> list[Violation]:
    """Check every structural invariant; an empty report means the grid is valid."""
    report: list[Violation] = []

    for key, bus in grid.buses.items():
        if key != bus.id:
            report.append(Violation("bus", key, f"keyed as {key} but id is {bus.id}"))
        if not bus.vn_kv > 0:
            report.append(Violation("bus", key, f"vn_kv must be > 0, got {bus.vn_kv}"))
        if not bus.min_vm_pu < bus.max_vm_pu:
            report.append(
                Violation("bus", key, f"min_vm_pu {bus.min_vm_pu} must be < max_vm_pu {bus.max_vm_pu}")
            )
        _check_finite(report, "bus", key, vn_kv=bus.vn_kv, min_vm_pu=bus.min_vm_pu, max_vm_pu=bus.max_vm_pu)

    for key, br in grid.branches.items():
        if key != br.id:
            report.append(Violation("branch", key, f"keyed as {key} but id is {br.id}"))
        if br.kind not in BRANCH_KINDS:
            report.append(Violation("branch", key, f"unknown kind {br.kind!r}"))
        if br.from_bus not in grid.buses:
            report.append(Violation("branch", key, f"from_bus {br.from_bus} does not exist"))
        if br.to_bus not in grid.buses:
            report.append(Violation("branch", key, f"to_bus {br.to_bus} does not exist"))
        if br.from_bus == br.to_bus:
            report.append(Violation("branch", key, f"from_bus equals to_bus ({br.from_bus})"))
        if br.r_ohm == 0 and br.x_ohm == 0:
            report.append(Violation("branch", key, "zero impedance (r_ohm and x_ohm both 0)"))
        if br.parallel < 1:
            report.append(Violation("branch", key, f"parallel must be >= 1, got {br.parallel}"))
        if not 0 < br.max_loading_percent <= 200:
            report.append(
                Violation("branch", key, f"max_loading_percent must be in (0, 200], got {br.max_loading_percent}")
            )
        if br.max_i_ka <= 0:
            report.append(Violation("branch", key, f"max_i_ka must be > 0, got {br.max_i_ka}"))
        if br.length_km < 0:
            report.append(Violation("branch", key, f"length_km must be >= 0, got {br.length_km}"))

    for key, sw in grid.switches.items():
        if key != sw.id:
            report.append(Violation("switch", key, f"keyed as {key} but id is {sw.id}"))
        if sw.kind not in SWITCH_KINDS:
            report.append(Violation("switch", key, f"unknown kind {sw.kind!r}"))
            continue
        if sw.bus not in grid.buses:
            report.append(Violation("switch", key, f"bus {sw.bus} does not exist"))
        if sw.kind == "bus-bus":
            if sw.other not in grid.buses:
                report.append(Violation("switch", key, f"other bus {sw.other} does not exist"))
        else:
            br = grid.branches.get(sw.other)
            if br is None:
                report.append(Violation("switch", key, f"branch {sw.other} does not exist"))
            elif sw.bus not in (br.from_bus, br.to_bus):
                report.append(
                    Violation("switch", key, f"branch {sw.other} is not incident to bus {sw.bus}")
                )

    for key, inj in grid.injections.items():
        if key != inj.id:
            report.append(Violation("injection", key, f"keyed as {key} but id is {inj.id}"))
        if inj.kind not in INJECTION_KINDS:
            report.append(Violation("injection", key, f"unknown kind {inj.kind!r}"))
            continue
        if inj.bus not in grid.buses:
            report.append(Violation("injection", key, f"bus {inj.bus} does not exist"))
        if inj.kind == "load":
            if inj.p_mw is None or inj.q_mvar is None:
                report.append(Violation("injection", key, "load requires p_mw and q_mvar"))
            if inj.vm_pu is not None or inj.va_degree is not None:
                report.append(Violation("injection", key, "load must not set vm_pu or va_degree"))
        elif inj.kind == "generator":
            if inj.p_mw is None:
                report.append(Violation("injection", key, "generator requires p_mw"))
            if (inj.q_mvar is None) == (inj.vm_pu is None):
                report.append(
                    Violation("injection", key, "generator requires exactly one of q_mvar (PQ) or vm_pu (PV)")
                )
            if inj.va_degree is not None:
                report.append(Violation("injection", key, "generator must not set va_degree"))
        else:  # slack
            if inj.vm_pu is None or inj.va_degree is None:
                report.append(Violation("injection", key, "slack requires vm_pu and va_degree"))
            if inj.p_mw is not None or inj.q_mvar is not None:
                report.append(Violation("injection", key, "slack must not set p_mw or q_mvar"))

    if grid.base_mva <= 0:
        report.append(Violation("grid", None, f"base_mva must be > 0, got {grid.base_mva}"))
    if not any(inj.kind == "slack" for inj in grid.injections.values()):
        report.append(Violation("grid", None, "no slack injection anywhere"))

    return report


def apply_load_case(grid: Grid, lc: LoadCase) -> GridState:
    """Overlay one load case on the grid defaults; pure, grid untouched.

    Raises DataError naming the first unresolved key in the load case.
    """
    for sw in lc.switch_states:
        if sw not in grid.switches:
            raise DataError(f"load case {lc.name!r}: switch key {sw} does not resolve")
    for br in lc.outages:
        if br not in grid.branches:
            raise DataError(f"load case {lc.name!r}: outage branch key {br} does not resolve")
    for inj in lc.injection_overrides:
        if inj not in grid.injections:
            raise DataError(f"load case {lc.name!r}: injection key {inj} does not resolve")

    closed = {key: sw.closed_default for key, sw in grid.switches.items()}
    closed.update(lc.switch_states)

    in_service = frozenset(
        key
        for key, br in grid.branches.items()
        if br.in_service
        and key not in lc.outages
        and grid.buses[br.from_bus].in_service
        and grid.buses[br.to_bus].in_service
    )

    effective: dict[int, EffectiveInjection] = {}
    for key, inj in grid.injections.items():
        ov = lc.injection_overrides.get(key)
        effective[key] = EffectiveInjection(
            kind=inj.kind,
            bus=inj.bus,
            p_mw=inj.p_mw if ov is None or ov.p_mw is None else ov.p_mw,
            q_mvar=inj.q_mvar if ov is None or ov.q_mvar is None else ov.q_mvar,
            vm_pu=inj.vm_pu if ov is None or ov.vm_pu is None else ov.vm_pu,
            va_degree=inj.va_degree,
        )

    return GridState(grid=grid, closed=closed, in_service_branches=in_service, injections=effective)


def slack_buses(grid: Grid) -> frozenset[int]:
    """Buses hosting an in-service slack injection (the connectivity references)."""
    return frozenset(
        inj.bus
        for inj in grid.injections.values()
        if inj.kind == "slack" and grid.buses[inj.bus].in_service
    )
