"""Switch-aware connectivity analysis and spanning-tree switching states.

The traversable graph of a :class:`~gridplan.model.GridState` has one node per
in-service bus and one edge per in-service branch (gated by its bus-line
switches) plus one edge per closed bus-bus switch. Random spanning trees of
this graph yield fully connected initial switching states for the search
heuristics; trees that do not admit a power-flow solution are iteratively
densified by closing half of the remaining open switches.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InfeasibleError
from .model import Grid, GridState, LoadCase, apply_load_case, slack_buses


@dataclass(frozen=True)
class Edge:
    u: int
    v: int
    kind: str  # "branch" or "switch"
    key: int  # branch id, or switch id for bus-bus edges
    gates: tuple[int, ...]  # bus-line switch ids gating a branch edge (empty = not switchable)

    @property
    def switchable(self) -> bool:
        return self.kind == "switch" or bool(self.gates)


@dataclass(frozen=True)
class TopologyGraph:
    """All potential connections of a grid state, with their gating switches."""

    nodes: frozenset[int]
    edges: tuple[Edge, ...]
    closed: dict[int, bool]  # effective switch states of the originating state

    @classmethod
    def from_state(cls, state: GridState) -> "TopologyGraph":
        grid = state.grid
        nodes = frozenset(b.id for b in grid.buses.values() if b.in_service)

        gates: dict[int, list[int]] = {}
        for sw in grid.switches.values():
            if sw.kind == "bus-line":
                gates.setdefault(sw.other, []).append(sw.id)

        edges = []
        for key in sorted(state.in_service_branches):
            br = grid.branches[key]
            edges.append(
                Edge(br.from_bus, br.to_bus, "branch", key, tuple(sorted(gates.get(key, ()))))
            )
        for key in sorted(grid.switches):
            sw = grid.switches[key]
            if sw.kind == "bus-bus" and sw.bus in nodes and sw.other in nodes:
                edges.append(Edge(sw.bus, sw.other, "switch", key, ()))
        return cls(nodes=nodes, edges=tuple(edges), closed=dict(state.closed))

    def is_traversable(self, edge: Edge, closed: dict[int, bool] | None = None) -> bool:
        closed = self.closed if closed is None else closed
        if edge.kind == "switch":
            return closed[edge.key]
        return all(closed[g] for g in edge.gates)

    def traversable_edges(self, closed: dict[int, bool] | None = None) -> list[Edge]:
        return [e for e in self.edges if self.is_traversable(e, closed)]


class _UnionFind:
    def __init__(self, items):
        self.parent = {x: x for x in items}

    def find(self, x):
        parent = self.parent
        root = x
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:
            parent[x], x = root, parent[x]
        return root

    def union(self, a, b) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        self.parent[rb] = ra
        return True


def disconnected_count(state: GridState, reference_buses) -> int:
    """Number of in-service buses unreachable from every reference bus."""
    refs = set(reference_buses)
    if not refs:
        raise ConfigError("reference bus set is empty")
    graph = TopologyGraph.from_state(state)
    uf = _UnionFind(graph.nodes)
    for edge in graph.traversable_edges():
        uf.union(edge.u, edge.v)
    ref_roots = {uf.find(r) for r in refs if r in graph.nodes}
    return sum(1 for n in graph.nodes if uf.find(n) not in ref_roots)


def random_spanning_tree(graph: TopologyGraph, rng: np.random.Generator) -> dict[int, bool]:
    """Draw a switching state whose closed edges form a spanning tree.

    Sampling is by random-weight Kruskal (weights re-drawn per call), so draws
    are diverse but not uniform over all trees. Non-switchable in-service edges
    are always kept; the result is an exact tree whenever those forced edges
    are acyclic on their own.
    """
    uf = _UnionFind(graph.nodes)
    switchable = []
    for edge in graph.edges:
        if edge.switchable:
            switchable.append(edge)
        else:
            uf.union(edge.u, edge.v)

    weights = rng.random(len(switchable))
    chosen: list[Edge] = []
    for i in np.argsort(weights, kind="stable"):
        edge = switchable[i]
        if uf.union(edge.u, edge.v):
            chosen.append(edge)

    roots = {uf.find(n) for n in graph.nodes}
    if len(roots) > 1:
        raise InfeasibleError(
            f"grid is disconnected even with all switches closed ({len(roots)} components)"
        )

    chosen_set = set(chosen)
    switching: dict[int, bool] = {}
    for edge in switchable:
        in_tree = edge in chosen_set
        if edge.kind == "switch":
            switching[edge.key] = in_tree
        else:
            for g in edge.gates:
                switching[g] = in_tree
    return switching


def candidate_toggles(grid: Grid, switching: dict[int, bool]) -> frozenset[int]:
    """Switch keys whose target state differs from the grid default."""
    return frozenset(
        sw for sw, want_closed in switching.items() if want_closed != grid.switches[sw].closed_default
    )


def generate_initial_candidates(
    grid: Grid,
    load_cases: list[LoadCase],
    n: int,
    rng: np.random.Generator,
    pf_opts=None,
) -> list[dict[int, bool]]:
    """Generate n switching states, each connected and power-flow convergent.

    Each draw starts from a random spanning tree; while any load case is
    disconnected or fails to converge, half (rounded up) of the remaining open
    switches are closed uniformly at random and the state is re-checked. A
    fully closed state that still fails means the base grid is unsolvable.
    """
    from .powerflow import PfOptions, solve_power_flow

    if n < 1:
        raise ConfigError(f"candidate count must be >= 1, got {n}")
    opts = pf_opts if pf_opts is not None else PfOptions()
    refs = slack_buses(grid)
    if not refs:
        raise ConfigError("grid has no slack injection; cannot define reference buses")

    base_state = apply_load_case(grid, LoadCase(name="__defaults__"))
    graph = TopologyGraph.from_state(base_state)
    states = [apply_load_case(grid, lc) for lc in load_cases]

    def passes(switching: dict[int, bool]) -> bool:
        toggles = candidate_toggles(grid, switching)
        for st in states:
            eff = st.with_switch_toggles(toggles)
            if disconnected_count(eff, refs) > 0:
                return False
            if not solve_power_flow(eff, opts).converged:
                return False
        return True

    out: list[dict[int, bool]] = []
    for _ in range(n):
        switching = random_spanning_tree(graph, rng)
        while not passes(switching):
            opened = sorted(sw for sw, closed in switching.items() if not closed)
            if not opened:
                raise InfeasibleError(
                    "fully closed switching state does not converge; base grid is unsolvable"
                )
            k = math.ceil(len(opened) / 2)
            for i in rng.choice(len(opened), size=k, replace=False):
                switching[opened[i]] = True
        out.append(dict(switching))
    return out
