"""Leveled candidate evaluation: restriction level, raw cost, normalized fitness.

Every candidate is checked in severity order over all load cases:

  level 4  connection    disconnected buses (no power flow is run)
  level 3  convergence   non-converged load cases
  level 2  line loading  overload percent x length, summed over overloads
  level 1  voltage       per-unit band violations summed over buses
  level 0  investment    candidate cost (feasible solution)

The scalar fitness is ``normalized = level + tanh(raw_cost)``, which keeps
every level's cost inside a unit band so that any candidate at a lower level
beats any candidate at a higher level.

:class:`Evaluator` precompiles a problem (index maps, per-unit branch data,
per-load-case injections) so that evaluating one candidate costs microseconds;
``evaluate`` is the one-shot convenience wrapper. The composition semantics
(apply measures, overlay load case, toggle switches, solve) are pinned by
tests against the step-by-step public API.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._kernel import newton_polar
from .errors import ConfigError
from .measures import AL, REPL, SWITCH, MeasureCatalog, al_branch, candidate_cost
from .model import Grid, LoadCase
from .powerflow import SQRT3, PfOptions, branch_y_pu

TOPOLOGY, POWERFLOW, COST = "topology", "powerflow", "cost"
LEVEL_CONNECTION = 4
LEVEL_CONVERGENCE = 3
LEVEL_LOADING = 2
LEVEL_VOLTAGE = 1
LEVEL_INVESTMENT = 0


def normalized_cost(level: int, raw_cost: float) -> float:
    """Scalar fitness level + tanh(raw_cost); raw_cost must be >= 0."""
    if raw_cost < 0:
        raise ValueError(f"raw_cost must be >= 0, got {raw_cost}")
    return level + math.tanh(raw_cost)


@dataclass(frozen=True)
class LoadCaseDiag:
    name: str
    disconnected: int
    converged: bool | None  # None when no power flow was attempted
    iterations: int
    loading_cost: float
    voltage_cost: float


@dataclass(frozen=True)
class EvaluationResult:
    level: int
    raw_cost: float
    normalized: float
    eval_class: str  # topology | powerflow | cost
    invest_eur: float | None  # set for level-0 results
    diagnostics: tuple[LoadCaseDiag, ...]


def compare_lex(a: EvaluationResult, b: EvaluationResult) -> int:
    """-1 if a is better (lower level, then lower raw cost), 0 tie, +1 else."""
    if a.level != b.level:
        return -1 if a.level < b.level else 1
    if a.raw_cost != b.raw_cost:
        return -1 if a.raw_cost < b.raw_cost else 1
    return 0


def lex_key(result: EvaluationResult) -> tuple[int, float]:
    return (result.level, result.raw_cost)


class Evaluator:
    """Precompiled evaluation pipeline for one planning problem.

    Deterministic and side-effect free per call; ``pf_solves`` counts the
    power flows actually run (level-4 exits run none).
    """

    def __init__(
        self,
        grid: Grid,
        load_cases: list[LoadCase],
        catalog: MeasureCatalog,
        pf_opts: PfOptions | None = None,
        cost_scale_eur: float = 1e6,
    ):
        from .model import apply_load_case, slack_buses

        self.grid = grid
        self.catalog = catalog
        self.opts = pf_opts if pf_opts is not None else PfOptions()
        if self.opts.init == "previous":
            raise ConfigError("Evaluator requires init='flat' (evaluate must stay pure)")
        self.cost_scale = float(cost_scale_eur)
        self.tol_pu = self.opts.resolve_tol(grid.base_mva) / grid.base_mva
        self.pf_solves = 0

        if not load_cases:
            load_cases = [LoadCase(name="base")]
        self.load_cases = list(load_cases)
        if not slack_buses(grid):
            raise ConfigError("grid has no slack injection anywhere")

        base = grid.base_mva
        self.bus_ids = sorted(grid.buses)
        self.nb = len(self.bus_ids)
        bus_pos = {b: i for i, b in enumerate(self.bus_ids)}
        self.bus_live = np.array([grid.buses[b].in_service for b in self.bus_ids], dtype=bool)
        self.vmin = np.array([grid.buses[b].min_vm_pu for b in self.bus_ids])
        self.vmax = np.array([grid.buses[b].max_vm_pu for b in self.bus_ids])

        # branches (sorted by id)
        self.branch_ids = sorted(grid.branches)
        br_list = [grid.branches[k] for k in self.branch_ids]
        self.br_f = np.array([bus_pos[b.from_bus] for b in br_list], dtype=np.int64)
        self.br_t = np.array([bus_pos[b.to_bus] for b in br_list], dtype=np.int64)
        y_bh = [branch_y_pu(b, grid.buses[b.from_bus].vn_kv, base) for b in br_list]
        self.br_y = np.array([yb[0] for yb in y_bh], dtype=complex)
        self.br_bh = np.array([yb[1] for yb in y_bh])
        self.br_parallel = np.array([b.parallel for b in br_list], dtype=float)
        self.br_imax = np.array([b.max_i_ka for b in br_list])
        self.br_limit = np.array([b.max_loading_percent for b in br_list])
        self.br_wlen = np.array([max(b.length_km, 1.0) for b in br_list])
        self.br_ibase_f = np.array([base / (SQRT3 * grid.buses[b.from_bus].vn_kv) for b in br_list])
        self.br_ibase_t = np.array([base / (SQRT3 * grid.buses[b.to_bus].vn_kv) for b in br_list])
        self.br_static = np.array(
            [
                b.in_service
                and grid.buses[b.from_bus].in_service
                and grid.buses[b.to_bus].in_service
                for b in br_list
            ],
            dtype=bool,
        )

        # switches (sorted by id)
        self.switch_ids = sorted(grid.switches)
        sw_pos = {s: i for i, s in enumerate(self.switch_ids)}
        self.sw_default = np.array(
            [grid.switches[s].closed_default for s in self.switch_ids], dtype=bool
        )
        gate_b, gate_s = [], []
        bb_edges = []
        branch_pos = {k: i for i, k in enumerate(self.branch_ids)}
        for s in self.switch_ids:
            sw = grid.switches[s]
            if sw.kind == "bus-line":
                gate_b.append(branch_pos[sw.other])
                gate_s.append(sw_pos[s])
            else:
                if grid.buses[sw.bus].in_service and grid.buses[sw.other].in_service:
                    bb_edges.append((sw_pos[s], bus_pos[sw.bus], bus_pos[sw.other]))
        self.gate_branch = np.array(gate_b, dtype=np.int64)
        self.gate_switch = np.array(gate_s, dtype=np.int64)
        self.bb_edges = bb_edges

        # catalog mapping
        self.cost_vec = catalog.cost_vector()
        repl_bits, repl_branch = [], []
        switch_bits, switch_sw = [], []
        al_bits = []
        al_rows = []
        for m in catalog.measures:
            if m.kind == REPL:
                repl_bits.append(m.index)
                repl_branch.append(branch_pos[m.branch])
            elif m.kind == SWITCH:
                switch_bits.append(m.index)
                switch_sw.append(sw_pos[m.switch])
            else:
                t = m.template
                br = al_branch(m, -1)
                y, bh = branch_y_pu(br, grid.buses[m.from_bus].vn_kv, base)
                al_rows.append(
                    (
                        bus_pos[m.from_bus],
                        bus_pos[m.to_bus],
                        y,
                        bh,
                        t.max_i_ka,
                        t.max_loading_percent,
                        max(m.length_km, 1.0),
                        base / (SQRT3 * grid.buses[m.from_bus].vn_kv),
                        base / (SQRT3 * grid.buses[m.to_bus].vn_kv),
                    )
                )
                al_bits.append(m.index)
        self.repl_bits = np.array(repl_bits, dtype=np.int64)
        self.repl_branch = np.array(repl_branch, dtype=np.int64)
        self.switch_bits = np.array(switch_bits, dtype=np.int64)
        self.switch_sw = np.array(switch_sw, dtype=np.int64)
        self.al_bits = np.array(al_bits, dtype=np.int64)
        self.al_f = np.array([r[0] for r in al_rows], dtype=np.int64)
        self.al_t = np.array([r[1] for r in al_rows], dtype=np.int64)
        self.al_y = np.array([r[2] for r in al_rows], dtype=complex)
        self.al_bh = np.array([r[3] for r in al_rows])
        self.al_imax = np.array([r[4] for r in al_rows])
        self.al_limit = np.array([r[5] for r in al_rows])
        self.al_wlen = np.array([r[6] for r in al_rows])
        self.al_ibase_f = np.array([r[7] for r in al_rows])
        self.al_ibase_t = np.array([r[8] for r in al_rows])

        # per-load-case data
        self.lc_data = []
        for lc in self.load_cases:
            state = apply_load_case(grid, lc)  # validates key resolution
            closed = np.array([state.closed[s] for s in self.switch_ids], dtype=bool)
            outage = np.array(
                [k in lc.outages for k in self.branch_ids], dtype=bool
            )
            p_bus = np.zeros(self.nb)
            q_bus = np.zeros(self.nb)
            pv_rows, slack_rows = [], []
            for key in sorted(state.injections):
                inj = state.injections[key]
                if not self.bus_live[bus_pos[inj.bus]]:
                    continue
                pos = bus_pos[inj.bus]
                if inj.kind == "load":
                    p_bus[pos] -= inj.p_mw / base
                    q_bus[pos] -= inj.q_mvar / base
                elif inj.kind == "generator":
                    if inj.is_pv:
                        p_bus[pos] += inj.p_mw / base
                        pv_rows.append((pos, inj.vm_pu))
                    else:
                        p_bus[pos] += inj.p_mw / base
                        q_bus[pos] += inj.q_mvar / base
                else:
                    slack_rows.append((pos, inj.vm_pu, math.radians(inj.va_degree)))
            self.lc_data.append(
                {
                    "name": lc.name,
                    "closed": closed,
                    "active_static": self.br_static & ~outage,
                    "p_bus": p_bus,
                    "q_bus": q_bus,
                    "pv_rows": pv_rows,
                    "slack_rows": slack_rows,
                }
            )
            if not slack_rows:
                raise ConfigError(f"load case {lc.name!r}: no in-service slack bus")

        live_idx = np.flatnonzero(self.bus_live)
        self.vmin_live = self.vmin[live_idx]
        self.vmax_live = self.vmax[live_idx]
        self._no_al = np.array([], dtype=np.int64)
        self._cache: list[dict] = [{} for _ in self.lc_data]

    # -- cached per-(load case, switching, AL) structure ---------------------

    _CACHE_CAP = 1024

    def _context(self, lc_idx: int, toggle_mask: np.ndarray, al_active: np.ndarray):
        key = (toggle_mask.tobytes(), al_active.tobytes())
        cache = self._cache[lc_idx]
        ctx = cache.get(key)
        if ctx is None:
            if len(cache) >= self._CACHE_CAP:
                cache.clear()
            ctx = self._build_context(self.lc_data[lc_idx], toggle_mask, al_active)
            cache[key] = ctx
        return ctx

    def _build_context(self, lc, toggle_mask: np.ndarray, al_active: np.ndarray) -> dict:
        closed = lc["closed"] ^ toggle_mask
        active = lc["active_static"].copy()
        if self.gate_branch.size:
            gate_ok = np.ones(len(self.branch_ids), dtype=bool)
            np.logical_and.at(gate_ok, self.gate_branch, closed[self.gate_switch])
            active &= gate_ok
        active_idx = np.flatnonzero(active)

        # bus fusion over closed bus-bus switches
        parent = np.arange(self.nb, dtype=np.int64)

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for sw_idx, a, b in self.bb_edges:
            if closed[sw_idx]:
                ra, rb = find(a), find(b)
                if ra != rb:
                    parent[max(ra, rb)] = min(ra, rb)
        fuse_roots = np.array([find(i) for i in range(self.nb)], dtype=np.int64)

        # connectivity: extend the fused forest with the active edges
        cparent = fuse_roots.copy()

        def cfind(x):
            while cparent[x] != x:
                cparent[x] = cparent[cparent[x]]
                x = cparent[x]
            return x

        def cunion(a, b):
            ra, rb = cfind(a), cfind(b)
            if ra != rb:
                cparent[max(ra, rb)] = min(ra, rb)

        for i in active_idx:
            cunion(self.br_f[i], self.br_t[i])
        for i in al_active:
            cunion(self.al_f[i], self.al_t[i])
        conn_roots = np.array([cfind(i) for i in range(self.nb)], dtype=np.int64)
        ref_roots = {conn_roots[pos] for pos, _, _ in lc["slack_rows"]}
        live_idx = np.flatnonzero(self.bus_live)
        disconnected = int(np.sum(~np.isin(conn_roots[live_idx], list(ref_roots))))

        # compact supernode indices over in-service buses
        uniq, node_of_live = np.unique(fuse_roots[live_idx], return_inverse=True)
        k = len(uniq)
        node_of_bus = -np.ones(self.nb, dtype=np.int64)
        node_of_bus[live_idx] = node_of_live

        # unified edge table: active branches first, then active ALs
        F = np.concatenate([node_of_bus[self.br_f[active_idx]], node_of_bus[self.al_f[al_active]]])
        T = np.concatenate([node_of_bus[self.br_t[active_idx]], node_of_bus[self.al_t[al_active]]])
        y_one = np.concatenate([self.br_y[active_idx], self.al_y[al_active]])
        bh_one = np.concatenate([self.br_bh[active_idx], self.al_bh[al_active]])
        mult = np.concatenate([self.br_parallel[active_idx], np.ones(al_active.size)])
        imax = np.concatenate([self.br_imax[active_idx], self.al_imax[al_active]])
        limit = np.concatenate([self.br_limit[active_idx], self.al_limit[al_active]])
        wlen = np.concatenate([self.br_wlen[active_idx], self.al_wlen[al_active]])
        ibase_f = np.concatenate([self.br_ibase_f[active_idx], self.al_ibase_f[al_active]])
        ibase_t = np.concatenate([self.br_ibase_t[active_idx], self.al_ibase_t[al_active]])

        y_eff = y_one * mult
        bh_eff = bh_one * mult
        ybase = np.zeros((k, k), dtype=complex)
        np.add.at(ybase, (F, T), -y_eff)
        np.add.at(ybase, (T, F), -y_eff)
        np.add.at(ybase, (F, F), y_eff + 1j * bh_eff)
        np.add.at(ybase, (T, T), y_eff + 1j * bh_eff)

        p_set = np.bincount(node_of_live, weights=lc["p_bus"][live_idx], minlength=k)
        q_set = np.bincount(node_of_live, weights=lc["q_bus"][live_idx], minlength=k)

        vm0 = np.ones(k)
        va0 = np.zeros(k)
        is_slack = np.zeros(k, dtype=bool)
        is_pv = np.zeros(k, dtype=bool)
        for pos, vm_s, va_s in lc["slack_rows"]:
            node = node_of_bus[pos]
            if not is_slack[node]:
                is_slack[node] = True
                vm0[node] = vm_s
                va0[node] = va_s
        for pos, vm_s in lc["pv_rows"]:
            node = node_of_bus[pos]
            if not is_slack[node] and not is_pv[node]:
                is_pv[node] = True
                vm0[node] = vm_s

        # slot of each REPL measure inside the edge table (-1 when inactive)
        slot_of_active = -np.ones(len(self.branch_ids), dtype=np.int64)
        slot_of_active[active_idx] = np.arange(active_idx.size)
        repl_slot = (
            slot_of_active[self.repl_branch] if self.repl_branch.size else np.array([], dtype=np.int64)
        )

        return {
            "disconnected": disconnected,
            "k": k,
            "node_of_live": node_of_live,
            "F": F,
            "T": T,
            "y_one": y_one,
            "bh_one": bh_one,
            "mult": mult,
            "imax": imax,
            "limit": limit,
            "wlen": wlen,
            "ibase_f": ibase_f,
            "ibase_t": ibase_t,
            "ybase": ybase,
            "p_set": p_set,
            "q_set": q_set,
            "pv": np.flatnonzero(is_pv & ~is_slack),
            "pq": np.flatnonzero(~is_pv & ~is_slack),
            "vm0": vm0,
            "va0": va0,
            "repl_slot": repl_slot,
        }

    def _solve(self, ctx: dict, repl_slots: np.ndarray):
        """Newton solve for one cached context; REPL slots double their circuit."""
        ybus = ctx["ybase"]
        mult = ctx["mult"]
        if repl_slots.size:
            ybus = ybus.copy()
            F = ctx["F"][repl_slots]
            T = ctx["T"][repl_slots]
            dy = ctx["y_one"][repl_slots] * ctx["mult"][repl_slots]
            dbh = ctx["bh_one"][repl_slots] * ctx["mult"][repl_slots]
            np.add.at(ybus, (F, T), -dy)
            np.add.at(ybus, (T, F), -dy)
            np.add.at(ybus, (F, F), dy + 1j * dbh)
            np.add.at(ybus, (T, T), dy + 1j * dbh)
            mult = mult.copy()
            mult[repl_slots] *= 2.0

        vm = ctx["vm0"].copy()
        va = ctx["va0"].copy()
        self.pf_solves += 1
        converged, iterations, _ = newton_polar(
            ybus, ctx["p_set"], ctx["q_set"], vm, va, ctx["pv"], ctx["pq"],
            self.tol_pu, self.opts.max_iter,
        )
        return converged, iterations, vm, va, mult

    def _violation_costs(self, ctx: dict, mult, vm, va):
        """Loading and voltage violation costs from one solved load case."""
        v = vm * np.exp(1j * va)
        vf = v[ctx["F"]]
        vt = v[ctx["T"]]
        y_eff = ctx["y_one"] * mult
        bh_eff = ctx["bh_one"] * mult
        i_from = np.abs(y_eff * (vf - vt) + 1j * bh_eff * vf) * ctx["ibase_f"]
        i_to = np.abs(y_eff * (vt - vf) + 1j * bh_eff * vt) * ctx["ibase_t"]
        loading = np.maximum(i_from, i_to) / (ctx["imax"] * mult) * 100.0
        over = loading - ctx["limit"]
        mask = over > 0
        ll = float(np.sum(over[mask] / 100.0 * ctx["wlen"][mask])) if mask.any() else 0.0

        vm_bus = vm[ctx["node_of_live"]]
        vv = float(
            np.sum(np.maximum(0.0, vm_bus - self.vmax_live))
            + np.sum(np.maximum(0.0, self.vmin_live - vm_bus))
        )
        return ll, vv

    # -- public -------------------------------------------------------------

    def evaluate(self, candidate: np.ndarray) -> EvaluationResult:
        bits = np.asarray(candidate, dtype=np.uint8)
        if bits.shape != (self.catalog.size,):
            raise ConfigError(
                f"candidate length {bits.shape} does not match catalog size {self.catalog.size}"
            )

        toggle_mask = np.zeros(len(self.switch_ids), dtype=bool)
        if self.switch_bits.size:
            toggle_mask[self.switch_sw] = bits[self.switch_bits].astype(bool)
        al_active = (
            np.flatnonzero(bits[self.al_bits]) if self.al_bits.size else self._no_al
        )

        contexts = [self._context(i, toggle_mask, al_active) for i in range(len(self.lc_data))]
        c_conn = sum(ctx["disconnected"] for ctx in contexts)
        if c_conn > 0:
            diags = tuple(
                LoadCaseDiag(lc["name"], ctx["disconnected"], None, 0, 0.0, 0.0)
                for lc, ctx in zip(self.lc_data, contexts)
            )
            return EvaluationResult(
                LEVEL_CONNECTION, float(c_conn), normalized_cost(LEVEL_CONNECTION, c_conn),
                TOPOLOGY, None, diags,
            )

        c_nc = 0
        c_ll = 0.0
        c_vv = 0.0
        diags = []
        for lc, ctx in zip(self.lc_data, contexts):
            repl_slots = self._no_al
            if self.repl_bits.size:
                repl_slots = ctx["repl_slot"][bits[self.repl_bits].astype(bool)]
                repl_slots = repl_slots[repl_slots >= 0]
            converged, iterations, vm, va, mult = self._solve(ctx, repl_slots)
            if not converged:
                c_nc += 1
                diags.append(LoadCaseDiag(lc["name"], 0, False, iterations, 0.0, 0.0))
                continue
            ll, vv = self._violation_costs(ctx, mult, vm, va)
            c_ll += ll
            c_vv += vv
            diags.append(LoadCaseDiag(lc["name"], 0, True, iterations, ll, vv))

        if c_nc > 0:
            return EvaluationResult(
                LEVEL_CONVERGENCE, float(c_nc), normalized_cost(LEVEL_CONVERGENCE, c_nc),
                POWERFLOW, None, tuple(diags),
            )
        if c_ll > 0:
            return EvaluationResult(
                LEVEL_LOADING, c_ll, normalized_cost(LEVEL_LOADING, c_ll),
                POWERFLOW, None, tuple(diags),
            )
        if c_vv > 0:
            return EvaluationResult(
                LEVEL_VOLTAGE, c_vv, normalized_cost(LEVEL_VOLTAGE, c_vv),
                POWERFLOW, None, tuple(diags),
            )

        invest = candidate_cost(self.catalog, bits)
        raw = invest / self.cost_scale
        return EvaluationResult(
            LEVEL_INVESTMENT, raw, normalized_cost(LEVEL_INVESTMENT, raw),
            COST, invest, tuple(diags),
        )


def evaluate(
    grid: Grid,
    load_cases: list[LoadCase],
    catalog: MeasureCatalog,
    candidate: np.ndarray,
    pf_opts: PfOptions | None = None,
    cost_scale_eur: float = 1e6,
) -> EvaluationResult:
    """One-shot evaluation; builds a throwaway Evaluator."""
    return Evaluator(grid, load_cases, catalog, pf_opts, cost_scale_eur).evaluate(candidate)
