"""AC power flow over a grid state: admittance assembly, Newton solve, loadings.

Closed bus-bus switches are handled by fusing their buses into supernodes
before assembly (no zero-impedance branches); open bus-line switches exclude
their branch. Impedances arrive in ohms referred to the from-side voltage
base and are converted to per-unit here, at one canonical boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix

from ._kernel import BACKEND, newton_polar  # noqa: F401  (BACKEND re-exported)
from .errors import ConfigError
from .model import Grid, GridState

SQRT3 = math.sqrt(3.0)


@dataclass(frozen=True)
class PfOptions:
    """Solver settings. tol_mva=None resolves to 1e-8 x base_mva at solve time."""

    tol_mva: float | None = None
    max_iter: int = 30
    init: str = "flat"  # "flat" or "previous"

    def resolve_tol(self, base_mva: float) -> float:
        tol = 1e-8 * base_mva if self.tol_mva is None else self.tol_mva
        if tol <= 0:
            raise ConfigError(f"tol_mva must be > 0, got {tol}")
        if self.max_iter < 1:
            raise ConfigError(f"max_iter must be >= 1, got {self.max_iter}")
        if self.init not in ("flat", "previous"):
            raise ConfigError(f"init must be 'flat' or 'previous', got {self.init!r}")
        return tol


@dataclass
class PfResult:
    """Solution snapshot; arrays are aligned with bus_ids / branch_ids order."""

    bus_ids: tuple[int, ...]
    branch_ids: tuple[int, ...]
    vm_pu: np.ndarray
    va_degree: np.ndarray
    loading_percent: np.ndarray
    i_from_ka: np.ndarray
    i_to_ka: np.ndarray
    p_from_mw: np.ndarray
    q_from_mvar: np.ndarray
    p_to_mw: np.ndarray
    q_to_mvar: np.ndarray
    p_slack_mw: float
    q_slack_mvar: float
    slack_p_mw: dict[int, float]
    slack_q_mvar: dict[int, float]
    converged: bool
    iterations: int
    max_mismatch_mva: float

    def vm(self, bus: int) -> float:
        return float(self.vm_pu[self.bus_ids.index(bus)])

    def va(self, bus: int) -> float:
        return float(self.va_degree[self.bus_ids.index(bus)])


def branch_y_pu(branch, vn_from_kv: float, base_mva: float) -> tuple[complex, float]:
    """Series admittance and half shunt susceptance of one circuit, per-unit."""
    z_base = vn_from_kv * vn_from_kv / base_mva
    y_series = 1.0 / complex(branch.r_ohm / z_base, branch.x_ohm / z_base)
    b_half = 0.5 * branch.b_total_us * 1e-6 * z_base
    return y_series, b_half


def _fuse_buses(state: GridState) -> tuple[dict[int, int], list[list[int]]]:
    """Merge buses joined by closed bus-bus switches into supernodes.

    Returns (node_of_bus, members) with compact node indices over in-service
    buses, ordered by the smallest member bus id.
    """
    grid = state.grid
    live = sorted(b.id for b in grid.buses.values() if b.in_service)
    parent = {b: b for b in live}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for sw in grid.switches.values():
        if sw.kind == "bus-bus" and state.closed[sw.id] and sw.bus in parent and sw.other in parent:
            ra, rb = find(sw.bus), find(sw.other)
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)

    groups: dict[int, list[int]] = {}
    for b in live:
        groups.setdefault(find(b), []).append(b)
    roots = sorted(groups)
    node_of_bus = {}
    members = []
    for idx, root in enumerate(roots):
        members.append(sorted(groups[root]))
        for b in groups[root]:
            node_of_bus[b] = idx
    return node_of_bus, members


def active_branches(state: GridState) -> list[int]:
    """In-service branches whose gating bus-line switches are all closed."""
    grid = state.grid
    gates: dict[int, list[int]] = {}
    for sw in grid.switches.values():
        if sw.kind == "bus-line":
            gates.setdefault(sw.other, []).append(sw.id)
    out = []
    for key in sorted(state.in_service_branches):
        if all(state.closed[g] for g in gates.get(key, ())):
            out.append(key)
    return out


def build_admittance(state: GridState) -> tuple[csr_matrix, dict[int, int]]:
    """Bus admittance matrix (sparse, complex, per-unit) over fused supernodes.

    Branch contributions are scaled by their parallel count; branches whose
    gating switches are open are excluded. Returns the matrix together with
    the bus -> node index mapping.
    """
    grid = state.grid
    node_of_bus, members = _fuse_buses(state)
    n = len(members)

    rows, cols, vals = [], [], []
    for key in active_branches(state):
        br = grid.branches[key]
        f = node_of_bus[br.from_bus]
        t = node_of_bus[br.to_bus]
        y, b_half = branch_y_pu(br, grid.buses[br.from_bus].vn_kv, grid.base_mva)
        m = float(br.parallel)
        if f == t:
            # both ends fused together: series part cancels, shunt remains
            rows.append(f), cols.append(f), vals.append(m * 2j * b_half)
            continue
        rows += [f, t, f, t]
        cols += [f, t, t, f]
        vals += [m * (y + 1j * b_half), m * (y + 1j * b_half), -m * y, -m * y]

    ybus = csr_matrix((vals, (rows, cols)), shape=(n, n), dtype=complex)
    ybus.sum_duplicates()
    return ybus, node_of_bus


def _node_roles(state: GridState, node_of_bus: dict[int, int], n: int):
    """Classify supernodes and aggregate scheduled injections.

    Returns (sbus_pu, is_slack, is_pv, vm_set, va_set, has_injection,
    slack_injs) where slack_injs maps node -> list of slack injection ids.
    """
    grid = state.grid
    sbus = np.zeros(n, dtype=complex)
    is_slack = np.zeros(n, dtype=bool)
    is_pv = np.zeros(n, dtype=bool)
    vm_set = np.ones(n)
    va_set = np.zeros(n)
    has_injection = np.zeros(n, dtype=bool)
    slack_owner = {}  # node -> injection id that fixed vm/va (lowest id wins)
    pv_owner = {}
    slack_injs: dict[int, list[int]] = {}

    for key in sorted(state.injections):
        inj = state.injections[key]
        if inj.bus not in node_of_bus:
            continue
        node = node_of_bus[inj.bus]
        if inj.kind == "load":
            sbus[node] -= complex(inj.p_mw, inj.q_mvar) / grid.base_mva
            has_injection[node] = True
        elif inj.kind == "generator":
            has_injection[node] = True
            if inj.is_pv:
                sbus[node] += complex(inj.p_mw, 0.0) / grid.base_mva
                if node not in pv_owner:
                    pv_owner[node] = key
                    is_pv[node] = True
                    if not is_slack[node]:
                        vm_set[node] = inj.vm_pu
            else:
                sbus[node] += complex(inj.p_mw, inj.q_mvar) / grid.base_mva
        else:  # slack
            has_injection[node] = True
            slack_injs.setdefault(node, []).append(key)
            if node not in slack_owner:
                slack_owner[node] = key
                is_slack[node] = True
                vm_set[node] = inj.vm_pu
                va_set[node] = math.radians(inj.va_degree)

    return sbus, is_slack, is_pv, vm_set, va_set, has_injection, slack_injs


def _components(state: GridState, node_of_bus: dict[int, int], n: int) -> np.ndarray:
    """Connected-component label per supernode (active branches only)."""
    parent = list(range(n))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    grid = state.grid
    for key in active_branches(state):
        br = grid.branches[key]
        ra, rb = find(node_of_bus[br.from_bus]), find(node_of_bus[br.to_bus])
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)
    return np.array([find(i) for i in range(n)], dtype=np.int64)


def solve_power_flow(state: GridState, opts: PfOptions | None = None, v_init=None) -> PfResult:
    """Newton-Raphson AC power flow on the polar mismatch equations.

    Non-convergence (iteration cap, singular Jacobian, or an island carrying
    injections without a slack) is reported via converged=False, not raised.
    Islands with neither slack nor injections are left unsolved (NaN voltage).
    """
    grid = state.grid
    opts = opts if opts is not None else PfOptions()
    tol_mva = opts.resolve_tol(grid.base_mva)
    tol_pu = tol_mva / grid.base_mva

    bus_ids = tuple(sorted(grid.buses))
    branch_ids = tuple(sorted(grid.branches))
    nb, nbr = len(bus_ids), len(branch_ids)

    def failed(iterations=0, mis=math.inf) -> PfResult:
        nan_b = np.full(nb, np.nan)
        z = np.zeros(nbr)
        return PfResult(
            bus_ids, branch_ids, nan_b, nan_b.copy(), z, z.copy(), z.copy(),
            z.copy(), z.copy(), z.copy(), z.copy(), 0.0, 0.0, {}, {},
            converged=False, iterations=iterations, max_mismatch_mva=mis,
        )

    ybus, node_of_bus = build_admittance(state)
    n = ybus.shape[0]
    if n == 0:
        return failed()
    sbus, is_slack, is_pv, vm_set, va_set, has_injection, slack_injs = _node_roles(
        state, node_of_bus, n
    )
    comp = _components(state, node_of_bus, n)

    comp_has_slack = {c: False for c in set(comp.tolist())}
    for i in range(n):
        if is_slack[i]:
            comp_has_slack[comp[i]] = True
    for i in range(n):
        if has_injection[i] and not comp_has_slack[comp[i]]:
            return failed()  # loaded island without a reference: unsolvable

    include = np.array([comp_has_slack[comp[i]] for i in range(n)], dtype=bool)
    idx = np.flatnonzero(include)
    if idx.size == 0:
        return failed()
    pos = -np.ones(n, dtype=np.int64)
    pos[idx] = np.arange(idx.size)

    y_dense = ybus.toarray()[np.ix_(idx, idx)]
    p_set = sbus.real[idx]
    q_set = sbus.imag[idx]
    slack_l = is_slack[idx]
    pv_l = is_pv[idx] & ~slack_l
    pq_l = ~slack_l & ~pv_l
    pv = np.flatnonzero(pv_l).astype(np.int64)
    pq = np.flatnonzero(pq_l).astype(np.int64)

    vm = np.ones(idx.size)
    va = np.zeros(idx.size)
    if opts.init == "previous" and v_init is not None:
        vm_prev, va_prev = v_init
        vm[:] = vm_prev[idx]
        va[:] = va_prev[idx]
    vm[slack_l] = vm_set[idx][slack_l]
    va[slack_l] = va_set[idx][slack_l]
    vm[pv_l] = vm_set[idx][pv_l]

    converged, iterations, max_mis = newton_polar(
        y_dense, p_set, q_set, vm, va, pv, pq, tol_pu, opts.max_iter
    )
    if not converged:
        return failed(iterations, max_mis * grid.base_mva)

    # expand to per-bus arrays
    vm_bus = np.full(nb, np.nan)
    va_bus = np.full(nb, np.nan)
    for i, bus in enumerate(bus_ids):
        node = node_of_bus.get(bus, -1)
        if node >= 0 and pos[node] >= 0:
            vm_bus[i] = vm[pos[node]]
            va_bus[i] = math.degrees(va[pos[node]])

    v = vm * np.exp(1j * va)

    # slack injections: node power minus everything else scheduled there
    s_node = v * np.conj(y_dense @ v) * grid.base_mva
    slack_p: dict[int, float] = {}
    slack_q: dict[int, float] = {}
    for node, inj_ids in slack_injs.items():
        if pos[node] < 0:
            continue
        s = s_node[pos[node]]
        # remove scheduled non-slack injections (loads negative, gens positive)
        p_other = sbus.real[node] * grid.base_mva
        q_other = sbus.imag[node] * grid.base_mva
        # PV generators on this node produce reactive power too; at a slack
        # node every PV setpoint is overridden, so attribute their q here as 0
        p_total = float(s.real - p_other)
        q_total = float(s.imag - q_other)
        for k in inj_ids:
            slack_p[k] = p_total / len(inj_ids)
            slack_q[k] = q_total / len(inj_ids)

    result = PfResult(
        bus_ids=bus_ids,
        branch_ids=branch_ids,
        vm_pu=vm_bus,
        va_degree=va_bus,
        loading_percent=np.zeros(nbr),
        i_from_ka=np.zeros(nbr),
        i_to_ka=np.zeros(nbr),
        p_from_mw=np.zeros(nbr),
        q_from_mvar=np.zeros(nbr),
        p_to_mw=np.zeros(nbr),
        q_to_mvar=np.zeros(nbr),
        p_slack_mw=float(sum(slack_p.values())),
        q_slack_mvar=float(sum(slack_q.values())),
        slack_p_mw=slack_p,
        slack_q_mvar=slack_q,
        converged=True,
        iterations=iterations,
        max_mismatch_mva=max_mis * grid.base_mva,
    )
    _fill_branch_results(result, state)
    return result


def _branch_flows(state: GridState, result: PfResult) -> dict[str, np.ndarray]:
    """Currents, powers and loading per branch from the solved voltages."""
    grid = state.grid
    base = grid.base_mva
    active = set(active_branches(state))
    bus_pos = {b: i for i, b in enumerate(result.bus_ids)}
    nbr = len(result.branch_ids)
    out = {
        name: np.zeros(nbr)
        for name in (
            "loading_percent", "i_from_ka", "i_to_ka",
            "p_from_mw", "q_from_mvar", "p_to_mw", "q_to_mvar",
        )
    }

    for i, key in enumerate(result.branch_ids):
        if key not in active:
            continue
        br = grid.branches[key]
        fb, tb = bus_pos[br.from_bus], bus_pos[br.to_bus]
        vmf, vmt = result.vm_pu[fb], result.vm_pu[tb]
        if not (np.isfinite(vmf) and np.isfinite(vmt)):
            continue
        vf = vmf * np.exp(1j * math.radians(result.va_degree[fb]))
        vt = vmt * np.exp(1j * math.radians(result.va_degree[tb]))
        vn_f = grid.buses[br.from_bus].vn_kv
        vn_t = grid.buses[br.to_bus].vn_kv
        y, b_half = branch_y_pu(br, vn_f, base)
        m = float(br.parallel)

        i_from = m * (y * (vf - vt) + 1j * b_half * vf)
        i_to = m * (y * (vt - vf) + 1j * b_half * vt)
        s_from = vf * np.conj(i_from) * base
        s_to = vt * np.conj(i_to) * base
        i_from_ka = abs(i_from) * base / (SQRT3 * vn_f)
        i_to_ka = abs(i_to) * base / (SQRT3 * vn_t)

        out["i_from_ka"][i] = i_from_ka
        out["i_to_ka"][i] = i_to_ka
        out["p_from_mw"][i] = s_from.real
        out["q_from_mvar"][i] = s_from.imag
        out["p_to_mw"][i] = s_to.real
        out["q_to_mvar"][i] = s_to.imag
        out["loading_percent"][i] = max(i_from_ka, i_to_ka) / (br.max_i_ka * br.parallel) * 100.0
    return out


def _fill_branch_results(result: PfResult, state: GridState) -> None:
    flows = _branch_flows(state, result)
    for name, arr in flows.items():
        getattr(result, name)[:] = arr


def branch_loadings(result: PfResult, state: GridState) -> np.ndarray:
    """Per-branch loading percent recomputed from the solved voltages."""
    if not result.converged:
        raise ValueError("branch_loadings requires a converged power-flow result")
    return _branch_flows(state, result)["loading_percent"]
