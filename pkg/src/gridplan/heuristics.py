"""Six seeded search strategies over binary candidates with a common run contract.

Exploitative strategies (hill climbing, iterated local search) compare
candidates lexicographically by (level, raw cost) and start from the empty
candidate, i.e. the grid as it stands. Population strategies (GA, PSO, GWO,
FWA) minimize the scalar normalized cost and are seeded with connected
switching states from random spanning trees; the empty candidate is always
evaluated first as the baseline. Both orderings agree whenever they are
strict, so the split is interface shape, not semantics.

A run terminates when its budget is exhausted (wall-clock seconds, total
evaluations, or evaluations that reached the power-flow stage), within one
evaluation's granularity. Identical (algorithm, problem, budget, seed) yield
identical trajectories, up to wall-clock fields.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .evaluation import TOPOLOGY, EvaluationResult, Evaluator, compare_lex
from .measures import SWITCH, MeasureCatalog, candidate_hash
from .model import Grid, LoadCase
from .powerflow import PfOptions
from .topology import candidate_toggles, generate_initial_candidates

ALGORITHMS = ("hc", "ils", "ga", "pso", "gwo", "fwa")

DEFAULT_PARAMS: dict[str, dict] = {
    "hc": {},
    "ils": {"perturb_k": 3, "accept_equal": True},
    "ga": {"pop_size": 50, "tournament": 3, "cx_prob": 0.5, "mut_prob": None, "elitism": 1},
    "pso": {"particles": 30, "inertia": 0.72, "cognitive": 1.49, "social": 1.49, "v_max": 6.0},
    "gwo": {"wolves": 30},
    "fwa": {
        "fireworks": 5,
        "spark_min": 2,
        "spark_max": 20,
        "amp_frac": 0.25,
        "gauss_frac": 0.1,
    },
}


@dataclass
class Problem:
    grid: Grid
    load_cases: list[LoadCase]
    catalog: MeasureCatalog
    pf_opts: PfOptions = field(default_factory=PfOptions)
    initial_candidates: list[np.ndarray] | None = None
    cost_scale_eur: float = 1e6


@dataclass(frozen=True)
class Budget:
    """Termination limits; at least one must be set.

    pf_limit caps the number of evaluations that reach the power-flow stage
    (i.e. pass the connection check), which makes runs with very different
    topology-rejection rates comparable.
    """

    time_limit_s: float | None = None
    eval_limit: int | None = None
    pf_limit: int | None = None

    def validate(self) -> None:
        limits = (self.time_limit_s, self.eval_limit, self.pf_limit)
        if all(v is None for v in limits):
            raise ConfigError("budget needs at least one of time_limit_s/eval_limit/pf_limit")
        for name, v in zip(("time_limit_s", "eval_limit", "pf_limit"), limits):
            if v is not None and v < 0:
                raise ConfigError(f"budget {name} must be >= 0, got {v}")

    def is_zero(self) -> bool:
        return (
            self.time_limit_s == 0 or self.eval_limit == 0 or self.pf_limit == 0
        )


@dataclass(frozen=True)
class TrajectoryPoint:
    eval_count: int
    elapsed_s: float
    level: int
    raw_cost: float
    normalized: float
    candidate_hash: str


@dataclass
class RunRecord:
    algorithm: str
    seed: int
    catalog_size: int
    budget: Budget
    params: dict
    cost_scale_eur: float = 1e6
    trajectory: list[TrajectoryPoint] = field(default_factory=list)
    best_candidate: np.ndarray | None = None
    best_result: EvaluationResult | None = None
    eval_counts: dict[str, int] = field(default_factory=lambda: {"topology": 0, "powerflow": 0, "cost": 0})
    eval_times: dict[str, float] = field(default_factory=lambda: {"topology": 0.0, "powerflow": 0.0, "cost": 0.0})
    total_evals: int = 0
    init_time_s: float = 0.0
    total_time_s: float = 0.0
    time_to_best_s: float = 0.0
    evals_to_best: int = 0
    flags: list[str] = field(default_factory=list)


class BudgetExhausted(Exception):
    """Internal control flow: raised before an evaluation would exceed the budget."""


class _RunContext:
    """Budget-aware evaluation wrapper; archives the best result found."""

    def __init__(self, evaluator: Evaluator, budget: Budget, record: RunRecord, t0: float):
        self.evaluator = evaluator
        self.budget = budget
        self.record = record
        self.t0 = t0
        self.pf_stage_evals = 0

    def elapsed(self) -> float:
        return time.perf_counter() - self.t0

    def check_budget(self) -> None:
        b = self.budget
        if b.eval_limit is not None and self.record.total_evals >= b.eval_limit:
            raise BudgetExhausted
        if b.pf_limit is not None and self.pf_stage_evals >= b.pf_limit:
            raise BudgetExhausted
        if b.time_limit_s is not None and self.elapsed() >= b.time_limit_s:
            raise BudgetExhausted

    def progress(self) -> float:
        """Fraction of the tightest budget consumed, in [0, 1]."""
        b = self.budget
        fractions = [0.0]
        if b.eval_limit:
            fractions.append(self.record.total_evals / b.eval_limit)
        if b.pf_limit:
            fractions.append(self.pf_stage_evals / b.pf_limit)
        if b.time_limit_s:
            fractions.append(self.elapsed() / b.time_limit_s)
        return min(1.0, max(fractions))

    def evaluate(self, bits: np.ndarray) -> EvaluationResult:
        self.check_budget()
        t = time.perf_counter()
        result = self.evaluator.evaluate(bits)
        dt = time.perf_counter() - t

        rec = self.record
        rec.total_evals += 1
        rec.eval_counts[result.eval_class] += 1
        rec.eval_times[result.eval_class] += dt
        if result.eval_class != TOPOLOGY:
            self.pf_stage_evals += 1

        if rec.best_result is None or compare_lex(result, rec.best_result) < 0:
            rec.best_result = result
            rec.best_candidate = np.array(bits, dtype=np.uint8)
            rec.time_to_best_s = self.elapsed()
            rec.evals_to_best = rec.total_evals
            rec.trajectory.append(
                TrajectoryPoint(
                    eval_count=rec.total_evals,
                    elapsed_s=rec.time_to_best_s,
                    level=result.level,
                    raw_cost=result.raw_cost,
                    normalized=result.normalized,
                    candidate_hash=candidate_hash(bits),
                )
            )
        return result


def single_bit_neighbors(candidate: np.ndarray, rng: np.random.Generator):
    """All candidates at Hamming distance 1, in a seeded random order."""
    bits = np.asarray(candidate, dtype=np.uint8)
    for i in rng.permutation(len(bits)):
        neighbor = bits.copy()
        neighbor[i] ^= 1
        yield neighbor


def perturb(candidate: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Flip k distinct uniformly chosen bits."""
    bits = np.asarray(candidate, dtype=np.uint8)
    if not 1 <= k <= len(bits):
        raise ValueError(f"flip count k={k} out of range [1, {len(bits)}]")
    out = bits.copy()
    idx = rng.choice(len(bits), size=k, replace=False)
    out[idx] ^= 1
    return out


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


# --- exploitative strategies -------------------------------------------------


def _hill_climb(ctx: _RunContext, rng, bits, result):
    """First-improvement descent; returns (bits, result, at_local_optimum)."""
    while True:
        moved = False
        for neighbor in single_bit_neighbors(bits, rng):
            r = ctx.evaluate(neighbor)
            if compare_lex(r, result) < 0:
                bits, result = neighbor, r
                moved = True
                break
        if not moved:
            return bits, result, True


def _run_hc(ctx, problem, params, rng, start):
    result = ctx.evaluate(start)
    _, _, at_optimum = _hill_climb(ctx, rng, start, result)
    if at_optimum:
        ctx.record.flags.append("hc_local_optimum")


def _run_ils(ctx, problem, params, rng, start):
    k = int(params["perturb_k"])
    accept_equal = bool(params["accept_equal"])
    result = ctx.evaluate(start)
    bits, result, _ = _hill_climb(ctx, rng, start, result)
    if len(bits) == 0:
        return
    k = min(max(k, 1), len(bits))
    while True:
        cand = perturb(bits, k, rng)
        cand_res = ctx.evaluate(cand)
        cand, cand_res, _ = _hill_climb(ctx, rng, cand, cand_res)
        cmp = compare_lex(cand_res, result)
        if cmp < 0 or (accept_equal and cmp == 0):
            bits, result = cand, cand_res


# --- population strategies ---------------------------------------------------


def _population(initial: list[np.ndarray], size: int, m: int) -> list[np.ndarray]:
    if not initial:
        initial = [np.zeros(m, dtype=np.uint8)]
    return [initial[i % len(initial)].copy() for i in range(size)]


def _run_ga(ctx, problem, params, rng, initial):
    m = problem.catalog.size
    pop_size = int(params["pop_size"])
    t_size = int(params["tournament"])
    cx_prob = float(params["cx_prob"])
    mut_prob = params["mut_prob"]
    mut_prob = (1.0 / m if m else 0.0) if mut_prob is None else float(mut_prob)
    elitism = int(params["elitism"])

    pop = _population(initial, pop_size, m)
    fits = [ctx.evaluate(ind).normalized for ind in pop]

    def tournament():
        idx = rng.integers(0, pop_size, size=t_size)
        return pop[min(idx, key=lambda i: fits[i])]

    while True:
        elite = sorted(range(pop_size), key=lambda i: fits[i])[:elitism]
        new_pop = [pop[i].copy() for i in elite]
        new_fits = [fits[i] for i in elite]
        while len(new_pop) < pop_size:
            a, b = tournament(), tournament()
            mask = rng.random(m) < cx_prob
            child = np.where(mask, a, b).astype(np.uint8)
            flip = rng.random(m) < mut_prob
            child[flip] ^= 1
            new_fits.append(ctx.evaluate(child).normalized)
            new_pop.append(child)
        pop, fits = new_pop, new_fits


def _run_pso(ctx, problem, params, rng, initial):
    m = problem.catalog.size
    n = int(params["particles"])
    w = float(params["inertia"])
    c1 = float(params["cognitive"])
    c2 = float(params["social"])
    v_max = float(params["v_max"])

    pos = _population(initial, n, m)
    vel = [np.zeros(m) for _ in range(n)]
    pbest = [p.copy() for p in pos]
    pbest_fit = [ctx.evaluate(p).normalized for p in pos]
    g = int(np.argmin(pbest_fit))
    gbest, gbest_fit = pbest[g].copy(), pbest_fit[g]

    while True:
        for i in range(n):
            r1 = rng.random(m)
            r2 = rng.random(m)
            vel[i] = (
                w * vel[i]
                + c1 * r1 * (pbest[i].astype(float) - pos[i].astype(float))
                + c2 * r2 * (gbest.astype(float) - pos[i].astype(float))
            )
            np.clip(vel[i], -v_max, v_max, out=vel[i])
            pos[i] = (rng.random(m) < _sigmoid(vel[i])).astype(np.uint8)
            fit = ctx.evaluate(pos[i]).normalized
            if fit < pbest_fit[i]:
                pbest[i], pbest_fit[i] = pos[i].copy(), fit
                if fit < gbest_fit:
                    gbest, gbest_fit = pos[i].copy(), fit


def _run_gwo(ctx, problem, params, rng, initial):
    m = problem.catalog.size
    n = int(params["wolves"])

    bits = _population(initial, n, m)
    pos = [b.astype(float) for b in bits]
    fits = [ctx.evaluate(b).normalized for b in bits]

    while True:
        order = sorted(range(n), key=lambda i: fits[i])
        leaders = [pos[order[i % len(order)]].copy() for i in range(3)]
        a = 2.0 * (1.0 - ctx.progress())
        for i in range(n):
            x_new = np.zeros(m)
            for lead in leaders:
                a1 = a * (2.0 * rng.random(m) - 1.0)
                c1 = 2.0 * rng.random(m)
                x_new += lead - a1 * np.abs(c1 * lead - pos[i])
            x_new /= 3.0
            b = (rng.random(m) < _sigmoid(10.0 * (x_new - 0.5))).astype(np.uint8)
            fits[i] = ctx.evaluate(b).normalized
            pos[i] = x_new
            bits[i] = b


def _run_fwa(ctx, problem, params, rng, initial):
    m = problem.catalog.size
    n = int(params["fireworks"])
    s_min = int(params["spark_min"])
    s_max = int(params["spark_max"])
    amp_frac = float(params["amp_frac"])
    gauss_k = max(1, int(m * float(params["gauss_frac"])))

    works = _population(initial, n, m)
    fits = [ctx.evaluate(w).normalized for w in works]

    while True:
        worst, best = max(fits), min(fits)
        span = worst - best + 1e-12
        order = sorted(range(n), key=lambda i: fits[i])
        rank_of = {idx: r for r, idx in enumerate(order, start=1)}

        pool = list(zip(works, fits))
        for i in range(n):
            quality = (worst - fits[i]) / span
            n_sparks = s_min + int(round(quality * (s_max - s_min)))
            # worse fireworks explode wider (more bits flipped)
            amplitude = max(1, int(round(m * amp_frac * rank_of[i] / n)))
            for _ in range(n_sparks):
                spark = perturb(works[i], min(amplitude, m), rng)
                pool.append((spark, ctx.evaluate(spark).normalized))
            gauss = perturb(works[i], min(gauss_k, m), rng)
            pool.append((gauss, ctx.evaluate(gauss).normalized))

        pool.sort(key=lambda t: t[1])
        keep = [pool[0]]
        rest = pool[1:]
        pick = rng.choice(len(rest), size=min(n - 1, len(rest)), replace=False)
        keep.extend(rest[int(i)] for i in pick)
        works = [w.copy() for w, _ in keep]
        fits = [f for _, f in keep]


_ALGO_FNS = {
    "hc": _run_hc,
    "ils": _run_ils,
    "ga": _run_ga,
    "pso": _run_pso,
    "gwo": _run_gwo,
    "fwa": _run_fwa,
}

_POPULATION_SIZES = {"ga": "pop_size", "pso": "particles", "gwo": "wolves", "fwa": "fireworks"}


def resolve_params(algo: str, overrides: dict | None = None) -> dict:
    if algo not in ALGORITHMS:
        raise ConfigError(f"unknown algorithm {algo!r}; expected one of {ALGORITHMS}")
    params = dict(DEFAULT_PARAMS[algo])
    for key, value in (overrides or {}).items():
        if key not in params:
            raise ConfigError(f"unknown parameter {key!r} for algorithm {algo!r}")
        params[key] = value
    return params


def _initial_bit_candidates(problem: Problem, n: int, rng) -> list[np.ndarray]:
    """Spanning-tree switching states encoded as SWITCH-measure bit vectors."""
    if problem.initial_candidates is not None:
        return [np.asarray(c, dtype=np.uint8) for c in problem.initial_candidates]
    bit_of_switch = {
        meas.switch: meas.index for meas in problem.catalog.measures if meas.kind == SWITCH
    }
    states = generate_initial_candidates(
        problem.grid, problem.load_cases, n, rng, problem.pf_opts
    )
    out = []
    for switching in states:
        bits = np.zeros(problem.catalog.size, dtype=np.uint8)
        for sw in candidate_toggles(problem.grid, switching):
            if sw in bit_of_switch:
                bits[bit_of_switch[sw]] = 1
        out.append(bits)
    return out


def run_heuristic(
    algo: str,
    problem: Problem,
    budget: Budget,
    seed: int,
    params: dict | None = None,
) -> RunRecord:
    """Run one seeded search and return its trajectory record.

    Raises ConfigError for invalid setups and InfeasibleError when no initial
    candidate can be generated; a zero budget yields an empty record flagged
    "no_evaluation".
    """
    params = resolve_params(algo, params)
    budget.validate()
    record = RunRecord(
        algorithm=algo,
        seed=seed,
        catalog_size=problem.catalog.size,
        budget=budget,
        params=dict(params),
        cost_scale_eur=problem.cost_scale_eur,
    )
    if budget.is_zero():
        record.flags.append("no_evaluation")
        return record

    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    evaluator = Evaluator(
        problem.grid,
        problem.load_cases,
        problem.catalog,
        problem.pf_opts,
        problem.cost_scale_eur,
    )

    empty = np.zeros(problem.catalog.size, dtype=np.uint8)
    if algo in _POPULATION_SIZES:
        pop_n = int(params[_POPULATION_SIZES[algo]])
        initial = _initial_bit_candidates(problem, pop_n, rng)
    else:
        initial = []
    record.init_time_s = time.perf_counter() - t0

    ctx = _RunContext(evaluator, budget, record, t0)
    try:
        # the as-is grid is always the first point of comparison
        if algo in ("hc", "ils"):
            _ALGO_FNS[algo](ctx, problem, params, rng, empty)
        else:
            ctx.evaluate(empty)
            _ALGO_FNS[algo](ctx, problem, params, rng, initial)
    except BudgetExhausted:
        pass
    record.total_time_s = time.perf_counter() - t0
    return record
