"""Population-based search over individual violation rates.

Individuals are rate vectors on the scaled simplex
``{eps : eps_lower <= eps_i <= cap_i, sum(eps) = eps_joint}``; fitness is the
optimal DR-JCC cost (``inf`` when infeasible).  Each generation keeps the
better half, breeds offspring by averaging random elite pairs, mutates them
with half-normal kicks followed by renormalisation, and keeps the best
``N_p`` of elite and offspring.
"""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import conic
from .drjcc import DEFAULT_EPS_LOWER, N_CONSTRAINTS, RateConfigError, RateVector, bonferroni_allocate, solve_drjcc
from .uncertainty import ambiguity_set

logger = logging.getLogger(__name__)

AGREEMENT_TOL = 0.01


class EvolutionError(RuntimeError):
    """The search cannot proceed (e.g. no feasible individual)."""


class EvaluationError(RuntimeError):
    """A fitness evaluation failed for a reason other than infeasibility."""

    def __init__(self, index: int, status: str):
        super().__init__(f"individual {index}: solver returned {status!r}")
        self.index = index
        self.status = status


@dataclass(frozen=True)
class EvoConfig:
    population: int = 6
    max_iters: int = 10
    sigma_m: float = 0.1
    r_thr: float = 0.02
    seed: int = 0
    restarts: int = 10
    workers: int = 1
    inject_baseline: bool = True

    def __post_init__(self):
        if self.population < 2 or self.population % 2:
            raise ValueError("population must be even and at least 2")
        if self.sigma_m <= 0 or self.r_thr <= 0:
            raise ValueError("sigma_m and r_thr must be positive")
        if self.max_iters < 1 or self.restarts < 1:
            raise ValueError("max_iters and restarts must be at least 1")


@dataclass
class Individual:
    eps: np.ndarray
    fitness: float = math.inf


@dataclass
class Bounds:
    """Per-coordinate box ``[lower, cap_i]`` and the simplex total."""

    eps_joint: float
    lower: float
    caps: np.ndarray

    @classmethod
    def for_set(cls, spec, eps_joint: float, eps_lower: float = DEFAULT_EPS_LOWER, eps_upper=None) -> "Bounds":
        upper = eps_joint if eps_upper is None else eps_upper
        # stay strictly inside the open lambda domain
        dom = ambiguity_set(spec).eps_max * (1.0 - 1e-9)
        caps = np.full(N_CONSTRAINTS, min(upper, dom))
        b = cls(eps_joint, eps_lower, caps)
        b.check()
        return b

    def check(self):
        n = self.caps.size
        if n * self.lower > self.eps_joint * (1 + 1e-12):
            raise RateConfigError(f"empty rate simplex: {n} x {self.lower} exceeds eps_joint {self.eps_joint}")
        if self.caps.sum() < self.eps_joint * (1 - 1e-12):
            raise RateConfigError(f"caps sum {self.caps.sum():.6g} below eps_joint {self.eps_joint}")

    def rates(self, eps) -> RateVector:
        return RateVector(tuple(eps), self.eps_joint, self.lower, float(self.caps.max()))


def project(eps, bounds: Bounds) -> np.ndarray | None:
    """Rescale to the simplex total, then clip and redistribute proportionally.

    Returns ``None`` when the clipped mass cannot be placed.
    """
    x = np.asarray(eps, dtype=float).copy()
    lo, hi, total = bounds.lower, bounds.caps, bounds.eps_joint
    s = x.sum()
    if s <= 0:
        return None
    x *= total / s
    fixed = np.zeros(x.size, dtype=bool)
    for _ in range(4 * x.size):
        under, over = (x < lo) & ~fixed, (x > hi) & ~fixed
        if not (under.any() or over.any()):
            break
        x[under] = lo
        x[over] = hi[over]
        fixed |= under | over
        free = ~fixed
        excess = total - x.sum()
        if not free.any() or x[free].sum() <= 0:
            return None
        x[free] += excess * x[free] / x[free].sum()
    else:  # pragma: no cover - bounded by the coordinate count
        return None
    if np.any(x < lo - 1e-15) or np.any(x > hi + 1e-15):
        return None
    # exact sum on the largest free coordinate
    free = np.flatnonzero((x > lo) & (x < hi))
    if free.size:
        j = free[np.argmax(x[free])]
        x[j] += total - x.sum()
    return x


def init_population(config: EvoConfig, bounds: Bounds, rng: np.random.Generator, baseline=None) -> list[Individual]:
    """Uniform draws on the scaled simplex, optionally led by ``baseline``."""
    bounds.check()
    n = bounds.caps.size
    slack = bounds.eps_joint - n * bounds.lower
    pop = []
    if baseline is not None:
        pop.append(Individual(np.asarray(baseline, dtype=float).copy()))
    while len(pop) < config.population:
        if slack <= bounds.eps_joint * 1e-12:
            x = np.full(n, bounds.eps_joint / n)
        else:
            x = project(bounds.lower + slack * rng.dirichlet(np.ones(n)), bounds)
            if x is None:
                continue
        pop.append(Individual(x))
    return pop


def select_elite(fitness) -> list[int]:
    """Indices of the better half; stable, so ties keep insertion order and ``inf`` sorts last."""
    f = np.asarray(fitness, dtype=float)
    order = np.argsort(f, kind="stable")
    return [int(i) for i in order[: f.size // 2]]


def crossover(a, b) -> np.ndarray:
    return 0.5 * (np.asarray(a, dtype=float) + np.asarray(b, dtype=float))


def mutate(child, config: EvoConfig, bounds: Bounds, rng: np.random.Generator, parents_distinct: bool = True):
    """Half-normal kicks, renormalisation and bound repair.

    The child is returned unchanged when the parents coincide or when the
    repaired vector cannot satisfy the bounds.
    """
    child = np.asarray(child, dtype=float)
    if not parents_distinct:
        return child.copy()
    theta = rng.normal(0.0, config.sigma_m, child.size)
    out = project(child + np.maximum(theta, 0.0), bounds)
    return child.copy() if out is None else out


def converged(fitness, r_thr: float) -> bool:
    f = np.asarray(fitness, dtype=float)
    if not np.all(np.isfinite(f)):
        return False
    return ratio(f) <= r_thr


def ratio(fitness) -> float:
    """Spread indicator ``max / mean - 1`` (``inf`` with infeasible members)."""
    f = np.asarray(fitness, dtype=float)
    if not np.all(np.isfinite(f)):
        return math.inf
    mean = f.mean()
    if mean == 0:
        return 0.0
    return float(f.max() / mean - 1.0)


class FitnessCache:
    """Memoised, optionally concurrent fitness evaluation."""

    def __init__(self, fn, workers: int = 1):
        self.fn = fn
        self.workers = workers
        self.cache: dict[tuple, float] = {}
        self.calls = 0

    def __call__(self, population: list[Individual]) -> list[float]:
        keys = [tuple(np.asarray(ind.eps, dtype=float).tolist()) for ind in population]
        todo = [k for k in dict.fromkeys(keys) if k not in self.cache]
        if todo:
            if self.workers > 1 and len(todo) > 1:
                with ThreadPoolExecutor(self.workers) as pool:
                    results = list(pool.map(self._one, todo))
            else:
                results = [self._one(k) for k in todo]
            for k, (val, status) in zip(todo, results):
                if val is None:
                    raise EvaluationError(keys.index(k), status)
                self.cache[k] = val
        out = [self.cache[k] for k in keys]
        for ind, val in zip(population, out):
            ind.fitness = val
        return out

    def _one(self, key):
        self.calls += 1
        res = self.fn(np.array(key))
        if isinstance(res, tuple):
            return res
        return float(res), "ok"


def evaluate(population: list[Individual], fitness_fn, workers: int = 1) -> list[float]:
    """Assign fitness to every individual; ``fitness_fn`` may be a shared :class:`FitnessCache`."""
    cache = fitness_fn if isinstance(fitness_fn, FitnessCache) else FitnessCache(fitness_fn, workers)
    return cache(population)


@dataclass
class GenerationRecord:
    iteration: int
    best_cost: float
    mean_cost: float
    r_ratio: float


@dataclass
class RunResult:
    best: Individual
    history: list[GenerationRecord]
    seed_entropy: int
    converged: bool


@dataclass
class EvoResult:
    best_rates: RateVector
    best_cost: float
    history: list[GenerationRecord]
    runs: list[RunResult] = field(default_factory=list)
    status: str = "ok"  # or "warning" when restarts disagree
    baseline_cost: float = math.nan
    evaluations: int = 0

    @property
    def spread(self) -> float:
        costs = [r.best.fitness for r in self.runs if math.isfinite(r.best.fitness)]
        if len(costs) < 2:
            return 0.0
        return (max(costs) - min(costs)) / min(costs) if min(costs) > 0 else max(costs) - min(costs)

    def to_json(self) -> dict:
        return {
            "best_rates": self.best_rates.to_json(),
            "best_cost": self.best_cost,
            "baseline_cost": self.baseline_cost,
            "status": self.status,
            "spread": self.spread,
            "evaluations": self.evaluations,
            "restarts": [
                {"best_cost": r.best.fitness, "eps": r.best.eps.tolist(), "iterations": len(r.history) - 1,
                 "converged": r.converged}
                for r in self.runs
            ],
        }


def run_once(fitness: FitnessCache, config: EvoConfig, bounds: Bounds, rng: np.random.Generator,
             baseline=None) -> RunResult:
    """One pass of the generational loop."""
    pop = init_population(config, bounds, rng, baseline)
    fit = fitness(pop)
    if not any(math.isfinite(f) for f in fit):
        raise EvolutionError("every individual of the initial population is infeasible; "
                             "relax eps_joint or the lower bound")
    history = [_record(0, fit)]
    done = converged(fit, config.r_thr)
    it = 0
    while not done and it < config.max_iters:
        it += 1
        elite = [pop[i] for i in select_elite(fit)]
        children = []
        for _ in range(config.population - len(elite)):
            if len(elite) >= 2:
                a, b = rng.choice(len(elite), size=2, replace=False)
                pa, pb = elite[a].eps, elite[b].eps
            else:
                pa = pb = elite[0].eps
            child = crossover(pa, pb)
            child = mutate(child, config, bounds, rng, parents_distinct=not np.array_equal(pa, pb))
            children.append(Individual(child))
        fitness(children)
        merged = elite + children
        order = np.argsort([ind.fitness for ind in merged], kind="stable")[: config.population]
        pop = [merged[i] for i in order]
        fit = [ind.fitness for ind in pop]
        history.append(_record(it, fit))
        done = converged(fit, config.r_thr)
    best = min(pop, key=lambda ind: ind.fitness)
    return RunResult(Individual(best.eps.copy(), best.fitness), history, 0, done)


def _record(it, fit) -> GenerationRecord:
    f = np.asarray(fit, dtype=float)
    finite = f[np.isfinite(f)]
    best = float(finite.min()) if finite.size else math.inf
    mean = float(f.mean()) if np.all(np.isfinite(f)) else math.inf
    return GenerationRecord(it, best, mean, ratio(f))


def optimize_rates(fitness_fn, eps_joint: float, config: EvoConfig | None = None, spec="unimodal",
                   eps_lower: float = DEFAULT_EPS_LOWER, eps_upper=None) -> EvoResult:
    """Run the search ``config.restarts`` times and return the overall best.

    ``fitness_fn`` maps a rate array to a cost (``inf`` when infeasible) or to
    ``(None, status)`` on solver failure.  Restarts whose best costs spread by
    more than 1% mark the result with ``status="warning"``.
    """
    config = config or EvoConfig()
    bounds = Bounds.for_set(spec, eps_joint, eps_lower, eps_upper)
    fitness = fitness_fn if isinstance(fitness_fn, FitnessCache) else FitnessCache(fitness_fn, config.workers)
    baseline = None
    if config.inject_baseline:
        baseline = np.array(bonferroni_allocate(eps_joint, eps_lower=eps_lower).eps)
        if np.any(baseline > bounds.caps):
            baseline = None
    base_cost = fitness([Individual(baseline)])[0] if baseline is not None else math.nan
    runs = []
    for k, ss in enumerate(np.random.SeedSequence(config.seed).spawn(config.restarts)):
        run = run_once(fitness, config, bounds, np.random.default_rng(ss), baseline)
        run.seed_entropy = k
        runs.append(run)
    best_run = min(runs, key=lambda r: r.best.fitness)
    result = EvoResult(bounds.rates(best_run.best.eps), best_run.best.fitness, best_run.history, runs,
                       baseline_cost=base_cost, evaluations=fitness.calls)
    if result.spread > AGREEMENT_TOL:
        result.status = "warning"
        logger.warning("restart best costs disagree by %.2f%% (> %.0f%%)", 100 * result.spread,
                       100 * AGREEMENT_TOL)
    return result


def drjcc_fitness(case, moments, spec, eps_joint: float, eps_lower: float = DEFAULT_EPS_LOWER, sensitivity=None,
                  **solve_kw):
    """Fitness function backed by :func:`mgjcc.drjcc.solve_drjcc`."""
    def fn(eps):
        rates = RateVector(tuple(eps), eps_joint, eps_lower)
        sol = solve_drjcc(case, moments, spec, rates, sensitivity, **solve_kw)
        if sol.status in (conic.OPTIMAL, conic.INFEASIBLE):
            return sol.cost, sol.status
        return None, sol.status

    return fn


def write_history(path, history: list[GenerationRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "best_cost", "mean_cost", "r_ratio"])
        for rec in history:
            w.writerow([rec.iteration, repr(rec.best_cost), repr(rec.mean_cost), repr(rec.r_ratio)])
