"""Out-of-sample robustness testing, the experiment grid and rolling re-solves.

A fixed schedule is replayed against realized forecast errors one interval at
a time.  Positive total error (PV shortfall) is covered by the storages in
proportion to their droop coefficients; a PV surplus is curtailed and the
storages stay idle.  An interval counts as a no-violation case only when all
six uncertain constraint families hold.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .drjcc import METHODS, RateVector, bonferroni_allocate, scc_allocate, solve_drjcc
from .evo import EvoConfig, EvolutionError, drjcc_fitness, optimize_rates
from .netmodel import FlowSensitivity, linearize
from .opf import (BatteryArrays, Case, HorizonData, ModelError, Schedule, UNCERTAIN_FAMILIES, build_model,
                  solve_model)
from .uncertainty import AmbiguityDomainError, ErrorMoments, ErrorSampleSet, ambiguity_set, estimate_moments

logger = logging.getLogger(__name__)

REPORT_SCHEMA = "mgjcc.report/1"
TRACE_SCHEMA = "mgjcc.rolling/1"
SETS = ("symmetric", "unimodal", "unimodal_symmetric")
GRID_EPS = (0.05, 0.02, 0.01)
REPLAY_TOL = 1e-7


class DataIntegrityError(ValueError):
    """Held-out samples overlap the samples used to build the ambiguity set."""


# -- replay ------------------------------------------------------------------------------

def _as_samples(zeta, n_pv: int) -> np.ndarray:
    z = np.asarray(zeta, dtype=float)
    if z.ndim == 1:
        z = z[None]
    if z.ndim != 2 or z.shape[1] != n_pv:
        raise ValueError(f"realized errors must have shape (n_pv,) or (N, n_pv) with n_pv={n_pv}, got {z.shape}")
    return z


def droop_response(droop: np.ndarray, zeta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Storage response and PV curtailment for error samples ``zeta`` (N, n_pv).

    Returns ``(response (N, S), curtailment (N, n_pv))``.  A surplus is
    curtailed at the buses that produced it, pro rata to the local surplus.
    """
    total = zeta.sum(axis=1)
    short = total > 0
    response = np.where(short[:, None], droop[None, :] * total[:, None], 0.0)
    surplus = np.maximum(-zeta, 0.0)
    denom = surplus.sum(axis=1)
    share = np.divide(surplus, denom[:, None], out=np.zeros_like(surplus), where=denom[:, None] > 0)
    curtail = np.where(short[:, None], 0.0, share * (-total)[:, None])
    return response, curtail


def replay(schedule: Schedule, case: Case, zeta, t: int, sensitivity: FlowSensitivity | None = None,
           tol: float = REPLAY_TOL) -> np.ndarray:
    """Violation flags ``(N, 6)`` of the uncertain families at interval ``t``.

    Parameters
    ----------
    schedule : Schedule
        Fixed dispatch; the island scenario is followed inside the blackout.
    case : Case
        Supplies the network and the storage ratings.
    zeta : array (n_pv,) or (N, n_pv)
        Realized forecast errors in kW (positive means less PV than forecast).
    t : int
        Interval index.
    """
    net = case.network
    z = _as_samples(zeta, net.n_pv)
    T = schedule.grid.pg.shape[0]
    if not 0 <= t < T:
        raise ValueError(f"interval {t} outside the schedule horizon 0..{T - 1}")
    sens = sensitivity if sensitivity is not None else linearize(net)
    bat = BatteryArrays(case.batteries())
    d = schedule.active(t)
    response, curtail = droop_response(d.droop[t], z)
    flags = np.zeros((z.shape[0], len(UNCERTAIN_FAMILIES)), dtype=bool)
    flags[:, 0] = np.any(response > d.rup[t] + tol, axis=1)
    flags[:, 1] = np.any(d.pd[t] + response > bat.pd_max + tol, axis=1)
    flags[:, 2] = np.any(response > bat.pc_max + tol, axis=1)
    flags[:, 3] = np.any(d.soc[t] - response * schedule.dt < bat.e_min - tol, axis=1)
    p = np.zeros((z.shape[0], net.bus_count))
    p[:, net.grid_bus] += d.pg[t]
    np.add.at(p, (slice(None), list(net.storage_bus)), d.pd[t] - d.pc[t] + response)
    np.add.at(p, (slice(None), list(net.pv_bus)), d.pv[t] - z - curtail)
    np.add.at(p, (slice(None), list(net.load_bus)), -d.load[t])
    v = sens.voltages(p)[:, sens.buses]
    flags[:, 4] = np.any(v > net.v_max + tol, axis=1)
    flags[:, 5] = np.any(v < net.v_min - tol, axis=1)
    return flags


def replay_days(schedule: Schedule, case: Case, zeta, sensitivity=None, tol: float = REPLAY_TOL) -> np.ndarray:
    """Flags ``(days, T, 6)`` for errors ``zeta`` of shape ``(days, T, n_pv)``."""
    z = np.asarray(zeta, dtype=float)
    T = schedule.grid.pg.shape[0]
    if z.ndim != 3 or z.shape[1] != T or z.shape[2] != case.network.n_pv:
        raise ValueError(f"errors must have shape (days, {T}, {case.network.n_pv}), got {z.shape}")
    sens = sensitivity if sensitivity is not None else linearize(case.network)
    return np.stack([replay(schedule, case, z[:, t], t, sens, tol) for t in range(T)], axis=1)


def daily_reliability(flags) -> np.ndarray:
    """Percentage of no-violation intervals per simulated day.

    ``flags`` is a boolean no-violation array ``(days, T)``, or violation flags
    ``(days, T, families)`` from :func:`replay_days`.
    """
    f = np.asarray(flags, dtype=bool)
    if f.size == 0:
        raise ValueError("no replay flags to summarise")
    ok = ~f.any(axis=2) if f.ndim == 3 else f
    if ok.ndim != 2:
        raise ValueError("flags must be (days, intervals) or (days, intervals, families)")
    return 100.0 * ok.mean(axis=1)


def wilson_interval(successes: int, n: int, z: float = 1.959963984540054) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if n <= 0:
        raise ValueError("need at least one trial")
    p = successes / n
    den = 1.0 + z * z / n
    mid = (p + z * z / (2 * n)) / den
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    return max(0.0, mid - half), min(1.0, mid + half)


@dataclass
class ReliabilityReport:
    method: str
    set: str
    eps_joint: float
    ok: np.ndarray | None = None  # (days, T) no-violation flags
    family_counts: dict = field(default_factory=dict)
    cost: float = math.nan
    status: str = "ok"
    error: str = ""
    rates: tuple = ()

    def __post_init__(self):
        if self.ok is not None:
            self.ok = np.asarray(self.ok, dtype=bool)
            if self.ok.ndim != 2 or self.ok.size == 0:
                raise ValueError("no-violation flags must be a non-empty (days, T) array")

    @classmethod
    def from_flags(cls, method, set_kind, eps_joint, flags, **kw) -> "ReliabilityReport":
        flags = np.asarray(flags, dtype=bool)
        counts = {fam: int(flags[..., k].sum()) for k, fam in enumerate(UNCERTAIN_FAMILIES)}
        return cls(method, set_kind, float(eps_joint), ~flags.any(axis=2), counts, **kw)

    @property
    def target(self) -> float:
        return 100.0 * (1.0 - self.eps_joint)

    @property
    def daily(self) -> np.ndarray:
        return daily_reliability(self.ok) if self.ok is not None else np.zeros(0)

    @property
    def mean(self) -> float:
        return float(self.daily.mean()) if self.ok is not None else math.nan

    def wilson(self) -> tuple[float, float]:
        """95% interval on the pooled no-violation fraction, in percent."""
        if self.ok is None:
            return math.nan, math.nan
        lo, hi = wilson_interval(int(self.ok.sum()), int(self.ok.size))
        return 100.0 * lo, 100.0 * hi

    @property
    def key(self) -> tuple:
        return (self.set, self.eps_joint, self.method)

    def to_json(self) -> dict:
        lo, hi = self.wilson()
        return {
            "schema": REPORT_SCHEMA,
            "method": self.method,
            "set": self.set,
            "eps_joint": self.eps_joint,
            "target": self.target,
            "status": self.status,
            "error": self.error,
            "cost": self.cost,
            "rates": list(self.rates),
            "daily_reliability": self.daily.tolist(),
            "mean": self.mean,
            "wilson_95": [lo, hi],
            "per_family_counts": self.family_counts,
            "days": 0 if self.ok is None else int(self.ok.shape[0]),
            "intervals": 0 if self.ok is None else int(self.ok.shape[1]),
        }

    def write(self, out_dir, stem: str | None = None) -> tuple[Path, Path]:
        """Write ``<stem>.json`` and a boxplot-ready ``<stem>.csv``."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        stem = stem or f"{self.method}_{self.set}_{self.eps_joint:g}"
        jp, cp = out / f"{stem}.json", out / f"{stem}.csv"
        jp.write_text(json.dumps(self.to_json(), indent=1, sort_keys=True) + "\n")
        with open(cp, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["method", "set", "eps_joint", "day", "reliability"])
            for day, r in enumerate(self.daily):
                w.writerow([self.method, self.set, f"{self.eps_joint:g}", day, f"{r:.6f}"])
        return jp, cp


def simulate(schedule: Schedule, case: Case, heldout: ErrorSampleSet, method: str = "", set_kind: str = "",
             eps_joint: float = math.nan, sensitivity=None, fit: ErrorSampleSet | None = None) -> ReliabilityReport:
    """Replay every held-out day against ``schedule``."""
    if fit is not None:
        check_disjoint(fit, heldout)
    T = schedule.grid.pg.shape[0]
    zeta = heldout.as_array(range(T))
    flags = replay_days(schedule, case, zeta, sensitivity)
    return ReliabilityReport.from_flags(method, set_kind, eps_joint, flags, cost=schedule.cost,
                                        rates=tuple(schedule.solve_info.get("rates", {}).get("eps", ())))


def check_disjoint(fit: ErrorSampleSet, heldout: ErrorSampleSet) -> None:
    shared = fit.fingerprints() & heldout.fingerprints()
    if shared:
        raise DataIntegrityError(f"{len(shared)} held-out samples also appear in the moment-estimation pool")


# -- experiment grid -----------------------------------------------------------------------

@dataclass
class CellPlan:
    set: str
    eps_joint: float
    method: str
    seed: int


@dataclass
class GridResult:
    reports: list[ReliabilityReport]
    evolution: dict = field(default_factory=dict)  # (set, eps) -> EvoResult

    def report(self, method: str, set_kind: str, eps_joint: float) -> ReliabilityReport:
        for r in self.reports:
            if r.key == (set_kind, float(eps_joint), method):
                return r
        raise KeyError((method, set_kind, eps_joint))

    def summary_rows(self) -> list[list[str]]:
        rows = []
        for r in sorted(self.reports, key=_report_order):
            lo, hi = r.wilson()
            daily = r.daily
            rows.append([r.set, f"{r.eps_joint:g}", r.method, r.status, f"{r.target:.2f}",
                         _fmt(r.mean), _fmt(daily.min() if daily.size else math.nan),
                         _fmt(daily.max() if daily.size else math.nan), _fmt(lo), _fmt(hi), _fmt(r.cost)])
        return rows

    def summary_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["set", "eps_joint", "method", "status", "target", "mean", "min", "max",
                    "wilson_lo", "wilson_hi", "cost"])
        w.writerows(self.summary_rows())
        return buf.getvalue()

    def table_csv(self) -> str:
        """Mean reliability with sets and methods as rows and eps_joint as columns."""
        eps = sorted({r.eps_joint for r in self.reports}, reverse=True)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["set", "method"] + [f"{e:g}" for e in eps])
        keys = sorted({(r.set, r.method) for r in self.reports}, key=lambda k: (_rank(SETS, k[0]), _rank(METHODS_ORDER, k[1])))
        for s, m in keys:
            w.writerow([s, m] + [_fmt(self.report(m, s, e).mean) for e in eps])
        return buf.getvalue()


METHODS_ORDER = ("bonferroni", "evolutionary", "scc")


def _rank(seq, v):
    return seq.index(v) if v in seq else len(seq)


def _report_order(r: ReliabilityReport):
    return (_rank(SETS, r.set), -r.eps_joint, _rank(METHODS_ORDER, r.method))


def _fmt(x) -> str:
    return "nan" if not math.isfinite(float(x)) else f"{float(x):.6f}"


def plan_grid(methods=METHODS, sets=SETS, eps_list=GRID_EPS, seed: int = 0) -> list[CellPlan]:
    """Cells in a fixed order; each gets its own seed derived from ``seed``."""
    cells = []
    for s in sets:
        for e in eps_list:
            for m in methods:
                if m not in METHODS:
                    raise ValueError(f"unknown method {m!r}; choose from {METHODS}")
                cells.append(CellPlan(ambiguity_set(s).kind, float(e), m, 0))
    states = np.random.SeedSequence(seed).spawn(len(cells))
    for c, ss in zip(cells, states):
        c.seed = int(ss.generate_state(1)[0])
    return cells


def schedule_cell(case: Case, moments: ErrorMoments, cell: CellPlan, evo_config: EvoConfig | None = None,
                  sensitivity=None):
    """Rates and solution for one cell; returns ``(solution, rates, evo_result)``."""
    evo_result = None
    if cell.method == "scc":
        rates = scc_allocate(cell.eps_joint)
    elif cell.method == "bonferroni":
        rates = bonferroni_allocate(cell.eps_joint)
    else:
        cfg = evo_config or EvoConfig()
        cfg = EvoConfig(**{**cfg.__dict__, "seed": cell.seed})
        fit = drjcc_fitness(case, moments, cell.set, cell.eps_joint, sensitivity=sensitivity)
        evo_result = optimize_rates(fit, cell.eps_joint, cfg, cell.set)
        rates = evo_result.best_rates
    return solve_drjcc(case, moments, cell.set, rates, sensitivity), rates, evo_result


def run_grid(case: Case, fit: ErrorSampleSet, heldout: ErrorSampleSet, methods=METHODS, sets=SETS,
             eps_list=GRID_EPS, evo_config: EvoConfig | None = None, seed: int = 0, moments=None,
             on_cell=None) -> GridResult:
    """Full factorial robustness test.

    Failing cells (domain errors, infeasibility, evolution failures) are
    recorded with a status and the remaining cells still run.
    """
    check_disjoint(fit, heldout)
    moments = moments if moments is not None else estimate_moments(fit, range(case.horizon.n_intervals))
    sens = linearize(case.network)
    reports, evolution = [], {}
    for cell in plan_grid(methods, sets, eps_list, seed):
        try:
            sol, rates, evo_result = schedule_cell(case, moments, cell, evo_config, sens)
        except (AmbiguityDomainError, EvolutionError, ValueError) as exc:
            logger.info("cell %s/%g/%s skipped: %s", cell.set, cell.eps_joint, cell.method, exc)
            rep = ReliabilityReport(cell.method, cell.set, cell.eps_joint, status="error", error=str(exc))
        else:
            if evo_result is not None:
                evolution[(cell.set, cell.eps_joint)] = evo_result
            if not sol.feasible:
                rep = ReliabilityReport(cell.method, cell.set, cell.eps_joint, status=sol.status,
                                        error=str(sol.report), rates=rates.eps)
            else:
                rep = simulate(sol.schedule, case, heldout, cell.method, cell.set, cell.eps_joint, sens)
                rep.rates = rates.eps
        reports.append(rep)
        if on_cell is not None:
            on_cell(rep)
    return GridResult(reports, evolution)


def write_grid(out_dir, result: GridResult) -> dict[str, Path]:
    out = Path(out_dir)
    (out / "reports").mkdir(parents=True, exist_ok=True)
    paths = {}
    for r in result.reports:
        r.write(out / "reports")
    paths["summary"] = out / "summary.csv"
    paths["summary"].write_text(result.summary_csv())
    paths["table"] = out / "table.csv"
    paths["table"].write_text(result.table_csv())
    return paths


# -- rolling horizon -----------------------------------------------------------------------

@dataclass
class RollingConfig:
    """How each step is solved: deterministically, or DR-JCC with fixed rates."""

    moments: ErrorMoments | None = None
    set: str = "unimodal"
    rates: RateVector | None = None
    max_steps: int | None = None


@dataclass
class RollingStep:
    t: int
    pg: float
    pd: np.ndarray
    pc: np.ndarray
    rup: np.ndarray
    droop: np.ndarray
    soc_start: np.ndarray
    soc_end: np.ndarray
    pv: np.ndarray
    load: np.ndarray
    cost: float
    status: str
    fallback: bool = False


@dataclass
class RollingTrace:
    steps: list[RollingStep]
    dt: float

    def array(self, name: str) -> np.ndarray:
        return np.array([getattr(s, name) for s in self.steps])

    @property
    def soc(self) -> np.ndarray:
        """SoC trajectory ``(steps + 1, S)``."""
        if not self.steps:
            return np.zeros((0, 0))
        return np.vstack([self.steps[0].soc_start] + [s.soc_end for s in self.steps])

    @property
    def fallbacks(self) -> int:
        return sum(s.fallback for s in self.steps)

    def to_json(self) -> dict:
        keys = ("t", "pg", "pd", "pc", "rup", "droop", "soc_start", "soc_end", "pv", "load", "cost", "status",
                "fallback")
        return {
            "schema": TRACE_SCHEMA,
            "dt": self.dt,
            "fallbacks": self.fallbacks,
            "steps": [{k: np.asarray(getattr(s, k)).tolist() if isinstance(getattr(s, k), np.ndarray)
                       else getattr(s, k) for k in keys} for s in self.steps],
        }

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "pg", "pd_total", "pc_total", "rup_total", "soc_total", "status", "fallback"])
            for s in self.steps:
                w.writerow([s.t, f"{s.pg:.9f}", f"{s.pd.sum():.9f}", f"{s.pc.sum():.9f}", f"{s.rup.sum():.9f}",
                            f"{s.soc_end.sum():.9f}", s.status, int(s.fallback)])


def _slice_moments(moments: ErrorMoments, t0: int) -> ErrorMoments:
    return ErrorMoments(moments.mean[t0:], moments.covariance[t0:])


def _solve_step(case: Case, config: RollingConfig, t0: int, sens) -> tuple[str, Schedule | None]:
    if config.moments is None:
        result, sched = solve_model(build_model(case, sens))
        return result.status, sched
    rates = config.rates or bonferroni_allocate(0.05)
    sol = solve_drjcc(case, _slice_moments(config.moments, t0), config.set, rates, sens)
    return sol.status, sol.schedule


def rolling_horizon_run(case: Case, horizon_stream=None, config: RollingConfig | None = None) -> RollingTrace:
    """Shrinking-horizon re-solve with the executed SoC carried forward.

    ``horizon_stream`` yields the full-day forecast available at each step
    (default: the case forecast at every step).  Step ``t`` solves the
    problem from ``t`` to the end of the day and executes its first
    interval.  When a step is infeasible the next interval of the previous
    schedule is executed instead and the step is flagged as a fallback.
    """
    config = config or RollingConfig()
    T = case.horizon.n_intervals
    n_steps = T if config.max_steps is None else min(T, config.max_steps)
    sens = linearize(case.network)
    bat = BatteryArrays(case.batteries())
    soc = np.asarray(case.initial_soc, dtype=float) if case.initial_soc is not None else bat.e_init.copy()
    stream = iter(horizon_stream) if horizon_stream is not None else None
    steps: list[RollingStep] = []
    prev: Schedule | None = None
    prev_t0 = 0
    for t in range(n_steps):
        full = next(stream) if stream is not None else case.horizon
        if not isinstance(full, HorizonData) or full.n_intervals != T:
            raise ModelError(f"step {t}: forecast must be HorizonData covering {T} intervals")
        sub = case.with_horizon(full.tail(t), initial_soc=soc)
        try:
            status, sched = _solve_step(sub, config, t, sens)
        except ModelError as exc:
            status, sched = f"error: {exc}", None
        if sched is not None:
            d, k, fallback, cost = sched.active(0), 0, False, sched.cost
            prev, prev_t0 = sched, t
        elif prev is not None and t - prev_t0 < prev.grid.pg.shape[0]:
            k = t - prev_t0
            d, fallback, cost = prev.active(k), True, math.nan
            logger.warning("rolling step %d: %s; executing step %d of the previous schedule", t, status, k)
        else:
            raise ModelError(f"rolling step {t}: {status} and no previous schedule to fall back on")
        pd, pc = d.pd[k], d.pc[k]
        soc_end = soc + case.horizon.dt * (bat.eta_ch * pc - pd / bat.eta_dis)
        steps.append(RollingStep(t, float(d.pg[k]), pd.copy(), pc.copy(), d.rup[k].copy(), d.droop[k].copy(),
                                 soc.copy(), soc_end, d.pv[k].copy(), d.load[k].copy(), cost, status, fallback))
        soc = np.clip(soc_end, bat.e_min, bat.e_max)
    return RollingTrace(steps, case.horizon.dt)
