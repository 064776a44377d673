"""Acceptance criteria 1-9, one pass/fail line each.

Every test records its line in ``conftest.ACCEPTANCE_LINES`` (printed in the
terminal summary) before asserting.  The solver-certification check runs last
so it can inspect the duality gaps of every solve made by the other criteria.
"""

from __future__ import annotations

import csv
import math
import time

import numpy as np
import pytest

import mgjcc.conic as conic
from mgjcc.casegen import CaseParams, generate_case
from mgjcc.cli import main
from mgjcc.drjcc import bonferroni_allocate, scc_allocate, solve_drjcc
from mgjcc.evo import EvoConfig, drjcc_fitness, optimize_rates
from mgjcc.opf import solve_deterministic
from mgjcc.uncertainty import ErrorMoments, estimate_moments, lambda_factor

from bruteforce import grid_minimum, random_program
from conftest import ACCEPTANCE_LINES

SETS = ("symmetric", "unimodal", "unimodal_symmetric")
GAP_TOL = 1e-7
GAPS: list[float] = []
STATE: dict = {}


@pytest.fixture(autouse=True)
def _record_gaps(monkeypatch):
    real = conic.solve

    def wrapped(*args, **kw):
        r = real(*args, **kw)
        if r.status == conic.OPTIMAL:
            GAPS.append(r.rel_gap)
        return r

    monkeypatch.setattr(conic, "solve", wrapped)


def _report(k: int, ok: bool, detail: str, elapsed: float, budget: float):
    ok = ok and elapsed <= budget
    line = f"criterion {k}: {'PASS' if ok else 'FAIL'} ({elapsed:.1f}s of {budget:g}s) {detail}"
    ACCEPTANCE_LINES[k] = line
    print(line)
    assert ok, line


def test_criterion_1_bonferroni_rates():
    t0 = time.perf_counter()
    got = [bonferroni_allocate(e).eps for e in (0.05, 0.02, 0.01)]
    per_call = (time.perf_counter() - t0) / 3
    table = [math.floor(v[0] * 1e4) / 1e4 for v in got]
    ok = table == [0.0083, 0.0033, 0.0016] and all(len(set(v)) == 1 for v in got)
    detail = f"rates {table}, {1e3 * per_call:.3f} ms per call"
    _report(1, ok and per_call < 1e-3, detail, per_call, 1.0)


def test_criterion_2_lambda():
    t0 = time.perf_counter()
    vals = (lambda_factor("unimodal", 1 / 9), lambda_factor("symmetric", 0.02),
            lambda_factor("unimodal_symmetric", 2 / 81))
    err = max(abs(a - b) for a, b in zip(vals, (2.0, 5.0, 3.0)))
    grid = np.linspace(0.0, 1 / 6, 1002)[1:-1]
    lam = {s: np.array([lambda_factor(s, e) for e in grid]) for s in SETS}
    ordered = bool(np.all(lam["symmetric"] > lam["unimodal"]) and np.all(lam["unimodal"] > lam["unimodal_symmetric"]))
    _report(2, err <= 1e-12 and ordered, f"max closed-form error {err:.1e}, ordering on 1000 points {ordered}",
            time.perf_counter() - t0, 1.0)


def test_criterion_3_degeneracy(reduced_bundle):
    t0 = time.perf_counter()
    case = reduced_bundle.case
    zero = ErrorMoments.zeros(case.horizon.n_intervals, case.network.n_pv)
    det = solve_deterministic(case).cost
    worst = 0.0
    for s in SETS:
        for rates in (bonferroni_allocate(0.05), scc_allocate(0.05)):
            worst = max(worst, abs(solve_drjcc(case, zero, s, rates).cost - det) / det)
        evo = optimize_rates(drjcc_fitness(case, zero, s, 0.05), 0.05, EvoConfig(), spec=s)
        worst = max(worst, abs(evo.best_cost - det) / det)
    _report(3, worst <= 1e-6, f"max relative deviation {worst:.1e} over 3 sets x 3 methods",
            time.perf_counter() - t0, 120.0)


def _reference_pattern(eps) -> bool:
    big, small = min(eps[0], eps[1]), max(eps[2:])
    return big > small and small < 0.0015


def test_criterion_4_evolutionary(reduced_bundle, reduced_moments):
    t0 = time.perf_counter()
    case = reduced_bundle.case
    parts, ok = [], True
    for ej in (0.05, 0.02, 0.01):
        base = solve_drjcc(case, reduced_moments, "unimodal", bonferroni_allocate(ej)).cost
        res = optimize_rates(drjcc_fitness(case, reduced_moments, "unimodal", ej), ej,
                             EvoConfig(restarts=10, seed=0), spec="unimodal")
        costs = np.array([r.best.fitness for r in res.runs])
        not_worse = int(np.sum(costs <= base * (1 + 1e-9)))
        reduction = float(np.mean(1 - costs / base))
        pattern = sum(_reference_pattern(r.best.eps) for r in res.runs)
        ok &= not_worse == 10 and reduction >= 0.20 and pattern >= 8
        parts.append(f"eps {ej:g}: {not_worse}/10 <= Bonferroni, mean reduction {100 * reduction:.1f}%, "
                     f"pattern {pattern}/10")
    _report(4, ok, "; ".join(parts), time.perf_counter() - t0, 1800.0)


def test_criterion_5_monotonicity(reduced_bundle, reduced_moments):
    t0 = time.perf_counter()
    case = reduced_bundle.case
    eps_grid = (0.2, 0.1, 0.05, 0.02, 0.01)
    ok, parts = True, []
    for name, alloc in (("bonferroni", bonferroni_allocate), ("scc", scc_allocate)):
        costs = {}
        for s in SETS:
            for e in eps_grid:
                try:
                    costs[s, e] = solve_drjcc(case, reduced_moments, s, alloc(e)).cost
                except ValueError:  # rate outside the set's domain
                    pass
        mono = all(costs[s, a] <= costs[s, b] * (1 + 1e-9)
                   for s in SETS for a, b in zip(eps_grid, eps_grid[1:]) if (s, a) in costs and (s, b) in costs)
        order = all(costs[SETS[0], e] > costs[SETS[1], e] > costs[SETS[2], e]
                    for e in eps_grid if all((s, e) in costs for s in SETS))
        finite = all(math.isfinite(c) for c in costs.values())
        ok &= mono and order and finite
        parts.append(f"{name}: monotone {mono}, set ordering {order}, {len(costs)} cells")
    _report(5, ok, "; ".join(parts), time.perf_counter() - t0, 1200.0)


@pytest.fixture(scope="module")
def reduced_case_file(tmp_path_factory):
    d = tmp_path_factory.mktemp("acceptance_case")
    assert main(["gen-case", "--intervals", "24", "--start-hour", "9", "--span-hours", "6", "--out", str(d)]) == 0
    return d / "case.json"


def _benchmark(case_file, out):
    assert main(["benchmark", "--case", str(case_file), "--seed", "0", "--no-plots", "--out", str(out)]) == 0
    return out / "summary.csv"


def test_criterion_6_robustness(reduced_case_file, tmp_path_factory):
    t0 = time.perf_counter()
    summary = _benchmark(reduced_case_file, tmp_path_factory.mktemp("bench_a"))
    STATE["summary"] = summary
    elapsed = time.perf_counter() - t0
    STATE["grid_time"] = elapsed
    with open(summary, newline="") as fh:
        rows = list(csv.DictReader(fh))
    cell = {(r["set"], float(r["eps_joint"]), r["method"]): r for r in rows}
    ok, bad = len(rows) == 27, []
    for s in ("symmetric", "unimodal"):
        for e in (0.05, 0.02, 0.01):
            m = {k: float(cell[s, e, k]["mean"]) for k in ("bonferroni", "evolutionary", "scc")}
            good = m["bonferroni"] >= m["evolutionary"] >= m["scc"]
            good &= m["evolutionary"] >= float(cell[s, e, "evolutionary"]["target"]) - 1.5
            if not good:
                bad.append(f"{s}/{e:g}")
            ok &= good
    detail = f"{len(rows)} cells; B >= P >= S and P >= target - 1.5 in 6 cells" + (f", failing {bad}" if bad else "")
    _report(6, ok, detail, elapsed, 2700.0)


def test_criterion_7_islanding():
    t0 = time.perf_counter()
    bundle = generate_case(0, CaseParams(blackout_hours=(4.0, 18.0)))
    case = bundle.case
    moments = estimate_moments(bundle.fit, range(case.horizon.n_intervals))
    sol = solve_drjcc(case, moments, "unimodal", bonferroni_allocate(0.05))
    assert sol.feasible, sol.status
    a, b = case.horizon.blackout
    isl, grid = sol.schedule.island, sol.schedule.grid
    pg = float(np.max(np.abs(isl.pg[a:b])))
    shortfall = float(np.max(case.horizon.critical[a:b] - isl.load[a:b]))
    coupling = float(np.max(np.abs(isl.soc[: a + 1] - grid.soc[: a + 1])))
    ok = (a, b) == (16, 72) and pg <= 1e-6 and shortfall <= 1e-6 and coupling <= 1e-6
    detail = f"window {a}..{b - 1}, max |pg| {pg:.1e}, max critical shortfall {shortfall:.1e}, SoC coupling {coupling:.1e}"
    _report(7, ok, detail, time.perf_counter() - t0, 300.0)


def test_criterion_9_determinism(reduced_case_file, tmp_path_factory):
    if "summary" not in STATE:
        pytest.skip("grid run unavailable")
    t0 = time.perf_counter()
    again = _benchmark(reduced_case_file, tmp_path_factory.mktemp("bench_b"))
    same = again.read_bytes() == STATE["summary"].read_bytes()
    elapsed = time.perf_counter() - t0
    _report(9, same, f"summary CSV byte-identical {same}", elapsed, max(2700.0, 1.5 * STATE["grid_time"]))


def test_criterion_8_certification():
    t0 = time.perf_counter()
    n_recorded = len(GAPS)
    worst_dist = 0.0
    agree = True
    for n in (1, 2, 3):
        for seed in range(6):
            prog, evaluate, _ = random_program(np.random.default_rng(1000 * n + seed), n)
            r = conic.solve(prog)
            best, _ = grid_minimum(evaluate, n)
            ok = r.status == conic.OPTIMAL and r.objective <= best + 1e-7
            f0, _ = evaluate(r.x[None])
            grad = np.array([(evaluate(r.x[None] + 1e-6 * e)[0][0] - f0[0]) / 1e-6 for e in np.eye(n)])
            step = 3e-3 * np.sqrt(n)
            ok &= best - r.objective <= np.linalg.norm(grad) * step + 4.0 * step**2 + 1e-9
            worst_dist = max(worst_dist, best - r.objective)
            agree &= bool(ok)
    worst_gap = max(GAPS) if GAPS else math.nan
    gaps_ok = bool(GAPS) and worst_gap <= GAP_TOL
    detail = (f"brute-force agreement on 18 programs {agree} (max grid excess {worst_dist:.1e}); "
              f"max relative gap {worst_gap:.1e} over {n_recorded} acceptance solves")
    _report(8, agree and gaps_ok, detail, time.perf_counter() - t0, 120.0)
