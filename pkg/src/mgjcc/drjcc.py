"""Distributionally robust joint chance constraints via Boole decomposition.

The six error-dependent constraint families of the OPF are replaced by
second-order-cone forms

    lambda(eps_i) * ||Sigma^{1/2} a_i(x)|| <= b_i(x) - mu' a_i(x)

where ``a_i(x)`` is the sensitivity of constraint ``i`` to the forecast error
vector and ``lambda`` depends on the ambiguity set.  One rate per family is
shared by every interval, storage and bus of that family.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import conic
from .conic import Affine
from .opf import (UNCERTAIN_FAMILIES, Case, InfeasibilityReport, ModelError, OpfModel, Schedule,
                  add_battery_droop_constraints, add_flow_constraints, add_island_scenario, build_objective,
                  extract_schedule)
from .uncertainty import AmbiguityDomainError, ErrorMoments, ambiguity_set, lambda_factor

logger = logging.getLogger(__name__)

N_CONSTRAINTS = len(UNCERTAIN_FAMILIES)
DEFAULT_EPS_LOWER = 0.001
METHODS = ("scc", "bonferroni", "evolutionary")


class RateConfigError(ValueError):
    """A rate vector violates its bounds or budget."""


@dataclass(frozen=True)
class RateVector:
    """Individual violation rates in :data:`~mgjcc.opf.UNCERTAIN_FAMILIES` order.

    ``joint=False`` marks a single-chance-constraint vector that is exempt
    from the Boole budget ``sum(eps) <= eps_joint``.
    """

    eps: tuple
    eps_joint: float
    eps_lower: float = DEFAULT_EPS_LOWER
    eps_upper: float | None = None
    joint: bool = True

    def __post_init__(self):
        eps = tuple(float(e) for e in self.eps)
        object.__setattr__(self, "eps", eps)
        if len(eps) != N_CONSTRAINTS:
            raise RateConfigError(f"expected {N_CONSTRAINTS} rates, got {len(eps)}")
        if not 0.0 < self.eps_joint < 1.0:
            raise RateConfigError(f"joint rate {self.eps_joint} outside (0, 1)")
        if self.eps_upper is None:
            object.__setattr__(self, "eps_upper", float(self.eps_joint))
        if any(not (0.0 < e < 1.0) for e in eps):
            raise RateConfigError(f"rates must lie in (0, 1): {eps}")
        if self.joint:
            if sum(eps) > self.eps_joint + 1e-12:
                raise RateConfigError(f"rates sum to {sum(eps):.6g} > joint budget {self.eps_joint}")
            tol = 1e-12
            if min(eps) < self.eps_lower - tol or max(eps) > self.eps_upper + tol:
                raise RateConfigError(f"rates {eps} outside [{self.eps_lower}, {self.eps_upper}]")

    def as_array(self) -> np.ndarray:
        return np.array(self.eps)

    def to_json(self) -> dict:
        return {
            "eps": list(self.eps),
            "families": list(UNCERTAIN_FAMILIES),
            "eps_joint": self.eps_joint,
            "eps_lower": self.eps_lower,
            "eps_upper": self.eps_upper,
            "joint": self.joint,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "RateVector":
        return cls(tuple(doc["eps"]), doc["eps_joint"], doc.get("eps_lower", DEFAULT_EPS_LOWER),
                   doc.get("eps_upper"), doc.get("joint", True))


def bonferroni_allocate(eps_joint: float, n_constraints: int = N_CONSTRAINTS,
                        eps_lower: float = DEFAULT_EPS_LOWER) -> RateVector:
    """Equal split of the joint budget."""
    if n_constraints != N_CONSTRAINTS:
        raise RateConfigError(f"this model has {N_CONSTRAINTS} uncertain constraint families")
    eps = eps_joint / n_constraints
    if eps < eps_lower:
        raise RateConfigError(f"eps_joint/{n_constraints} = {eps:.6g} is below the lower bound {eps_lower}")
    return RateVector((eps,) * n_constraints, eps_joint, eps_lower)


def scc_allocate(eps_joint: float, eps_lower: float = DEFAULT_EPS_LOWER) -> RateVector:
    """Every family gets the full joint rate (non-joint vector)."""
    return RateVector((eps_joint,) * N_CONSTRAINTS, eps_joint, eps_lower, joint=False)


def check_rates(spec, rates: RateVector) -> np.ndarray:
    """Safety factor per family; raises naming the first family outside the set's domain."""
    spec = ambiguity_set(spec)
    lam = np.zeros(N_CONSTRAINTS)
    for i, (fam, eps) in enumerate(zip(UNCERTAIN_FAMILIES, rates.eps)):
        try:
            lam[i] = lambda_factor(spec, eps)
        except AmbiguityDomainError as exc:
            raise AmbiguityDomainError(f"constraint {i + 1} ({fam}): {exc}") from None
    return lam


@dataclass
class DrjccProblem:
    model: OpfModel
    spec: object
    moments: ErrorMoments
    rates: RateVector
    lam: np.ndarray
    handles: list = field(default_factory=list)

    @property
    def program(self) -> conic.ConicProgram:
        return self.model.program


def _soc(program, family, t_expr: Affine, v_exprs: list[Affine], tag) -> conic.Block:
    """Interleave per-cone rows ``[t, v_1..v_k]`` from row-aligned batches."""
    m = t_expr.m
    k = len(v_exprs)
    dim = 1 + k
    out = Affine(m * dim)
    parts = [t_expr] + v_exprs
    for j, e in enumerate(parts):
        pos = np.arange(m) * dim + j
        out.const[pos] = e.const
        for r, c, v in zip(e.rows, e.cols, e.vals):
            out.rows.append(pos[r])
            out.cols.append(c)
            out.vals.append(v)
    return program.add_soc(family, out, dim, tag)


def _check_moments(model: OpfModel, moments: ErrorMoments):
    T, n_pv = model.T, model.network.n_pv
    if moments.mean.shape != (T, n_pv):
        raise ModelError(f"moments cover shape {moments.mean.shape}, model needs {(T, n_pv)}")


def tighten(model: OpfModel, moments: ErrorMoments, spec, rates: RateVector) -> DrjccProblem:
    """Replace the six error-dependent families of ``model`` by their cone forms (in place)."""
    _check_moments(model, moments)
    lam = check_rates(spec, rates)
    p = model.program
    for fam in UNCERTAIN_FAMILIES:
        p.remove_family(fam)
    T, S, dt = model.T, model.network.n_storage, model.horizon.dt
    bat = model.bat
    s_tot = moments.total_std()  # (T,)
    m_tot = moments.total_mean()  # (T,)
    m = T * S
    s_rep = np.repeat(s_tot, S)
    mu_rep = np.repeat(m_tot, S)
    handles = []
    for sc in model.scenarios:
        v = model.vars[sc]
        d, rup, pd = v["droop"].ravel(), v["rup"].ravel(), v["pd"].ravel()
        soc0 = v["soc"][:-1].ravel()
        # lambda_1 s d <= R - mu d
        t1 = Affine(m).add(1.0, rup).add(-mu_rep, d)
        handles.append(_soc(p, "droop_regulation", t1, [Affine(m).add(lam[0] * s_rep, d)], sc))
        # lambda_2 s d <= Pd_max - Pd - mu d
        t2 = Affine(m, np.tile(bat.pd_max, T)).add(-1.0, pd).add(-mu_rep, d)
        handles.append(_soc(p, "discharge_limit", t2, [Affine(m).add(lam[1] * s_rep, d)], sc))
        # lambda_3 s d <= Pc_max - mu d
        t3 = Affine(m, np.tile(bat.pc_max, T)).add(-mu_rep, d)
        handles.append(_soc(p, "charge_limit", t3, [Affine(m).add(lam[2] * s_rep, d)], sc))
        # lambda_4 s dt d <= E - E_min - mu dt d
        t4 = Affine(m, -np.tile(bat.e_min, T)).add(1.0, soc0).add(-dt * mu_rep, d)
        handles.append(_soc(p, "energy_floor", t4, [Affine(m).add(lam[3] * dt * s_rep, d)], sc))
        handles.extend(_voltage_cones(model, moments, lam[4], lam[5], sc))
    return DrjccProblem(model, spec, moments, rates, lam, handles)


def voltage_sensitivity(model: OpfModel) -> tuple[np.ndarray, np.ndarray]:
    """Reduced-bus voltage response to droop and PV errors.

    Returns ``(Ks, Kp)`` with ``Ks[r, s] = Ginv[r, bus(s)]`` and
    ``Kp[r, k] = Ginv[r, bus(k)]`` (zero for assets at the slack bus), so the
    error-driven voltage change is ``(Ks d) * sum(zeta) - Kp zeta``.
    """
    n, sens = model.network, model.sens
    nr = sens.buses.size
    Ks = np.zeros((nr, n.n_storage))
    Kp = np.zeros((nr, n.n_pv))
    for s, b in enumerate(n.storage_bus):
        if model.red_pos[b] >= 0:
            Ks[:, s] = sens.G_inv[:, model.red_pos[b]]
    for k, b in enumerate(n.pv_bus):
        if model.red_pos[b] >= 0:
            Kp[:, k] = sens.G_inv[:, model.red_pos[b]]
    return Ks, Kp


def _voltage_cones(model: OpfModel, moments: ErrorMoments, lam_up: float, lam_lo: float, sc: str):
    n, T = model.network, model.T
    nr = model.sens.buses.size
    if nr == 0:
        return []
    Ks, Kp = voltage_sensitivity(model)
    root = moments.sqrt_cov()  # (T, n_pv, n_pv) symmetric
    mu = moments.mean
    v = model.vars[sc]
    d = v["droop"]  # (T, S)
    volt = v["v"]  # (T, nr)
    rows = T * nr
    t_idx = np.repeat(np.arange(T), nr)
    r_idx = np.tile(np.arange(nr), T)
    # a_r(d) = Ks[r] d * 1 - Kp[r]  (per PV unit k); its mean shift is a_r . mu
    mu_tot = mu.sum(axis=1)
    kp_mu = np.einsum("rk,tk->tr", Kp, mu).ravel()
    handles = []
    for fam, lam, sign in (("voltage_upper", lam_up, 1.0), ("voltage_lower", lam_lo, -1.0)):
        if sign > 0:
            t_expr = Affine(rows, n.v_max + kp_mu).add(-1.0, volt.ravel())
        else:
            t_expr = Affine(rows, -n.v_min - kp_mu).add(1.0, volt.ravel())
        for s in range(n.n_storage):
            t_expr.add(-sign * Ks[r_idx, s] * mu_tot[t_idx], d[t_idx, s])
        vecs = []
        # component j of Sigma^{1/2} a_r = sum_k root[j, k] a_r[k]
        #   = (Ks[r] d) * rowsum(root)[j] - (root Kp[r])[j]
        rsum = root.sum(axis=2)  # (T, n_pv)
        rkp = np.einsum("tjk,rk->trj", root, Kp)  # (T, nr, n_pv)
        for j in range(n.n_pv):
            e = Affine(rows, -lam * rkp[:, :, j].ravel())
            for s in range(n.n_storage):
                e.add(lam * Ks[r_idx, s] * rsum[t_idx, j], d[t_idx, s])
            vecs.append(e)
        handles.append(_soc(model.program, fam, t_expr, vecs, sc))
    return handles


def build_drjcc(case: Case, moments: ErrorMoments, spec, rates: RateVector, sensitivity=None) -> DrjccProblem:
    """Deterministic build (zero predetermined error) followed by :func:`tighten`."""
    model = OpfModel(case, sensitivity)
    build_objective(model)
    add_battery_droop_constraints(model)
    add_flow_constraints(model)
    add_island_scenario(model)
    return tighten(model, moments, spec, rates)


@dataclass
class DrjccSolution:
    schedule: Schedule | None
    cost: float
    status: str
    result: conic.SolveResult | None = None
    report: InfeasibilityReport | None = None

    @property
    def feasible(self) -> bool:
        return self.schedule is not None


def solve_problem(problem: DrjccProblem, **solve_kw) -> DrjccSolution:
    result = conic.solve(problem.program, **solve_kw)
    if result.status == conic.OPTIMAL:
        sched = extract_schedule(problem.model, result)
        sched.solve_info["rates"] = problem.rates.to_json()
        sched.solve_info["ambiguity_set"] = ambiguity_set(problem.spec).kind
        return DrjccSolution(sched, float(result.objective), result.status, result)
    report = InfeasibilityReport(result.status, result.family_certificate, result.trace)
    return DrjccSolution(None, math.inf, result.status, result, report)


def solve_drjcc(case: Case, moments: ErrorMoments, spec, rates: RateVector, sensitivity=None,
                **solve_kw) -> DrjccSolution:
    """Build, tighten and solve; infeasibility is a status, not an exception."""
    return solve_problem(build_drjcc(case, moments, spec, rates, sensitivity), **solve_kw)
