"""Multi-period DC microgrid OPF with a grid-connected and an island scenario.

The model is assembled into a :class:`~mgjcc.conic.ConicProgram` with one
block per constraint family and scenario, so that the chance-constrained
build in :mod:`mgjcc.drjcc` can swap individual families for their conic
counterparts without touching anything else.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import conic
from .conic import Affine, ConicProgram
from .netmodel import FlowSensitivity, NetworkCase, linearize

logger = logging.getLogger(__name__)

SCENARIOS = ("grid", "island")

# families touched by forecast errors, in rate-vector order
UNCERTAIN_FAMILIES = (
    "droop_regulation",
    "discharge_limit",
    "charge_limit",
    "energy_floor",
    "voltage_upper",
    "voltage_lower",
)

COST_TERMS = ("grid", "reserve", "pv_curtailment", "load_shedding", "degradation", "island_load_shedding")


class ModelError(ValueError):
    """Inconsistent model data detected while building."""


class InfeasibleError(RuntimeError):
    """The assembled program has no feasible point."""

    def __init__(self, report: "InfeasibilityReport"):
        super().__init__(str(report))
        self.report = report


@dataclass
class InfeasibilityReport:
    status: str
    families: dict[str, float]
    detail: str = ""

    def __str__(self):
        top = ", ".join(f"{k} ({v:.0%})" for k, v in list(self.families.items())[:4]) or "unknown"
        return f"model {self.status}; implicated constraint families: {top}. {self.detail}".strip()


@dataclass(frozen=True)
class CostWeights:
    """Objective weights: quadratic terms in $/(unit h)^2, degradation in $/(unit h).

    ``power_unit`` is the power (kW) in which the weights are quoted: 1.0 for
    kW, 0.001 for W.  Dispatch variables stay in kW; :meth:`in_kw` converts.
    """

    m_u: float = 0.023
    m_r: float = 0.23
    m_s: float = 1.00
    m_l: float | tuple = 1.0
    m_d: float = 0.27
    power_unit: float = 1.0

    def __post_init__(self):
        vals = [self.m_u, self.m_r, self.m_s, self.m_d, *np.atleast_1d(self.m_l)]
        if any(v < 0 for v in vals):
            raise ModelError("cost weights must be non-negative")
        if not self.power_unit > 0:
            raise ModelError("power_unit must be positive")

    def load_weights(self, n_load: int) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.m_l, dtype=float), (n_load,)).copy()

    def in_kw(self) -> "CostWeights":
        """Equivalent weights for powers in kW."""
        q = 1.0 / self.power_unit**2
        ml = np.asarray(self.m_l, dtype=float) * q
        return CostWeights(self.m_u * q, self.m_r * q, self.m_s * q,
                           float(ml) if ml.ndim == 0 else tuple(ml.tolist()),
                           self.m_d / self.power_unit, 1.0)


@dataclass(frozen=True)
class BatteryParams:
    capacity: float = 0.06  # kWh
    p_charge_max: float = 0.02  # kW
    p_discharge_max: float = 0.02  # kW
    soc_min: float = 0.2
    soc_max: float = 1.0
    eta_dis: float = 0.95
    eta_ch: float = 0.95
    soc_init: float = 0.5

    def __post_init__(self):
        if not 0 <= self.soc_min < self.soc_max <= 1:
            raise ModelError(f"need 0 <= soc_min < soc_max <= 1, got {self.soc_min}, {self.soc_max}")
        if not (0 < self.eta_dis <= 1 and 0 < self.eta_ch <= 1):
            raise ModelError("efficiencies must lie in (0, 1]")
        if not (self.p_charge_max > 0 and self.p_discharge_max > 0 and self.capacity > 0):
            raise ModelError("battery capacity and power limits must be positive")
        if not self.soc_min <= self.soc_init <= self.soc_max:
            raise ModelError(f"soc_init {self.soc_init} outside [{self.soc_min}, {self.soc_max}]")


@dataclass
class HorizonData:
    """Per-interval forecasts in kW.  ``blackout`` is ``(start, stop)`` with ``stop`` exclusive."""

    dt: float
    load: np.ndarray  # (T, n_load)
    critical: np.ndarray  # (T, n_load)
    pv: np.ndarray  # (T, n_pv)
    blackout: tuple[int, int] | None = None
    start: int = 0  # absolute index of the first interval

    def __post_init__(self):
        self.load = np.asarray(self.load, dtype=float)
        self.critical = np.asarray(self.critical, dtype=float)
        self.pv = np.asarray(self.pv, dtype=float)
        T = self.load.shape[0]
        if self.critical.shape != self.load.shape or self.pv.shape[0] != T:
            raise ModelError("load, critical load and pv forecasts must share the interval axis")
        if np.any(self.critical < -1e-12) or np.any(self.critical > self.load + 1e-12):
            raise ModelError("critical load must satisfy 0 <= P_cl <= P_l")
        if np.any(self.pv < 0):
            raise ModelError("pv forecast must be non-negative")
        if not self.dt > 0:
            raise ModelError("interval length must be positive")
        if self.blackout is not None:
            a, b = (int(v) for v in self.blackout)
            if not 0 <= a <= b <= T:
                raise ModelError(f"blackout window [{a}, {b}) outside the horizon 0..{T}")
            self.blackout = None if a == b else (a, b)

    @property
    def n_intervals(self) -> int:
        return self.load.shape[0]

    def in_blackout(self) -> np.ndarray:
        mask = np.zeros(self.n_intervals, dtype=bool)
        if self.blackout is not None:
            mask[self.blackout[0]: self.blackout[1]] = True
        return mask

    def tail(self, t0: int) -> "HorizonData":
        """The horizon from local interval ``t0`` onward."""
        bo = None
        if self.blackout is not None:
            a, b = self.blackout
            a, b = max(a - t0, 0), max(b - t0, 0)
            bo = (a, b) if b > a else None
        return HorizonData(self.dt, self.load[t0:], self.critical[t0:], self.pv[t0:], bo, self.start + t0)


@dataclass
class Case:
    """Everything needed to build the scheduling model."""

    network: NetworkCase
    battery: BatteryParams | tuple
    weights: CostWeights
    horizon: HorizonData
    terminal_soc: bool = False
    initial_soc: np.ndarray | None = None  # kWh per storage; overrides battery.soc_init

    def batteries(self) -> list[BatteryParams]:
        if isinstance(self.battery, BatteryParams):
            return [self.battery] * self.network.n_storage
        if len(self.battery) != self.network.n_storage:
            raise ModelError("one battery parameter set per storage is required")
        return list(self.battery)

    def check(self):
        n = self.network
        h = self.horizon
        if h.load.shape[1] != n.n_load or h.pv.shape[1] != n.n_pv:
            raise ModelError(
                f"horizon data has {h.load.shape[1]} loads / {h.pv.shape[1]} pv units; "
                f"network has {n.n_load} / {n.n_pv}")
        if n.n_storage == 0:
            raise ModelError("droop provision needs at least one storage unit")
        if self.initial_soc is not None:
            e0 = np.asarray(self.initial_soc, dtype=float)
            if e0.shape != (n.n_storage,):
                raise ModelError("initial_soc needs one value per storage")

    def with_horizon(self, horizon: HorizonData, initial_soc=None) -> "Case":
        return replace(self, horizon=horizon, initial_soc=initial_soc)


class BatteryArrays:
    def __init__(self, batteries: list[BatteryParams]):
        def arr(name):
            return np.array([getattr(b, name) for b in batteries], dtype=float)

        self.capacity = arr("capacity")
        self.pc_max = arr("p_charge_max")
        self.pd_max = arr("p_discharge_max")
        self.e_min = arr("soc_min") * self.capacity
        self.e_max = arr("soc_max") * self.capacity
        self.eta_dis = arr("eta_dis")
        self.eta_ch = arr("eta_ch")
        self.e_init = arr("soc_init") * self.capacity


@dataclass
class ScenarioDispatch:
    pg: np.ndarray  # (T,)
    pd: np.ndarray  # (T, S)
    pc: np.ndarray
    rup: np.ndarray
    droop: np.ndarray
    soc: np.ndarray  # (T+1, S) kWh
    pv: np.ndarray  # (T, PV) supplied solar
    load: np.ndarray  # (T, D) supplied load
    voltage: np.ndarray  # (T, N_B) p.u.

    def to_json(self) -> dict:
        return {k: np.asarray(v).tolist() for k, v in self.__dict__.items()}

    @classmethod
    def from_json(cls, doc) -> "ScenarioDispatch":
        return cls(**{k: np.asarray(doc[k], dtype=float) for k in cls.__dataclass_fields__})


@dataclass
class Schedule:
    grid: ScenarioDispatch
    island: ScenarioDispatch
    cost: float
    breakdown: dict[str, float]
    dt: float
    blackout: tuple[int, int] | None = None
    solve_info: dict = field(default_factory=dict)

    def scenario(self, name: str) -> ScenarioDispatch:
        if name not in SCENARIOS:
            raise KeyError(name)
        return getattr(self, name)

    def active(self, t: int) -> ScenarioDispatch:
        """Dispatch followed at interval ``t``: the island scenario from the blackout start on."""
        if self.blackout is not None and t >= self.blackout[0]:
            return self.island
        return self.grid

    def to_json(self) -> dict:
        return {
            "schema": "mgjcc.schedule/1",
            "cost": self.cost,
            "breakdown": self.breakdown,
            "dt": self.dt,
            "blackout": list(self.blackout) if self.blackout else None,
            "grid": self.grid.to_json(),
            "island": self.island.to_json(),
            "solve_info": self.solve_info,
        }

    @classmethod
    def from_json(cls, doc) -> "Schedule":
        bo = doc.get("blackout")
        return cls(ScenarioDispatch.from_json(doc["grid"]), ScenarioDispatch.from_json(doc["island"]),
                   float(doc["cost"]), dict(doc["breakdown"]), float(doc["dt"]),
                   tuple(bo) if bo else None, dict(doc.get("solve_info", {})))


# -- model assembly ------------------------------------------------------------------------


class OpfModel:
    """Program plus the variable index maps of both scenarios.

    The island scenario only gets its own variables when a blackout window is
    set; otherwise it is identical to the grid-connected scenario.
    """

    def __init__(self, case: Case, sensitivity: FlowSensitivity | None = None):
        case.check()
        self.case = case
        self.network = case.network
        self.horizon = case.horizon
        self.sens = sensitivity if sensitivity is not None else linearize(case.network)
        self.bat = BatteryArrays(case.batteries())
        self.program = ConicProgram()
        self.vars: dict[str, dict[str, np.ndarray]] = {}
        # reduced-bus position of every asset (-1 at the slack bus)
        pos = -np.ones(self.network.bus_count, dtype=int)
        pos[self.sens.buses] = np.arange(self.sens.buses.size)
        self.red_pos = pos
        self.scenarios = ["grid"] + (["island"] if self.horizon.blackout is not None else [])
        if case.initial_soc is not None:
            self.e_init = np.asarray(case.initial_soc, dtype=float)
        else:
            self.e_init = self.bat.e_init
        if np.any(self.e_init < self.bat.e_min - 1e-12) or np.any(self.e_init > self.bat.e_max + 1e-12):
            raise ModelError("initial state of charge outside the [soc_min, soc_max] window")
        for sc in self.scenarios:
            self._add_variables(sc)

    @property
    def T(self) -> int:
        return self.horizon.n_intervals

    def _add_variables(self, sc: str):
        n, T, p = self.network, self.T, self.program
        nr = self.sens.buses.size
        self.vars[sc] = {
            "pg": p.add_variables(f"{sc}.pg", (T,)),
            "pd": p.add_variables(f"{sc}.pd", (T, n.n_storage)),
            "pc": p.add_variables(f"{sc}.pc", (T, n.n_storage)),
            "rup": p.add_variables(f"{sc}.rup", (T, n.n_storage)),
            "droop": p.add_variables(f"{sc}.droop", (T, n.n_storage)),
            "soc": p.add_variables(f"{sc}.soc", (T + 1, n.n_storage)),
            "pv": p.add_variables(f"{sc}.pv", (T, n.n_pv)),
            "load": p.add_variables(f"{sc}.load", (T, n.n_load)),
            "v": p.add_variables(f"{sc}.v", (T, nr)),
        }

    def window_mask(self) -> np.ndarray:
        return self.horizon.in_blackout()

    # helpers for per-(t, bus) rows of the reduced voltage system
    def bus_rows(self, asset_bus, var: np.ndarray, coef_t: np.ndarray | float = 1.0):
        """Yield ``(coef, idx)`` pairs adding ``coef_t[t] * var[t, k]`` to the row of the asset's bus."""
        T, nr = self.T, self.sens.buses.size
        coef_t = np.asarray(coef_t, dtype=float)
        if coef_t.ndim == 1:
            coef_t = coef_t[:, None]
        coef_t = np.broadcast_to(coef_t, (T, var.shape[1]))
        for k, b in enumerate(asset_bus):
            r = self.red_pos[b]
            if r < 0:
                continue
            sel = np.zeros((T, nr))
            sel[:, r] = coef_t[:, k]
            yield sel.ravel(), np.repeat(var[:, k], nr)


def build_objective(model: OpfModel, weights: CostWeights | None = None):
    """Add the five grid-scenario cost terms and the island load-shedding penalty."""
    w = (weights or model.case.weights).in_kw()
    h, p, dt = model.horizon, model.program, model.horizon.dt
    g = model.vars["grid"]
    ml = w.load_weights(model.network.n_load)
    p.add_quadratic("grid", g["pg"], w.m_u * dt)
    p.add_quadratic("reserve", g["rup"], w.m_r * dt)
    p.add_quadratic("pv_curtailment", g["pv"], w.m_s * dt, offset=h.pv.ravel())
    p.add_quadratic("load_shedding", g["load"], np.tile(ml * dt, model.T), offset=h.load.ravel())
    p.add_quadratic("degradation", np.concatenate([g["pd"].ravel(), g["pc"].ravel()]), 0.0, lin=w.m_d * dt)
    if "island" in model.vars:
        win = model.window_mask()
        isl = model.vars["island"]["load"][win]
        p.add_quadratic("island_load_shedding", isl, np.tile(ml * dt, int(win.sum())),
                        offset=h.load[win].ravel())
    else:
        p.add_quadratic("island_load_shedding", np.zeros(0, dtype=int), 0.0)


def add_battery_droop_constraints(model: OpfModel, error_total=None, scenarios=None):
    """Droop simplex, reserve, storage power and energy limits, and SoC recursion.

    ``error_total`` is the predetermined total forecast error per interval
    (kW, default zero) that the droop reserve must cover.
    """
    T, S, dt, bat = model.T, model.network.n_storage, model.horizon.dt, model.bat
    err = np.zeros(T) if error_total is None else np.broadcast_to(np.asarray(error_total, dtype=float), (T,))
    p = model.program
    handles = []
    for sc in scenarios or model.scenarios:
        v = model.vars[sc]
        pd, pc, rup, d, soc = (v[k] for k in ("pd", "pc", "rup", "droop", "soc"))
        m = T * S
        pd_max = np.tile(bat.pd_max, T)
        pc_max = np.tile(bat.pc_max, T)
        e_min = np.tile(bat.e_min, T)
        simplex = Affine(T, -1.0)
        for s in range(S):
            simplex.add(1.0, d[:, s])
        handles.append(p.add_eq("droop_simplex", simplex, sc))
        handles.append(p.add_le("droop_bounds", Affine(m, -1.0).add(1.0, d.ravel()), sc))
        # R >= d * err
        handles.append(p.add_le("droop_regulation",
                                Affine(m).add(np.repeat(err, S), d.ravel()).add(-1.0, rup.ravel()), sc))
        handles.append(p.add_le("discharge_limit",
                                Affine(m, -pd_max).add(1.0, pd.ravel()).add(1.0, rup.ravel()), sc))
        handles.append(p.add_le("charge_limit", Affine(m).add(1.0, rup.ravel()).add(-1.0, pc.ravel()), sc))
        handles.append(p.add_le("energy_floor",
                                Affine(m, e_min).add(-1.0, soc[:-1].ravel()).add(dt, rup.ravel()), sc))
        handles.append(p.add_le("power_limits",
                                Affine(2 * m, np.concatenate([-pd_max, -pc_max]))
                                .add(1.0, np.concatenate([pd.ravel(), pc.ravel()])), sc))
        handles.append(p.add_le("soc_window", Affine(m, -np.tile(bat.e_max, T)).add(1.0, soc[1:].ravel()), sc))
        handles.append(p.add_le("soc_window", Affine(m, np.tile(bat.e_min, T)).add(-1.0, soc[1:].ravel()), sc))
        rec = (Affine(m).add(1.0, soc[1:].ravel()).add(-1.0, soc[:-1].ravel())
               .add(np.tile(dt / bat.eta_dis, T), pd.ravel()).add(np.tile(-dt * bat.eta_ch, T), pc.ravel()))
        handles.append(p.add_eq("soc_recursion", rec, sc))
        if sc == "grid":
            handles.append(p.add_eq("soc_initial", Affine(S, -model.e_init).add(1.0, soc[0]), sc))
        if model.case.terminal_soc:
            handles.append(p.add_le("terminal_soc", Affine(S, model.e_init).add(-1.0, soc[-1]), sc))
    return handles


def add_flow_constraints(model: OpfModel, fixed_error=None, scenarios=None):
    """Load supply, curtailment bounds, non-negativity, balance and linear voltages.

    ``fixed_error`` (T, n_pv) is the predetermined forecast error; the droop
    response ``d * sum(error)`` and the PV shortfall enter the bus injections.
    """
    n, h, T, sens = model.network, model.horizon, model.T, model.sens
    zeta = np.zeros((T, n.n_pv)) if fixed_error is None else np.asarray(fixed_error, dtype=float)
    if zeta.shape != (T, n.n_pv):
        raise ModelError(f"fixed error must have shape {(T, n.n_pv)}")
    err_total = zeta.sum(axis=1)
    p = model.program
    nr = sens.buses.size
    handles = []
    for sc in scenarios or model.scenarios:
        v = model.vars[sc]
        win = model.window_mask() if sc == "island" else np.zeros(T, dtype=bool)
        nonneg = np.concatenate([v[k].ravel() for k in ("pg", "pd", "pc", "rup", "droop", "pv", "load")])
        handles.append(p.add_le("nonnegativity", Affine(nonneg.size).add(-1.0, nonneg), sc))
        # supplied load: fixed outside the blackout, curtailable down to critical inside
        out = ~win
        if out.any():
            handles.append(p.add_eq("load_supply",
                                    Affine(int(out.sum()) * n.n_load, -h.load[out].ravel())
                                    .add(1.0, v["load"][out].ravel()), sc))
        if win.any():
            lw = v["load"][win].ravel()
            handles.append(p.add_le("load_curtailment", Affine(lw.size, -h.load[win].ravel()).add(1.0, lw), sc))
            handles.append(p.add_le("load_curtailment", Affine(lw.size, h.critical[win].ravel()).add(-1.0, lw), sc))
        handles.append(p.add_le("pv_curtailment",
                                Affine(T * n.n_pv, -h.pv.ravel()).add(1.0, v["pv"].ravel()), sc))
        bal = Affine(T).add(1.0, v["pg"])
        for k in range(n.n_pv):
            bal.add(1.0, v["pv"][:, k])
        for s in range(n.n_storage):
            bal.add(1.0, v["pd"][:, s]).add(-1.0, v["pc"][:, s])
        for k in range(n.n_load):
            bal.add(-1.0, v["load"][:, k])
        handles.append(p.add_eq("power_balance", bal, sc))
        if nr:
            # G v_r - P_inj,r - offset - slack_term = 0
            const = -np.tile(sens.offset + sens.slack_term, T)
            pv_err = np.zeros((T, nr))
            for k, b in enumerate(n.pv_bus):
                if model.red_pos[b] >= 0:
                    pv_err[:, model.red_pos[b]] += zeta[:, k]
            vm = Affine(T * nr, const + pv_err.ravel())
            for j in range(nr):
                vm.add(np.tile(sens.G[:, j], T), np.repeat(v["v"][:, j], nr))
            for coef, idx in model.bus_rows(n.storage_bus, v["pd"], -1.0):
                vm.add(coef, idx)
            for coef, idx in model.bus_rows(n.storage_bus, v["pc"], 1.0):
                vm.add(coef, idx)
            for coef, idx in model.bus_rows(n.storage_bus, v["droop"], -err_total):
                vm.add(coef, idx)
            for coef, idx in model.bus_rows(n.pv_bus, v["pv"], -1.0):
                vm.add(coef, idx)
            for coef, idx in model.bus_rows(n.load_bus, v["load"], 1.0):
                vm.add(coef, idx)
            if model.red_pos[n.grid_bus] >= 0:  # pragma: no cover - grid bus is the slack
                raise ModelError("grid bus must be the voltage reference")
            handles.append(p.add_eq("voltage_model", vm, sc))
            vv = v["v"].ravel()
            handles.append(p.add_le("voltage_upper", Affine(vv.size, -n.v_max).add(1.0, vv), sc))
            handles.append(p.add_le("voltage_lower", Affine(vv.size, n.v_min).add(-1.0, vv), sc))
    return handles


def add_island_scenario(model: OpfModel):
    """Blackout and scenario-coupling rows for the island scenario.

    Inside the window the grid import is zero.  Before the window starts both
    scenarios share one dispatch (and hence one state of charge); load
    curtailment inside the window is handled by :func:`add_flow_constraints`.
    """
    if "island" not in model.vars:
        return []
    p = model.program
    a, b = model.horizon.blackout
    g, isl = model.vars["grid"], model.vars["island"]
    handles = [p.add_eq("blackout", Affine(b - a).add(1.0, isl["pg"][a:b]), "island")]
    tied = [np.arange(0)]
    pairs = []
    for key in ("pg", "pd", "pc", "rup", "droop", "pv", "load", "v"):
        pairs.append((g[key][:a].ravel(), isl[key][:a].ravel()))
    pairs.append((g["soc"][: a + 1].ravel(), isl["soc"][: a + 1].ravel()))
    gi = np.concatenate([x for x, _ in pairs] + tied)
    ii = np.concatenate([y for _, y in pairs] + tied)
    if gi.size:
        handles.append(p.add_eq("scenario_coupling", Affine(gi.size).add(1.0, ii).add(-1.0, gi), "island"))
    if a == 0:
        handles.append(p.add_eq("soc_initial", Affine(model.network.n_storage, -model.e_init)
                                .add(1.0, isl["soc"][0]), "island"))
    return handles


def build_model(case: Case, sensitivity=None, fixed_error=None) -> OpfModel:
    """Assemble the deterministic two-scenario program."""
    model = OpfModel(case, sensitivity)
    fixed_error = None if fixed_error is None else np.asarray(fixed_error, dtype=float)
    err_total = None if fixed_error is None else fixed_error.sum(axis=1)
    build_objective(model)
    add_battery_droop_constraints(model, err_total)
    add_flow_constraints(model, fixed_error)
    add_island_scenario(model)
    return model


def extract_schedule(model: OpfModel, result: conic.SolveResult) -> Schedule:
    x = result.x
    n = model.network

    def dispatch(sc):
        v = model.vars[sc]
        volt = np.full((model.T, n.bus_count), model.sens.slack_voltage)
        volt[:, model.sens.buses] = x[v["v"]]
        return ScenarioDispatch(
            pg=x[v["pg"]], pd=x[v["pd"]], pc=x[v["pc"]], rup=x[v["rup"]], droop=x[v["droop"]],
            soc=x[v["soc"]], pv=x[v["pv"]], load=x[v["load"]], voltage=volt)

    grid = dispatch("grid")
    island = dispatch("island") if "island" in model.vars else dispatch("grid")
    breakdown = {k: 0.0 for k in COST_TERMS}
    breakdown.update(model.program.term_values(x))
    info = {
        "status": result.status,
        "backend": result.backend,
        "iterations": int(result.iterations),
        "rel_gap": float(result.rel_gap),
        "primal_residual": float(result.primal_residual),
        "solve_time": float(result.solve_time),
        "n_variables": int(model.program.n),
    }
    return Schedule(grid, island, float(result.objective), breakdown, model.horizon.dt,
                    model.horizon.blackout, info)


def solve_model(model: OpfModel, **solve_kw) -> tuple[conic.SolveResult, Schedule | None]:
    result = conic.solve(model.program, **solve_kw)
    if result.status != conic.OPTIMAL:
        return result, None
    return result, extract_schedule(model, result)


def solve_deterministic(case: Case, weights: CostWeights | None = None, fixed_error=None,
                        sensitivity=None, **solve_kw) -> Schedule:
    """Solve the deterministic model.

    Raises
    ------
    InfeasibleError
        With a report ranking the constraint families implicated by the
        solver's infeasibility certificate.
    """
    if weights is not None:
        case = replace(case, weights=weights)
    model = build_model(case, sensitivity, fixed_error)
    result, sched = solve_model(model, **solve_kw)
    if sched is None:
        raise InfeasibleError(InfeasibilityReport(result.status, result.family_certificate, result.trace))
    return sched
