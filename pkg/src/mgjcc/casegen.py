"""Synthetic rural-microgrid case: households on a radial DC feeder.

Households hang off a main busbar (bus 0, which also holds the grid
connection).  Each household has a PV panel, a small battery and a load made
of lights (inflexible) plus a fan and a phone charger (flexible).
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .netmodel import NetworkCase, load_network, write_assets, write_topology
from .opf import BatteryParams, Case, CostWeights, HorizonData, ModelError
from .uncertainty import ErrorSampleSet, generate_synthetic_errors

CASE_SCHEMA = "mgjcc.case/1"


@dataclass
class CaseParams:
    households: int = 10
    intervals: int = 96
    start_hour: float = 0.0  # clock time of the first interval
    span_hours: float = 24.0  # horizon length; dt = span_hours / intervals
    pv_range_w: tuple = (20.0, 40.0)
    line_range_m: tuple = (50.0, 200.0)
    ohm_per_km: float = 8.0
    v_base: float = 48.0
    v_min: float = 0.95
    v_max: float = 1.05
    irradiance: float = 0.5  # peak fraction of PV capacity (overcast day)
    sigma_fraction: float = 0.1  # error std as a fraction of the PV forecast
    sigma_floor_w: float = 1.0  # extra std (W) on every producing interval
    critical_fraction: float = 1.0  # share of lighting load that is inflexible
    load_scale: float = 1.0
    light_w: tuple = (4.0, 8.0)
    fan_w: tuple = (25.0, 40.0)
    phone_w: tuple = (6.0, 10.0)
    blackout_hours: tuple | None = None  # (start_hour, stop_hour)
    battery: BatteryParams = field(default_factory=BatteryParams)
    weights: CostWeights = field(default_factory=lambda: CostWeights(power_unit=1e-3))
    error_family: str = "gaussian"
    fit_samples: int = 365
    heldout_samples: int = 30


@dataclass
class CaseBundle:
    case: Case
    sigma: np.ndarray  # (T, n_pv) kW
    params: CaseParams
    pv_capacity_w: np.ndarray
    line_length_m: np.ndarray
    fit: ErrorSampleSet | None = None
    heldout: ErrorSampleSet | None = None


def hours(intervals: int, start: float = 0.0, span: float = 24.0) -> np.ndarray:
    """Interval mid-points in clock hours."""
    dt = span / intervals
    return start + (np.arange(intervals) + 0.5) * dt


def _window(h, start, stop):
    return ((h >= start) & (h < stop)).astype(float)


def load_profiles(rng, households: int, intervals: int, critical_fraction=1.0,
                  light_range=(6.0, 10.0), fan_range=(8.0, 14.0), phone_range=(6.0, 10.0), start=0.0, span=24.0):
    """Household load and critical load (kW), shape ``(T, households)``.

    Appliance ratings (W) are drawn uniformly from the given ranges.
    """
    h = hours(intervals, start, span)
    load = np.zeros((intervals, households))
    crit = np.zeros((intervals, households))
    for k in range(households):
        light_w = rng.uniform(*light_range)
        fan_w = rng.uniform(*fan_range)
        phone_w = rng.uniform(*phone_range)
        lights = light_w * (_window(h, 18.0, 23.0) + 0.6 * _window(h, 5.0, 7.0))
        fan = fan_w * _window(h, 11.0, 16.0) * (0.6 + 0.4 * np.sin(np.pi * np.clip((h - 11.0) / 5.0, 0, 1)))
        phone = phone_w * _window(h, 17.0, 18.5)
        load[:, k] = (lights + fan + phone) / 1e3
        crit[:, k] = critical_fraction * lights / 1e3
    return load, crit


def pv_profiles(capacity_w: np.ndarray, intervals: int, irradiance: float, start=0.0, span=24.0) -> np.ndarray:
    h = hours(intervals, start, span)
    shape = np.clip(np.sin(np.pi * (h - 6.0) / 12.0), 0.0, None) * irradiance
    return np.outer(shape, capacity_w) / 1e3


def generate_case(seed: int = 0, params: CaseParams | None = None, with_samples: bool = True) -> CaseBundle:
    """Build the reference household feeder with reproducible randomness."""
    params = params or CaseParams()
    ss = np.random.SeedSequence(seed)
    topo_seed, load_seed, fit_seed, held_seed = ss.spawn(4)
    rng = np.random.default_rng(topo_seed)
    n = params.households
    pv_cap = rng.uniform(*params.pv_range_w, size=n)
    length = rng.uniform(*params.line_range_m, size=n)
    lines = tuple((0, k + 1, float(params.ohm_per_km * length[k] / 1e3)) for k in range(n))
    households = tuple(range(1, n + 1))
    network = NetworkCase(n + 1, lines, households, households, households, grid_bus=0,
                          v_min=params.v_min, v_max=params.v_max, v_base=params.v_base)
    T, h0, span = params.intervals, params.start_hour, params.span_hours
    if not (T >= 1 and span > 0 and 0 <= h0 and h0 + span <= 24.0 + 1e-9):
        raise ModelError("horizon must lie within one day: 0 <= start_hour, start_hour + span_hours <= 24")
    load, crit = load_profiles(np.random.default_rng(load_seed), n, T, params.critical_fraction,
                               params.light_w, params.fan_w, params.phone_w, h0, span)
    load, crit = load * params.load_scale, crit * params.load_scale
    pv = pv_profiles(pv_cap, T, params.irradiance, h0, span)
    dt = span / T
    blackout = None
    if params.blackout_hours is not None:
        a, b = (min(max(int(round((x - h0) / dt)), 0), T) for x in params.blackout_hours)
        blackout = (a, b)
    horizon = HorizonData(dt, load, crit, pv, blackout)
    case = Case(network, params.battery, params.weights, horizon)
    sigma = params.sigma_fraction * pv + (params.sigma_floor_w / 1e3) * (pv > 0)
    bundle = CaseBundle(case, sigma, params, pv_cap, length)
    if with_samples:
        bundle.fit = generate_synthetic_errors(sigma, fit_seed, params.fit_samples, params.error_family, clip=pv)
        bundle.heldout = generate_synthetic_errors(sigma, held_seed, params.heldout_samples,
                                                   params.error_family, clip=pv)
    return bundle


# -- file formats ---------------------------------------------------------------------

def write_horizon(path, case: Case) -> None:
    """Write ``interval,bus,load_kw,critical_kw,pv_kw`` rows (one per interval and bus)."""
    n, h = case.network, case.horizon
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["interval", "bus", "load_kw", "critical_kw", "pv_kw"])
        for t in range(h.n_intervals):
            for b in range(n.bus_count):
                lk = [k for k, lb in enumerate(n.load_bus) if lb == b]
                pk = [k for k, pb in enumerate(n.pv_bus) if pb == b]
                row = [t, b, float(h.load[t, lk].sum()), float(h.critical[t, lk].sum()), float(h.pv[t, pk].sum())]
                if any(row[2:]) or lk or pk:
                    w.writerow([row[0], row[1]] + [repr(v) for v in row[2:]])


def read_horizon(path, network: NetworkCase, dt: float, blackout=None) -> HorizonData:
    recs: dict[int, dict[int, tuple[float, float, float]]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [c.strip() for c in header] != ["interval", "bus", "load_kw", "critical_kw", "pv_kw"]:
            raise ModelError(f"{path}: expected header interval,bus,load_kw,critical_kw,pv_kw")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                t, b = int(row[0]), int(row[1])
                vals = tuple(float(v) for v in row[2:5])
            except (IndexError, ValueError) as exc:
                raise ModelError(f"{path}:{lineno}: malformed row {row!r}") from exc
            if len(vals) != 3:
                raise ModelError(f"{path}:{lineno}: malformed row {row!r}")
            recs.setdefault(t, {})[b] = vals
    T = max(recs) + 1 if recs else 0
    if sorted(recs) != list(range(T)):
        raise ModelError(f"{path}: intervals must run 0..{T - 1} without gaps")
    for kind in ("load_bus", "pv_bus"):
        buses = getattr(network, kind)
        if len(set(buses)) != len(buses):
            raise ModelError(f"{path}: horizon files need at most one {kind[:-4]} per bus")
    load = np.zeros((T, network.n_load))
    crit = np.zeros((T, network.n_load))
    pv = np.zeros((T, network.n_pv))
    for t, per_bus in recs.items():
        for k, b in enumerate(network.load_bus):
            lv, cv, _ = per_bus.get(b, (0.0, 0.0, 0.0))
            load[t, k], crit[t, k] = lv, cv
        for k, b in enumerate(network.pv_bus):
            pv[t, k] = per_bus.get(b, (0.0, 0.0, 0.0))[2]
    return HorizonData(dt, load, crit, pv, blackout)


def case_document(bundle_or_case, files: dict) -> dict:
    case = bundle_or_case.case if isinstance(bundle_or_case, CaseBundle) else bundle_or_case
    n, h = case.network, case.horizon
    doc = {
        "schema": CASE_SCHEMA,
        "intervals": h.n_intervals,
        "dt_hours": h.dt,
        "v_base": n.v_base,
        "s_base": n.s_base,
        "v_min": n.v_min,
        "v_max": n.v_max,
        "weights": asdict(case.weights),
        "battery": asdict(case.battery) if isinstance(case.battery, BatteryParams) else [asdict(b) for b in case.battery],
        "blackout": list(h.blackout) if h.blackout else None,
        "terminal_soc": case.terminal_soc,
        "files": files,
    }
    if isinstance(bundle_or_case, CaseBundle):
        doc["generator"] = {
            "start_hour": bundle_or_case.params.start_hour,
            "pv_capacity_w": bundle_or_case.pv_capacity_w.tolist(),
            "line_length_m": bundle_or_case.line_length_m.tolist(),
            "sigma_fraction": bundle_or_case.params.sigma_fraction,
            "error_family": bundle_or_case.params.error_family,
        }
        doc["sigma_kw"] = bundle_or_case.sigma.tolist()
    return doc


def write_case(out_dir, bundle: CaseBundle) -> Path:
    """Write every input file of a case bundle; returns the case JSON path."""
    from .uncertainty import write_samples

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {"topology": "topology.csv", "assets": "assets.csv", "horizon": "horizon.csv"}
    write_topology(out / files["topology"], bundle.case.network.lines)
    write_assets(out / files["assets"], bundle.case.network)
    write_horizon(out / files["horizon"], bundle.case)
    if bundle.fit is not None:
        files["samples"] = "samples_fit.csv"
        write_samples(out / files["samples"], bundle.fit, bundle.case.network.pv_bus)
    if bundle.heldout is not None:
        files["heldout"] = "samples_heldout.csv"
        write_samples(out / files["heldout"], bundle.heldout, bundle.case.network.pv_bus)
    path = out / "case.json"
    path.write_text(json.dumps(case_document(bundle, files), indent=1, sort_keys=True) + "\n")
    return path


def read_case(path) -> tuple[Case, dict]:
    """Load a case JSON (plus the CSV files it references)."""
    path = Path(path)
    doc = json.loads(path.read_text())
    if doc.get("schema") != CASE_SCHEMA:
        raise ModelError(f"{path}: unsupported case schema {doc.get('schema')!r}")
    base = path.parent
    files = doc["files"]
    network = load_network(base / files["topology"], base / files["assets"],
                           v_min=doc["v_min"], v_max=doc["v_max"], v_base=doc["v_base"], s_base=doc["s_base"])
    bo = doc.get("blackout")
    horizon = read_horizon(base / files["horizon"], network, doc["dt_hours"], tuple(bo) if bo else None)
    w = dict(doc["weights"])
    if isinstance(w.get("m_l"), list):
        w["m_l"] = tuple(w["m_l"])
    weights = CostWeights(**w)
    bat = doc["battery"]
    battery = BatteryParams(**bat) if isinstance(bat, dict) else tuple(BatteryParams(**b) for b in bat)
    case = Case(network, battery, weights, horizon, terminal_soc=bool(doc.get("terminal_soc", False)))
    case.check()
    return case, doc


def reduced_params(**overrides) -> CaseParams:
    """The 24-interval midday horizon (09:00-15:00 at 15-min resolution) used for fast studies."""
    return CaseParams(**{"intervals": 24, "start_hour": 9.0, "span_hours": 6.0, **overrides})
