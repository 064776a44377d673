"""Radial DC network: conductance matrix, asset placement and linear voltages.

Voltages are in per unit of the nominal bus voltage and powers in kW.  The
grid-connection bus is the voltage reference (slack); the linearised system is
solved on the remaining buses only.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

ASSET_KINDS = ("storage", "pv", "load", "grid")


class TopologyError(ValueError):
    """Invalid or disconnected network topology."""


class LinearizationError(RuntimeError):
    """The reduced voltage sensitivity system is singular."""


def build_conductance(lines, bus_count: int) -> np.ndarray:
    """Assemble the bus conductance (Laplacian) matrix in siemens.

    Parameters
    ----------
    lines : iterable of (from_bus, to_bus, resistance_ohm)
    bus_count : int

    Raises
    ------
    TopologyError
        On out-of-range buses, self loops, non-positive resistance, duplicate
        lines or a disconnected graph.
    """
    if bus_count < 1:
        raise TopologyError("network needs at least one bus")
    Y = np.zeros((bus_count, bus_count))
    seen = set()
    for a, b, r in lines:
        a, b, r = int(a), int(b), float(r)
        if not (0 <= a < bus_count and 0 <= b < bus_count):
            raise TopologyError(f"line ({a}, {b}) references a bus outside 0..{bus_count - 1}")
        if a == b:
            raise TopologyError(f"line ({a}, {b}) is a self loop")
        if not r > 0:
            raise TopologyError(f"line ({a}, {b}) has non-positive resistance {r}")
        key = (min(a, b), max(a, b))
        if key in seen:
            raise TopologyError(f"duplicate line between buses {key[0]} and {key[1]}")
        seen.add(key)
        g = 1.0 / r
        Y[a, a] += g
        Y[b, b] += g
        Y[a, b] -= g
        Y[b, a] -= g
    n_comp = connected_components(Y)
    if n_comp != 1:
        raise TopologyError(f"network graph is disconnected ({n_comp} components)")
    return Y


def connected_components(Y: np.ndarray) -> int:
    n = Y.shape[0]
    seen = np.zeros(n, dtype=bool)
    count = 0
    for start in range(n):
        if seen[start]:
            continue
        count += 1
        stack = [start]
        seen[start] = True
        while stack:
            i = stack.pop()
            for j in np.flatnonzero(Y[i] != 0):
                if not seen[j]:
                    seen[j] = True
                    stack.append(j)
    return count


def placement_matrix(buses, bus_count: int) -> np.ndarray:
    """Bus-by-asset 0/1 matrix with a single 1 in each column."""
    buses = [int(b) for b in buses]
    C = np.zeros((bus_count, len(buses)))
    for k, b in enumerate(buses):
        if not 0 <= b < bus_count:
            raise TopologyError(f"asset {k} placed at unknown bus {b}")
        C[b, k] = 1.0
    return C


@dataclass(frozen=True)
class NetworkCase:
    """Immutable network description.

    ``lines`` carries resistances in ohm; ``v_base`` (volt) and ``s_base``
    (kW) convert the conductance matrix to per unit.
    """

    bus_count: int
    lines: tuple
    storage_bus: tuple
    pv_bus: tuple
    load_bus: tuple
    grid_bus: int = 0
    v_min: float = 0.95
    v_max: float = 1.05
    v_base: float = 48.0
    s_base: float = 1.0
    v_op: np.ndarray | None = field(default=None, compare=False)
    i_op: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        if not 0 < self.v_min < self.v_max:
            raise TopologyError(f"voltage window must satisfy 0 < v_min < v_max, got ({self.v_min}, {self.v_max})")
        if not 0 <= self.grid_bus < self.bus_count:
            raise TopologyError(f"grid bus {self.grid_bus} outside the network")
        object.__setattr__(self, "lines", tuple((int(a), int(b), float(r)) for a, b, r in self.lines))
        for name in ("storage_bus", "pv_bus", "load_bus"):
            object.__setattr__(self, name, tuple(int(b) for b in getattr(self, name)))
        Y = build_conductance(self.lines, self.bus_count)
        object.__setattr__(self, "_Y", Y)
        v = np.ones(self.bus_count) if self.v_op is None else np.asarray(self.v_op, dtype=float)
        i = np.zeros(self.bus_count) if self.i_op is None else np.asarray(self.i_op, dtype=float)
        if v.shape != (self.bus_count,) or i.shape != (self.bus_count,):
            raise TopologyError("operating point vectors must have one entry per bus")
        v.setflags(write=False)
        i.setflags(write=False)
        object.__setattr__(self, "v_op", v)
        object.__setattr__(self, "i_op", i)
        for name in ("storage", "pv", "load"):
            placement_matrix(getattr(self, f"{name}_bus"), self.bus_count)

    @property
    def conductance(self) -> np.ndarray:
        """Conductance matrix in siemens."""
        return self._Y.copy()

    @property
    def z_base(self) -> float:
        return self.v_base**2 / (self.s_base * 1e3)

    @property
    def conductance_pu(self) -> np.ndarray:
        return self._Y * self.z_base

    @property
    def line_count(self) -> int:
        return len(self.lines)

    @property
    def n_storage(self) -> int:
        return len(self.storage_bus)

    @property
    def n_pv(self) -> int:
        return len(self.pv_bus)

    @property
    def n_load(self) -> int:
        return len(self.load_bus)

    @property
    def non_slack(self) -> np.ndarray:
        return np.array([b for b in range(self.bus_count) if b != self.grid_bus], dtype=int)

    @property
    def C_storage(self) -> np.ndarray:
        return placement_matrix(self.storage_bus, self.bus_count)

    @property
    def C_pv(self) -> np.ndarray:
        return placement_matrix(self.pv_bus, self.bus_count)

    @property
    def C_load(self) -> np.ndarray:
        return placement_matrix(self.load_bus, self.bus_count)

    @property
    def C_grid(self) -> np.ndarray:
        return placement_matrix([self.grid_bus], self.bus_count)

    def with_operating_point(self, v_op, i_op) -> "NetworkCase":
        return NetworkCase(self.bus_count, self.lines, self.storage_bus, self.pv_bus, self.load_bus,
                           self.grid_bus, self.v_min, self.v_max, self.v_base, self.s_base,
                           np.asarray(v_op, dtype=float), np.asarray(i_op, dtype=float))


@dataclass(frozen=True)
class FlowSensitivity:
    """Linearised voltage model on the non-slack buses.

    ``v_r = G_inv @ (P_r + offset + slack_term)`` where ``offset`` is
    ``diag(I_o) V_o`` restricted to the non-slack buses and ``slack_term``
    carries the coupling to the fixed reference voltage.
    """

    G: np.ndarray
    G_inv: np.ndarray
    offset: np.ndarray
    slack_term: np.ndarray
    buses: np.ndarray
    slack_bus: int
    slack_voltage: float
    G_full: np.ndarray

    def voltages(self, p_inj: np.ndarray) -> np.ndarray:
        """Full bus voltage vector(s) for injection vector(s) over all buses.

        ``p_inj`` may have leading batch dimensions; the last axis is buses.
        """
        p_inj = np.asarray(p_inj, dtype=float)
        p_r = p_inj[..., self.buses]
        v_r = (p_r + self.offset + self.slack_term) @ self.G_inv.T
        out = np.empty(p_inj.shape)
        out[..., self.buses] = v_r
        out[..., self.slack_bus] = self.slack_voltage
        return out


def linearize(network: NetworkCase) -> FlowSensitivity:
    """Voltage sensitivity ``G = diag(V_o) Y + diag(I_o)`` on the reduced system.

    ``G`` is scaled by ``s_base`` so that injections are in kW while
    voltages stay in per unit.
    """
    Y = network.conductance_pu
    V_o, I_o = network.v_op, network.i_op
    G_full = network.s_base * (np.diag(V_o) @ Y + np.diag(I_o))
    r = network.non_slack
    s = network.grid_bus
    G = G_full[np.ix_(r, r)]
    if r.size == 0:
        G_inv = np.zeros((0, 0))
    else:
        cond = np.linalg.cond(G)
        if not np.isfinite(cond) or cond > 1e12:
            raise LinearizationError(
                f"reduced sensitivity matrix is singular at operating point V_o={V_o.tolist()}, I_o={I_o.tolist()}")
        G_inv = np.linalg.inv(G)
    offset = network.s_base * (I_o * V_o)[r]
    slack_v = float(V_o[s])
    slack_term = -G_full[np.ix_(r, [s])].ravel() * slack_v
    for arr in (G, G_inv, offset, slack_term, G_full):
        arr.setflags(write=False)
    return FlowSensitivity(G, G_inv, offset, slack_term, r, s, slack_v, G_full)


def refine_operating_point(network: NetworkCase, p_inj: np.ndarray) -> NetworkCase:
    """One fixed-point refinement: solve at the current point, reset ``V_o`` and ``I_o = Y V_o``."""
    sens = linearize(network)
    v = sens.voltages(p_inj)
    return network.with_operating_point(v, network.conductance_pu @ v)


def injected_power(network: NetworkCase, pg, pd, pc, response, pv, load, zeta) -> np.ndarray:
    """Bus injections ``C_g Pg + C_s (Pd - Pc + response) + C_pv (Ppv - zeta) - C_l Pl``.

    All asset arguments are per-asset vectors for one interval (``pg`` scalar).
    """
    pd, pc, response = (np.asarray(a, dtype=float) for a in (pd, pc, response))
    pv, zeta, load = (np.asarray(a, dtype=float) for a in (pv, zeta, load))
    if not (pd.shape == pc.shape == response.shape == (network.n_storage,)):
        raise ValueError("storage vectors must have one entry per storage")
    if not (pv.shape == zeta.shape == (network.n_pv,)):
        raise ValueError("pv vectors must have one entry per pv unit")
    if load.shape != (network.n_load,):
        raise ValueError("load vector must have one entry per load")
    p = np.zeros(network.bus_count)
    p[network.grid_bus] += float(pg)
    np.add.at(p, list(network.storage_bus), pd - pc + response)
    np.add.at(p, list(network.pv_bus), pv - zeta)
    np.add.at(p, list(network.load_bus), -load)
    return p


# -- file formats -------------------------------------------------------------------

def read_topology(path) -> list[tuple[int, int, float]]:
    """Read ``from,to,resistance_ohm`` rows."""
    lines = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != ["from", "to", "resistance_ohm"]:
            raise TopologyError(f"{path}: expected header from,to,resistance_ohm")
        for lineno, row in enumerate(reader, start=2):
            try:
                lines.append((int(row["from"]), int(row["to"]), float(row["resistance_ohm"])))
            except (TypeError, ValueError) as exc:
                raise TopologyError(f"{path}:{lineno}: malformed row {row}") from exc
    return lines


def write_topology(path, lines) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["from", "to", "resistance_ohm"])
        for a, b, r in lines:
            w.writerow([a, b, repr(float(r))])


def read_assets(path) -> dict[str, list[tuple[str, int]]]:
    """Read ``asset_id,kind,bus`` rows grouped by kind, in file order."""
    out: dict[str, list[tuple[str, int]]] = {k: [] for k in ASSET_KINDS}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != ["asset_id", "kind", "bus"]:
            raise TopologyError(f"{path}: expected header asset_id,kind,bus")
        for lineno, row in enumerate(reader, start=2):
            kind = (row["kind"] or "").strip()
            if kind not in ASSET_KINDS:
                raise TopologyError(f"{path}:{lineno}: unknown asset kind {kind!r}")
            try:
                out[kind].append((row["asset_id"], int(row["bus"])))
            except (TypeError, ValueError) as exc:
                raise TopologyError(f"{path}:{lineno}: malformed row {row}") from exc
    if len(out["grid"]) != 1:
        raise TopologyError(f"{path}: exactly one grid connection is required, found {len(out['grid'])}")
    return out


def write_assets(path, network: NetworkCase) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["asset_id", "kind", "bus"])
        w.writerow(["grid0", "grid", network.grid_bus])
        for kind, buses in (("storage", network.storage_bus), ("pv", network.pv_bus), ("load", network.load_bus)):
            for k, b in enumerate(buses):
                w.writerow([f"{kind}{k}", kind, b])


def load_network(topology_path, assets_path, **kwargs) -> NetworkCase:
    lines = read_topology(topology_path)
    assets = read_assets(assets_path)
    buses = {int(b) for line in lines for b in line[:2]}
    for group in assets.values():
        buses.update(b for _, b in group)
    bus_count = max(buses) + 1 if buses else 1
    return NetworkCase(
        bus_count=bus_count,
        lines=tuple(lines),
        storage_bus=tuple(b for _, b in assets["storage"]),
        pv_bus=tuple(b for _, b in assets["pv"]),
        load_bus=tuple(b for _, b in assets["load"]),
        grid_bus=assets["grid"][0][1],
        **kwargs,
    )
