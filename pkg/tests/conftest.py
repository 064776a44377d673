"""Shared fixtures: small toy networks and the generated reduced-horizon case."""

from __future__ import annotations

import numpy as np
import pytest

from mgjcc.casegen import generate_case, reduced_params
from mgjcc.netmodel import NetworkCase
from mgjcc.opf import BatteryParams, Case, CostWeights, HorizonData
from mgjcc.uncertainty import estimate_moments

ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])


@pytest.fixture(scope="session")
def reduced_bundle():
    return generate_case(0, reduced_params())


@pytest.fixture(scope="session")
def reduced_moments(reduced_bundle):
    b = reduced_bundle
    return estimate_moments(b.fit, range(b.case.horizon.n_intervals))


def toy_case(T=2, load=0.01, pv=0.0, critical=None, n_storage=1, dt=0.25, blackout=None,
             weights=None, battery=None) -> Case:
    """Radial feeder: grid at bus 0, one household per further bus."""
    n = max(n_storage, 1)
    lines = [(0, k, 0.8) for k in range(1, n + 1)]
    buses = tuple(range(1, n + 1))
    net = NetworkCase(n + 1, lines, buses, buses, buses)
    load = np.broadcast_to(np.asarray(load, dtype=float), (T, n)).copy()
    crit = np.zeros_like(load) if critical is None else np.broadcast_to(critical, (T, n)).copy()
    pv = np.broadcast_to(np.asarray(pv, dtype=float), (T, n)).copy()
    h = HorizonData(dt, load, crit, pv, blackout)
    return Case(net, battery or BatteryParams(), weights or CostWeights(), h)
