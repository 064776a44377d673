from __future__ import annotations

import numpy as np
import pytest

from conftest import toy_case
from mgjcc.drjcc import (RateConfigError, RateVector, bonferroni_allocate, build_drjcc, check_rates, scc_allocate,
                         solve_drjcc)
from mgjcc.opf import ModelError, solve_deterministic
from mgjcc.uncertainty import AmbiguityDomainError, ErrorMoments


@pytest.mark.parametrize("ej, expected", [(0.05, 0.008333), (0.02, 0.003333), (0.01, 0.001667)])
def test_bonferroni(ej, expected):
    r = bonferroni_allocate(ej)
    assert r.eps == pytest.approx((expected,) * 6, abs=5e-7)
    assert sum(r.eps) == pytest.approx(ej, abs=1e-15)


def test_bonferroni_errors():
    with pytest.raises(RateConfigError):
        bonferroni_allocate(0.05, n_constraints=5)
    with pytest.raises(RateConfigError, match="lower bound"):
        bonferroni_allocate(0.005)


@pytest.mark.parametrize("ej", [0.05, 0.01])
def test_scc(ej):
    r = scc_allocate(ej)
    assert r.eps == (ej,) * 6
    assert not r.joint


def test_rate_vector_validation():
    with pytest.raises(RateConfigError, match="expected 6"):
        RateVector((0.01,) * 5, 0.05)
    with pytest.raises(RateConfigError, match="sum"):
        RateVector((0.01,) * 6, 0.05)
    with pytest.raises(RateConfigError, match="outside"):
        RateVector((0.0005, 0.01, 0.01, 0.01, 0.01, 0.0095), 0.05)
    r = RateVector((0.02, 0.02, 0.0025, 0.0025, 0.0025, 0.0025), 0.05)
    assert RateVector.from_json(r.to_json()) == r


def test_domain_error_names_the_family():
    r = RateVector((0.2, 0.001, 0.001, 0.001, 0.001, 0.001), 0.3)
    with pytest.raises(AmbiguityDomainError, match=r"constraint 1 \(droop_regulation\)"):
        check_rates("unimodal_symmetric", r)


@pytest.fixture(scope="module")
def det_cost(reduced_bundle):
    return solve_deterministic(reduced_bundle.case).cost


@pytest.mark.parametrize("kind", ["symmetric", "unimodal", "unimodal_symmetric"])
def test_zero_covariance_degenerates(reduced_bundle, det_cost, kind):
    case = reduced_bundle.case
    zero = ErrorMoments.zeros(case.horizon.n_intervals, case.network.n_pv)
    sol = solve_drjcc(case, zero, kind, bonferroni_allocate(0.05))
    assert sol.cost == pytest.approx(det_cost, rel=1e-6)


def test_bonferroni_costlier_than_deterministic(reduced_bundle, reduced_moments, det_cost):
    sol = solve_drjcc(reduced_bundle.case, reduced_moments, "unimodal", bonferroni_allocate(0.05))
    assert sol.feasible and sol.cost > det_cost * (1 + 1e-6)
    assert sol.schedule.solve_info["ambiguity_set"] == "unimodal"


def test_halving_rates_never_cheaper(reduced_bundle, reduced_moments):
    case, m = reduced_bundle.case, reduced_moments
    r = RateVector((0.01, 0.01, 0.002, 0.002, 0.002, 0.002), 0.05)
    half = RateVector(tuple(e / 2 for e in r.eps), 0.025, eps_lower=0.001)
    c1 = solve_drjcc(case, m, "unimodal", r).cost
    c2 = solve_drjcc(case, m, "unimodal", half).cost
    assert c2 >= c1 - 1e-9 * abs(c1)


def test_set_ordering_at_fixed_rates(reduced_bundle, reduced_moments):
    r = bonferroni_allocate(0.02)
    c = [solve_drjcc(reduced_bundle.case, reduced_moments, k, r).cost
         for k in ("symmetric", "unimodal", "unimodal_symmetric")]
    assert c[0] >= c[1] >= c[2]


def test_scc_cheaper_than_bonferroni(reduced_bundle, reduced_moments):
    b = solve_drjcc(reduced_bundle.case, reduced_moments, "unimodal", bonferroni_allocate(0.02)).cost
    s = solve_drjcc(reduced_bundle.case, reduced_moments, "unimodal", scc_allocate(0.02)).cost
    assert s <= b


def test_table_pattern_rates_not_costlier(reduced_bundle, reduced_moments):
    ej = 0.05
    rest = (ej - 4 * 0.001) / 2
    pattern = RateVector((rest, rest, 0.001, 0.001, 0.001, 0.001), ej)
    b = solve_drjcc(reduced_bundle.case, reduced_moments, "unimodal", bonferroni_allocate(ej)).cost
    p = solve_drjcc(reduced_bundle.case, reduced_moments, "unimodal", pattern).cost
    assert p <= b


def test_infeasible_reserve_is_a_status():
    case = toy_case(T=2, load=0.0, pv=0.01)
    huge = ErrorMoments(np.zeros((2, 1)), np.full((2, 1, 1), 1.0))
    sol = solve_drjcc(case, huge, "unimodal", bonferroni_allocate(0.05))
    assert not sol.feasible
    assert sol.status == "infeasible"
    assert sol.report is not None


def test_moment_shape_mismatch():
    case = toy_case(T=2)
    with pytest.raises(ModelError):
        build_drjcc(case, ErrorMoments.zeros(3, 1), "unimodal", bonferroni_allocate(0.05))


def test_tightened_families_are_cones(reduced_bundle, reduced_moments):
    prob = build_drjcc(reduced_bundle.case, reduced_moments, "unimodal", bonferroni_allocate(0.05))
    kinds = {b.family: b.kind for b in prob.program.blocks}
    for fam in ("droop_regulation", "discharge_limit", "charge_limit", "energy_floor", "voltage_upper",
                "voltage_lower"):
        assert kinds[fam] == "soc"
    np.testing.assert_allclose(prob.lam, (2 / 3) * np.sqrt(1 / (0.05 / 6)))
