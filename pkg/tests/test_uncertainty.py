from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mgjcc.uncertainty import (AmbiguityDomainError, ErrorMoments, ErrorSampleSet, InsufficientSamplesError,
                               SampleFileError, ambiguity_set, assemble_covariance, estimate_moments,
                               generate_synthetic_errors, lambda_factor, read_moments, read_samples,
                               scenario_sample_bound, write_moments, write_samples)


@pytest.mark.parametrize("kind, eps, lam", [
    ("unimodal", 1 / 9, 2.0),
    ("symmetric", 0.02, 5.0),
    ("unimodal_symmetric", 2 / 81, 3.0),
])
def test_lambda_closed_forms(kind, eps, lam):
    assert lambda_factor(kind, eps) == pytest.approx(lam, abs=1e-12)


@pytest.mark.parametrize("kind, edge", [("unimodal", 1 / 3), ("symmetric", 0.5), ("unimodal_symmetric", 1 / 6)])
def test_lambda_domain(kind, edge):
    for bad in (0.0, edge, edge + 0.01, -0.1):
        with pytest.raises(AmbiguityDomainError, match=kind):
            lambda_factor(kind, bad)
    assert ambiguity_set(kind).domain == (0.0, pytest.approx(edge))


def test_unknown_set():
    with pytest.raises(ValueError, match="unknown ambiguity set"):
        ambiguity_set("gaussian")


@given(st.floats(min_value=1e-6, max_value=1 / 6 - 1e-9))
def test_lambda_ordering(eps):
    s, u, us = (lambda_factor(k, eps) for k in ("symmetric", "unimodal", "unimodal_symmetric"))
    assert s > u > us


@given(st.floats(min_value=1e-5, max_value=0.3), st.floats(min_value=1.01, max_value=10))
def test_lambda_decreasing(eps, factor):
    assert lambda_factor("unimodal", eps / factor) > lambda_factor("unimodal", eps)


def test_scenario_bound():
    assert scenario_sample_bound(0.05, 0.01, 10) == 585
    assert scenario_sample_bound(0.01, 0.05, 50) == 10600
    eps = 0.9
    assert scenario_sample_bound(eps, math.exp(-1), 1) == math.ceil(2 * 2 / eps)
    with pytest.raises(ValueError):
        scenario_sample_bound(0.0, 0.1, 1)


def test_two_point_moments():
    m = estimate_moments(ErrorSampleSet({0: [[1.0], [-1.0]]}, 1))
    assert m.mean[0, 0] == 0.0
    assert m.covariance[0, 0, 0] == pytest.approx(2.0)


def test_identical_samples():
    m = estimate_moments(ErrorSampleSet({0: [[0.3], [0.3], [0.3]]}, 1))
    assert m.mean[0, 0] == pytest.approx(0.3)
    assert m.covariance[0, 0, 0] == pytest.approx(0.0, abs=1e-15)


def test_full_correlation_is_rank_one():
    S = assemble_covariance(np.array([0.5, 0.5]), 1.0)
    w = np.linalg.eigvalsh(S)
    assert w[0] == pytest.approx(0.0, abs=1e-12)
    assert w[1] == pytest.approx(0.5, abs=1e-12)


def test_correlation_out_of_range():
    with pytest.raises(ValueError):
        assemble_covariance(np.ones(2), 1.5)


def test_insufficient_samples():
    with pytest.raises(InsufficientSamplesError):
        estimate_moments(ErrorSampleSet({0: [[1.0]]}, 1))
    with pytest.raises(InsufficientSamplesError):
        estimate_moments(ErrorSampleSet({0: [[1.0], [2.0]]}, 1), intervals=[0, 1])


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 40), st.integers(1, 3), st.integers(0, 2**31))
def test_moments_match_numpy(n, k, seed):
    z = np.random.default_rng(seed).normal(size=(n, k))
    m = estimate_moments(ErrorSampleSet({0: z}, k), correlation="empirical")
    np.testing.assert_allclose(m.mean[0], z.mean(axis=0), atol=1e-12)
    np.testing.assert_allclose(m.covariance[0], np.atleast_2d(np.cov(z.T, ddof=1)), atol=1e-10)
    L = m.sqrt_cov()[0]
    np.testing.assert_allclose(L @ L.T, m.covariance[0], atol=1e-10)


def test_total_std_and_zeros():
    m = ErrorMoments(np.zeros((1, 2)), np.array([[[1.0, 0.5], [0.5, 4.0]]]))
    assert m.total_std()[0] == pytest.approx(math.sqrt(6.0))
    np.testing.assert_allclose(m.correlation[0], [[1, 0.25], [0.25, 1]])
    z = ErrorMoments.zeros(3, 2)
    assert z.total_std().sum() == 0 and np.all(z.correlation[:, 0, 0] == 1)


def test_synthetic_zero_sigma():
    s = generate_synthetic_errors(np.zeros((3, 2)), 0, 10)
    assert all(np.all(a == 0) for a in s.samples.values())


@pytest.mark.parametrize("family", ["gaussian", "laplace", "triangular", "mixture"])
def test_synthetic_determinism_and_variance(family):
    a = generate_synthetic_errors(np.ones((1, 1)), 7, 100_000, family)
    b = generate_synthetic_errors(np.ones((1, 1)), 7, 100_000, family)
    np.testing.assert_array_equal(a.samples[0], b.samples[0])
    assert np.std(a.samples[0], ddof=1) == pytest.approx(1.0, rel=0.01)


def test_synthetic_clip_and_errors():
    s = generate_synthetic_errors(np.ones((2, 1)), 0, 1000, clip=np.full((2, 1), 0.5))
    assert max(a.max() for a in s.samples.values()) <= 0.5
    with pytest.raises(ValueError):
        generate_synthetic_errors(np.ones((2, 1)), 0, 10, family="cauchy")
    with pytest.raises(ValueError):
        generate_synthetic_errors(-np.ones((2, 1)), 0, 10)


def test_sample_file_roundtrip(tmp_path):
    s = generate_synthetic_errors(np.full((3, 2), 0.1), 1, 5)
    write_samples(tmp_path / "s.csv", s, (4, 7))
    back = read_samples(tmp_path / "s.csv", (4, 7))
    for t in s.intervals:
        np.testing.assert_array_equal(back.samples[t], s.samples[t])


@pytest.mark.parametrize("body, msg", [
    ("a,b,c\n", "header"),
    ("interval,bus,error_kw\n0,4,x\n", "malformed"),
    ("interval,bus,error_kw\n0,4,nan\n", "non-finite"),
    ("interval,bus,error_kw\n0,9,1.0\n", "no PV unit"),
    ("interval,bus,error_kw\n0,4,1.0\n0,4,1.0\n0,7,1.0\n", "unequal"),
])
def test_sample_file_errors(tmp_path, body, msg):
    (tmp_path / "s.csv").write_text(body)
    with pytest.raises(SampleFileError, match=msg):
        read_samples(tmp_path / "s.csv", (4, 7))


def test_moments_file_roundtrip(tmp_path):
    m = estimate_moments(generate_synthetic_errors(np.full((2, 2), 0.1), 3, 50), correlation="empirical")
    write_moments(tmp_path / "m.json", m)
    back = read_moments(tmp_path / "m.json")
    np.testing.assert_allclose(back.covariance, m.covariance, atol=1e-15)


def test_indefinite_covariance_rejected():
    with pytest.raises(ValueError, match="not PSD"):
        ErrorMoments.from_json({"mean": [[0, 0]], "covariance": [[[1, 2], [2, 1]]]})


def test_fingerprints_skip_zero_rows():
    s = ErrorSampleSet({0: [[0.0], [0.0]], 1: [[0.1], [0.2]]}, 1)
    assert len(s.fingerprints()) == 2
    with pytest.raises(SampleFileError):
        ErrorSampleSet({0: [[np.inf]]}, 1)
    with pytest.raises(SampleFileError):
        ErrorSampleSet({0: [[1.0], [2.0]], 1: [[1.0]]}, 1).as_array()
