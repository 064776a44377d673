"""Forecast-error samples, moment estimates and ambiguity-set safety factors."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

PSD_CLIP = 1e-10


class InsufficientSamplesError(ValueError):
    pass


class AmbiguityDomainError(ValueError):
    pass


class SampleFileError(ValueError):
    pass


@dataclass(frozen=True)
class AmbiguitySpec:
    kind: str
    eps_max: float

    def __post_init__(self):
        if self.kind not in _LAMBDA:
            raise ValueError(f"unknown ambiguity set {self.kind!r}; choose from {sorted(_LAMBDA)}")

    @property
    def domain(self) -> tuple[float, float]:
        return (0.0, self.eps_max)

    def contains(self, eps: float) -> bool:
        return 0.0 < eps < self.eps_max


_LAMBDA = {
    "unimodal": lambda e: (2.0 / 3.0) * math.sqrt(1.0 / e),
    "symmetric": lambda e: math.sqrt(1.0 / (2.0 * e)),
    "unimodal_symmetric": lambda e: math.sqrt(2.0 / (9.0 * e)),
}

AMBIGUITY_SETS = {
    "unimodal": AmbiguitySpec("unimodal", 1.0 / 3.0),
    "symmetric": AmbiguitySpec("symmetric", 1.0 / 2.0),
    "unimodal_symmetric": AmbiguitySpec("unimodal_symmetric", 1.0 / 6.0),
}


def ambiguity_set(kind) -> AmbiguitySpec:
    if isinstance(kind, AmbiguitySpec):
        return kind
    try:
        return AMBIGUITY_SETS[kind]
    except KeyError:
        raise ValueError(f"unknown ambiguity set {kind!r}; choose from {sorted(AMBIGUITY_SETS)}") from None


def lambda_factor(spec, epsilon: float) -> float:
    """Safety factor multiplying the standard-deviation term for violation rate ``epsilon``."""
    spec = ambiguity_set(spec)
    if not spec.contains(epsilon):
        raise AmbiguityDomainError(
            f"epsilon={epsilon!r} outside the {spec.kind} set's valid interval (0, {spec.eps_max:.6g})")
    return _LAMBDA[spec.kind](float(epsilon))


def scenario_sample_bound(epsilon: float, beta: float, n_decision: int) -> int:
    """Samples needed by the scenario approach: ``ceil(2/eps (ln(1/beta) + n))``."""
    if not (0 < epsilon < 1 and 0 < beta < 1 and n_decision >= 1):
        raise ValueError("need 0 < epsilon < 1, 0 < beta < 1 and n_decision >= 1")
    return math.ceil((2.0 / epsilon) * (math.log(1.0 / beta) + n_decision))


@dataclass
class ErrorSampleSet:
    """Forecast-error samples in kW: ``samples[t]`` has shape ``(N_s, n_pv)``."""

    samples: dict[int, np.ndarray]
    n_pv: int

    def __post_init__(self):
        clean = {}
        for t, arr in self.samples.items():
            arr = np.asarray(arr, dtype=float)
            if arr.ndim != 2 or arr.shape[1] != self.n_pv:
                raise SampleFileError(f"interval {t}: samples must have shape (N_s, {self.n_pv})")
            if not np.all(np.isfinite(arr)):
                raise SampleFileError(f"interval {t}: non-finite sample")
            clean[int(t)] = arr
        self.samples = dict(sorted(clean.items()))

    @property
    def intervals(self) -> list[int]:
        return list(self.samples)

    def sample_count(self, t: int) -> int:
        return self.samples[t].shape[0]

    def as_array(self, intervals=None) -> np.ndarray:
        """Stack to ``(N_s, T, n_pv)``; every interval must have the same count."""
        intervals = self.intervals if intervals is None else list(intervals)
        counts = {self.sample_count(t) for t in intervals}
        if len(counts) != 1:
            raise SampleFileError(f"intervals carry different sample counts {sorted(counts)}")
        return np.stack([self.samples[t] for t in intervals], axis=1)

    def fingerprints(self) -> set[bytes]:
        """Per-(interval, sample) hashes used to detect overlap between sample pools.

        All-zero rows (intervals without uncertainty) are skipped.
        """
        import hashlib

        out = set()
        for t, arr in self.samples.items():
            for row in np.round(arr, 12):
                if not row.any():
                    continue
                out.add(hashlib.sha1(np.int64(t).tobytes() + row.tobytes()).digest())
        return out


@dataclass(frozen=True)
class ErrorMoments:
    """Per-interval mean (kW), covariance (kW^2) and correlation over PV units."""

    mean: np.ndarray  # (T, n_pv)
    covariance: np.ndarray  # (T, n_pv, n_pv)

    @property
    def n_intervals(self) -> int:
        return self.mean.shape[0]

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(np.einsum("tii->ti", self.covariance))

    @property
    def correlation(self) -> np.ndarray:
        s = self.std
        denom = s[:, :, None] * s[:, None, :]
        with np.errstate(divide="ignore", invalid="ignore"):
            corr = np.where(denom > 0, self.covariance / np.where(denom > 0, denom, 1.0), 0.0)
        idx = np.arange(self.mean.shape[1])
        corr[:, idx, idx] = 1.0
        return np.clip(corr, -1.0, 1.0)

    def total_mean(self) -> np.ndarray:
        """Sum of means across PV units per interval."""
        return self.mean.sum(axis=1)

    def total_std(self) -> np.ndarray:
        """Standard deviation of the summed error, ``sqrt(1' Sigma 1)``."""
        return np.sqrt(np.maximum(self.covariance.sum(axis=(1, 2)), 0.0))

    def sqrt_cov(self) -> np.ndarray:
        """Symmetric PSD square roots ``L`` with ``L L' = Sigma`` per interval."""
        out = np.empty_like(self.covariance)
        for t, S in enumerate(self.covariance):
            w, V = np.linalg.eigh(S)
            out[t] = (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T
        return out

    @classmethod
    def zeros(cls, n_intervals: int, n_pv: int) -> "ErrorMoments":
        return cls(np.zeros((n_intervals, n_pv)), np.zeros((n_intervals, n_pv, n_pv)))

    def scaled(self, factor: float) -> "ErrorMoments":
        return ErrorMoments(self.mean * factor, self.covariance * factor**2)

    def to_json(self) -> dict:
        return {
            "schema": "mgjcc.moments/1",
            "n_intervals": int(self.n_intervals),
            "n_pv": int(self.mean.shape[1]),
            "mean": self.mean.tolist(),
            "covariance": self.covariance.tolist(),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "ErrorMoments":
        mean = np.asarray(doc["mean"], dtype=float)
        cov = np.asarray(doc["covariance"], dtype=float)
        return cls(mean, check_psd(cov))


def check_psd(cov: np.ndarray) -> np.ndarray:
    """Symmetrise, clip tiny negative eigenvalues, reject clearly indefinite matrices."""
    cov = np.asarray(cov, dtype=float)
    single = cov.ndim == 2
    covs = cov[None] if single else cov
    out = np.empty_like(covs)
    for t, S in enumerate(covs):
        S = 0.5 * (S + S.T)
        w, V = np.linalg.eigh(S)
        if w.size and w.min() < -PSD_CLIP:
            raise ValueError(f"covariance for interval {t} is not PSD (min eigenvalue {w.min():.3e})")
        if w.size and w.min() < 0:
            S = (V * np.clip(w, 0.0, None)) @ V.T
        out[t] = S
    return out[0] if single else out


def assemble_covariance(std: np.ndarray, correlation=None) -> np.ndarray:
    """Covariance from per-unit standard deviations and pairwise correlations.

    ``correlation`` defaults to independence.  It may be a scalar applied to
    every off-diagonal pair or a full matrix.
    """
    std = np.asarray(std, dtype=float)
    n = std.size
    if correlation is None:
        R = np.eye(n)
    else:
        R = np.array(np.broadcast_to(np.asarray(correlation, dtype=float), (n, n)))
        np.fill_diagonal(R, 1.0)
    if np.any(np.abs(R) > 1.0 + 1e-12):
        raise ValueError("correlations must lie in [-1, 1]")
    return check_psd(R * np.outer(std, std))


def estimate_moments(samples: ErrorSampleSet, intervals=None, correlation="independent") -> ErrorMoments:
    """Empirical per-interval moments.

    The per-unit variances use the ``N_s - 1`` denominator.  Cross-unit terms
    are ``gamma * sigma_a * sigma_b`` with ``gamma`` taken from the data
    (``"empirical"``), fixed to zero (``"independent"``) or given explicitly.
    """
    intervals = samples.intervals if intervals is None else list(intervals)
    means, covs = [], []
    for t in intervals:
        if t not in samples.samples:
            raise InsufficientSamplesError(f"interval {t} has no samples")
        z = samples.samples[t]
        if z.shape[0] < 2:
            raise InsufficientSamplesError(f"interval {t} has {z.shape[0]} sample(s); at least 2 are needed")
        mu = z.mean(axis=0)
        dev = z - mu
        var = np.sum(dev**2, axis=0) / (z.shape[0] - 1)
        sd = np.sqrt(var)
        if isinstance(correlation, str) and correlation == "independent":
            gamma = None
        elif isinstance(correlation, str) and correlation == "empirical":
            c = dev.T @ dev / (z.shape[0] - 1)
            denom = np.outer(sd, sd)
            gamma = np.where(denom > 0, c / np.where(denom > 0, denom, 1.0), 0.0)
        else:
            gamma = correlation
        # second-moment matrix about the origin, then centre it
        second = assemble_covariance(sd, gamma) + np.outer(mu, mu)
        means.append(mu)
        covs.append(check_psd(second - np.outer(mu, mu)))
    return ErrorMoments(np.array(means), np.array(covs))


# -- synthetic errors ------------------------------------------------------------------

FAMILIES = ("gaussian", "laplace", "triangular", "mixture")


def generate_synthetic_errors(sigma, seed, n_samples: int, family: str = "gaussian",
                              intervals=None, clip=None) -> ErrorSampleSet:
    """Zero-mean errors with per-interval, per-unit standard deviation ``sigma``.

    Parameters
    ----------
    sigma : array (T, n_pv)
        Standard deviation envelope in kW.
    seed : int or numpy SeedSequence
    n_samples : int
        Samples per interval.
    family : {"gaussian", "laplace", "triangular", "mixture"}
        All families are scaled to unit variance; the first three are
        unimodal and symmetric about zero.  ``mixture`` is a symmetric
        two-component Gaussian mixture (bimodal when separated).
    clip : array (T, n_pv), optional
        Upper bound on errors, e.g. the PV forecast itself.
    """
    if family not in FAMILIES:
        raise ValueError(f"unknown error family {family!r}; choose from {FAMILIES}")
    sigma = np.asarray(sigma, dtype=float)
    if sigma.ndim != 2 or np.any(sigma < 0):
        raise ValueError("sigma must be a non-negative (T, n_pv) array")
    T, n_pv = sigma.shape
    rng = np.random.default_rng(seed)
    shape = (n_samples, T, n_pv)
    if family == "gaussian":
        u = rng.standard_normal(shape)
    elif family == "laplace":
        u = rng.laplace(0.0, 1.0 / math.sqrt(2.0), shape)
    elif family == "triangular":
        u = rng.triangular(-math.sqrt(6.0), 0.0, math.sqrt(6.0), shape)
    else:
        sign = rng.choice([-1.0, 1.0], size=shape)
        # components at +-0.8 with spread 0.6 give unit variance
        u = sign * 0.8 + 0.6 * rng.standard_normal(shape)
    z = u * sigma[None]
    if clip is not None:
        z = np.minimum(z, np.asarray(clip, dtype=float)[None])
    intervals = range(T) if intervals is None else list(intervals)
    return ErrorSampleSet({int(t): z[:, k, :] for k, t in enumerate(intervals)}, n_pv)


# -- file formats -------------------------------------------------------------------------

def write_samples(path, samples: ErrorSampleSet, pv_bus) -> None:
    """Write ``interval,bus,error_kw`` rows, sample-major within each interval."""
    pv_bus = list(pv_bus)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["interval", "bus", "error_kw"])
        for t, arr in samples.samples.items():
            for row in arr:
                for b, val in zip(pv_bus, row):
                    w.writerow([t, b, repr(float(val))])


def read_samples(path, pv_bus) -> ErrorSampleSet:
    """Read an error-sample file.  Rows for one sample appear once per PV bus, in order."""
    pv_bus = [int(b) for b in pv_bus]
    col = {b: k for k, b in enumerate(pv_bus)}
    rows: dict[int, dict[int, list[float]]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["interval", "bus", "error_kw"]:
            raise SampleFileError(f"{path}: expected header interval,bus,error_kw")
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            try:
                t, b, val = int(rec[0]), int(rec[1]), float(rec[2])
            except (IndexError, ValueError) as exc:
                raise SampleFileError(f"{path}:{lineno}: malformed row {rec!r}") from exc
            if not math.isfinite(val):
                raise SampleFileError(f"{path}:{lineno}: non-finite error value")
            if b not in col:
                raise SampleFileError(f"{path}:{lineno}: bus {b} has no PV unit")
            rows.setdefault(t, {k: [] for k in col}).setdefault(b, []).append(val)
    samples = {}
    for t, per_bus in rows.items():
        counts = {len(v) for v in per_bus.values()}
        if len(counts) != 1:
            raise SampleFileError(f"{path}: interval {t} has unequal sample counts per bus")
        samples[t] = np.array([per_bus[b] for b in pv_bus]).T
    return ErrorSampleSet(samples, len(pv_bus))


def write_moments(path, moments: ErrorMoments) -> None:
    Path(path).write_text(json.dumps(moments.to_json(), indent=1, sort_keys=True) + "\n")


def read_moments(path) -> ErrorMoments:
    return ErrorMoments.from_json(json.loads(Path(path).read_text()))
