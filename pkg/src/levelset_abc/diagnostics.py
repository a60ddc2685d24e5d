"""Post-processing for chains and surrogates.

Everything here is a pure function of an immutable chain (or of a callable
for the Sobol estimator).  Input indices are zero-based; the CLI converts
from the one-based labels users type.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from scipy.special import ndtr

from .design import Bounds
from .errors import InvalidArgumentError, UndefinedStatisticError
from .sampler import Chain, TargetSpec, as_generator

__all__ = [
    "ChainSummary",
    "SobolIndices",
    "tolerance_coverage",
    "empirical_correlation",
    "straddle",
    "sobol_first_order",
    "ks_statistic",
    "summarize",
    "batch_means_se",
    "histogram",
    "write_histogram_csv",
    "write_report",
]


@dataclass
class ChainSummary:
    acceptance_rate: float
    n_unique: int
    coverage_2sigma: list
    response_mean: list
    response_std: list
    n_rows: int
    burn_in: int

    def to_dict(self) -> dict:
        return asdict(self)


def _check_target(chain: Chain, target: TargetSpec):
    if target.m != chain.m:
        raise InvalidArgumentError(f"target has {target.m} responses, chain records {chain.m}")


def tolerance_coverage(chain: Chain, target: TargetSpec, burn_in: int = 1000) -> np.ndarray:
    """Per-response fraction of post-burn-in rows within ``c +- 2 sd_tol``."""
    _check_target(chain, target)
    resp = chain.responses_after(burn_in)
    inside = np.abs(resp - target.c) <= 2.0 * np.sqrt(target.tol_diag)
    return inside.mean(axis=0)


def empirical_correlation(chain: Chain, i: int, j: int, burn_in: int = 1000) -> float:
    """Pearson correlation of inputs ``i`` and ``j`` after burn-in."""
    for k in (i, j):
        if not 0 <= k < chain.d:
            raise InvalidArgumentError(f"input index {k} out of range for a {chain.d}-input chain")
    theta = chain.post_burn_in(burn_in)
    if len(np.unique(theta, axis=0)) < 2:
        raise UndefinedStatisticError("need at least two distinct post-burn-in rows")
    x, y = theta[:, i], theta[:, j]
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise UndefinedStatisticError(f"input index {i if np.ptp(x) == 0 else j} never moves after burn-in")
    if i == j:
        return 1.0
    r = float(np.corrcoef(x, y)[0, 1])
    return min(1.0, max(-1.0, r))


def straddle(sigma_hat, f_hat, t):
    """``1.96 * sigma_hat - |f_hat - t|``; high where uncertain and on target."""
    sigma_hat = np.asarray(sigma_hat, dtype=float)
    if np.any(sigma_hat < 0):
        raise InvalidArgumentError("sigma_hat must be non-negative")
    out = 1.96 * sigma_hat - np.abs(np.asarray(f_hat, dtype=float) - t)
    return float(out) if np.ndim(out) == 0 else out


@dataclass
class SobolIndices:
    """First-order indices: ``first_order`` clipped to [0, 1], ``raw`` not."""

    first_order: np.ndarray
    raw: np.ndarray
    variance: float
    n: int


def sobol_first_order(
    f: Callable, bounds: Bounds, n: int, seed, response: int = 0
) -> SobolIndices:
    """Pick-freeze estimate of first-order Sobol indices under uniform inputs.

    Two independent uniform matrices ``A`` and ``B`` (``n`` rows each) are
    drawn; for input ``i`` the matrix ``AB_i`` takes column ``i`` from ``B``
    and the rest from ``A``.  The Jansen form

        V_i = V - mean((f(B) - f(AB_i))^2) / 2

    needs ``n * (d + 2)`` evaluations, and ``S_i = V_i / V``.
    """
    if int(n) != n or n < 100:
        raise InvalidArgumentError("n must be an integer >= 100")
    n = int(n)
    rng = as_generator(seed)
    d = bounds.dim
    A = bounds.lower + rng.random((n, d)) * bounds.width
    B = bounds.lower + rng.random((n, d)) * bounds.width

    def evaluate(X):
        return np.array([np.atleast_1d(f(x))[response] for x in X], dtype=float)

    fA = evaluate(A)
    fB = evaluate(B)
    var = float(np.var(np.concatenate([fA, fB]), ddof=1))
    if not var > 0:
        raise UndefinedStatisticError("output variance is zero; indices are undefined")
    raw = np.empty(d)
    for i in range(d):
        ABi = A.copy()
        ABi[:, i] = B[:, i]
        raw[i] = (var - 0.5 * np.mean((fB - evaluate(ABi)) ** 2)) / var
    return SobolIndices(first_order=np.clip(raw, 0.0, 1.0), raw=raw, variance=var, n=n)


def ks_statistic(samples, mean: float, var: float) -> float:
    """One-sample Kolmogorov-Smirnov distance to ``N(mean, var)``."""
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    n = x.size
    if n < 10:
        raise InvalidArgumentError(f"need at least 10 samples, got {n}")
    if not var > 0:
        raise InvalidArgumentError("var must be positive")
    cdf = ndtr((x - mean) / math.sqrt(var))
    i = np.arange(1, n + 1)
    d_plus = np.max(i / n - cdf)
    d_minus = np.max(cdf - (i - 1) / n)
    return float(max(d_plus, d_minus))


def summarize(chain: Chain, target: TargetSpec, burn_in: int = 1000) -> ChainSummary:
    """Acceptance and unique counts over the whole chain; the rest after burn-in."""
    coverage = tolerance_coverage(chain, target, burn_in)
    resp = chain.responses_after(burn_in)
    return ChainSummary(
        acceptance_rate=chain.acceptance_rate,
        n_unique=int(np.unique(chain.theta, axis=0).shape[0]),
        coverage_2sigma=coverage.tolist(),
        response_mean=resp.mean(axis=0).tolist(),
        response_std=resp.std(axis=0).tolist(),
        n_rows=chain.N,
        burn_in=burn_in,
    )


def batch_means_se(x, n_batches: Optional[int] = None) -> float:
    """Monte Carlo standard error of the mean of a correlated series."""
    x = np.asarray(x, dtype=float).ravel()
    if n_batches is None:
        n_batches = max(2, int(math.sqrt(x.size)))
    size = x.size // n_batches
    if size < 1 or n_batches < 2:
        raise InvalidArgumentError("series too short for batch means")
    means = x[: size * n_batches].reshape(n_batches, size).mean(axis=1)
    return float(means.std(ddof=1) / math.sqrt(n_batches))


def histogram(values, bins=30, unique: bool = False) -> np.ndarray:
    """Rows of ``(bin_lo, bin_hi, count)``."""
    values = np.asarray(values, dtype=float).ravel()
    if unique:
        values = np.unique(values)
    counts, edges = np.histogram(values, bins=bins)
    return np.column_stack([edges[:-1], edges[1:], counts])


def write_histogram_csv(rows: np.ndarray, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["value_bin_lo", "value_bin_hi", "count"])
        for lo, hi, count in rows:
            w.writerow(["%.17g" % lo, "%.17g" % hi, str(int(count))])
    return path


def write_report(report: dict, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return path
