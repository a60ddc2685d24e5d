"""Benchmark functions and the evaluation contract samplers consume.

A :class:`Target` is just a callable ``theta -> response vector`` plus its
input box.  The three published benchmarks are registered by name so the CLI
can resolve them; two synthetic multi-response maps stand in for the
external flood simulator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Dict

import numpy as np

from .design import Bounds
from .errors import InvalidArgumentError, NumericalError

__all__ = [
    "Target",
    "two_bump",
    "goldstein_price",
    "Gauss100",
    "gauss100",
    "synthetic_breach",
    "twin_first_input",
    "get_target",
    "TARGETS",
]


@dataclass(frozen=True)
class Target:
    """Deterministic map from a ``dims_in``-vector to a ``dims_out``-vector."""

    name: str
    func: Callable[[np.ndarray], np.ndarray]
    bounds: Bounds
    dims_out: int = 1
    response_names: tuple = ()

    @property
    def dims_in(self) -> int:
        return self.bounds.dim

    def __call__(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.dims_in,):
            raise InvalidArgumentError(f"{self.name} expects a {self.dims_in}-vector, got shape {theta.shape}")
        return self.func(theta)


def two_bump(theta1, theta2):
    """Two Gaussian bumps: height 1 at (2, 2) and height 2 at (-2, -2).

    Works elementwise on arrays.
    """
    theta1 = np.asarray(theta1, dtype=float)
    theta2 = np.asarray(theta2, dtype=float)
    out = np.exp(-((theta1 - 2.0) ** 2 + (theta2 - 2.0) ** 2)) + 2.0 * np.exp(
        -((theta1 + 2.0) ** 2 + (theta2 + 2.0) ** 2)
    )
    return out[()] if out.ndim == 0 else out


def goldstein_price(theta1, theta2):
    """Goldstein-Price surface; global minimum 3 at (0, -1)."""
    x = np.asarray(theta1, dtype=float)
    y = np.asarray(theta2, dtype=float)
    a = 1.0 + (x + y + 1.0) ** 2 * (19.0 - 14.0 * x + 3.0 * x**2 - 14.0 * y + 6.0 * x * y + 3.0 * y**2)
    b = 30.0 + (2.0 * x - 3.0 * y) ** 2 * (18.0 - 32.0 * x + 12.0 * x**2 + 48.0 * y - 36.0 * x * y + 27.0 * y**2)
    out = a * b
    return out[()] if out.ndim == 0 else out


class Gauss100:
    """Scaled, unnormalized 100-d Gaussian kernel.

    ``f(theta) = peak * exp(-0.5 (theta - mu)^T C^{-1} (theta - mu))`` with
    ``mu = (1, ..., 100)``, variance 50 on every input and two coupled pairs.
    Couplings are keyed by 1-based input labels, so ``(5, 10)`` means the
    fifth and tenth inputs (storage indices 4 and 9).
    """

    DIM = 100
    VARIANCE = 50.0
    COUPLINGS = {(1, 2): 30.0, (5, 10): -40.0}

    def __init__(self, peak: float = 10000.0):
        self.peak = float(peak)
        self.mu = np.arange(1.0, self.DIM + 1.0)
        cov = np.eye(self.DIM) * self.VARIANCE
        for (a, b), value in self.COUPLINGS.items():
            cov[a - 1, b - 1] = cov[b - 1, a - 1] = value
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as exc:
            raise NumericalError("gauss100 covariance is not positive definite") from exc
        eye = np.eye(self.DIM)
        inv_chol = np.linalg.solve(chol, eye)
        self.cov = cov
        self.precision = inv_chol.T @ inv_chol
        # the precision is diagonal apart from the coupled pairs, so the
        # quadratic form needs only the diagonal and one term per pair
        self._diag = np.diag(self.precision).copy()
        self._pairs = [(a - 1, b - 1, 2.0 * self.precision[a - 1, b - 1]) for a, b in self.COUPLINGS]

    def quadratic_form(self, theta) -> float:
        r = np.asarray(theta, dtype=float) - self.mu
        q = float(self._diag @ (r * r))
        for i, j, w in self._pairs:
            q += w * r[i] * r[j]
        return q

    def __call__(self, theta) -> float:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.DIM,):
            raise InvalidArgumentError(f"gauss100 expects a 100-vector, got shape {theta.shape}")
        return self.peak * math.exp(-0.5 * self.quadratic_form(theta))

    def level_radius(self, value: float) -> float:
        """Mahalanobis radius of the ``f = value`` shell."""
        if not 0.0 < value <= self.peak:
            raise InvalidArgumentError(f"value must lie in (0, {self.peak}]")
        return math.sqrt(2.0 * math.log(self.peak / value))

    def point_on_level(self, value: float, direction) -> np.ndarray:
        """Point ``mu + t * direction`` with ``f = value``."""
        u = np.asarray(direction, dtype=float)
        q = float(u @ self.precision @ u)
        if q <= 0.0:
            raise InvalidArgumentError("direction must be non-zero")
        t = self.level_radius(value) / math.sqrt(q)
        return self.mu + t * u


_GAUSS100 = None


def gauss100(theta) -> float:
    """Evaluate the shared :class:`Gauss100` instance."""
    global _GAUSS100
    if _GAUSS100 is None:
        _GAUSS100 = Gauss100()
    return _GAUSS100(theta)


def synthetic_breach(theta) -> np.ndarray:
    """Three smooth responses on ``[0, 1]^3`` loosely shaped like a breach study.

    Responses are a peak-flow-like quantity (falls with input 1, rises with
    input 2, barely moves with input 3), a time-to-peak-like quantity (rises
    with input 1) and a duration-like quantity.  A target at
    ``synthetic_breach((0.5, 0.5, 0.5))`` is jointly attainable; asking for
    flow 9000 together with time-to-peak 0.7 is not, because the first needs
    input 1 below about 0.17 and the second above about 0.8.
    """
    t1, t2, t3 = (float(v) for v in theta)
    flow = 10000.0 * (1.0 - 0.6 * t1) * (0.4 + 0.6 * t2) + 200.0 * t3
    time_to_peak = 0.2 + 0.6 * t1 * t1 + 0.1 * t2
    duration = 6.0 + 3.0 * t1 + 2.0 * t3 * (0.5 + 0.5 * t2)
    return np.array([flow, time_to_peak, duration])


def twin_first_input(theta) -> np.ndarray:
    """``(theta_1, theta_1)``: two responses that can only be traded off."""
    return np.array([float(theta[0]), float(theta[0])])


def _scalar2(fn):
    def wrapped(theta):
        return np.array([float(fn(float(theta[0]), float(theta[1])))])

    return wrapped


def _two_bump_fast(theta):
    a = float(theta[0])
    b = float(theta[1])
    return np.array(
        [math.exp(-((a - 2.0) ** 2 + (b - 2.0) ** 2)) + 2.0 * math.exp(-((a + 2.0) ** 2 + (b + 2.0) ** 2))]
    )


def _make_gauss100() -> Target:
    g = Gauss100()
    # no published box; +-50 per input contains the whole f >= 1 region (extent < 41)
    bounds = Bounds(g.mu - 50.0, g.mu + 50.0)
    return Target("gauss100", lambda th: np.array([g(th)]), bounds)


TARGETS: Dict[str, Callable[[], Target]] = {
    "two_bump": lambda: Target("two_bump", _two_bump_fast, Bounds.cube(-4.0, 4.0, 2)),
    "goldstein_price": lambda: Target("goldstein_price", _scalar2(goldstein_price), Bounds.cube(-2.0, 2.0, 2)),
    "gauss100": _make_gauss100,
    "synthetic_breach": lambda: Target(
        "synthetic_breach",
        synthetic_breach,
        Bounds.cube(0.0, 1.0, 3),
        dims_out=3,
        response_names=("max_flow", "time_to_peak", "duration"),
    ),
    "twin_first_input": lambda: Target("twin_first_input", twin_first_input, Bounds.cube(0.0, 1.0, 2), dims_out=2),
}


def get_target(name: str) -> Target:
    try:
        return TARGETS[name]()
    except KeyError:
        raise InvalidArgumentError(f"unknown target {name!r}; available: {', '.join(sorted(TARGETS))}") from None
