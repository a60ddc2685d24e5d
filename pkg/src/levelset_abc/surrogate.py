"""Gaussian-process surrogate with an anisotropic squared-exponential kernel.

The GP lives on the unit cube of its design's bounds.  Responses are centred
on their training mean; the kernel is

    k(a, b) = signal_variance * exp(-sum_i (a_i - b_i)^2 / (2 l_i^2))

and the covariance of the training data is ``K + nugget * I``.  A fitted
:class:`GpSurrogate` caches the lower Cholesky factor of that matrix and
``alpha = (K + nugget I)^{-1} y`` so predictions cost one kernel row and, for
the variance, one triangular solve.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import linalg, optimize
from scipy.stats import qmc

from .design import Bounds, Design, scale_to_unit
from .errors import FormatError, InvalidArgumentError, NumericalError, OutOfSupportError

__all__ = [
    "GpHyperparams",
    "GpSurrogate",
    "FitConfig",
    "kernel",
    "kernel_matrix",
    "log_marginal_likelihood",
    "fit_gp",
    "save_gp",
    "load_gp",
    "stack_means",
]

FORMAT_NAME = "levelset-abc/gp-surrogate"
FORMAT_VERSION = 1
_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True, eq=False)
class GpHyperparams:
    """Kernel hyperparameters; lengthscales are in unit-cube coordinates."""

    lengthscales: np.ndarray
    signal_variance: float
    nugget: float

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.lengthscales, dtype=float)).copy()
        if ls.ndim != 1 or not np.all(ls > 0) or not np.all(np.isfinite(ls)):
            raise InvalidArgumentError(f"lengthscales must be positive and finite, got {ls}")
        if not (self.signal_variance > 0 and math.isfinite(self.signal_variance)):
            raise InvalidArgumentError(f"signal_variance must be positive, got {self.signal_variance}")
        if not (self.nugget >= 0 and math.isfinite(self.nugget)):
            raise InvalidArgumentError(f"nugget must be non-negative, got {self.nugget}")
        ls.flags.writeable = False
        object.__setattr__(self, "lengthscales", ls)
        object.__setattr__(self, "signal_variance", float(self.signal_variance))
        object.__setattr__(self, "nugget", float(self.nugget))

    def __eq__(self, other):
        if not isinstance(other, GpHyperparams):
            return NotImplemented
        return (
            np.array_equal(self.lengthscales, other.lengthscales)
            and self.signal_variance == other.signal_variance
            and self.nugget == other.nugget
        )

    def __hash__(self):
        return hash((self.lengthscales.tobytes(), self.signal_variance, self.nugget))

    def to_dict(self) -> dict:
        return {
            "lengthscales": self.lengthscales.tolist(),
            "signal_variance": self.signal_variance,
            "nugget": self.nugget,
        }


def kernel(theta_a, theta_b, hyper: GpHyperparams) -> float:
    """Squared-exponential covariance between two single points."""
    a = np.atleast_1d(np.asarray(theta_a, dtype=float))
    b = np.atleast_1d(np.asarray(theta_b, dtype=float))
    if a.shape != b.shape or a.shape != hyper.lengthscales.shape:
        raise InvalidArgumentError(
            f"dimension mismatch: {a.shape}, {b.shape}, lengthscales {hyper.lengthscales.shape}"
        )
    z = (a - b) / hyper.lengthscales
    return hyper.signal_variance * math.exp(-0.5 * float(z @ z))


def kernel_matrix(A, B, hyper: GpHyperparams) -> np.ndarray:
    """Cross-covariance matrix between the rows of ``A`` and ``B``."""
    A = np.atleast_2d(A) / hyper.lengthscales
    B = np.atleast_2d(B) / hyper.lengthscales
    sq = (
        np.sum(A * A, axis=1)[:, None]
        + np.sum(B * B, axis=1)[None, :]
        - 2.0 * (A @ B.T)
    )
    np.maximum(sq, 0.0, out=sq)
    return hyper.signal_variance * np.exp(-0.5 * sq)


def _pairwise_sq(X: np.ndarray) -> np.ndarray:
    """``(n, n, d)`` squared coordinate differences between training points."""
    diff = X[:, None, :] - X[None, :, :]
    return diff * diff


def _cov_train(X: np.ndarray, hyper: GpHyperparams, sq: Optional[np.ndarray] = None) -> np.ndarray:
    # exact pairwise differences; the expanded form above loses the diagonal
    sq = _pairwise_sq(X) if sq is None else sq
    K = hyper.signal_variance * np.exp(-0.5 * (sq @ (1.0 / hyper.lengthscales**2)))
    K[np.diag_indices_from(K)] += hyper.nugget
    return K


def _cholesky(K: np.ndarray, diagnose: bool = True) -> np.ndarray:
    try:
        return linalg.cholesky(K, lower=True, check_finite=True)
    except (linalg.LinAlgError, ValueError) as exc:
        if not diagnose:
            raise NumericalError("covariance matrix is not positive definite") from exc
        cond = np.linalg.cond(K) if np.all(np.isfinite(K)) else float("inf")
        raise NumericalError(f"covariance matrix is not positive definite (condition estimate {cond:.3e})") from exc


def _lml(
    X: np.ndarray, y: np.ndarray, hyper: GpHyperparams, sq: Optional[np.ndarray] = None, diagnose: bool = True
) -> float:
    L = _cholesky(_cov_train(X, hyper, sq), diagnose)
    alpha = linalg.cho_solve((L, True), y)
    n = y.size
    return float(-0.5 * y @ alpha - np.sum(np.log(np.diag(L))) - 0.5 * n * _LOG_2PI)


def _training_arrays(design: Design, response_col: int):
    if design.responses is None:
        raise InvalidArgumentError("design has no responses to fit")
    if design.n < 2:
        raise InvalidArgumentError(f"need at least 2 design points, got {design.n}")
    if not 0 <= response_col < design.responses.shape[1]:
        raise InvalidArgumentError(f"response column {response_col} out of range")
    y = design.responses[:, response_col].astype(float)
    if not np.all(np.isfinite(y)):
        raise InvalidArgumentError("responses must be finite")
    return design.unit_points, y


def log_marginal_likelihood(hyper: GpHyperparams, design: Design, response_col: int = 0) -> float:
    """GP evidence of the mean-centred responses under ``hyper``.

    ``-0.5 y^T alpha - sum(log diag L) - (n/2) log(2 pi)``.
    """
    X, y = _training_arrays(design, response_col)
    return _lml(X, y - y.mean(), hyper)


class GpSurrogate:
    """A fitted GP, immutable after construction.

    Parameters
    ----------
    hyper : GpHyperparams
    train_points : (n, d) array
        Training inputs already scaled to the unit cube.
    train_responses : (n,) array
        Raw responses; the mean is subtracted and stored as an offset.
    bounds : Bounds
        Natural-unit box the unit cube maps to.
    """

    def __init__(
        self,
        hyper: GpHyperparams,
        train_points,
        train_responses,
        bounds: Bounds,
        response_name: str = "response_1",
        fit_info: Optional[dict] = None,
    ):
        X = np.atleast_2d(np.asarray(train_points, dtype=float)).copy()
        y = np.asarray(train_responses, dtype=float).ravel().copy()
        if X.shape[0] != y.size:
            raise InvalidArgumentError(f"{X.shape[0]} points but {y.size} responses")
        if X.shape[1] != bounds.dim or hyper.lengthscales.size != bounds.dim:
            raise InvalidArgumentError("training points, lengthscales and bounds disagree on dimension")
        self.hyper = hyper
        self.bounds = bounds
        self.response_name = response_name
        self.fit_info = dict(fit_info or {})
        self.train_points = X
        self.mean_offset = float(y.mean())
        self.train_responses = y - self.mean_offset
        self.chol_factor = _cholesky(_cov_train(X, hyper))
        self.alpha = linalg.cho_solve((self.chol_factor, True), self.train_responses)
        for arr in (self.train_points, self.train_responses, self.chol_factor, self.alpha):
            arr.flags.writeable = False

    @property
    def dim(self) -> int:
        return self.bounds.dim

    @property
    def prior_variance(self) -> float:
        return self.hyper.signal_variance + self.hyper.nugget

    def _check_unit(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if u.shape[-1] != self.dim:
            raise InvalidArgumentError(f"expected trailing dimension {self.dim}, got {u.shape}")
        if np.any(u < 0.0) or np.any(u > 1.0):
            raise OutOfSupportError("query lies outside the unit cube of the surrogate")
        return u

    def _cross(self, u: np.ndarray) -> np.ndarray:
        z = (self.train_points - u[..., None, :]) / self.hyper.lengthscales
        return self.hyper.signal_variance * np.exp(-0.5 * np.sum(z * z, axis=-1))

    def predict_mean(self, u):
        """Predictive mean at unit-cube point(s) ``u``."""
        u = self._check_unit(u)
        out = self._cross(u) @ self.alpha + self.mean_offset
        return float(out) if np.ndim(out) == 0 else out

    def predict_var(self, u):
        """Predictive variance (nugget included), clamped at zero."""
        return self.moments(u)[1]

    def moments(self, u):
        """``(mean, variance)`` at unit-cube point(s), sharing one kernel row."""
        u = self._check_unit(u)
        k = self._cross(u)
        mean = k @ self.alpha + self.mean_offset
        v = linalg.solve_triangular(self.chol_factor, k.T, lower=True, check_finite=False)
        var = self.prior_variance - np.sum(v * v, axis=0)
        var = np.maximum(var, 0.0)
        if np.ndim(mean) == 0:
            return float(mean), float(var)
        return mean, var

    def sample_marginal(self, u, rng: np.random.Generator) -> float:
        """One draw from ``N(predict_mean(u), predict_var(u))``."""
        mean, var = self.moments(u)
        return mean + math.sqrt(var) * rng.standard_normal()

    # natural-unit conveniences used by the samplers
    def to_unit(self, theta) -> np.ndarray:
        return scale_to_unit(theta, self.bounds)

    def mean_at(self, theta) -> float:
        return self.predict_mean(self.to_unit(theta))

    def moments_at(self, theta):
        return self.moments(self.to_unit(theta))

    def as_function(self):
        """Natural-unit callable ``theta -> array([mean])`` for mean-based sampling."""

        def f(theta):
            return np.array([self.mean_at(theta)])

        return f

    def to_dict(self) -> dict:
        return {
            "format": FORMAT_NAME,
            "version": FORMAT_VERSION,
            "kernel": "squared_exponential_ard",
            "response_name": self.response_name,
            "hyper": self.hyper.to_dict(),
            "bounds": self.bounds.to_dict(),
            "train_points_unit": self.train_points.tolist(),
            "train_responses": (self.train_responses + self.mean_offset).tolist(),
            "fit_info": self.fit_info,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "GpSurrogate":
        if doc.get("format") != FORMAT_NAME:
            raise FormatError(f"not a surrogate model document (format={doc.get('format')!r})")
        if doc.get("version") != FORMAT_VERSION:
            raise FormatError(f"unsupported surrogate format version {doc.get('version')!r}")
        try:
            hyper = GpHyperparams(**doc["hyper"])
            bounds = Bounds(**doc["bounds"])
            return cls(
                hyper,
                doc["train_points_unit"],
                doc["train_responses"],
                bounds,
                response_name=doc.get("response_name", "response_1"),
                fit_info=doc.get("fit_info"),
            )
        except (KeyError, TypeError) as exc:
            raise FormatError(f"malformed surrogate document: {exc!r}") from exc


def save_gp(gp: GpSurrogate, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(gp.to_dict(), indent=2, sort_keys=True) + "\n")
    return path


def load_gp(path) -> GpSurrogate:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from exc
    return GpSurrogate.from_dict(doc)


def stack_means(gps: Sequence[GpSurrogate]):
    """Natural-unit callable returning the vector of each surrogate's mean."""
    gps = list(gps)
    if not gps:
        raise InvalidArgumentError("need at least one surrogate")
    if any(g.bounds != gps[0].bounds for g in gps[1:]):
        raise InvalidArgumentError("stacked surrogates must share bounds")

    def f(theta):
        u = gps[0].to_unit(theta)
        return np.array([g.predict_mean(u) for g in gps])

    return f


@dataclass
class FitConfig:
    """Settings for :func:`fit_gp`.

    Search box is in log space of the *standardised* problem (responses
    divided by their standard deviation), which is what makes the fixed
    signal-variance range meaningful for any response scale.
    """

    starts: int = 8
    max_iter: int = 2000
    nugget_floor: float = 1e-8
    seed: int = 0
    log_lengthscale_bounds: tuple = (-5.0, 3.0)
    log_signal_variance_bounds: tuple = (-6.0, 6.0)
    max_relative_nugget: float = 1.0
    extra: dict = field(default_factory=dict)


def _unpack(p: np.ndarray, d: int, scale2: float) -> GpHyperparams:
    sv = math.exp(p[d])
    return GpHyperparams(np.exp(p[:d]), sv * scale2, sv * math.exp(p[d + 1]) * scale2)


def fit_gp(design: Design, response_col: int = 0, config: Optional[FitConfig] = None) -> GpSurrogate:
    """Fit hyperparameters by multi-start Nelder-Mead on the log evidence.

    The search runs over log-lengthscales, log signal variance and the log
    of the nugget relative to the signal variance, the latter floored at
    ``config.nugget_floor``.  The first start is a fixed default, the rest are
    a seeded Latin hypercube over the search box.  The best local optimum is
    kept; its evidence is never below that of any start.
    """
    config = config or FitConfig()
    if config.starts < 1:
        raise InvalidArgumentError("need at least one optimizer start")
    X, y = _training_arrays(design, response_col)
    d = X.shape[1]
    yc = y - y.mean()
    sd = float(np.std(yc))
    scale = sd if sd > 0 else 1.0
    ys = yc / scale
    scale2 = scale * scale

    lo_nug = math.log(config.nugget_floor)
    hi_nug = math.log(config.max_relative_nugget)
    box = np.array(
        [config.log_lengthscale_bounds] * d + [config.log_signal_variance_bounds, (lo_nug, hi_nug)],
        dtype=float,
    )

    sq = _pairwise_sq(X)

    def objective(p):
        try:
            return -_lml(X, ys, _unpack(p, d, 1.0), sq, diagnose=False)
        except (NumericalError, InvalidArgumentError, FloatingPointError):
            return 1e300

    default = np.concatenate([np.full(d, math.log(0.3)), [0.0, max(lo_nug, math.log(1e-6))]])
    starts = [np.clip(default, box[:, 0], box[:, 1])]
    if config.starts > 1:
        lhs = qmc.LatinHypercube(d=d + 2, rng=config.seed).random(config.starts - 1)
        starts += list(box[:, 0] + lhs * (box[:, 1] - box[:, 0]))

    start_values, best_p, best_val = [], None, np.inf
    for p0 in starts:
        f0 = objective(p0)
        start_values.append(-f0)
        res = optimize.minimize(
            objective,
            p0,
            method="Nelder-Mead",
            bounds=box,
            options={"maxiter": config.max_iter, "maxfev": 2 * config.max_iter, "xatol": 1e-6, "fatol": 1e-9},
        )
        cand_p, cand_val = (res.x, res.fun) if res.fun <= f0 else (p0, f0)
        if cand_val < best_val:
            best_p, best_val = np.asarray(cand_p, dtype=float), cand_val
    if not np.isfinite(best_val) or best_val >= 1e300:
        hyper = _unpack(starts[0], d, scale2)
        _cholesky(_cov_train(X, hyper))  # raises with the condition estimate
        raise NumericalError("no optimizer start produced a positive-definite covariance")

    hyper = _unpack(best_p, d, scale2)
    offset = -0.5 * y.size * math.log(scale2)
    info = {
        "log_marginal_likelihood": -best_val + offset,
        "start_log_marginal_likelihoods": [v + offset for v in start_values],
        "starts": config.starts,
        "max_iter": config.max_iter,
        "nugget_floor": config.nugget_floor,
        "seed": config.seed,
    }
    name = design.response_names[response_col] if design.response_names else f"response_{response_col + 1}"
    return GpSurrogate(hyper, X, y, design.bounds, response_name=name, fit_info=info)
