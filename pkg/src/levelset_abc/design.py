"""Space-filling designs and natural/unit coordinate maps.

Everything the user sees is in natural units.  The surrogate works on the
unit cube, so :func:`scale_to_unit` and :func:`unscale_from_unit` are the
only two places where the affine map lives.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.stats import qmc

from .errors import EvaluationError, FormatError, InvalidArgumentError, OutOfSupportError

__all__ = [
    "Bounds",
    "Design",
    "latin_hypercube",
    "scale_to_unit",
    "unscale_from_unit",
    "evaluate_design",
    "write_design_csv",
    "read_design_csv",
]


@dataclass(frozen=True, eq=False)
class Bounds:
    """Closed axis-aligned box ``[lower, upper]`` in natural units."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.atleast_1d(np.asarray(self.lower, dtype=float)).copy()
        upper = np.atleast_1d(np.asarray(self.upper, dtype=float)).copy()
        if lower.ndim != 1 or lower.shape != upper.shape or lower.size == 0:
            raise InvalidArgumentError(
                f"lower/upper must be equal-length 1-d vectors, got {lower.shape} and {upper.shape}"
            )
        if not np.all(np.isfinite(lower)) or not np.all(np.isfinite(upper)):
            raise InvalidArgumentError("bounds must be finite")
        if not np.all(lower < upper):
            raise InvalidArgumentError("every lower bound must be strictly below its upper bound")
        lower.flags.writeable = False
        upper.flags.writeable = False
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    def __eq__(self, other):
        if not isinstance(other, Bounds):
            return NotImplemented
        return np.array_equal(self.lower, other.lower) and np.array_equal(self.upper, other.upper)

    def __hash__(self):
        return hash((self.lower.tobytes(), self.upper.tobytes()))

    @classmethod
    def cube(cls, lo: float, hi: float, dim: int) -> "Bounds":
        return cls(np.full(dim, float(lo)), np.full(dim, float(hi)))

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    def contains(self, theta) -> bool:
        """Closed-box membership; raises on a dimension mismatch."""
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.dim,):
            raise InvalidArgumentError(f"expected a {self.dim}-vector, got shape {theta.shape}")
        return bool(np.all(theta >= self.lower) and np.all(theta <= self.upper))

    def to_dict(self) -> dict:
        return {"lower": self.lower.tolist(), "upper": self.upper.tolist()}


@dataclass
class Design:
    """Design points in natural units, optionally with observed responses.

    ``responses`` is ``None`` until :func:`evaluate_design` fills it in, after
    which it is an ``(n, m)`` array aligned row-for-row with ``points``.
    """

    points: np.ndarray
    bounds: Bounds
    responses: Optional[np.ndarray] = None
    input_names: Sequence[str] = field(default=())
    response_names: Sequence[str] = field(default=())

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        n, d = self.points.shape
        if d != self.bounds.dim:
            raise InvalidArgumentError(f"points have {d} columns but bounds are {self.bounds.dim}-dimensional")
        outside = np.any((self.points < self.bounds.lower) | (self.points > self.bounds.upper), axis=1)
        if np.any(outside):
            raise OutOfSupportError(f"design rows {np.flatnonzero(outside).tolist()} lie outside the bounds")
        if self.responses is not None:
            resp = np.asarray(self.responses, dtype=float)
            if resp.ndim == 1:
                resp = resp[:, None]
            if resp.shape[0] != n:
                raise InvalidArgumentError(f"{resp.shape[0]} response rows for {n} design points")
            self.responses = resp
        if not self.input_names:
            self.input_names = tuple(f"theta_{i + 1}" for i in range(d))
        if self.responses is not None and not self.response_names:
            self.response_names = tuple(f"response_{j + 1}" for j in range(self.responses.shape[1]))
        self.input_names = tuple(self.input_names)
        self.response_names = tuple(self.response_names)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def unit_points(self) -> np.ndarray:
        return scale_to_unit(self.points, self.bounds)


def latin_hypercube(n: int, bounds: Bounds, seed) -> Design:
    """Plain randomized Latin hypercube with ``n`` points.

    Each axis is cut into ``n`` equal strata and receives exactly one point per
    stratum, jittered uniformly inside it; strata are paired across axes by
    independent random permutations.  ``seed`` may be an int or a
    ``numpy.random.Generator``.
    """
    if int(n) != n or n < 1:
        raise InvalidArgumentError(f"n must be a positive integer, got {n!r}")
    sampler = qmc.LatinHypercube(d=bounds.dim, scramble=True, optimization=None, rng=seed)
    unit = sampler.random(int(n))
    return Design(points=unscale_from_unit(unit, bounds), bounds=bounds)


def scale_to_unit(theta, bounds: Bounds) -> np.ndarray:
    """Map natural-unit point(s) affinely onto ``[0, 1]^d``.

    Accepts a single ``d``-vector or an ``(n, d)`` array.
    """
    theta = np.asarray(theta, dtype=float)
    if theta.shape[-1] != bounds.dim:
        raise InvalidArgumentError(f"expected trailing dimension {bounds.dim}, got {theta.shape}")
    if np.any(theta < bounds.lower) or np.any(theta > bounds.upper):
        raise OutOfSupportError("point lies outside the bounds")
    return (theta - bounds.lower) / bounds.width


def unscale_from_unit(u, bounds: Bounds) -> np.ndarray:
    """Inverse of :func:`scale_to_unit`."""
    u = np.asarray(u, dtype=float)
    if u.shape[-1] != bounds.dim:
        raise InvalidArgumentError(f"expected trailing dimension {bounds.dim}, got {u.shape}")
    if np.any(u < 0.0) or np.any(u > 1.0):
        raise OutOfSupportError("unit point lies outside [0, 1]^d")
    # clip guards the last-ulp overshoot of lower + 1.0 * width
    return np.clip(bounds.lower + u * bounds.width, bounds.lower, bounds.upper)


def evaluate_design(design: Design, f: Callable, response_names: Sequence[str] = ()) -> Design:
    """Return a copy of ``design`` with ``f`` applied to every row, in order."""
    rows = []
    for i, theta in enumerate(design.points):
        try:
            value = np.atleast_1d(np.asarray(f(theta.copy()), dtype=float))
        except Exception as exc:
            raise EvaluationError(i, exc) from exc
        if value.ndim != 1:
            raise EvaluationError(i, InvalidArgumentError(f"response has shape {value.shape}"))
        rows.append(value)
    if len({r.size for r in rows}) > 1:
        raise InvalidArgumentError("target returned responses of differing length")
    return replace(design, responses=np.vstack(rows), response_names=tuple(response_names))


def write_design_csv(design: Design, path) -> Path:
    """Write inputs then responses, one row per point, full precision."""
    path = Path(path)
    header = list(design.input_names)
    data = design.points
    if design.responses is not None:
        header += list(design.response_names)
        data = np.hstack([design.points, design.responses])
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in data:
            writer.writerow(["%.17g" % v for v in row])
    return path


def read_design_csv(path, bounds: Bounds, n_inputs: Optional[int] = None) -> Design:
    """Read a design CSV; the first ``n_inputs`` columns are inputs.

    ``n_inputs`` defaults to ``bounds.dim``.
    """
    path = Path(path)
    n_inputs = bounds.dim if n_inputs is None else n_inputs
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise FormatError(f"{path}: empty design file")
    header, body = rows[0], rows[1:]
    if len(header) < n_inputs:
        raise FormatError(f"{path}: expected at least {n_inputs} columns, header has {len(header)}")
    if not body:
        raise FormatError(f"{path}: design file has a header but no rows")
    try:
        data = np.array([[float(v) for v in row] for row in body], dtype=float)
    except ValueError as exc:
        raise FormatError(f"{path}: non-numeric entry ({exc})") from exc
    if data.ndim != 2 or data.shape[1] != len(header):
        raise FormatError(f"{path}: ragged rows")
    responses = data[:, n_inputs:] if data.shape[1] > n_inputs else None
    return Design(
        points=data[:, :n_inputs],
        bounds=bounds,
        responses=responses,
        input_names=header[:n_inputs],
        response_names=header[n_inputs:],
    )
