"""Markov chain samplers for level-set estimation.

Five chains are provided:

``run_mh``
    Random-walk Metropolis-Hastings on a user log density.
``run_abc_mcmc_hard``
    ABC within M-H with the hard ``||s - s_obs|| <= eps`` indicator.
``run_lsmcmc_smoothed``
    Level-set MCMC that samples a response from the surrogate's marginal at
    each proposal and scores it with a Gaussian tolerance density.
``run_lsmcmc_mean``
    Level-set MCMC scored on a deterministic response (a surrogate mean or
    the function itself); supports vector responses and componentwise
    proposals.
``run_generalized_mcmc``
    M-H directly on ``N(theta | c, tol)``; the reference chain whose
    stationary law is known exactly.

Conventions shared by every chain:

* ``n_iter`` counts transitions, so a chain has ``n_iter + 1`` rows and row 0
  is the starting point.
* All proposal noise and uniforms are drawn up front from the caller's
  generator, in the order: steps, uniforms, auxiliary normals.  Identical
  seeds therefore give bit-identical chains.
* ``n_evals`` counts evaluations at proposed points.  The evaluation at the
  starting point and proposals rejected for leaving the box are not counted.
* Density arithmetic is in log space; the acceptance probability is
  ``min(1, exp(log p(new) - log p(current)))``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .design import Bounds
from .errors import FormatError, InvalidArgumentError, InvalidStartError

__all__ = [
    "TargetSpec",
    "ProposalSpec",
    "Chain",
    "mvn_diag_logpdf",
    "acceptance_probability",
    "in_support",
    "run_mh",
    "run_abc_mcmc_hard",
    "run_lsmcmc_smoothed",
    "run_lsmcmc_mean",
    "run_generalized_mcmc",
    "as_generator",
    "write_chain",
    "read_chain",
]



def _vector(x, name: str) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(x, dtype=float)).copy()
    if arr.ndim != 1 or arr.size == 0:
        raise InvalidArgumentError(f"{name} must be a non-empty 1-d vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidArgumentError(f"{name} must be finite")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class TargetSpec:
    """Desired response ``c`` and the diagonal of the tolerance covariance.

    ``tol_diag`` holds variances, so a tolerance standard deviation of 0.1 is
    written ``tol_diag=[0.01]``.
    """

    c: np.ndarray
    tol_diag: np.ndarray

    def __post_init__(self):
        c = _vector(self.c, "c")
        tol = _vector(self.tol_diag, "tol_diag")
        if c.shape != tol.shape:
            raise InvalidArgumentError(f"c has {c.size} entries but tol_diag has {tol.size}")
        if not np.all(tol > 0):
            raise InvalidArgumentError("tolerance variances must be strictly positive")
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "tol_diag", tol)

    @property
    def m(self) -> int:
        return self.c.size

    @property
    def tol_sd(self) -> np.ndarray:
        return np.sqrt(self.tol_diag)

    def logpdf(self, x) -> float:
        return mvn_diag_logpdf(x, self.c, self.tol_diag)

    def to_dict(self) -> dict:
        return {"c": self.c.tolist(), "tol_diag": self.tol_diag.tolist()}


@dataclass(frozen=True, eq=False)
class ProposalSpec:
    """Diagonal Gaussian random-walk proposal.

    ``mode="componentwise"`` proposes and accepts/rejects one input at a time,
    sweeping all inputs once per iteration.
    """

    pro_diag: np.ndarray
    mode: str = "joint"

    def __post_init__(self):
        pro = _vector(self.pro_diag, "pro_diag")
        if not np.all(pro > 0):
            raise InvalidArgumentError("proposal variances must be strictly positive")
        if self.mode not in ("joint", "componentwise"):
            raise InvalidArgumentError(f"mode must be 'joint' or 'componentwise', got {self.mode!r}")
        object.__setattr__(self, "pro_diag", pro)

    @property
    def d(self) -> int:
        return self.pro_diag.size

    def to_dict(self) -> dict:
        return {"pro_diag": self.pro_diag.tolist(), "mode": self.mode}


@dataclass
class Chain:
    """Samples, carried responses and acceptance bookkeeping.

    ``accepted[n]`` is the number of proposals accepted while producing row
    ``n`` (0 or 1 in joint mode, up to ``d`` in componentwise mode); row 0 is
    the start and always has 0.
    """

    theta: np.ndarray
    responses: np.ndarray
    accepted: np.ndarray
    n_evals: int
    algorithm: str
    proposals_per_iter: int = 1
    n_out_of_support: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def N(self) -> int:
        return self.theta.shape[0]

    @property
    def n_iter(self) -> int:
        return self.N - 1

    @property
    def d(self) -> int:
        return self.theta.shape[1]

    @property
    def m(self) -> int:
        return self.responses.shape[1]

    @property
    def n_proposals(self) -> int:
        return self.n_iter * self.proposals_per_iter

    @property
    def acceptance_rate(self) -> float:
        if self.n_iter == 0:
            return 0.0
        return float(self.accepted[1:].sum()) / self.n_proposals

    def _check_burn(self, burn_in: int, thin: int):
        if not 0 <= burn_in < self.N:
            raise InvalidArgumentError(f"burn_in must be in [0, {self.N}), got {burn_in}")
        if thin < 1:
            raise InvalidArgumentError("thin must be >= 1")

    def post_burn_in(self, burn_in: int = 1000, thin: int = 1) -> np.ndarray:
        self._check_burn(burn_in, thin)
        return self.theta[burn_in::thin]

    def responses_after(self, burn_in: int = 1000, thin: int = 1) -> np.ndarray:
        self._check_burn(burn_in, thin)
        return self.responses[burn_in::thin]


def as_generator(rng) -> np.random.Generator:
    """Accept a seed or an existing generator."""
    if isinstance(rng, np.random.Generator):
        return rng
    if rng is None:
        raise InvalidArgumentError("an explicit seed or generator is required")
    return np.random.default_rng(rng)


def mvn_diag_logpdf(x, mean, var_diag) -> float:
    """Log density of a normal with diagonal covariance."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    var = np.atleast_1d(np.asarray(var_diag, dtype=float))
    if not (x.shape == mean.shape == var.shape):
        raise InvalidArgumentError(f"shape mismatch: x{x.shape}, mean{mean.shape}, var{var.shape}")
    if not np.all(var > 0):
        raise InvalidArgumentError("variances must be strictly positive")
    r = x - mean
    return float(-0.5 * np.sum(np.log(2.0 * np.pi * var)) - 0.5 * np.sum(r * r / var))


def acceptance_probability(log_p_current: float, log_p_proposed: float) -> float:
    """``min(1, p_proposed / p_current)`` for a symmetric proposal."""
    delta = log_p_proposed - log_p_current
    if delta >= 0.0:
        return 1.0
    if delta != delta:  # -inf - -inf
        return 0.0
    return math.exp(delta)


def in_support(bounds: Bounds, theta) -> bool:
    """Closed-box support test."""
    return bounds.contains(theta)


def _gaussian_scorer(target: TargetSpec) -> Callable[[np.ndarray], float]:
    """Unnormalised log tolerance density; constants cancel in every ratio."""
    if target.m == 1:
        c = float(target.c[0])
        half_prec = 0.5 / float(target.tol_diag[0])

        def score(r):
            e = float(r[0]) - c
            return -half_prec * e * e

        return score
    c = np.array(target.c)
    half_prec = 0.5 / np.array(target.tol_diag)

    def score(r):
        e = np.asarray(r, dtype=float) - c
        return -float(e @ (half_prec * e))

    return score


def _start(theta0, d: int) -> np.ndarray:
    theta0 = np.asarray(theta0, dtype=float).copy()
    if theta0.shape != (d,):
        raise InvalidArgumentError(f"theta0 must be a {d}-vector, got shape {theta0.shape}")
    if not np.all(np.isfinite(theta0)):
        raise InvalidStartError("theta0 must be finite")
    return theta0


def _check_n_iter(n_iter) -> int:
    if int(n_iter) != n_iter or n_iter < 1:
        raise InvalidArgumentError(f"n_iter must be a positive integer, got {n_iter!r}")
    return int(n_iter)


def _engine(
    theta0: np.ndarray,
    n_iter: int,
    proposal: ProposalSpec,
    rng: np.random.Generator,
    bounds: Optional[Bounds],
    init: Callable,
    evaluate: Callable,
    m: int,
    algorithm: str,
    aux: bool = False,
) -> Chain:
    """Shared random-walk loop.

    ``evaluate(theta, z)`` returns ``(log_p, response)`` at a proposal, ``z``
    being a pre-drawn standard normal when ``aux`` is set (else ``None``).
    ``init(z0)`` returns the same pair for the start; ``z0`` is drawn after
    everything else so chains with and without ``aux`` share their step and
    uniform streams.  The carried log density is never recomputed, which is
    what the smoothed chain requires.
    """
    d = theta0.size
    componentwise = proposal.mode == "componentwise"
    per_iter = d if componentwise else 1
    sd = np.sqrt(proposal.pro_diag)
    steps = rng.standard_normal((n_iter, d)) * sd
    uniforms = rng.random((n_iter, per_iter))
    zs = rng.standard_normal((n_iter, per_iter)) if aux else None
    z0 = rng.standard_normal() if aux else None

    theta_out = np.empty((n_iter + 1, d))
    resp_out = np.empty((n_iter + 1, m))
    acc_out = np.zeros(n_iter + 1, dtype=np.int64)

    theta = theta0.copy()
    log_p, resp = init(z0)
    resp = np.asarray(resp, dtype=float).reshape(m)
    theta_out[0] = theta
    resp_out[0] = resp
    lo = bounds.lower if bounds is not None else None
    hi = bounds.upper if bounds is not None else None
    n_evals = 0
    n_out = 0

    for n in range(n_iter):
        step = steps[n]
        u = uniforms[n]
        n_acc = 0
        if componentwise:
            for k in range(d):
                new_k = theta[k] + step[k]
                if lo is not None and not (lo[k] <= new_k <= hi[k]):
                    n_out += 1
                    continue
                prop = theta.copy()
                prop[k] = new_k
                lp, r = evaluate(prop, zs[n, k] if aux else None)
                n_evals += 1
                if u[k] < acceptance_probability(log_p, lp):
                    theta, log_p, resp = prop, lp, r
                    n_acc += 1
        else:
            prop = theta + step
            if lo is not None and not (np.all(prop >= lo) and np.all(prop <= hi)):
                n_out += 1
            else:
                lp, r = evaluate(prop, zs[n, 0] if aux else None)
                n_evals += 1
                if u[0] < acceptance_probability(log_p, lp):
                    theta, log_p, resp = prop, lp, r
                    n_acc = 1
        theta_out[n + 1] = theta
        resp_out[n + 1] = resp
        acc_out[n + 1] = n_acc

    return Chain(
        theta=theta_out,
        responses=resp_out,
        accepted=acc_out,
        n_evals=n_evals,
        algorithm=algorithm,
        proposals_per_iter=per_iter,
        n_out_of_support=n_out,
    )


def _meta(rng, **kw) -> dict:
    out = {"seed": rng if isinstance(rng, (int, np.integer)) else None}
    out.update(kw)
    return out


def run_mh(log_target: Callable, proposal: ProposalSpec, theta0, n_iter: int, rng) -> Chain:
    """Random-walk Metropolis-Hastings on ``log_target``.

    The proposal is a symmetric Gaussian, so the Hastings correction is 1.
    The recorded response is the log target of the current state.
    """
    n_iter = _check_n_iter(n_iter)
    theta0 = _start(theta0, proposal.d)
    lp0 = float(log_target(theta0))
    if not lp0 > -math.inf:
        raise InvalidStartError("log_target(theta0) is -inf; start inside the support")

    def evaluate(theta, _):
        lp = float(log_target(theta))
        return lp, (lp,)

    chain = _engine(theta0, n_iter, proposal, as_generator(rng), None, lambda _: (lp0, (lp0,)), evaluate, 1, "mh")
    chain.meta = _meta(rng, proposal=proposal.to_dict(), theta0=theta0.tolist())
    return chain


def run_abc_mcmc_hard(
    prior_logpdf: Callable,
    simulator: Callable,
    s_obs,
    epsilon: float,
    proposal: ProposalSpec,
    theta0,
    n_iter: int,
    rng,
) -> Chain:
    """ABC-MCMC with a hard Euclidean acceptance ball of radius ``epsilon``.

    A proposal is accepted with probability
    ``min(1, prior(new)/prior(current) * I(||s_new - s_obs|| <= epsilon))``.
    The starting point is not required to satisfy the indicator, so a chain
    started in a zero-acceptance region stays there; that is recorded, not
    worked around.  Stochastic simulators should draw from a generator they
    own.
    """
    n_iter = _check_n_iter(n_iter)
    if not epsilon > 0:
        raise InvalidArgumentError("epsilon must be positive")
    theta0 = _start(theta0, proposal.d)
    s_obs = _vector(s_obs, "s_obs")
    lp0 = float(prior_logpdf(theta0))
    if not lp0 > -math.inf:
        raise InvalidStartError("theta0 lies outside the prior support")
    s0 = np.atleast_1d(np.asarray(simulator(theta0), dtype=float))
    if s0.shape != s_obs.shape:
        raise InvalidArgumentError(f"simulator returned {s0.shape}, s_obs is {s_obs.shape}")
    eps = float(epsilon)

    def evaluate(theta, _):
        lp = float(prior_logpdf(theta))
        if not lp > -math.inf:
            return -math.inf, s0
        s = np.atleast_1d(np.asarray(simulator(theta), dtype=float))
        inside = math.sqrt(float(np.sum((s - s_obs) ** 2))) <= eps
        return (lp if inside else -math.inf), s

    chain = _engine(
        theta0, n_iter, proposal, as_generator(rng), None, lambda _: (lp0, s0), evaluate, s_obs.size, "abc-hard"
    )
    chain.meta = _meta(
        rng, s_obs=s_obs.tolist(), epsilon=eps, proposal=proposal.to_dict(), theta0=theta0.tolist()
    )
    return chain


def _as_surrogates(gp) -> list:
    if isinstance(gp, (list, tuple)):
        return list(gp)
    return [gp]


def run_lsmcmc_smoothed(
    gp,
    target: TargetSpec,
    proposal: ProposalSpec,
    bounds: Optional[Bounds],
    theta0,
    n_iter: int,
    rng,
) -> Chain:
    """Level-set MCMC with smoothed ABC on a GP surrogate.

    At each proposal inside ``bounds`` a response is drawn from the
    surrogate's predictive marginal and scored by ``N(s | c, tol)``; the ratio
    is taken against the *carried* sampled response of the current state,
    which is never redrawn.  Proposals outside ``bounds`` are rejected without
    querying the surrogate.

    ``gp`` is anything with ``moments_at(theta) -> (mean, var)`` and
    ``bounds``, or a sequence of them (one per response).
    """
    n_iter = _check_n_iter(n_iter)
    gps = _as_surrogates(gp)
    if len(gps) != target.m:
        raise InvalidArgumentError(f"{len(gps)} surrogates for a {target.m}-response target")
    bounds = bounds if bounds is not None else gps[0].bounds
    theta0 = _start(theta0, bounds.dim)
    if proposal.d != bounds.dim:
        raise InvalidArgumentError("proposal and bounds dimensions differ")
    if not in_support(bounds, theta0):
        raise InvalidStartError("theta0 lies outside the bounds")
    score = _gaussian_scorer(target)
    gen = as_generator(rng)

    def draw(theta, z):
        out = np.empty(len(gps))
        for j, g in enumerate(gps):
            mean, var = g.moments_at(theta)
            out[j] = mean + math.sqrt(var) * z
        return out

    def evaluate(theta, z):
        s = draw(theta, z)
        return score(s), s

    chain = _engine(
        theta0, n_iter, proposal, gen, bounds, lambda z0: evaluate(theta0, z0), evaluate, target.m,
        "lsmcmc-smoothed", aux=True,
    )
    chain.meta = _meta(
        rng, target=target.to_dict(), proposal=proposal.to_dict(), bounds=bounds.to_dict(), theta0=theta0.tolist()
    )
    return chain


def run_lsmcmc_mean(
    f_mean: Callable,
    target: TargetSpec,
    proposal: ProposalSpec,
    bounds: Bounds,
    theta0,
    n_iter: int,
    rng,
) -> Chain:
    """Level-set MCMC on a deterministic response.

    ``f_mean`` maps a natural-unit point to an ``m``-vector: a surrogate mean
    (``GpSurrogate.as_function`` or ``stack_means``) or the function itself.
    Acceptance is ``min(1, N(f(new) | c, tol) / N(f(current) | c, tol))``
    with the stored response of the current state.  In componentwise mode each
    input is proposed and accepted/rejected in turn, one evaluation per
    in-box proposal.
    """
    n_iter = _check_n_iter(n_iter)
    theta0 = _start(theta0, bounds.dim)
    if proposal.d != bounds.dim:
        raise InvalidArgumentError("proposal and bounds dimensions differ")
    if not in_support(bounds, theta0):
        raise InvalidStartError("theta0 lies outside the bounds")
    r0 = np.atleast_1d(np.asarray(f_mean(theta0), dtype=float))
    if r0.shape != (target.m,):
        raise InvalidArgumentError(f"f_mean returned shape {r0.shape}, target has {target.m} responses")
    score = _gaussian_scorer(target)

    def evaluate(theta, _):
        r = np.atleast_1d(np.asarray(f_mean(theta), dtype=float))
        return score(r), r

    chain = _engine(
        theta0, n_iter, proposal, as_generator(rng), bounds, lambda _: (score(r0), r0), evaluate, target.m, "lsmcmc-mean"
    )
    chain.meta = _meta(
        rng, target=target.to_dict(), proposal=proposal.to_dict(), bounds=bounds.to_dict(), theta0=theta0.tolist()
    )
    return chain


def run_generalized_mcmc(target: TargetSpec, proposal: ProposalSpec, theta0, n_iter: int, rng) -> Chain:
    """M-H whose target is ``N(theta | c, tol)`` over the inputs themselves.

    No surrogate and no box.  The Hastings ratio of the Gaussian proposal is
    evaluated explicitly even though it is identically one.  Responses
    recorded are the inputs (``m == d``).
    """
    n_iter = _check_n_iter(n_iter)
    d = proposal.d
    if target.m != d:
        raise InvalidArgumentError(f"target has {target.m} components but the proposal is {d}-dimensional")
    theta0 = _start(theta0, d)
    if proposal.mode != "joint":
        raise InvalidArgumentError("the generalized chain uses joint proposals")
    gen = as_generator(rng)
    sd = np.sqrt(proposal.pro_diag)
    steps = (gen.standard_normal((n_iter, d)) * sd).tolist()
    uniforms = gen.random(n_iter).tolist()

    c = target.c.tolist()
    half_tol = (0.5 / target.tol_diag).tolist()
    half_pro = (0.5 / proposal.pro_diag).tolist()
    rng_d = range(d)

    theta = theta0.tolist()
    log_p = -sum(half_tol[i] * (theta[i] - c[i]) ** 2 for i in rng_d)
    rows = [theta]
    acc = [0]
    for n in range(n_iter):
        step = steps[n]
        prop = [theta[i] + step[i] for i in rng_d]
        lp = -sum(half_tol[i] * (prop[i] - c[i]) ** 2 for i in rng_d)
        # log q(current | prop) - log q(prop | current)
        log_q = -sum(half_pro[i] * (theta[i] - prop[i]) ** 2 for i in rng_d) + sum(
            half_pro[i] * (prop[i] - theta[i]) ** 2 for i in rng_d
        )
        if uniforms[n] < acceptance_probability(log_p, lp + log_q):
            theta, log_p = prop, lp
            acc.append(1)
        else:
            acc.append(0)
        rows.append(theta)

    theta_out = np.array(rows, dtype=float)
    chain = Chain(
        theta=theta_out,
        responses=theta_out.copy(),
        accepted=np.array(acc, dtype=np.int64),
        n_evals=n_iter,
        algorithm="generalized",
    )
    chain.meta = _meta(rng, target=target.to_dict(), proposal=proposal.to_dict(), theta0=theta0.tolist())
    return chain


# -- files -----------------------------------------------------------------


def write_chain(chain: Chain, csv_path, meta_path=None, extra_meta: Optional[dict] = None) -> tuple:
    """Write the chain CSV and its JSON metadata sidecar.

    CSV columns: ``iter, theta_1..theta_d, response_1..response_m,
    accepted``.  Floats are written with 17 significant digits so reruns are
    byte-identical.
    """
    csv_path = Path(csv_path)
    meta_path = Path(meta_path) if meta_path is not None else csv_path.with_suffix(".json")
    header = ["iter"] + [f"theta_{i + 1}" for i in range(chain.d)] + [f"response_{j + 1}" for j in range(chain.m)]
    header.append("accepted")
    with csv_path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for n in range(chain.N):
            w.writerow(
                [str(n)]
                + ["%.17g" % v for v in chain.theta[n]]
                + ["%.17g" % v for v in chain.responses[n]]
                + [str(int(chain.accepted[n]))]
            )
    meta = {
        "algorithm": chain.algorithm,
        "n_iter": chain.n_iter,
        "n_rows": chain.N,
        "d": chain.d,
        "m": chain.m,
        "n_evals": chain.n_evals,
        "n_proposals": chain.n_proposals,
        "n_out_of_support": chain.n_out_of_support,
        "proposals_per_iter": chain.proposals_per_iter,
        "acceptance_rate": chain.acceptance_rate,
        "created": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }
    meta.update(chain.meta)
    if extra_meta:
        meta.update(extra_meta)
    meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True, default=_json_default) + "\n")
    return csv_path, meta_path


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def read_chain(csv_path, meta_path=None) -> Chain:
    """Load a chain written by :func:`write_chain`; the sidecar is optional."""
    csv_path = Path(csv_path)
    with csv_path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise FormatError(f"{csv_path}: chain file is empty")
    header = rows[0]
    d = sum(1 for h in header if h.startswith("theta_"))
    m = sum(1 for h in header if h.startswith("response_"))
    if header[0] != "iter" or header[-1] != "accepted" or d == 0 or m == 0 or len(header) != d + m + 2:
        raise FormatError(f"{csv_path}: unexpected header {header[:4]}...")
    try:
        data = np.array([[float(v) for v in row] for row in rows[1:]], dtype=float)
    except ValueError as exc:
        raise FormatError(f"{csv_path}: non-numeric entry ({exc})") from exc
    if data.ndim != 2 or data.shape[1] != len(header):
        raise FormatError(f"{csv_path}: ragged rows")
    meta = {}
    meta_path = Path(meta_path) if meta_path is not None else csv_path.with_suffix(".json")
    if meta_path.exists():
        try:
            meta = json.loads(meta_path.read_text())
        except json.JSONDecodeError as exc:
            raise FormatError(f"{meta_path}: invalid JSON ({exc})") from exc
    chain = Chain(
        theta=data[:, 1 : 1 + d],
        responses=data[:, 1 + d : 1 + d + m],
        accepted=data[:, -1].astype(np.int64),
        n_evals=int(meta.get("n_evals", 0)),
        algorithm=str(meta.get("algorithm", "unknown")),
        proposals_per_iter=int(meta.get("proposals_per_iter", 1)),
        n_out_of_support=int(meta.get("n_out_of_support", 0)),
        meta=meta,
    )
    return chain
