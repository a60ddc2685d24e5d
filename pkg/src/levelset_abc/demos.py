"""Named end-to-end experiments behind ``levelset-abc demo``.

Each demo takes an output directory and a flat config dict (for overrides
such as ``demo.seed`` or ``demo.n_iter``), writes its chains, designs and
models there, and returns a JSON-friendly report.  Chain CSVs depend only on
the config, so reruns are byte-identical.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Callable, Dict

import numpy as np

from .design import evaluate_design, latin_hypercube, write_design_csv
from .diagnostics import (
    batch_means_se,
    empirical_correlation,
    histogram,
    sobol_first_order,
    summarize,
    write_histogram_csv,
    write_report,
)
from .errors import InvalidArgumentError, UndefinedStatisticError
from .sampler import Chain, ProposalSpec, TargetSpec, run_lsmcmc_mean, run_lsmcmc_smoothed, write_chain
from .surrogate import fit_gp, save_gp, stack_means
from .targets import Gauss100, get_target, synthetic_breach, two_bump

BURN_IN = 1000


def _opt(cfg: dict, key: str, default):
    value = cfg.get(f"demo.{key}", default)
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or int(value) != value or value < 0:
            raise InvalidArgumentError(f"demo.{key} must be a non-negative integer, got {value!r}")
        return int(value)
    return value


def _save(chain: Chain, out: Path, stem: str, target: TargetSpec, seed: int, burn_in: int) -> dict:
    write_chain(chain, out / f"{stem}.csv", out / f"{stem}.json", extra_meta={"seed": seed, "burn_in": burn_in})
    return summarize(chain, target, burn_in).to_dict()


def _burn(n_iter: int) -> int:
    # smoke runs shorter than the default burn-in keep their second half
    return BURN_IN if n_iter > 2 * BURN_IN else n_iter // 2


def _bump_spread(chain: Chain, burn_in: int, c: float) -> dict:
    """Per bump: share of samples within 1.5 of its centre and their dispersion.

    ``mean_radial_dev`` is the mean distance of those samples from the exact
    ``f = c`` circle around that bump, ``mean_abs_dev`` the mean ``|f - c|``.
    """
    theta = chain.post_burn_in(burn_in)
    f = two_bump(theta[:, 0], theta[:, 1])
    out = {}
    for label, centre, height in (("local_2_2", (2.0, 2.0), 1.0), ("global_m2_m2", (-2.0, -2.0), 2.0)):
        dist = np.hypot(theta[:, 0] - centre[0], theta[:, 1] - centre[1])
        near = dist <= 1.5
        radius = math.sqrt(math.log(height / c))
        out[label] = {
            "fraction": float(near.mean()),
            "mean_abs_dev": float(np.mean(np.abs(f[near] - c))) if near.any() else None,
            "mean_radial_dev": float(np.mean(np.abs(dist[near] - radius))) if near.any() else None,
        }
    return out


def two_bump_gp(out: Path, seed: int):
    """50-point Latin hypercube on the two-bump function and its fitted GP."""
    target = get_target("two_bump")
    design = evaluate_design(latin_hypercube(50, target.bounds, seed), target, ("f",))
    write_design_csv(design, out / "design.csv")
    gp = fit_gp(design)
    save_gp(gp, out / "model.json")
    return target, gp


def demo_fig5(out: Path, cfg: dict) -> dict:
    """Smoothed and mean-based level-set chains on a two-bump GP, c = 0.6."""
    seed = _opt(cfg, "seed", 0)
    n_iter = _opt(cfg, "n_iter", 5000)
    burn = _burn(n_iter)
    target_fn, gp = two_bump_gp(out, seed)
    spec = TargetSpec([0.6], [0.1])
    proposal = ProposalSpec([3.0, 3.0])
    theta0 = [0.0, 0.0]
    report = {"gp": gp.hyper.to_dict(), "chains": {}}
    smoothed = run_lsmcmc_smoothed(gp, spec, proposal, target_fn.bounds, theta0, n_iter, seed)
    mean = run_lsmcmc_mean(gp.as_function(), spec, proposal, target_fn.bounds, theta0, n_iter, seed)
    for stem, chain in (("chain_smoothed", smoothed), ("chain_mean", mean)):
        summary = _save(chain, out, stem, spec, seed, burn)
        report["chains"][stem] = {"summary": summary, "bumps": _bump_spread(chain, burn, 0.6)}
    write_report(report, out / "report.json")
    return report


def demo_fig6(out: Path, cfg: dict) -> dict:
    """Two tolerances on the two-bump function itself, same start and seed."""
    seed = _opt(cfg, "seed", 0)
    n_iter = _opt(cfg, "n_iter", 5000)
    burn = _burn(n_iter)
    target_fn = get_target("two_bump")
    proposal = ProposalSpec([0.2, 0.2])
    report = {}
    for stem, tol in (("chain_tol_0.01", 0.01**2), ("chain_tol_0.1", 0.1**2)):
        spec = TargetSpec([0.6], [tol])
        chain = run_lsmcmc_mean(target_fn, spec, proposal, target_fn.bounds, [3.5, 3.5], n_iter, seed)
        report[stem] = {"tol_diag": tol, "summary": _save(chain, out, stem, spec, seed, burn)}
    write_report(report, out / "report.json")
    return report


def demo_fig7(out: Path, cfg: dict) -> dict:
    """Small versus large proposal variance from a start inside the global bump."""
    seed = _opt(cfg, "seed", 0)
    n_iter = _opt(cfg, "n_iter", 5000)
    burn = _burn(n_iter)
    target_fn = get_target("two_bump")
    spec = TargetSpec([0.6], [0.1**2])
    theta0 = np.array([-2.0, -2.0]) + np.random.default_rng(seed).uniform(-0.1, 0.1, 2)
    report = {"theta0": theta0.tolist()}
    for stem, var in (("chain_pro_0.2", 0.2), ("chain_pro_2", 2.0)):
        chain = run_lsmcmc_mean(target_fn, spec, ProposalSpec([var, var]), target_fn.bounds, theta0, n_iter, seed)
        report[stem] = {
            "proposal_var": var,
            "summary": _save(chain, out, stem, spec, seed, burn),
            "bumps": _bump_spread(chain, burn, 0.6),
        }
    write_report(report, out / "report.json")
    return report


GAUSS100_PAIRS = ((1, 2), (5, 10), (7, 10), (47, 74))
GAUSS100_PROPOSAL_VAR = 10.0


def _correlation_or_none(chain: Chain, i: int, j: int, burn_in: int):
    try:
        return empirical_correlation(chain, i, j, burn_in)
    except UndefinedStatisticError:
        return None


def gauss100_start(seed: int, value: float = 9200.0) -> np.ndarray:
    """Point with ``gauss100 = value`` along the uncoupled axes.

    The direction is a seeded Gaussian draw with the coupled inputs held at
    their means, so the chain leaves the peak without first loading the
    strongly coupled pairs.
    """
    direction = np.random.default_rng([seed, 9200]).standard_normal(100)
    for pair in Gauss100.COUPLINGS:
        direction[[k - 1 for k in pair]] = 0.0
    return Gauss100().point_on_level(value, direction)


def run_gauss100(n_iter: int, seed: int, proposal_var: float = GAUSS100_PROPOSAL_VAR) -> Chain:
    target_fn = get_target("gauss100")
    spec = TargetSpec([1000.0], [1.0])
    proposal = ProposalSpec(np.full(100, proposal_var), mode="componentwise")
    return run_lsmcmc_mean(target_fn, spec, proposal, target_fn.bounds, gauss100_start(seed), n_iter, seed)


def demo_fig10_12(out: Path, cfg: dict) -> dict:
    """Componentwise level-set chain on the 100-input Gaussian, c = 1000."""
    seed = _opt(cfg, "seed", 0)
    n_iter = _opt(cfg, "n_iter", 50000)
    burn = _burn(n_iter)
    spec = TargetSpec([1000.0], [1.0])
    chain = run_gauss100(n_iter, seed)
    report = {
        "n_evals": chain.n_evals,
        "summary": _save(chain, out, "chain", spec, seed, burn),
        "correlations": {
            f"{i},{j}": _correlation_or_none(chain, i - 1, j - 1, burn) for i, j in GAUSS100_PAIRS
        },
    }
    write_histogram_csv(histogram(chain.responses_after(burn)[:, 0], 30), out / "hist_response.csv")
    for i in sorted({k for pair in GAUSS100_PAIRS for k in pair}):
        write_histogram_csv(histogram(chain.post_burn_in(burn)[:, i - 1], 30), out / f"hist_theta_{i}.csv")
    write_report(report, out / "report.json")
    return report


# flow, time to peak, duration at the centre of the cube: (5000, 0.4, 8.25)
BREACH_OVERLAP_C = tuple(float(v) for v in synthetic_breach(np.full(3, 0.5)))
BREACH_TOL = (50.0**2, 0.003**2, 0.09**2)
BREACH_CONFLICT_C = (9000.0, 0.7, BREACH_OVERLAP_C[2])


def precision_weighted(c, var) -> float:
    w = 1.0 / np.asarray(var, dtype=float)
    return float(np.sum(w * np.asarray(c, dtype=float)) / np.sum(w))


def demo_multiresponse(out: Path, cfg: dict) -> dict:
    """Three-response synthetic breach model: single versus joint targets.

    One GP is fitted per response on a 50-point design.  Chains on flow alone,
    on all three responses with a jointly attainable target, and on all three
    with conflicting flow/time-to-peak targets show the intersection of level
    sets shrinking the set of unique inputs and the tolerance-weighted
    compromise.  A two-response map ``(theta_1, theta_1)`` with conflicting
    targets checks the compromise against its closed form.
    """
    seed = _opt(cfg, "seed", 0)
    n_iter = _opt(cfg, "n_iter", 20000)
    burn = _burn(n_iter)
    breach = get_target("synthetic_breach")
    design = evaluate_design(latin_hypercube(50, breach.bounds, seed), breach, breach.response_names)
    write_design_csv(design, out / "design.csv")
    gps = [fit_gp(design, j) for j in range(3)]
    for gp in gps:
        save_gp(gp, out / f"model.{gp.response_name}.json")
    means = stack_means(gps)
    theta0 = [0.85, 0.95, 0.5]
    proposal = ProposalSpec(np.full(3, 0.05**2))
    report = {"chains": {}}

    runs = (
        ("chain_flow_only", lambda th: means(th)[:1], TargetSpec([BREACH_OVERLAP_C[0]], [BREACH_TOL[0]])),
        ("chain_three_overlap", means, TargetSpec(BREACH_OVERLAP_C, BREACH_TOL)),
        ("chain_three_conflict", means, TargetSpec(BREACH_CONFLICT_C, BREACH_TOL)),
    )
    for stem, f, spec in runs:
        chain = run_lsmcmc_mean(f, spec, proposal, breach.bounds, theta0, n_iter, seed)
        report["chains"][stem] = {"c": spec.c.tolist(), "summary": _save(chain, out, stem, spec, seed, burn)}

    twin = get_target("twin_first_input")
    c, sd = (0.2, 0.8), (0.05, 0.1)
    spec = TargetSpec(c, np.square(sd))
    chain = run_lsmcmc_mean(twin, spec, ProposalSpec([0.01, 0.01]), twin.bounds, [0.5, 0.5], n_iter, seed)
    x = chain.post_burn_in(burn)[:, 0]
    report["chains"]["chain_twin_compromise"] = {
        "summary": _save(chain, out, "chain_twin_compromise", spec, seed, burn),
        "theta_1_mean": float(x.mean()),
        "theta_1_mcse": batch_means_se(x),
        "theta_1_expected": precision_weighted(c, np.square(sd)),
    }

    sobol = {}
    for j, name in enumerate(breach.response_names):
        res = sobol_first_order(breach, breach.bounds, 10_000, seed, response=j)
        sobol[name] = {"first_order": res.first_order.tolist(), "raw": res.raw.tolist()}
    report["sobol"] = sobol
    write_report(report, out / "report.json")
    return report


DEMOS: Dict[str, Callable[[Path, dict], dict]] = {
    "fig5": demo_fig5,
    "fig6": demo_fig6,
    "fig7": demo_fig7,
    "fig10-12": demo_fig10_12,
    "multiresponse-synthetic": demo_multiresponse,
}
