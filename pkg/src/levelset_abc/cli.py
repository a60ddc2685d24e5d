"""Command-line front end: ``levelset-abc {design,fit,sample,diagnose,demo}``.

Each command reads one TOML experiment file with dotted sections, e.g.::

    target.fn = "two_bump"
    target.c = [0.6]
    target.tol = [0.01]
    design.n = 50
    design.seed = 1
    sampler.algorithm = "lsmcmc-mean"
    sampler.n_iter = 5000
    proposal.diag = [2.0, 2.0]

and every key can be overridden with ``--set key=value`` (the value is parsed
as a TOML literal, falling back to a bare string).  Exit codes: 0 success,
2 invalid configuration or arguments, 3 numerical failure, 4 I/O or file
format error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import demos
from .design import Bounds, evaluate_design, latin_hypercube, read_design_csv, write_design_csv
from .diagnostics import (
    empirical_correlation,
    histogram,
    ks_statistic,
    summarize,
    write_histogram_csv,
    write_report,
)
from .errors import EvaluationError, FormatError, InvalidArgumentError, LevelSetError, NumericalError
from .sampler import (
    ProposalSpec,
    TargetSpec,
    in_support,
    read_chain,
    run_abc_mcmc_hard,
    run_generalized_mcmc,
    run_lsmcmc_mean,
    run_lsmcmc_smoothed,
    run_mh,
    write_chain,
)
from .surrogate import FitConfig, fit_gp, load_gp, save_gp, stack_means
from .targets import get_target

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4

ALGORITHMS = ("mh", "abc-hard", "lsmcmc-smoothed", "lsmcmc-mean", "generalized")


class ConfigError(InvalidArgumentError):
    """A configuration key is missing, malformed or inconsistent."""


# -- configuration ---------------------------------------------------------


def _flatten(doc: dict, prefix: str = "") -> dict:
    out = {}
    for key, value in doc.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            out.update(_flatten(value, name + "."))
        else:
            out[name] = value
    return out


def parse_override(text: str) -> tuple:
    """``"a.b=1.5"`` -> ``("a.b", 1.5)``; non-TOML values stay strings."""
    if "=" not in text:
        raise ConfigError(f"--set expects key=value, got {text!r}")
    key, raw = text.split("=", 1)
    key = key.strip()
    if not key:
        raise ConfigError(f"--set has an empty key: {text!r}")
    try:
        value = tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw
    return key, value


def load_config(path: Optional[str], overrides: Sequence[str] = ()) -> dict:
    """Read a TOML experiment file into a flat ``{"section.key": value}`` dict."""
    cfg = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                cfg = _flatten(tomllib.load(fh))
        except tomllib.TOMLDecodeError as exc:
            raise FormatError(f"{path}: {exc}") from exc
    for item in overrides:
        key, value = parse_override(item)
        cfg[key] = value
    return cfg


def _get(cfg: dict, key: str, default=None, required: bool = False):
    if key in cfg:
        return cfg[key]
    if required:
        raise ConfigError(f"missing required config key {key!r}")
    return default


def _int(cfg, key, default=None, required=False, minimum=None) -> int:
    value = _get(cfg, key, default, required)
    if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
        raise ConfigError(f"{key} must be an integer, got {value!r}")
    value = int(value)
    if minimum is not None and value < minimum:
        raise ConfigError(f"{key} must be >= {minimum}, got {value}")
    return value


def _vec(cfg, key, length: int, default=None, required=False) -> np.ndarray:
    """Numeric vector of ``length``; a scalar is broadcast."""
    value = _get(cfg, key, default, required)
    try:
        arr = np.atleast_1d(np.asarray(value, dtype=float))
    except (TypeError, ValueError):
        raise ConfigError(f"{key} must be a number or list of numbers, got {value!r}") from None
    if arr.ndim != 1:
        raise ConfigError(f"{key} must be one-dimensional")
    if arr.size == 1 and length > 1:
        arr = np.full(length, arr[0])
    if arr.size != length:
        raise ConfigError(f"{key} has {arr.size} entries, expected {length}")
    return arr


def _path(cfg, key, default: str, base: Path) -> Path:
    value = _get(cfg, key, default)
    p = Path(value)
    return p if p.is_absolute() else base / p


# -- target resolution -----------------------------------------------------


@dataclass
class ResolvedTarget:
    """What ``target.fn`` points at: a registry function or fitted surrogates."""

    name: str
    bounds: Optional[Bounds]
    dims_out: int
    func: Optional[Callable] = None
    surrogates: Optional[list] = None
    response_names: tuple = ()


def resolve_target(cfg: dict, base: Path) -> ResolvedTarget:
    name = _get(cfg, "target.fn", required=True)
    if not isinstance(name, str):
        raise ConfigError("target.fn must be a string")
    if name.startswith("surrogate:"):
        files = [s.strip() for s in name[len("surrogate:") :].split(",") if s.strip()]
        if not files:
            raise ConfigError("surrogate: needs at least one model file")
        gps = [load_gp(f if Path(f).is_absolute() else base / f) for f in files]
        if any(g.bounds != gps[0].bounds for g in gps[1:]):
            raise ConfigError("all surrogate files must share the same bounds")
        return ResolvedTarget(
            name, gps[0].bounds, len(gps), func=stack_means(gps), surrogates=gps,
            response_names=tuple(g.response_name for g in gps),
        )
    target = get_target(name)
    bounds = target.bounds
    if "bounds.lower" in cfg or "bounds.upper" in cfg:
        bounds = Bounds(
            _vec(cfg, "bounds.lower", target.dims_in, required=True),
            _vec(cfg, "bounds.upper", target.dims_in, required=True),
        )
    return ResolvedTarget(name, bounds, target.dims_out, func=target, response_names=target.response_names)


# -- commands --------------------------------------------------------------


def cmd_design(cfg: dict, base: Path) -> Path:
    resolved = resolve_target(cfg, base)
    if resolved.surrogates is not None:
        raise ConfigError("design needs a registry target, not a surrogate")
    n = _int(cfg, "design.n", required=True, minimum=1)
    seed = _int(cfg, "design.seed", 0)
    out = _path(cfg, "design.output", "design.csv", base)
    design = latin_hypercube(n, resolved.bounds, seed)
    if _get(cfg, "design.evaluate", True):
        design = evaluate_design(design, resolved.func, resolved.response_names)
    write_design_csv(design, out)
    print(f"wrote {design.n} points to {out}")
    return out


def cmd_fit(cfg: dict, base: Path) -> list:
    resolved = resolve_target(cfg, base)
    if resolved.surrogates is not None:
        raise ConfigError("fit needs the registry target whose bounds the design uses")
    design_path = _path(cfg, "fit.design", "design.csv", base)
    design = read_design_csv(design_path, resolved.bounds)
    if design.responses is None:
        raise ConfigError(f"{design_path} has no response columns; run design with evaluation first")
    fit_cfg = FitConfig(
        starts=_int(cfg, "fit.starts", 8, minimum=1),
        max_iter=_int(cfg, "fit.max_iter", 2000, minimum=1),
        nugget_floor=float(_get(cfg, "fit.nugget_floor", 1e-8)),
        seed=_int(cfg, "fit.seed", 0),
    )
    kernel_name = _get(cfg, "fit.kernel", "squared_exponential_ard")
    if kernel_name != "squared_exponential_ard":
        raise ConfigError("fit.kernel supports only 'squared_exponential_ard'")
    out = _path(cfg, "fit.output", "model.json", base)
    m = design.responses.shape[1]
    cols = _get(cfg, "fit.response_col", None)
    cols = list(range(m)) if cols is None else [int(c) for c in np.atleast_1d(cols)]
    if any(not 0 <= c < m for c in cols):
        raise ConfigError(f"fit.response_col must index one of {m} response columns")
    paths = []
    for c in cols:
        gp = fit_gp(design, c, fit_cfg)
        path = out if len(cols) == 1 else out.with_name(f"{out.stem}.{design.response_names[c]}{out.suffix}")
        save_gp(gp, path)
        h = gp.hyper
        print(
            f"{gp.response_name}: lengthscales={np.array2string(h.lengthscales, precision=4)} "
            f"signal_variance={h.signal_variance:.6g} nugget={h.nugget:.3g} "
            f"log_evidence={gp.fit_info['log_marginal_likelihood']:.6g} -> {path}"
        )
        paths.append(path)
    return paths


def _sample_setup(cfg: dict, base: Path):
    """Validate every dimension before anything runs."""
    algorithm = _get(cfg, "sampler.algorithm", required=True)
    if algorithm not in ALGORITHMS:
        raise ConfigError(f"sampler.algorithm must be one of {', '.join(ALGORITHMS)}, got {algorithm!r}")
    n_iter = _int(cfg, "sampler.n_iter", required=True, minimum=1)
    seed = _int(cfg, "sampler.seed", 0)
    mode = _get(cfg, "proposal.mode", "joint")

    if algorithm == "generalized":
        c = _vec(cfg, "target.c", len(np.atleast_1d(_get(cfg, "target.c", required=True))))
        d = c.size
        target = TargetSpec(c, _vec(cfg, "target.tol", d, required=True))
        proposal = ProposalSpec(_vec(cfg, "proposal.diag", d, required=True), mode)
        theta0 = _vec(cfg, "sampler.theta0", d, default=c)
        return algorithm, None, target, proposal, theta0, n_iter, seed

    resolved = resolve_target(cfg, base)
    d, m = resolved.bounds.dim, resolved.dims_out
    c = _vec(cfg, "target.c", m, required=True)
    target = TargetSpec(c, _vec(cfg, "target.tol", m, required=True))
    proposal = ProposalSpec(_vec(cfg, "proposal.diag", d, required=True), mode)
    theta0 = _vec(cfg, "sampler.theta0", d, default=(resolved.bounds.lower + resolved.bounds.upper) / 2)
    if algorithm == "mh" and m != 1:
        raise ConfigError("mh samples log f and needs a single-response target")
    if algorithm == "abc-hard":
        eps = _get(cfg, "sampler.epsilon", required=True)
        if not isinstance(eps, (int, float)) or not eps > 0:
            raise ConfigError("sampler.epsilon must be a positive number")
    if algorithm == "lsmcmc-smoothed" and resolved.surrogates is None:
        raise ConfigError("lsmcmc-smoothed needs target.fn = 'surrogate:<model.json>[,...]'")
    return algorithm, resolved, target, proposal, theta0, n_iter, seed


def run_configured_chain(cfg: dict, base: Path):
    algorithm, resolved, target, proposal, theta0, n_iter, seed = _sample_setup(cfg, base)
    rng = np.random.default_rng(seed)
    if algorithm == "generalized":
        return run_generalized_mcmc(target, proposal, theta0, n_iter, rng), target
    bounds, f = resolved.bounds, resolved.func

    if algorithm == "mh":

        def log_f(theta):
            if not in_support(bounds, theta):
                return -np.inf
            value = float(np.atleast_1d(f(theta))[0])
            return np.log(value) if value > 0 else -np.inf

        chain = run_mh(log_f, proposal, theta0, n_iter, rng)
    elif algorithm == "abc-hard":

        def flat_prior(theta):
            return 0.0 if in_support(bounds, theta) else -np.inf

        chain = run_abc_mcmc_hard(
            flat_prior, f, target.c, float(cfg["sampler.epsilon"]), proposal, theta0, n_iter, rng
        )
    elif algorithm == "lsmcmc-smoothed":
        chain = run_lsmcmc_smoothed(resolved.surrogates, target, proposal, bounds, theta0, n_iter, rng)
    else:
        chain = run_lsmcmc_mean(f, target, proposal, bounds, theta0, n_iter, rng)
    chain.meta.setdefault("target_fn", resolved.name)
    return chain, target


def cmd_sample(cfg: dict, base: Path) -> tuple:
    chain, target = run_configured_chain(cfg, base)
    csv_path = _path(cfg, "output.chain", "chain.csv", base)
    meta_path = _path(cfg, "output.meta", str(csv_path.with_suffix(".json")), base)
    burn_in = _int(cfg, "sampler.burn_in", 1000, minimum=0)
    extra = {"seed": _int(cfg, "sampler.seed", 0), "burn_in": burn_in, "target": target.to_dict()}
    write_chain(chain, csv_path, meta_path, extra_meta=extra)
    print(
        f"{chain.algorithm}: {chain.n_iter} iterations, acceptance {chain.acceptance_rate:.4f}, "
        f"n_evals {chain.n_evals} -> {csv_path}"
    )
    return csv_path, meta_path


def _pairs(value) -> list:
    pairs = []
    for p in value or []:
        if not isinstance(p, (list, tuple)) or len(p) != 2:
            raise ConfigError(f"diagnose.pairs entries must be [i, j] pairs, got {p!r}")
        pairs.append((int(p[0]), int(p[1])))
    return pairs


def diagnose_chain(chain, target: TargetSpec, burn_in: int, pairs=(), ks: bool = False, bins: int = 30) -> dict:
    """Report dict for one chain.  ``pairs`` use one-based input labels."""
    report = {"summary": summarize(chain, target, burn_in).to_dict(), "n_evals": chain.n_evals}
    corr = {}
    for i, j in pairs:
        if not (1 <= i <= chain.d and 1 <= j <= chain.d):
            raise ConfigError(f"pair ({i}, {j}) outside inputs 1..{chain.d}")
        corr[f"{i},{j}"] = empirical_correlation(chain, i - 1, j - 1, burn_in)
    report["correlations"] = corr
    if ks:
        if chain.d != target.m:
            raise ConfigError("KS statistics compare inputs to N(c, tol) and need len(c) == d")
        report["ks"] = [
            ks_statistic(chain.post_burn_in(burn_in)[:, i], target.c[i], target.tol_diag[i]) for i in range(chain.d)
        ]
    report["histograms"] = {
        f"response_{j + 1}": histogram(chain.responses_after(burn_in)[:, j], bins).tolist() for j in range(chain.m)
    }
    return report


def cmd_diagnose(cfg: dict, base: Path) -> Path:
    chain_path = _path(cfg, "diagnose.chain", "chain.csv", base)
    chain = read_chain(chain_path)
    c = _get(cfg, "target.c", chain.meta.get("target", {}).get("c"))
    tol = _get(cfg, "target.tol", chain.meta.get("target", {}).get("tol_diag"))
    if c is None or tol is None:
        raise ConfigError("target.c and target.tol are needed (not found in config or chain metadata)")
    target = TargetSpec(_vec({"c": c}, "c", chain.m), _vec({"t": tol}, "t", chain.m))
    burn_in = _int(cfg, "diagnose.burn_in", chain.meta.get("burn_in", 1000), minimum=0)
    if burn_in >= chain.N:
        raise ConfigError(f"burn_in {burn_in} leaves no rows of a {chain.N}-row chain")
    report = diagnose_chain(
        chain, target, burn_in, _pairs(_get(cfg, "diagnose.pairs")), bool(_get(cfg, "diagnose.ks", False)),
        _int(cfg, "diagnose.bins", 30, minimum=1),
    )
    out = _path(cfg, "diagnose.report", str(chain_path.with_suffix("")) + ".report.json", base)
    for name, rows in report["histograms"].items():
        write_histogram_csv(np.array(rows), out.with_name(f"{out.stem}.{name}.hist.csv"))
    write_report(report, out)
    s = report["summary"]
    print(f"acceptance {s['acceptance_rate']:.4f}, unique {s['n_unique']}, coverage {s['coverage_2sigma']}")
    for pair, r in report["correlations"].items():
        print(f"corr({pair}) = {r:+.4f}")
    print(f"report -> {out}")
    return out


def cmd_demo(name: str, out_dir: Path, cfg: dict) -> dict:
    if name not in demos.DEMOS:
        raise ConfigError(f"unknown demo {name!r}; available: {', '.join(demos.DEMOS)}")
    out_dir.mkdir(parents=True, exist_ok=True)
    report = demos.DEMOS[name](out_dir, cfg)
    print(json.dumps(report, indent=2, sort_keys=True, default=float))
    return report


# -- entry point -----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="levelset-abc", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("-c", "--config", help="TOML experiment file")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config key (repeatable)")

    common(sub.add_parser("design", help="write a Latin hypercube design (evaluated on target.fn)"))
    p = sub.add_parser("fit", help="fit one GP per response column of a design")
    common(p)
    p.add_argument("--design", help="design CSV (overrides fit.design)")
    common(sub.add_parser("sample", help="run one of the MCMC algorithms"))
    p = sub.add_parser("diagnose", help="summarize a chain file")
    common(p)
    p.add_argument("--chain", help="chain CSV (overrides diagnose.chain)")
    p = sub.add_parser("demo", help="run a named experiment end to end")
    common(p)
    p.add_argument("name", help=f"one of: {', '.join(demos.DEMOS)}")
    p.add_argument("-o", "--out", help="output directory (default: demo-<name>)")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.overrides)
        base = Path(args.config).resolve().parent if args.config else Path.cwd()
        if args.command == "design":
            cmd_design(cfg, base)
        elif args.command == "fit":
            if args.design:
                cfg["fit.design"] = str(Path(args.design).resolve())
            cmd_fit(cfg, base)
        elif args.command == "sample":
            cmd_sample(cfg, base)
        elif args.command == "diagnose":
            if args.chain:
                cfg["diagnose.chain"] = str(Path(args.chain).resolve())
            cmd_diagnose(cfg, base)
        else:
            cmd_demo(args.name, Path(args.out or f"demo-{args.name}"), cfg)
    except (FormatError, FileNotFoundError, PermissionError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except InvalidArgumentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (NumericalError, EvaluationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except LevelSetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
