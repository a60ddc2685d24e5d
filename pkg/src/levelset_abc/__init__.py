"""Level-set estimation with Gaussian-process surrogates and smoothed ABC MCMC."""

from .design import Bounds, Design, evaluate_design, latin_hypercube, scale_to_unit, unscale_from_unit
from .diagnostics import (
    ChainSummary,
    empirical_correlation,
    ks_statistic,
    sobol_first_order,
    straddle,
    summarize,
    tolerance_coverage,
)
from .errors import (
    EvaluationError,
    FormatError,
    InvalidArgumentError,
    InvalidStartError,
    LevelSetError,
    NumericalError,
    OutOfSupportError,
    UndefinedStatisticError,
)
from .sampler import (
    Chain,
    ProposalSpec,
    TargetSpec,
    in_support,
    mvn_diag_logpdf,
    run_abc_mcmc_hard,
    run_generalized_mcmc,
    run_lsmcmc_mean,
    run_lsmcmc_smoothed,
    run_mh,
)
from .surrogate import FitConfig, GpHyperparams, GpSurrogate, fit_gp, kernel, log_marginal_likelihood
from .targets import gauss100, get_target, goldstein_price, two_bump

__version__ = "0.1.0"
