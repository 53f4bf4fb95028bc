"""Sampling from the power distribution of tabular sequence models.

Raising an autoregressive model's sequence probability to a power alpha
and renormalizing concentrates mass on high-likelihood trajectories.
This package implements Monte Carlo samplers for that distribution
(token-level and block-level, with jackknife-corrected scale-factor
estimates), exact enumeration oracles for small models, baseline
samplers (low temperature, best-of-n, Metropolis-Hastings), and a small
lab for measuring estimator bias decay.
"""

from .baselines import (
    McmcParams,
    McmcResult,
    ScoredSequence,
    best_of_n,
    cost_account,
    low_temp_sample,
    low_temp_sequences,
    mcmc_power_chains,
    mcmc_power_sample,
)
from .biaslab import (
    STANDARD_FIXTURES,
    BiasFixture,
    SlopeFit,
    TrialRecord,
    concentration_check,
    fit_decay,
    measure_bias,
    measure_bias_pair,
    run_bias_suite,
)
from .blocks import (
    BlockCandidate,
    BlockParams,
    BlockResult,
    block_stage_starts,
    block_token_bound,
    propose_blocks,
    sample_block_sequence,
    sample_block_sequences,
    score_blocks,
    top_k_blocks,
)
from .diagnostics import CostCounters
from .model import (
    Prefix,
    TableModel,
    UnknownContextError,
    Vocabulary,
    absorbed_form,
    build_random_model,
    build_toy_model,
    low_temp_next_dist,
    next_token_dist,
    rollout,
    sequence_log_prob,
)
from .modelspec import ModelFileError, load_model, resolve_model, save_model
from .oracle import (
    EnumerationBudgetError,
    ScaleTable,
    SequenceDistribution,
    empirical_distribution,
    enumerate_base,
    exact_power_next_token,
    exact_scale_factors,
    power_distribution,
    tv_distance,
)
from .rng import RandomStreams
from .sampler import (
    CandidateEstimates,
    PowerParams,
    SampleResult,
    estimate_scale_factor,
    jackknife_estimates,
    power_estimates,
    sample_sequence,
    sample_sequences,
    sample_step,
    token_cost_bound,
)

__version__ = "0.1.0"

__all__ = [
    "BiasFixture",
    "BlockCandidate",
    "BlockParams",
    "BlockResult",
    "CandidateEstimates",
    "CostCounters",
    "EnumerationBudgetError",
    "McmcParams",
    "McmcResult",
    "ModelFileError",
    "PowerParams",
    "Prefix",
    "RandomStreams",
    "STANDARD_FIXTURES",
    "SampleResult",
    "ScaleTable",
    "ScoredSequence",
    "SequenceDistribution",
    "SlopeFit",
    "TableModel",
    "TrialRecord",
    "UnknownContextError",
    "Vocabulary",
    "absorbed_form",
    "best_of_n",
    "block_stage_starts",
    "block_token_bound",
    "build_random_model",
    "build_toy_model",
    "concentration_check",
    "cost_account",
    "empirical_distribution",
    "enumerate_base",
    "estimate_scale_factor",
    "exact_power_next_token",
    "exact_scale_factors",
    "fit_decay",
    "jackknife_estimates",
    "load_model",
    "low_temp_next_dist",
    "low_temp_sample",
    "low_temp_sequences",
    "mcmc_power_chains",
    "mcmc_power_sample",
    "measure_bias",
    "measure_bias_pair",
    "next_token_dist",
    "power_distribution",
    "power_estimates",
    "propose_blocks",
    "resolve_model",
    "rollout",
    "run_bias_suite",
    "sample_block_sequence",
    "sample_block_sequences",
    "sample_sequence",
    "sample_sequences",
    "sample_step",
    "save_model",
    "score_blocks",
    "sequence_log_prob",
    "token_cost_bound",
    "top_k_blocks",
    "tv_distance",
    "__version__",
]
