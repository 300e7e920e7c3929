"""Absorbing-rate discrete diffusion at desk scale: exact forward and score
oracles over small token spaces, reverse samplers with matching closed-form
laws, and numerical checks of every convergence envelope."""

from .state_space import (
    ModelSpec,
    dense_dist,
    decode,
    dirichlet_q0,
    encode,
    load_spec,
    mask_count,
    maskfree_uniform_q0,
    point_q0,
    product_q0,
    spec_digest,
    spec_from_dict,
    uniform_q0,
)
from .forward_process import (
    forward_conditional,
    marginal,
    rate_matrix_token,
    sample_forward,
    token_kernel,
)
from .score_oracle import (
    ClippedScore,
    ExactAnalyticScore,
    ExactRatioScore,
    PerturbedScore,
    TransitionPair,
    clipped_score,
    compute_gamma,
    perturbed_score,
    posterior_token,
    score_analytic,
    score_ratio,
    transition_table,
)
from .divergence_metrics import (
    MetricsRecord,
    bregman_gap,
    empirical_dist,
    kl,
    score_entropy,
    tv,
    write_csv,
)
from .reverse_samplers import (
    InitDist,
    IntegrationError,
    IntensityOverflowError,
    Schedule,
    UniformizationConfig,
    exact_law,
    interval_intensities,
    lambda_for_interval,
    make_schedule,
    sample_init,
    tau_leaping_run,
    uniformization_run,
)
from .bound_verifier import (
    BoundReport,
    check_early_stop_tv,
    check_forward_kl,
    check_lower_bound_divergence,
    check_score_envelope,
    check_sum_bound,
    check_time_derivative,
    default_manifest,
    run_all_checks,
)

__version__ = "0.1.0"
