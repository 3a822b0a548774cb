"""Bayesian state-space models with CCC-GARCH observation errors."""

__version__ = "0.1.0"

from .diagnostics import (  # noqa: E402
    Comparison,
    PosteriorSummary,
    ResidualReport,
    WaicReport,
    compare_models,
    dynamic_variance_path,
    ergodic_means,
    point_estimates,
    residual_analysis,
    summarize,
    waic,
)
from .estimator import GarchStateSpace  # noqa: E402
from .filtering import (  # noqa: E402
    FilterError,
    FilterOutput,
    kalman_filter,
    one_step_forecasts,
    pointwise_log_predictive,
    rts_smoother,
)
from .model import (  # noqa: E402
    CorrelationFactor,
    GarchParams,
    ModelSpec,
    SeriesData,
    SimulationTruth,
    apply_missingness,
    build_local_linear_trend,
    build_observation_cov,
    build_random_walk_plus_noise,
    correlation_from_factor,
    correlation_from_rho,
    garch_variance_step,
    simulate,
)
from .sampling import (  # noqa: E402
    ChainError,
    McmcConfig,
    PosteriorDraws,
    PriorSpec,
    derived_state_correlation,
    ffbs,
    impute_missing,
    log_prior_correlation,
    log_prior_garch,
    mh_update_correlation,
    mh_update_garch,
    mh_update_W,
    run_chain,
    run_chains_parallel,
    sample_V_conjugate,
    sample_W_conjugate,
)

__all__ = [
    "__version__",
    "GarchStateSpace",
    "ModelSpec",
    "GarchParams",
    "CorrelationFactor",
    "SeriesData",
    "SimulationTruth",
    "build_random_walk_plus_noise",
    "build_local_linear_trend",
    "build_observation_cov",
    "garch_variance_step",
    "correlation_from_factor",
    "correlation_from_rho",
    "simulate",
    "apply_missingness",
    "FilterError",
    "FilterOutput",
    "kalman_filter",
    "one_step_forecasts",
    "pointwise_log_predictive",
    "rts_smoother",
    "ChainError",
    "McmcConfig",
    "PosteriorDraws",
    "PriorSpec",
    "ffbs",
    "sample_W_conjugate",
    "sample_V_conjugate",
    "mh_update_garch",
    "mh_update_correlation",
    "mh_update_W",
    "log_prior_garch",
    "log_prior_correlation",
    "impute_missing",
    "derived_state_correlation",
    "run_chain",
    "run_chains_parallel",
    "WaicReport",
    "PosteriorSummary",
    "ResidualReport",
    "Comparison",
    "waic",
    "compare_models",
    "ergodic_means",
    "summarize",
    "point_estimates",
    "residual_analysis",
    "dynamic_variance_path",
]
