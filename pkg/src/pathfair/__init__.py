"""Fairness-constrained prediction by nullifying pathway-specific effects."""
from .adjust import (
    FairPredictor, LambdaSearchConfig, adjust_log_odds, adjust_mse, fit_adjust, mse_gap,
    predict_fair, solve_lambda_xent, xent_path_point,
)
from .data import Dataset
from .glm import (
    FeatureSpec, GlmModel, NuisanceSet, fit_binomial, fit_gaussian, fit_nuisances, predict,
    select_penalty_cv,
)
from .graph import (
    CausalPartition, Dag, PathSet, check_identifiability, partition, validate_dag,
)
from .kernels import BACKEND
from .pse import (
    RHO1, RHO2, ConstraintEstimate, GradientField, Scenario, gradient_field, gradient_variance,
    gradient_mean_check, scenario_for, theta_aipw, theta_ipw, theta_ipw_alt, theta_plugin,
)

__version__ = "0.1.0"
