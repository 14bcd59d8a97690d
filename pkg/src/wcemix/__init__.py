"""Robust mixture-model estimation via weighted complete estimating equations.

Supports Gaussian mixtures, mixtures of Gaussian regression experts, and
skew-normal mixtures, with density-power downweighting of outliers, Monte
Carlo outlier flagging, trimmed-BIC model selection, sandwich standard
errors, and a replication study harness.
"""

from ._backend import BACKEND_NAME
from .core import (density_weight, initialize, mixture_loglik_rows,
                   responsibilities, run_eee, update_mixing)
from .distributions import (mahalanobis_sq, mvn_logpdf, sample_component,
                            skew_normal_logpdf, sn_dp_transform,
                            truncnorm_plus_moments)
from .exceptions import (ComponentCollapseError, DataError, FitError,
                         InferenceError, InitializationError,
                         ParameterizationError, WcemixError)
from .gaussian import (GaussBiasTerms, eigen_ratio_constrain,
                       gaussian_bias_terms, gmm_ee_update)
from .experts import (gating_probs, moe_bias_terms, moe_ee_update,
                      moe_gating_update)
from .inference import SandwichEstimate, imputed_score, sandwich_covariance
from .params import (ExpertComponent, FitConfig, FitResult, GaussianParams,
                     MixtureParams, RegressionData, SkewNormalParams)
from .selection import (OutlierReport, SelectionResult, detect_outliers,
                        outlier_score, select_model, trimmed_bic)
from .simulate import (Scenario, StudyReport, compute_metrics,
                       gen_gaussian_data, gen_skewnormal_data, run_study)
from .skewnormal import SnLatentStats, snm_ee_update, snm_latent_expectations

__version__ = "0.1.0"

__all__ = [
    "BACKEND_NAME",
    "ComponentCollapseError", "DataError", "ExpertComponent", "FitConfig",
    "FitError", "FitResult", "GaussBiasTerms", "GaussianParams",
    "InferenceError", "InitializationError", "MixtureParams", "OutlierReport",
    "ParameterizationError", "RegressionData", "SandwichEstimate", "Scenario",
    "SelectionResult", "SkewNormalParams", "SnLatentStats", "StudyReport",
    "WcemixError",
    "compute_metrics", "density_weight", "detect_outliers",
    "eigen_ratio_constrain", "gating_probs", "gaussian_bias_terms",
    "gen_gaussian_data", "gen_skewnormal_data", "gmm_ee_update",
    "imputed_score", "initialize", "mahalanobis_sq", "mixture_loglik_rows",
    "moe_bias_terms", "moe_ee_update", "moe_gating_update", "mvn_logpdf",
    "outlier_score", "responsibilities", "run_eee", "run_study",
    "sample_component", "sandwich_covariance", "select_model",
    "skew_normal_logpdf", "sn_dp_transform", "snm_ee_update",
    "snm_latent_expectations", "trimmed_bic", "truncnorm_plus_moments",
    "update_mixing",
]
