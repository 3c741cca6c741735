"""Counterfactual panel estimators with bootstrap and placebo inference.

Convex and LASSO synthetic control, nuclear-norm matrix completion, and the
reporting pipeline around them. The hot loops live in a compiled extension
with a pure-Python fallback; ``cfpanel.BACKEND`` says which one is active.
"""

__version__ = "0.1.0"

from cfpanel._backend import BACKEND
from cfpanel.completion import CompletionProblem, estimate_att_mc, select_regimes, soft_impute
from cfpanel.dgp import DGPConfig, generate_factor_panel, run_monte_carlo
from cfpanel.estimators import Estimator
from cfpanel.exceptions import CFPanelError, ConfigError, EstimationError, PanelError
from cfpanel.inference import (
    ATTEstimate,
    BootstrapConfig,
    assemble_att,
    blocked_bootstrap,
    placebo_in_space,
    rmspe_ratio,
)
from cfpanel.lasso import PenaltyGrid, cv_select_lambda, fit_lasso_weights, lasso_scm_analysis
from cfpanel.panel import (
    PanelDataset,
    TreatmentSpec,
    describe,
    filter_donors,
    load_exclusions,
    load_panel,
    split_pre_post,
)
from cfpanel.scm import GapSeries, WeightVector, convex_scm_analysis, fit_convex_weights

__all__ = [
    "ATTEstimate",
    "BACKEND",
    "BootstrapConfig",
    "CFPanelError",
    "CompletionProblem",
    "ConfigError",
    "DGPConfig",
    "EstimationError",
    "Estimator",
    "GapSeries",
    "PanelDataset",
    "PanelError",
    "PenaltyGrid",
    "TreatmentSpec",
    "WeightVector",
    "assemble_att",
    "blocked_bootstrap",
    "convex_scm_analysis",
    "cv_select_lambda",
    "describe",
    "estimate_att_mc",
    "filter_donors",
    "fit_convex_weights",
    "fit_lasso_weights",
    "generate_factor_panel",
    "lasso_scm_analysis",
    "load_exclusions",
    "load_panel",
    "placebo_in_space",
    "rmspe_ratio",
    "run_monte_carlo",
    "select_regimes",
    "soft_impute",
    "split_pre_post",
]
