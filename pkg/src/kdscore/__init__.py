"""Hypothesis tests and confidence intervals for sparse linear decision rules.

The rules are fitted by L1-penalised empirical risk minimisation with a
piecewise-linear convex surrogate loss (e.g. the hinge loss). Inference uses a
cross-fitted, kernel-smoothed decorrelated score; a two-half variant handles
estimated AIPW weights (missing labels, individualised treatment rules).
"""

from .dataset import Dataset, WeightPair
from .errors import (
    DegeneracyError,
    DegenerateVariance,
    InvalidInput,
    KdscoreError,
    NearSingularInformation,
    NonConvergenceWarning,
    UnboundedRisk,
)
from .folds import FoldPlan, make_fold_plan
from .inference import (
    CoordinateInference,
    InferenceConfig,
    debiased_estimate,
    decorrelated_score,
    information_estimate,
    test_all_coordinates,
    test_coordinate,
)
from .loss_kernel import (
    GAUSSIAN,
    QUINTIC,
    BandwidthConfig,
    PiecewiseLinearLoss,
    hessian_weight,
    hinge,
    loss_value,
    quintic_local_kernel,
    smoothed_gradient,
)
from .nuisance import NuisanceConfig, fit_nuisance_kernel_regression, run_algorithm2, weights_itr, weights_missing_labels
from .simulation import MetricsReport, ScenarioConfig, compute_truth, run_experiment, simulate_scenario1, simulate_scenario2
from .solver import (
    SolverOptions,
    cross_validate_lambda,
    fit_decorrelation,
    fit_erm_cv,
    fit_penalized_erm,
)
from .stats_util import RngStream, bh_fdr, normal_cdf, normal_quantile

__version__ = "0.1.0"
