"""Interpretable linear individualized treatment regimes with adaptive LASSO."""
from .dataset import Dataset, FoldAssignment, NormalizedDataset, kfold_split, load_table, normalize
from .losses import PenaltySpec, dloss_s, empirical_risk, loss_01, loss_hinge, loss_ramp, loss_s, penalty
from .nuisance import (
    ContrastEstimate,
    GLMNuisance,
    NuisanceFit,
    clip_propensity,
    estimate_contrast_aipw,
    estimate_value_aipw,
    fit_outcome,
    fit_propensity,
)
from .pipeline import (
    CVResult,
    PipelineConfig,
    Policy,
    ValueCurve,
    complementary_analysis,
    cv_path,
    fit_full,
    predict,
    run_pipeline,
    select_lambda,
)
from .solvers import FitResult, SolverConfig, dc_fit, hinge_fit, initial_estimate, solve_convex_subproblem

__version__ = "0.1.0"
