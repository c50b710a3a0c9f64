"""Wasserstein error analysis of the DDPM sampler: schedules, targets, the
sampler and its Follmer twin, closed-form Gaussian laws, bound evaluators,
empirical optimal transport and an experiment harness."""
from .errors import DomainError, HypothesisViolation, NumericalError, ValidationError, W2LabError
from .schedules import (
    ConditionReport,
    VarianceSchedule,
    audit_schedule,
    build_schedule,
    constant_schedule,
    cosine_schedule,
    geometric_schedule,
    harmonic_schedule,
    schedule_from_betas,
    schedule_from_times,
)
from .targets import (
    GaussianMixtureTarget,
    SphericalGaussianTarget,
    gaussian_regularity,
    score_exact,
    score_fd_oracle,
    smoothed_law,
)
from .sampler import SamplerConfig, ScoreModel, ddpm_run, follmer_run, make_perturbed_score, run_trajectory
from .gaussian_exact import (
    exact_sampler_w2,
    kl_pipeline_gaussian,
    lower_bound_eq13,
    moment_recursion,
    sampler_law,
    smoothing_w2_gaussian,
)
from .bounds import BoundInputs, BoundValue, evaluate_all, gaussian_bound_inputs
from .ot import w2_exact_assignment, w2_permutation_oracle, w2_sliced

__version__ = "0.1.0"
