"""Exact law of the sampler for spherical Gaussian targets.

For P* = N(mu, s2 I) and exact scores, sqrt(t_i) Y_i ~ N(mu_i, var_i I) with

    mu_{i+1}  = (g_{i+1}/g_i) mu_i + (h_i/g_i) mu
    var_{i+1} = (g_{i+1}/g_i)^2 var_i + h_i,        g(t) = (s2 - 1) t + 1,

started from mu_0 = t_0 mu_hat, var_0 = t_0.  A constant-vector score error
eps(t_i) u adds the deterministic drift (h_i / sqrt(t_i)) eps(t_i) u to the
mean and leaves the variance untouched.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ValidationError
from .sampler import ScoreModel
from .schedules import VarianceSchedule
from .targets import SphericalGaussianTarget, smoothed_law

__all__ = [
    "GaussianPipelineState",
    "moment_recursion",
    "sampler_law",
    "w2_spherical_gaussians",
    "kl_spherical_gaussians",
    "exact_sampler_w2",
    "lower_bound_eq13",
    "smoothing_w2_gaussian",
    "kl_pipeline_gaussian",
]


@dataclass(frozen=True, eq=False)
class GaussianPipelineState:
    """Means/variances of sqrt(t_i) Y_i for i = 0..N."""

    mu_seq: np.ndarray
    var_seq: np.ndarray
    g_values: np.ndarray
    target_mean: np.ndarray

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\r\n")
        w.writerow(["step", "mean_gap", "variance"])
        gaps = np.linalg.norm(self.mu_seq - self.target_mean, axis=1)
        for i, (gap, var) in enumerate(zip(gaps, self.var_seq)):
            w.writerow([i, repr(float(gap)), repr(float(var))])
        return buf.getvalue()


def _require_gaussian(target) -> SphericalGaussianTarget:
    if not isinstance(target, SphericalGaussianTarget):
        raise ValidationError("closed-form pipeline needs a spherical Gaussian target")
    return target


def _drift(perturbation: ScoreModel | None, schedule: VarianceSchedule, d: int) -> np.ndarray:
    """Per-step deterministic mean drift from a constant-vector score error."""
    n = schedule.n_steps
    if perturbation is None or perturbation.kind == "exact":
        return np.zeros((n, d))
    if perturbation.mode != "constant":
        raise ValidationError("closed form only exists for constant-vector perturbations")
    t, h = schedule.times[:-1], schedule.steps
    eps = np.asarray(perturbation.profile(t), dtype=float) * np.ones(n)
    return ((h / np.sqrt(t)) * eps)[:, None] * perturbation.direction[None, :]


def moment_recursion(
    schedule: VarianceSchedule,
    target: SphericalGaussianTarget,
    mu_hat,
    perturbation: ScoreModel | None = None,
) -> GaussianPipelineState:
    target = _require_gaussian(target)
    d = target.dim
    mu_hat = np.asarray(mu_hat, dtype=float).reshape(d)
    mu = target.mean
    t, h = schedule.times, schedule.steps
    g = (target.variance - 1.0) * t + 1.0
    drift = _drift(perturbation, schedule, d)

    # divided by g_i the recursions telescope:
    #   mu_{i+1}/g_{i+1}    = mu_i/g_i + h_i mu / (g_i g_{i+1}) + drift_i / g_{i+1}
    #   var_{i+1}/g_{i+1}^2 = var_i/g_i^2 + h_i / g_{i+1}^2
    mean_incr = (h / (g[:-1] * g[1:]))[:, None] * mu[None, :] + drift / g[1:, None]
    scaled_means = np.vstack([t[0] * mu_hat / g[0], mean_incr]).cumsum(axis=0)
    scaled_vars = np.concatenate([[t[0] / g[0] ** 2], h / g[1:] ** 2]).cumsum()
    return GaussianPipelineState(scaled_means * g[:, None], scaled_vars * g**2, g, mu)


def sampler_law(schedule, target, mu_hat, perturbation=None) -> tuple[np.ndarray, float]:
    """(mean, variance) of Y_N; the law is N(mean, variance I)."""
    target = _require_gaussian(target)
    d = target.dim
    mu_hat = np.asarray(mu_hat, dtype=float).reshape(d)
    t, h = schedule.times, schedule.steps
    g = (target.variance - 1.0) * t + 1.0
    # final values of the telescoped recursions in moment_recursion, without the path
    scaled_mean = t[0] * mu_hat / g[0] + float(np.sum(h / (g[:-1] * g[1:]))) * target.mean
    if perturbation is not None and perturbation.kind != "exact":
        scaled_mean = scaled_mean + (_drift(perturbation, schedule, d) / g[1:, None]).sum(axis=0)
    scaled_var = t[0] / g[0] ** 2 + float(np.sum(h / g[1:] ** 2))
    tn = schedule.t_final
    return scaled_mean * g[-1] / math.sqrt(tn), float(scaled_var * g[-1] ** 2 / tn)


def w2_spherical_gaussians(mu1, var1, mu2, var2, d: int | None = None) -> float:
    """W2(N(mu1, var1 I), N(mu2, var2 I)) = sqrt(|mu1 - mu2|^2 + d (sqrt var1 - sqrt var2)^2)."""
    if var1 < 0 or var2 < 0:
        raise DomainError("variances must be non-negative")
    diff = np.atleast_1d(np.asarray(mu1, dtype=float) - np.asarray(mu2, dtype=float))
    if d is None:
        d = diff.size
    sd = math.sqrt(var1) - math.sqrt(var2)
    return math.sqrt(float(diff @ diff) + d * sd * sd)


def kl_spherical_gaussians(mu1, var1, mu2, var2, d: int | None = None) -> float:
    """KL(N(mu1, var1 I) | N(mu2, var2 I))."""
    if not (var1 > 0 and var2 > 0):
        raise DomainError("KL needs strictly positive variances")
    diff = np.atleast_1d(np.asarray(mu1, dtype=float) - np.asarray(mu2, dtype=float))
    if d is None:
        d = diff.size
    r = var1 / var2
    # r - 1 - log r computed stably for r near 1
    shape = (r - 1.0) - math.log1p(r - 1.0)
    return 0.5 * (d * shape + float(diff @ diff) / var2)


def exact_sampler_w2(
    schedule: VarianceSchedule,
    target: SphericalGaussianTarget,
    mu_hat,
    perturbation: ScoreModel | None = None,
    reference: str = "target",
) -> float:
    """Exact W2 between law(Y_N) and P* (or S_{t_N} P* with reference="smoothed")."""
    target = _require_gaussian(target)
    mean, var = sampler_law(schedule, target, mu_hat, perturbation)
    if reference == "target":
        ref = target
    elif reference == "smoothed":
        ref = smoothed_law(target, schedule.t_final) if schedule.delta > 0 else target
    else:
        raise ValidationError(f"reference must be 'target' or 'smoothed', got {reference!r}")
    return w2_spherical_gaussians(mean, var, ref.mean, ref.variance, target.dim)


def lower_bound_eq13(t0: float, eta: float, target: SphericalGaussianTarget, mu_hat) -> float:
    """Lower bound on W2(Y_N, P*) valid when delta = 0, exact scores, min beta_i >= eta."""
    target = _require_gaussian(target)
    if not (0 < eta < 1):
        raise DomainError(f"eta must lie in (0,1), got {eta!r}")
    d = target.dim
    s2 = target.variance
    sig = math.sqrt(s2)
    gap = float(np.linalg.norm(np.asarray(mu_hat, dtype=float) - target.mean))
    big = max(s2, 1.0)
    init = t0 * gap
    disc = (s2 * abs(s2 - 1.0) / (2 * max(sig**3, 1.0))) * (
        math.sqrt(d) * t0**2 + (1 - t0**2) / (2 * big) * math.sqrt(d) * eta
    )
    return (s2 / big) * min(init, disc)


def smoothing_w2_gaussian(target: SphericalGaussianTarget, t: float) -> float:
    """W2(S_t P*, P*) for a spherical Gaussian, t in (0, 1]."""
    target = _require_gaussian(target)
    if not (0 < t <= 1):
        raise DomainError(f"t must lie in (0,1], got {t!r}")
    if t == 1:
        return 0.0
    law = smoothed_law(target, t)
    return w2_spherical_gaussians(law.mean, law.variance, target.mean, target.variance, target.dim)


def kl_pipeline_gaussian(
    schedule: VarianceSchedule,
    target: SphericalGaussianTarget,
    mu_hat,
    perturbation: ScoreModel | None = None,
) -> float:
    """KL(S_{t_N} P* | law(Y_N)), exact."""
    target = _require_gaussian(target)
    tn = schedule.t_final
    ref = smoothed_law(target, tn) if tn < 1 else target
    mean, var = sampler_law(schedule, target, mu_hat, perturbation)
    return kl_spherical_gaussians(ref.mean, ref.variance, mean, var, target.dim)
