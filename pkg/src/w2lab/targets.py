"""Target distributions with closed-form smoothed scores.

Smoothing S_t maps the law of xi to the law of sqrt(t) xi + sqrt(1-t) Z.
Both target families stay in their family under S_t, which is what makes
the scores exact.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Union

import numpy as np
from scipy.special import logsumexp

from .errors import DomainError, NumericalError, ValidationError

__all__ = [
    "SphericalGaussianTarget",
    "GaussianMixtureTarget",
    "Target",
    "ConstantProfile",
    "SqrtBlowupProfile",
    "TabulatedProfile",
    "RegularityProfile",
    "smoothed_law",
    "log_density",
    "score_exact",
    "score_fd_oracle",
    "gaussian_regularity",
    "cor1_lambda",
    "cor2_lambda",
    "sample_target",
    "target_from_dict",
    "profile_from_dict",
]


def _vec(x) -> np.ndarray:
    a = np.atleast_1d(np.asarray(x, dtype=float)).copy()
    if a.ndim != 1:
        raise ValidationError("mean must be a 1-d vector")
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SphericalGaussianTarget:
    """N(mean, variance * I_d)."""

    mean: np.ndarray
    variance: float

    def __post_init__(self):
        object.__setattr__(self, "mean", _vec(self.mean))
        v = float(self.variance)
        if not (math.isfinite(v) and v > 0):
            raise ValidationError(f"variance must be positive, got {self.variance!r}")
        object.__setattr__(self, "variance", v)

    @property
    def dim(self) -> int:
        return self.mean.size

    @property
    def trace_sigma(self) -> float:
        return self.dim * self.variance

    @property
    def sigma_op(self) -> float:
        return self.variance

    @property
    def Lambda(self) -> float:
        return max(1.0, self.variance)

    def to_dict(self) -> dict[str, Any]:
        return {"kind": "gaussian", "mean": self.mean.tolist(), "variance": self.variance}


@dataclass(frozen=True, eq=False)
class GaussianMixtureTarget:
    """sum_k w_k N(m_k, v_k I_d) with spherical components."""

    weights: np.ndarray
    component_means: np.ndarray
    component_variances: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        m = np.atleast_2d(np.asarray(self.component_means, dtype=float))
        v = np.asarray(self.component_variances, dtype=float).reshape(-1)
        if w.ndim != 1 or w.size == 0:
            raise ValidationError("weights must be a non-empty vector")
        if m.shape[0] != w.size or v.size != w.size:
            raise ValidationError("weights, means and variances must have matching lengths")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValidationError(f"weights must be a probability vector (sum={w.sum()!r})")
        if not np.all(np.isfinite(v) & (v > 0)):
            raise ValidationError("component variances must be positive")
        if not np.all(np.isfinite(m)):
            raise ValidationError("component means must be finite")
        for name, arr in (("weights", w), ("component_means", m), ("component_variances", v)):
            arr = arr.copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def dim(self) -> int:
        return self.component_means.shape[1]

    @property
    def mean(self) -> np.ndarray:
        return self.weights @ self.component_means

    @property
    def covariance(self) -> np.ndarray:
        w, m, v = self.weights, self.component_means, self.component_variances
        second = np.einsum("k,ki,kj->ij", w, m, m) + np.sum(w * v) * np.eye(self.dim)
        mu = self.mean
        return second - np.outer(mu, mu)

    @property
    def trace_sigma(self) -> float:
        return float(np.trace(self.covariance))

    @property
    def sigma_op(self) -> float:
        return float(np.linalg.eigvalsh(self.covariance)[-1])

    @property
    def Lambda(self) -> float:
        return max(1.0, self.sigma_op)

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": "mixture",
            "weights": self.weights.tolist(),
            "component_means": self.component_means.tolist(),
            "component_variances": self.component_variances.tolist(),
        }


Target = Union[SphericalGaussianTarget, GaussianMixtureTarget]


def target_from_dict(data: dict[str, Any]) -> Target:
    kind = data.get("kind", "gaussian")
    try:
        if kind in ("gaussian", "gauss"):
            mean = data.get("mean")
            if mean is None:
                mean = np.zeros(int(data["d"]))
            return SphericalGaussianTarget(mean, data["variance"])
        if kind == "mixture":
            return GaussianMixtureTarget(
                data["weights"], data["component_means"], data["component_variances"]
            )
    except KeyError as exc:
        raise ValidationError(f"missing target field {exc}") from exc
    raise ValidationError(f"unknown target kind {kind!r}")


def _check_t(t: float, closed_left: bool) -> float:
    t = float(t)
    ok = (0.0 <= t < 1.0) if closed_left else (0.0 < t < 1.0)
    if not ok:
        interval = "[0,1)" if closed_left else "(0,1)"
        raise DomainError(f"t must lie in {interval}, got {t!r}")
    return t


def smoothed_law(target: Target, t: float) -> Target:
    """Parameters of S_t P* (same family as the target)."""
    t = _check_t(t, closed_left=True)
    rt = math.sqrt(t)
    if isinstance(target, SphericalGaussianTarget):
        return SphericalGaussianTarget(rt * target.mean, t * target.variance + 1.0 - t)
    return GaussianMixtureTarget(
        target.weights,
        rt * target.component_means,
        t * target.component_variances + 1.0 - t,
    )


def _as_points(y, d: int) -> tuple[np.ndarray, bool]:
    y = np.asarray(y, dtype=float)
    single = y.ndim == 1
    y2 = np.atleast_2d(y)
    if y2.shape[-1] != d:
        raise ValidationError(f"points must have trailing dimension {d}, got shape {y.shape}")
    return y2, single


def _component_logpdf(law: GaussianMixtureTarget, y: np.ndarray) -> np.ndarray:
    """(n, K) matrix of log w_k + log N(y; m_k, v_k I)."""
    d = law.dim
    v = law.component_variances
    sq = np.sum((y[:, None, :] - law.component_means[None, :, :]) ** 2, axis=-1)
    with np.errstate(divide="ignore"):
        logw = np.log(law.weights)
    return logw - 0.5 * d * np.log(2 * math.pi * v) - sq / (2 * v)


def log_density(target: Target, t: float, y) -> np.ndarray | float:
    """log pi_t(y), the log-density of S_t P*."""
    law = smoothed_law(target, t)
    pts, single = _as_points(y, target.dim)
    if isinstance(law, SphericalGaussianTarget):
        d, v = law.dim, law.variance
        out = -0.5 * d * math.log(2 * math.pi * v) - np.sum((pts - law.mean) ** 2, -1) / (2 * v)
    else:
        out = logsumexp(_component_logpdf(law, pts), axis=1)
    return float(out[0]) if single else out


def score_exact(target: Target, t: float, y) -> np.ndarray:
    """grad log pi_t(y); accepts a single point (d,) or a batch (n, d)."""
    t = _check_t(t, closed_left=False)
    law = smoothed_law(target, t)
    pts, single = _as_points(y, target.dim)
    if isinstance(law, SphericalGaussianTarget):
        out = -(pts - law.mean) / law.variance
    else:
        logp = _component_logpdf(law, pts)
        resp = np.exp(logp - logsumexp(logp, axis=1, keepdims=True))
        # sum_k r_k (m_k - y) / v_k
        out = (resp / law.component_variances) @ law.component_means - pts * (
            resp @ (1.0 / law.component_variances)
        )[:, None]
    return out[0] if single else out


def _density(law: Target, pts: np.ndarray) -> np.ndarray:
    # direct (non-log-domain) density; deliberately independent of score_exact
    if isinstance(law, SphericalGaussianTarget):
        means = law.mean[None, :]
        variances = np.array([law.variance])
        weights = np.array([1.0])
    else:
        means, variances, weights = law.component_means, law.component_variances, law.weights
    d = pts.shape[-1]
    total = np.zeros(pts.shape[0])
    for w, m, v in zip(weights, means, variances):
        sq = np.sum((pts - m) ** 2, axis=-1)
        total += w * np.exp(-sq / (2 * v)) / (2 * math.pi * v) ** (d / 2)
    return total


def score_fd_oracle(target: Target, t: float, y, h: float = 1e-5) -> np.ndarray:
    """Central finite difference of log pi_t, with pi_t summed directly."""
    t = _check_t(t, closed_left=False)
    d = target.dim
    if d > 3:
        raise ValidationError("finite-difference oracle supports d <= 3 only")
    if not (1e-7 <= h <= 1e-3):
        raise ValidationError(f"step h must lie in [1e-7, 1e-3], got {h!r}")
    y = np.asarray(y, dtype=float).reshape(d)
    law = smoothed_law(target, t)
    shifts = np.eye(d) * h
    pts = np.concatenate([y + shifts, y - shifts])
    dens = _density(law, pts)
    if not np.all(np.isfinite(dens) & (dens > 0)):
        raise NumericalError(
            f"density underflow/overflow near y={y.tolist()}; use a point with smaller |y|"
        )
    logd = np.log(dens)
    return (logd[:d] - logd[d:]) / (2 * h)


# --------------------------------------------------------------------------
# scalar profiles for L(t) and eps_score(t)


class _Profile:
    def __call__(self, t):
        raise NotImplementedError

    def is_non_decreasing(self, grid) -> bool:
        vals = np.asarray(self(np.asarray(grid, dtype=float)), dtype=float)
        return bool(np.all(np.diff(vals) >= 0))

    def scaled(self, factor: float) -> "_Profile":
        raise NotImplementedError


@dataclass(frozen=True)
class ConstantProfile(_Profile):
    value: float

    def __call__(self, t):
        return np.full(np.shape(t), float(self.value)) if np.ndim(t) else float(self.value)

    def scaled(self, factor):
        return ConstantProfile(self.value * factor)

    def to_dict(self):
        return {"kind": "constant", "value": self.value}


@dataclass(frozen=True)
class SqrtBlowupProfile(_Profile):
    """eps (1 - t)^(-1/2): the typical growth of score error near the data end."""

    eps: float

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        with np.errstate(divide="ignore"):
            out = self.eps / np.sqrt(1.0 - t)
        return out if out.ndim else float(out)

    def scaled(self, factor):
        return SqrtBlowupProfile(self.eps * factor)

    def to_dict(self):
        return {"kind": "sqrt_blowup", "eps": self.eps}


@dataclass(frozen=True)
class TabulatedProfile(_Profile):
    """Piecewise-linear interpolation of non-decreasing values; flat outside the knots."""

    knots: tuple[float, ...]
    values: tuple[float, ...]

    def __post_init__(self):
        k = np.asarray(self.knots, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if k.shape != v.shape or k.size < 1:
            raise ValidationError("knots and values must be equal-length, non-empty")
        if np.any(np.diff(k) <= 0):
            raise ValidationError("knots must be strictly increasing")
        if np.any(np.diff(v) < 0) or np.any(v < 0):
            raise ValidationError("tabulated profile must be non-negative and non-decreasing")
        object.__setattr__(self, "knots", tuple(k.tolist()))
        object.__setattr__(self, "values", tuple(v.tolist()))

    def __call__(self, t):
        out = np.interp(t, self.knots, self.values)
        return out if np.ndim(out) else float(out)

    def scaled(self, factor):
        return TabulatedProfile(self.knots, tuple(factor * v for v in self.values))

    def to_dict(self):
        return {"kind": "tabulated", "knots": list(self.knots), "values": list(self.values)}


def profile_from_dict(data) -> _Profile:
    if isinstance(data, (int, float)):
        return ConstantProfile(float(data))
    kind = data.get("kind", "constant")
    if kind == "constant":
        return ConstantProfile(float(data.get("value", 0.0)))
    if kind == "sqrt_blowup":
        return SqrtBlowupProfile(float(data["eps"]))
    if kind == "tabulated":
        return TabulatedProfile(tuple(data["knots"]), tuple(data["values"]))
    raise ValidationError(f"unknown profile kind {kind!r}")


@dataclass(frozen=True)
class RegularityProfile:
    """Regularity constants consumed by the bound evaluators.

    L bounds |grad^2 log f_t| <= t L(t) (f_t: density of S_t P* w.r.t. N(0, I)).
    lam is the combined constant for weakly log-concave + semi-log-convex targets,
    lam_wlc the one for weakly log-concave targets alone.
    """

    L: Callable = field(default_factory=lambda: ConstantProfile(0.0))
    epsilon_score: Callable = field(default_factory=lambda: ConstantProfile(0.0))
    lam: float = 0.0
    lam_wlc: float = 0.0
    alpha: float = 1.0
    M: float = 0.0
    beta_slc: float = 1.0
    L0: float = 1.0

    def check_monotone(self, grid) -> None:
        for name in ("L", "epsilon_score"):
            prof = getattr(self, name)
            vals = np.asarray(prof(np.asarray(grid, dtype=float)), dtype=float)
            if np.any(np.diff(vals) < 0):
                raise ValidationError(f"{name} profile is not non-decreasing on the grid")


def cor1_lambda(beta_slc: float, alpha: float, M: float) -> float:
    return max(beta_slc - 1.0, cor2_lambda(alpha, M))


def cor2_lambda(alpha: float, M: float) -> float:
    if alpha <= 0 or M < 0:
        raise ValidationError("weak concavity needs alpha > 0 and M >= 0")
    return max(1.0 - alpha, 0.0) / alpha + 2.0 * M / min(alpha * alpha, 1.0)


def gaussian_regularity(
    target: SphericalGaussianTarget,
    epsilon_score: Callable | None = None,
    floor: float = 0.0,
) -> RegularityProfile:
    """Regularity constants of N(mu, s2 I).

    grad^2 log f_t = t (s2 - 1) / ((s2 - 1) t + 1) I, so the tightest constant
    two-sided envelope is L = max(s2 - 1, 1/s2 - 1); the exact t-dependent L is
    decreasing for s2 > 1 and would break the monotonicity requirement.
    """
    if not isinstance(target, SphericalGaussianTarget):
        raise ValidationError("gaussian_regularity needs a spherical Gaussian target")
    s2 = target.variance
    alpha, beta_slc, M = 1.0 / s2, 1.0 / s2, 0.0
    envelope = max(s2 - 1.0, 1.0 / s2 - 1.0, floor)
    return RegularityProfile(
        L=ConstantProfile(envelope),
        epsilon_score=epsilon_score if epsilon_score is not None else ConstantProfile(0.0),
        lam=cor1_lambda(beta_slc, alpha, M),
        lam_wlc=cor2_lambda(alpha, M),
        alpha=alpha,
        M=M,
        beta_slc=beta_slc,
        L0=1.0,
    )


def sample_target(target: Target, n: int, seed: int) -> np.ndarray:
    if int(n) < 1:
        raise ValidationError("n must be >= 1")
    rng = np.random.default_rng(seed)
    d = target.dim
    if isinstance(target, SphericalGaussianTarget):
        return target.mean + math.sqrt(target.variance) * rng.standard_normal((n, d))
    comp = rng.choice(target.weights.size, size=n, p=target.weights)
    z = rng.standard_normal((n, d))
    return target.component_means[comp] + np.sqrt(target.component_variances[comp])[:, None] * z


def dumps_target(target: Target) -> str:
    return json.dumps(target.to_dict(), indent=2)
