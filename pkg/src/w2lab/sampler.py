"""DDPM recursion, its Follmer-discretization twin, and perturbed scores.

Randomness: every step k (k = 0 for initialization, k = i + 1 for the
transition out of t_i) owns an independent Philox stream derived from
(seed, tag, k).  Chain c always receives row c of that step's draw, so
a chain's noise does not depend on how many chains run alongside it and
both recursions see identical draws.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Literal

import numpy as np

from .errors import NumericalError, ValidationError
from .schedules import VarianceSchedule
from .targets import ConstantProfile, Target, score_exact

__all__ = [
    "ScoreModel",
    "SamplerConfig",
    "make_perturbed_score",
    "ddpm_run",
    "follmer_run",
    "run_trajectory",
    "step_noise",
]

_NOISE_TAG = 0
_DIRECTION_TAG = 1


def _stream(seed: int, tag: int, step: int) -> np.random.Generator:
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, tag, step])
    return np.random.Generator(np.random.Philox(ss))


def step_noise(seed: int, step: int, n_rows: int, d: int) -> np.ndarray:
    """Standard normal draws for one step; row c belongs to chain c."""
    return _stream(seed, _NOISE_TAG, step).standard_normal((n_rows, d))


@dataclass(frozen=True, eq=False)
class ScoreModel:
    """Exact score of a target, optionally shifted by an error of prescribed size.

    In ``constant`` mode s(t, y) = grad log pi_t(y) + eps(t) u for a fixed unit u,
    so the L2 score error equals eps(t) under any law of y.  ``random`` mode
    uses a fresh uniform direction per chain and step.
    """

    target: Target
    kind: Literal["exact", "perturbed"] = "exact"
    profile: Callable | None = None
    mode: Literal["constant", "random"] = "constant"
    direction: np.ndarray | None = None

    def error_size(self, t: float) -> float:
        return 0.0 if self.kind == "exact" else float(self.profile(t))

    def __call__(self, t: float, y: np.ndarray, rng: np.random.Generator | None = None):
        s = score_exact(self.target, t, y)
        if self.kind == "exact":
            return s
        eps = float(self.profile(t))
        if self.mode == "constant":
            return s + eps * self.direction
        if rng is None:
            raise ValidationError("random-direction perturbation needs a generator")
        v = rng.standard_normal(np.shape(s))
        v /= np.linalg.norm(v, axis=-1, keepdims=True)
        return s + eps * v


def make_perturbed_score(
    target: Target, profile: Callable | float | None, mode: str = "constant", direction=None
) -> ScoreModel:
    if profile is None or isinstance(profile, (int, float)):
        profile = ConstantProfile(float(profile or 0.0))
    if isinstance(profile, ConstantProfile) and profile.value == 0.0:
        return ScoreModel(target)
    if mode not in ("constant", "random"):
        raise ValidationError(f"unknown perturbation mode {mode!r}")
    u = None
    if mode == "constant":
        u = np.zeros(target.dim)
        u[0] = 1.0
        if direction is not None:
            u = np.asarray(direction, dtype=float).reshape(target.dim)
            norm = np.linalg.norm(u)
            if not norm > 0:
                raise ValidationError("perturbation direction must be non-zero")
            u = u / norm
        u.setflags(write=False)
    return ScoreModel(target, "perturbed", profile, mode, u)


@dataclass(frozen=True, eq=False)
class SamplerConfig:
    mu_hat: np.ndarray
    n_chains: int
    seed: int
    score_model: ScoreModel | None = None

    def __post_init__(self):
        mu_hat = np.atleast_1d(np.asarray(self.mu_hat, dtype=float))
        object.__setattr__(self, "mu_hat", mu_hat)
        if int(self.n_chains) < 1:
            raise ValidationError("n_chains must be >= 1")


def _prepare(schedule: VarianceSchedule, target: Target, config: SamplerConfig) -> ScoreModel:
    model = config.score_model or ScoreModel(target)
    if model.target is not target:
        raise ValidationError("score model was built for a different target")
    if config.mu_hat.shape != (target.dim,):
        raise ValidationError(f"mu_hat must have shape ({target.dim},)")
    if model.kind == "perturbed":
        grid = schedule.times[:-1]
        vals = np.asarray(model.profile(grid), dtype=float)
        if np.any(np.diff(vals) < 0):
            raise ValidationError("score-error profile is not non-decreasing on the schedule grid")
    return model


def _score_step(model, t, y, seed, step):
    rng = _stream(seed, _DIRECTION_TAG, step) if model.mode == "random" else None
    s = model(t, y, rng)
    bad = ~np.all(np.isfinite(s), axis=-1)
    if np.any(bad):
        chains = np.flatnonzero(bad)[:5].tolist()
        raise NumericalError(f"non-finite score at step {step - 1} (t={t!r}) for chains {chains}")
    return s


def _ddpm(schedule, target, config, n_rows, record_row=None):
    model = _prepare(schedule, target, config)
    d = target.dim
    t, b = schedule.times, schedule.betas
    y = math.sqrt(t[0]) * config.mu_hat + step_noise(config.seed, 0, n_rows, d)
    path = [y[record_row].copy()] if record_row is not None else None
    for i in range(schedule.n_steps):
        s = _score_step(model, t[i], y, config.seed, i + 1)
        z = step_noise(config.seed, i + 1, n_rows, d)
        y = (y + b[i] * s) / math.sqrt(1.0 - b[i]) + math.sqrt(b[i]) * z
        if path is not None:
            path.append(y[record_row].copy())
    return y, path


def ddpm_run(schedule: VarianceSchedule, target: Target, config: SamplerConfig) -> np.ndarray:
    """Terminal states Y_N of ``config.n_chains`` independent chains, shape (n, d)."""
    y, _ = _ddpm(schedule, target, config, int(config.n_chains))
    return y


def follmer_run(schedule: VarianceSchedule, target: Target, config: SamplerConfig) -> np.ndarray:
    """Euler scheme for the Follmer SDE, rescaled: returns X_hat_{t_N} / sqrt(t_N)."""
    model = _prepare(schedule, target, config)
    n, d = int(config.n_chains), target.dim
    t, h = schedule.times, schedule.steps
    x = t[0] * config.mu_hat + math.sqrt(t[0]) * step_noise(config.seed, 0, n, d)
    for i in range(schedule.n_steps):
        rt = math.sqrt(t[i])
        s = _score_step(model, t[i], x / rt, config.seed, i + 1)
        z = step_noise(config.seed, i + 1, n, d)
        x = (1.0 + h[i] / t[i]) * x + (h[i] / rt) * s + math.sqrt(h[i]) * z
    return x / math.sqrt(t[-1])


def run_trajectory(
    schedule: VarianceSchedule, target: Target, config: SamplerConfig, chain_index: int
) -> np.ndarray:
    """All states Y_0..Y_N of one chain, shape (N+1, d), on the ddpm_run stream."""
    if not (0 <= int(chain_index) < int(config.n_chains)):
        raise IndexError(f"chain_index {chain_index} out of range for {config.n_chains} chains")
    _, path = _ddpm(schedule, target, config, int(chain_index) + 1, record_row=int(chain_index))
    return np.vstack(path)
