"""Empirical 2-Wasserstein distances between equal-size point clouds."""
from __future__ import annotations

import itertools
import math

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from .errors import ValidationError

__all__ = ["w2_exact_assignment", "w2_sliced", "w2_permutation_oracle", "MAX_ASSIGNMENT_N"]

MAX_ASSIGNMENT_N = 4096
MAX_ORACLE_N = 8


def _cloud(x) -> np.ndarray:
    a = np.asarray(x, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2 or a.shape[0] < 1:
        raise ValidationError("a sample cloud must be an (n, d) array with n >= 1")
    if not np.all(np.isfinite(a)):
        raise ValidationError("sample cloud contains non-finite entries")
    return a


def _pair(X, Y) -> tuple[np.ndarray, np.ndarray]:
    X, Y = _cloud(X), _cloud(Y)
    if X.shape != Y.shape:
        raise ValidationError(f"cloud shapes differ: {X.shape} vs {Y.shape}")
    return X, Y


def w2_exact_assignment(X, Y) -> float:
    """sqrt(min over matchings of mean squared distance), via an exact assignment solver."""
    X, Y = _pair(X, Y)
    n = X.shape[0]
    if n > MAX_ASSIGNMENT_N:
        raise ValidationError(f"exact assignment limited to n <= {MAX_ASSIGNMENT_N}, got {n}")
    cost = cdist(X, Y, metric="sqeuclidean")
    rows, cols = linear_sum_assignment(cost)
    return math.sqrt(max(cost[rows, cols].sum() / n, 0.0))


def w2_permutation_oracle(X, Y) -> float:
    """Exhaustive minimum over all n! matchings (test oracle, n <= 8)."""
    X, Y = _pair(X, Y)
    n = X.shape[0]
    if n > MAX_ORACLE_N:
        raise ValidationError(f"permutation oracle refuses n > {MAX_ORACLE_N} (got {n})")
    best = math.inf
    for perm in itertools.permutations(range(n)):
        total = 0.0
        for i, j in enumerate(perm):
            diff = X[i] - Y[j]
            total += float(diff @ diff)
        best = min(best, total)
    return math.sqrt(best / n)


def w2_sliced(X, Y, n_projections: int = 128, seed: int = 0) -> float:
    """Monte Carlo sliced W2: average 1-d sorted-coupling W2^2 over random directions."""
    X, Y = _pair(X, Y)
    if int(n_projections) < 1:
        raise ValidationError("n_projections must be >= 1")
    d = X.shape[1]
    rng = np.random.default_rng(seed)
    dirs = rng.standard_normal((int(n_projections), d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    px = np.sort(X @ dirs.T, axis=0)
    py = np.sort(Y @ dirs.T, axis=0)
    return math.sqrt(float(np.mean((px - py) ** 2)))
