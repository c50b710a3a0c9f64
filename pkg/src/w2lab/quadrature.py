"""Composite Simpson quadrature on a (refined) schedule grid."""
from __future__ import annotations

import math
import warnings
from typing import Callable

import numpy as np
from scipy import integrate

from .errors import NumericalError, ValidationError

__all__ = ["quad", "upper_sum", "QuadratureWarning", "REL_TOL"]

REL_TOL = 1e-9
_MAX_DOUBLINGS = 12


class QuadratureWarning(UserWarning):
    """Successive refinements did not agree to the requested tolerance."""


def _nodes(a: float, b: float, grid, panels: int) -> np.ndarray:
    if grid is None:
        base = np.array([a, b])
    else:
        g = np.asarray(grid, dtype=float)
        g = g[(g > a) & (g < b)]
        base = np.concatenate([[a], g, [b]])
    # subdivide every base interval into `panels` equal pieces
    frac = np.arange(panels) / panels
    pts = (base[:-1, None] + np.diff(base)[:, None] * frac[None, :]).ravel()
    return np.append(pts, b)


def _simpson(f, x: np.ndarray) -> float:
    mid = 0.5 * (x[:-1] + x[1:])
    fx = np.asarray(f(x), dtype=float) * np.ones_like(x)
    fm = np.asarray(f(mid), dtype=float) * np.ones_like(mid)
    for pts, vals in ((x, fx), (mid, fm)):
        bad = np.flatnonzero(~np.isfinite(vals))
        if bad.size:
            raise NumericalError(f"integrand is not finite at s={pts[bad[0]]!r}")
    w = np.diff(x)
    return float(np.sum(w * (fx[:-1] + 4 * fm + fx[1:])) / 6.0)


def quad(
    f: Callable, a: float, b: float, refinement: int = 2, grid=None, rel_tol: float = REL_TOL
) -> float:
    """Integral of a vectorized ``f`` over [a, b].

    Simpson panels sit on ``grid`` (restricted to [a, b]) refined ``refinement``
    times; the panel count doubles until two successive estimates agree to
    ``rel_tol``.  Integrands that are only infinite at an endpoint (integrable
    singularities such as (1 - s)^(-1/2) at s = 1) are handed to QUADPACK.
    """
    a, b = float(a), float(b)
    if not a < b:
        if a == b:
            return 0.0
        raise ValidationError(f"need a < b, got [{a!r}, {b!r}]")
    if refinement < 1:
        raise ValidationError("refinement must be >= 1")
    with np.errstate(divide="ignore", invalid="ignore"):
        ends = np.asarray(f(np.array([a, b])), dtype=float) * np.ones(2)
    if not np.all(np.isfinite(ends)):
        return _singular(f, a, b, rel_tol)

    panels = int(refinement)
    prev = _simpson(f, _nodes(a, b, grid, panels))
    for _ in range(_MAX_DOUBLINGS):
        panels *= 2
        cur = _simpson(f, _nodes(a, b, grid, panels))
        if abs(cur - prev) <= rel_tol * max(abs(cur), 1e-300):
            return cur
        prev = cur
    warnings.warn(
        f"Simpson refinement did not converge to rel. tol {rel_tol:g} on [{a}, {b}]",
        QuadratureWarning,
        stacklevel=2,
    )
    return cur


def _singular(f, a, b, rel_tol) -> float:
    def scalar(s):
        return float(np.asarray(f(np.array([s])), dtype=float).ravel()[0])

    mid = 0.5 * (a + b)
    if not math.isfinite(scalar(mid)):
        raise NumericalError(f"integrand is not finite at s={mid!r}")
    val, err = integrate.quad(scalar, a, b, epsabs=0.0, epsrel=rel_tol, limit=500)
    if not math.isfinite(val):
        raise NumericalError(f"integral over [{a}, {b}] diverges")
    if err > max(rel_tol * abs(val), 1e-14):
        warnings.warn(
            f"endpoint-singular integral on [{a}, {b}] has error estimate {err:.2e}",
            QuadratureWarning,
            stacklevel=3,
        )
    return float(val)


def upper_sum(f: Callable, a: float, b: float, grid=None, refinement: int = 4) -> float:
    """Right-endpoint Riemann sum: an upper bound on the integral of a non-decreasing f."""
    a, b = float(a), float(b)
    if a == b:
        return 0.0
    if not a < b:
        raise ValidationError(f"need a < b, got [{a!r}, {b!r}]")
    x = _nodes(a, b, grid, int(refinement))
    vals = np.asarray(f(x[1:]), dtype=float) * np.ones(x.size - 1)
    if not np.all(np.isfinite(vals)):
        raise NumericalError("integrand is not finite on the upper-sum grid")
    return float(np.sum(np.diff(x) * vals))
