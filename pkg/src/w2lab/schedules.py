"""Variance schedules, their time grids, and step-size condition audits.

Indexing runs forward in "signal time": t_0 < t_1 < ... < t_N = 1 - delta,
with beta_i = 1 - t_i / t_{i+1}.  Small t means heavy noise.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .errors import ValidationError

__all__ = [
    "VarianceSchedule",
    "ConditionReport",
    "schedule_from_betas",
    "schedule_from_times",
    "constant_schedule",
    "geometric_schedule",
    "cosine_schedule",
    "harmonic_schedule",
    "build_schedule",
    "audit_schedule",
    "STEPSUM_CONSTANT",
]

# additive constant in the step-sum inequality sum_{j>=i} h_j/t_j <= C + log(1/t_i)
STEPSUM_CONSTANT = 128.0
ROUNDTRIP_TOL = 1e-12


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class VarianceSchedule:
    """An immutable (betas, times, delta) triple.

    ``family`` and ``params`` record how the schedule was built so that
    family-specific audits (cosine) can be run later.
    """

    betas: np.ndarray
    times: np.ndarray
    delta: float
    family: str = "custom"
    params: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "betas", _readonly(self.betas))
        object.__setattr__(self, "times", _readonly(self.times))
        object.__setattr__(self, "delta", float(self.delta))
        self.validate()

    @property
    def n_steps(self) -> int:
        return int(self.betas.size)

    @property
    def t0(self) -> float:
        return float(self.times[0])

    @property
    def t_final(self) -> float:
        return float(self.times[-1])

    @property
    def steps(self) -> np.ndarray:
        """Effective step sizes h_i = t_{i+1} - t_i."""
        return np.diff(self.times)

    def validate(self) -> None:
        """Check every structural invariant; raise naming the first broken one."""
        b, t = self.betas, self.times
        if b.ndim != 1 or b.size < 1:
            raise ValidationError("invariant n_steps>=1: betas must be a non-empty 1-d array")
        if t.shape != (b.size + 1,):
            raise ValidationError(
                f"invariant len(times)=N+1: got {t.size} times for N={b.size}"
            )
        if not (np.all(np.isfinite(b)) and np.all((b > 0) & (b < 1))):
            raise ValidationError("invariant beta_i in (0,1) violated")
        if not (0.0 <= self.delta < 1.0):
            raise ValidationError(f"invariant delta in [0,1) violated: delta={self.delta}")
        if not (np.all(np.isfinite(t)) and t[0] > 0 and t[-1] <= 1.0):
            raise ValidationError("invariant times in (0,1] violated")
        if np.any(np.diff(t) <= 0):
            raise ValidationError("invariant times strictly increasing violated")
        if t[-1] != 1.0 - self.delta:
            raise ValidationError(
                f"invariant t_N = 1 - delta violated: t_N={t[-1]!r}, delta={self.delta!r}"
            )
        err = np.max(np.abs(b - (1.0 - t[:-1] / t[1:])))
        if err > ROUNDTRIP_TOL:
            raise ValidationError(
                f"invariant beta_i = 1 - t_i/t_(i+1) (round-trip) violated: max error {err:.3e}"
            )

    def to_dict(self) -> dict[str, Any]:
        return {
            "betas": self.betas.tolist(),
            "times": self.times.tolist(),
            "delta": self.delta,
            "family": self.family,
            "params": dict(self.params),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "VarianceSchedule":
        try:
            betas = np.asarray(data["betas"], dtype=float)
            delta = float(data["delta"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"malformed schedule record: {exc}") from exc
        if "times" in data:
            times = np.asarray(data["times"], dtype=float)
        else:
            times = schedule_from_betas(betas, delta).times
        return cls(betas, times, delta, data.get("family", "custom"), data.get("params", {}))

    @classmethod
    def from_json(cls, text: str) -> "VarianceSchedule":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"malformed schedule JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ValidationError("schedule JSON must be an object")
        return cls.from_dict(data)


def _check_betas(betas) -> np.ndarray:
    b = np.asarray(betas, dtype=float)
    if b.ndim != 1 or b.size == 0:
        raise ValidationError("betas must be a non-empty 1-d sequence")
    bad = np.flatnonzero(~np.isfinite(b) | (b <= 0) | (b >= 1))
    if bad.size:
        i = int(bad[0])
        raise ValidationError(f"beta[{i}]={b[i]!r} is not a finite value in (0,1)")
    return b


def _check_delta(delta) -> float:
    delta = float(delta)
    if not (math.isfinite(delta) and 0.0 <= delta < 1.0):
        raise ValidationError(f"delta must lie in [0,1), got {delta!r}")
    return delta


def schedule_from_betas(
    betas, delta: float = 0.0, *, family: str = "custom", params: dict | None = None
) -> VarianceSchedule:
    """Times t_i = (1-delta) prod_{j>=i} (1-beta_j), accumulated in log space."""
    b = _check_betas(betas)
    delta = _check_delta(delta)
    log_tail = np.concatenate([np.cumsum(np.log1p(-b)[::-1])[::-1], [0.0]])
    times = np.exp(math.log1p(-delta) + log_tail)
    times[-1] = 1.0 - delta
    if times[0] <= 0.0:
        raise ValidationError(
            f"t_0 underflows double precision (log t_0 = {math.log1p(-delta) + log_tail[0]:.1f})"
        )
    return VarianceSchedule(b, times, delta, family, params or {})


def schedule_from_times(
    times, *, family: str = "custom", params: dict | None = None
) -> VarianceSchedule:
    t = np.asarray(times, dtype=float)
    if t.ndim != 1 or t.size < 2:
        raise ValidationError("times must be a 1-d sequence with at least two entries")
    if not np.all(np.isfinite(t)):
        raise ValidationError("times must be finite")
    if t[0] <= 0 or t[-1] > 1:
        raise ValidationError(f"times must lie in (0,1]; got t_0={t[0]!r}, t_N={t[-1]!r}")
    if np.any(np.diff(t) <= 0):
        i = int(np.flatnonzero(np.diff(t) <= 0)[0])
        raise ValidationError(f"times not strictly increasing at index {i}")
    delta = 1.0 - t[-1]
    t = t.copy()
    t[-1] = 1.0 - delta
    betas = 1.0 - t[:-1] / t[1:]
    return VarianceSchedule(betas, t, delta, family, params or {})


def constant_schedule(n_steps: int, beta0: float, delta: float = 0.0) -> VarianceSchedule:
    n = _check_n(n_steps)
    return schedule_from_betas(
        np.full(n, float(beta0)), delta, family="constant",
        params={"n_steps": n, "beta0": float(beta0), "delta": float(delta)},
    )


def geometric_schedule(n_steps: int, c0: float, c1: float, delta: float = 0.0) -> VarianceSchedule:
    """beta_0 = N^-c0, beta_i = r min(beta_0 (1+r)^(N-i), 1) with r = c1 log N / N."""
    n = _check_n(n_steps)
    if not (c0 > 0 and c1 > 0):
        raise ValidationError(f"c0 and c1 must be positive, got c0={c0}, c1={c1}")
    beta0 = float(n) ** (-float(c0))
    rate = c1 * math.log(n) / n
    i = np.arange(1, n)
    growth = np.exp(np.minimum(math.log(beta0) + (n - i) * math.log1p(rate), 0.0))
    betas = np.concatenate([[beta0], rate * growth])
    bad = np.flatnonzero(~((betas > 0) & (betas < 1)))
    if bad.size:
        j = int(bad[0])
        raise ValidationError(
            f"geometric schedule (N={n}, c0={c0}, c1={c1}) gives beta[{j}]={betas[j]!r} outside (0,1)"
        )
    return schedule_from_betas(
        betas, delta, family="geometric",
        params={"n_steps": n, "c0": float(c0), "c1": float(c1), "delta": float(delta)},
    )


def cosine_schedule(n_steps: int, s: float = 0.008, t0: float | None = None) -> VarianceSchedule:
    """t_i = sin^2(i eta_N), eta_N = pi / (2N(1+s)); t_0 defaults to t_1/4."""
    n = _check_n(n_steps)
    if not (math.isfinite(s) and s >= 0):
        raise ValidationError(f"s must be >= 0, got {s!r}")
    eta_n = math.pi / (2 * n * (1 + s))
    grid = np.sin(np.arange(1, n + 1) * eta_n) ** 2
    t1 = float(grid[0])
    if t0 is None:
        t0 = t1 / 4
    if not (0 < t0 < t1):
        raise ValidationError(f"t0 must lie in (0, t_1) = (0, {t1!r}), got {t0!r}")
    delta = 1.0 - float(grid[-1])
    times = np.concatenate([[t0], grid])
    times[-1] = 1.0 - delta
    betas = 1.0 - times[:-1] / times[1:]
    return VarianceSchedule(
        betas, times, delta, "cosine",
        {"n_steps": n, "s": float(s), "t0": float(t0), "eta_N": eta_n},
    )


def harmonic_schedule(n_steps: int) -> VarianceSchedule:
    """t_i = (i+1)/(N+1), i.e. beta_i = 1/(i+2), no early stopping."""
    n = _check_n(n_steps)
    times = np.arange(1, n + 2) / (n + 1)
    betas = 1.0 / np.arange(2, n + 2)
    return VarianceSchedule(betas, times, 0.0, "harmonic", {"n_steps": n})


def _check_n(n) -> int:
    if isinstance(n, bool) or int(n) != n or int(n) < 1:
        raise ValidationError(f"n_steps must be a positive integer, got {n!r}")
    return int(n)


_BUILDERS = {
    "constant": (constant_schedule, ("n_steps", "beta0", "delta")),
    "geometric": (geometric_schedule, ("n_steps", "c0", "c1", "delta")),
    "cosine": (cosine_schedule, ("n_steps", "s", "t0")),
    "harmonic": (harmonic_schedule, ("n_steps",)),
}


def build_schedule(family: str, **params) -> VarianceSchedule:
    """Dispatch by family name; unknown keyword arguments are rejected."""
    try:
        builder, allowed = _BUILDERS[family]
    except KeyError:
        raise ValidationError(
            f"unknown schedule family {family!r}; choose from {sorted(_BUILDERS)}"
        ) from None
    extra = set(params) - set(allowed)
    if extra:
        raise ValidationError(f"unexpected parameters for {family}: {sorted(extra)}")
    return builder(**{k: v for k, v in params.items() if v is not None})


# --------------------------------------------------------------------------
# audit


@dataclass(frozen=True)
class ConditionReport:
    """Smallest feasible step-size constants for each schedule condition.

    ``eta_*`` fields are ``None`` when the condition cannot be met by any
    finite eta; the matching ``*_reason`` string says why.

    - max_step: max h_i (h_i <= eta)
    - eta_14:   h_i <= eta sqrt(1 - t_{i+1})
    - eta_15:   h_i <= eta min(t_i, 1 - t_{i+1})
    - eta_20:   h_i <= eta min(sqrt t_{i+1}, sqrt(1 - t_{i+1})) and t_0 >= eta^2 / 256
    """

    n_steps: int
    t0: float
    delta: float
    max_beta: float
    min_beta: float
    max_step: float
    eta_14: float | None
    eta_15: float | None
    eta_20: float | None
    eta_14_reason: str = ""
    eta_15_reason: str = ""
    eta_20_reason: str = ""
    stepsum_margins: np.ndarray = field(default_factory=lambda: np.empty(0))
    prop5_flags: dict[str, bool | None] = field(default_factory=dict)

    @property
    def max_beta_ok(self) -> bool:
        return self.max_beta <= 0.75

    @property
    def stepsum_applicable(self) -> bool:
        return self.max_beta_ok and self.eta_20 is not None

    def to_dict(self) -> dict[str, Any]:
        return {
            "n_steps": self.n_steps,
            "t0": self.t0,
            "delta": self.delta,
            "max_beta": self.max_beta,
            "min_beta": self.min_beta,
            "max_beta_ok": self.max_beta_ok,
            "max_step": self.max_step,
            "eta_14": self.eta_14,
            "eta_14_feasible": self.eta_14 is not None,
            "eta_14_reason": self.eta_14_reason,
            "eta_15": self.eta_15,
            "eta_15_feasible": self.eta_15 is not None,
            "eta_15_reason": self.eta_15_reason,
            "eta_20": self.eta_20,
            "eta_20_feasible": self.eta_20 is not None,
            "eta_20_reason": self.eta_20_reason,
            "stepsum_min_margin": float(np.min(self.stepsum_margins)),
            "stepsum_applicable": self.stepsum_applicable,
            "prop5_flags": dict(self.prop5_flags),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def csv_rows(self) -> list[dict[str, Any]]:
        """One row per audited condition."""

        def row(name, value, feasible, detail=""):
            return {"condition": name, "value": "" if value is None else repr(float(value)),
                    "feasible": str(bool(feasible)).lower(), "detail": detail}

        rows = [
            row("max_beta<=3/4", self.max_beta, self.max_beta_ok),
            row("h_i<=eta", self.max_step, True),
            row("eq14", self.eta_14, self.eta_14 is not None, self.eta_14_reason),
            row("eq15", self.eta_15, self.eta_15 is not None, self.eta_15_reason),
            row("eq20", self.eta_20, self.eta_20 is not None, self.eta_20_reason),
            row("stepsum", float(np.min(self.stepsum_margins)),
                bool(np.all(self.stepsum_margins >= 0)),
                "min margin" + ("" if self.stepsum_applicable else "; lemma hypotheses not met")),
        ]
        for key, flag in sorted(self.prop5_flags.items()):
            rows.append(row(f"prop5{key}", None if flag is None else float(flag),
                            flag is not False, "not applicable" if flag is None else ""))
        return rows

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=["condition", "value", "feasible", "detail"],
                           lineterminator="\r\n")
        w.writeheader()
        w.writerows(self.csv_rows())
        return buf.getvalue()

    @property
    def any_infeasible(self) -> bool:
        return (not self.max_beta_ok or self.eta_14 is None or self.eta_15 is None
                or self.eta_20 is None)


def _max_ratio(num: np.ndarray, den: np.ndarray) -> tuple[float | None, str]:
    zero = np.flatnonzero(den <= 0)
    if zero.size:
        return None, f"denominator vanishes at i={int(zero[0])}"
    return float(np.max(num / den)), ""


def audit_schedule(s: VarianceSchedule) -> ConditionReport:
    t, h = s.times, s.steps
    head, tail = t[:-1], t[1:]
    # 1 - t_{i+1} without cancellation at the last index
    gap = 1.0 - tail
    gap[-1] = s.delta

    eta14, r14 = _max_ratio(h, np.sqrt(gap))
    eta15, r15 = _max_ratio(h, np.minimum(head, gap))
    eta20, r20 = _max_ratio(h, np.minimum(np.sqrt(tail), np.sqrt(gap)))
    if eta20 is not None and t[0] < eta20**2 / 256:
        r20 = f"t_0={t[0]:.3e} < eta^2/256={eta20**2 / 256:.3e}"
        eta20 = None

    ratio = h / head
    tail_sums = np.cumsum(ratio[::-1])[::-1]
    margins = STEPSUM_CONSTANT + np.log(1.0 / head) - tail_sums

    return ConditionReport(
        n_steps=s.n_steps,
        t0=s.t0,
        delta=s.delta,
        max_beta=float(np.max(s.betas)),
        min_beta=float(np.min(s.betas)),
        max_step=float(np.max(h)),
        eta_14=eta14,
        eta_15=eta15,
        eta_20=eta20,
        eta_14_reason=r14,
        eta_15_reason=r15,
        eta_20_reason=r20,
        stepsum_margins=margins,
        prop5_flags=_cosine_flags(s) if s.family == "cosine" else {},
    )


def _cosine_flags(s: VarianceSchedule) -> dict[str, bool | None]:
    """Conclusions of the three cosine-schedule assertions; None when the premise fails."""
    n = s.n_steps
    eta_n = float(s.params["eta_N"])
    sp = float(s.params["s"])
    t, h = s.times, s.steps
    tail = t[1:]
    gap = 1.0 - tail
    gap[-1] = s.delta
    flags: dict[str, bool | None] = {}
    if t[1] <= 4 * t[0]:
        flags["a"] = bool(t[0] >= eta_n**2 / 16 and np.max(s.betas) <= 0.75)
    else:
        flags["a"] = None
    flags["b"] = bool(np.all(h <= 2 * eta_n * np.sqrt(tail)))
    if sp >= 1 / (2 * n):
        flags["c"] = bool(np.all(h <= 4 * eta_n * np.sqrt(gap)))
    else:
        flags["c"] = None
    return flags
