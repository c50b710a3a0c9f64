"""Right-hand sides of the W2 (and KL) sampling-error bounds as numbers.

Every evaluator re-checks the hypotheses it depends on and raises
HypothesisViolation naming the failed condition.  Bounds with an unnamed
universal constant are evaluated with that constant set to 1 and carry
``constant_known=False``.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import dataclass, field, replace
from typing import Any, Callable

import numpy as np

from .errors import HypothesisViolation, ValidationError
from .quadrature import quad, upper_sum
from .schedules import ConditionReport, VarianceSchedule, audit_schedule
from .targets import (
    ConstantProfile,
    RegularityProfile,
    SphericalGaussianTarget,
    gaussian_regularity,
    profile_from_dict,
)

__all__ = [
    "BoundInputs",
    "BoundValue",
    "gaussian_bound_inputs",
    "thm1_rhs",
    "thm2_rhs",
    "thm3_rhs",
    "cor1_rhs",
    "cor2_rhs",
    "thm7_rhs",
    "thm8_rhs",
    "prop6_rhs",
    "early_stopping_rhs",
    "RHS_EVALUATORS",
    "evaluate_all",
    "bound_rows_csv",
]


@dataclass(frozen=True, eq=False)
class BoundInputs:
    """Everything the bound evaluators need.

    ``eta`` overrides the audited minimal step constant; it must itself satisfy
    the relevant condition (i.e. be at least the audited minimum).
    ``log_concave`` and ``score_lipschitz`` are caller assertions about the
    target and the learned score respectively.
    """

    d: int
    schedule: VarianceSchedule
    L: Callable = field(default_factory=lambda: ConstantProfile(0.0))
    epsilon_score: Callable = field(default_factory=lambda: ConstantProfile(0.0))
    mu_gap: float = 0.0
    trace_sigma: float = 0.0
    sigma_op: float = 0.0
    lam: float = 0.0
    lam_wlc: float = 0.0
    L0: float = 1.0
    alpha: float = 1.0
    M: float = 0.0
    eta: float | None = None
    log_concave: bool = False
    score_lipschitz: bool = False
    certified: bool = True
    report: ConditionReport | None = None

    def __post_init__(self):
        if int(self.d) < 1:
            raise ValidationError("d must be >= 1")
        for name in ("mu_gap", "trace_sigma", "sigma_op", "lam", "lam_wlc", "L0"):
            if not getattr(self, name) >= 0:
                raise ValidationError(f"{name} must be non-negative")
        grid = self.schedule.times[:-1]
        for name in ("L", "epsilon_score"):
            vals = np.asarray(getattr(self, name)(grid), dtype=float) * np.ones(grid.size)
            if np.any(vals < 0) or np.any(np.diff(vals) < 0):
                raise ValidationError(f"{name} must be non-negative and non-decreasing on the grid")
        if self.report is None:
            object.__setattr__(self, "report", audit_schedule(self.schedule))

    @property
    def Lambda(self) -> float:
        return max(1.0, self.sigma_op)

    def with_(self, **changes) -> "BoundInputs":
        changes.setdefault("report", self.report if "schedule" not in changes else None)
        return replace(self, **changes)

    def params_hash(self) -> str:
        s = self.schedule
        payload = {
            "d": int(self.d),
            "betas": s.betas.tolist(),
            "delta": s.delta,
            "L": _describe(self.L),
            "eps": _describe(self.epsilon_score),
            "mu_gap": self.mu_gap,
            "trace_sigma": self.trace_sigma,
            "sigma_op": self.sigma_op,
            "lam": self.lam,
            "lam_wlc": self.lam_wlc,
            "L0": self.L0,
            "eta": self.eta,
        }
        blob = json.dumps(payload, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


def _describe(profile) -> Any:
    return profile.to_dict() if hasattr(profile, "to_dict") else repr(profile)


@dataclass(frozen=True)
class BoundValue:
    bound_id: str
    value: float
    constant_known: bool
    flags: dict[str, bool] = field(default_factory=dict)

    def __post_init__(self):
        if not self.value >= 0:
            raise ValidationError(f"{self.bound_id}: bound value must be non-negative, got {self.value}")


def gaussian_bound_inputs(
    schedule: VarianceSchedule,
    target: SphericalGaussianTarget,
    mu_hat,
    epsilon_score: Callable | None = None,
    **overrides,
) -> BoundInputs:
    """BoundInputs for a spherical Gaussian target (log-concave, exact/shifted score)."""
    reg: RegularityProfile = gaussian_regularity(target, epsilon_score)
    gap = float(np.linalg.norm(np.asarray(mu_hat, dtype=float) - target.mean))
    kw = dict(
        d=target.dim,
        schedule=schedule,
        L=reg.L,
        epsilon_score=reg.epsilon_score,
        mu_gap=gap,
        trace_sigma=target.trace_sigma,
        sigma_op=target.sigma_op,
        lam=reg.lam,
        lam_wlc=reg.lam_wlc,
        L0=reg.L0,
        alpha=reg.alpha,
        M=reg.M,
        log_concave=True,
        score_lipschitz=_gaussian_score_lipschitz(schedule, target, reg.L),
    )
    kw.update(overrides)
    return BoundInputs(**kw)


def _gaussian_score_lipschitz(schedule, target, L) -> bool:
    # I + grad s_i = t (s2 - 1)/g(t) I must lie in [-2t/(1-t), t L(t)] on the grid
    t = schedule.times[:-1]
    s2 = target.variance
    mid = t * (s2 - 1.0) / ((s2 - 1.0) * t + 1.0)
    lo = -2 * t / (1 - t)
    hi = t * np.asarray(L(t), dtype=float)
    return bool(np.all(mid >= lo) and np.all(mid <= hi * (1 + 1e-12)))


# --------------------------------------------------------------------------
# integrals


def _int_L(inp: BoundInputs, a: float, b: float, square: bool = False) -> float:
    f = (lambda s: np.asarray(inp.L(s), dtype=float) ** 2) if square else inp.L
    grid = inp.schedule.times if a >= inp.schedule.t0 else None
    if inp.certified:
        return upper_sum(f, a, b, grid)
    return quad(f, a, b, grid=grid)


def _eps_integral(inp: BoundInputs, power: float, squared: bool = False) -> float:
    """int_{t_0}^{t_N} eps(s)^(1 or 2) / s^power ds."""
    eps = inp.epsilon_score
    if isinstance(eps, ConstantProfile) and eps.value == 0.0:
        return 0.0

    def f(s):
        e = np.asarray(eps(s), dtype=float)
        return (e * e if squared else e) / s**power

    s = inp.schedule
    return quad(f, s.t0, s.t_final, grid=s.times)


def _es(inp: BoundInputs) -> float:
    delta = inp.schedule.delta
    return math.sqrt(inp.trace_sigma * delta**2 + inp.d * delta)


# --------------------------------------------------------------------------
# hypothesis checks


def _require(cond: bool, name: str, detail: str = "") -> None:
    if not cond:
        raise HypothesisViolation(name, detail)


def _max_beta(inp):
    r = inp.report
    _require(r.max_beta_ok, "max_beta<=3/4", f"max beta = {r.max_beta:.6g}")


def _eta(inp: BoundInputs, audited: float | None, name: str, reason: str) -> float:
    _require(audited is not None, name, reason)
    if inp.eta is None:
        return audited
    _require(inp.eta >= audited, name, f"supplied eta={inp.eta!r} < required {audited!r}")
    return float(inp.eta)


def _delta_zero(inp):
    _require(inp.schedule.delta == 0.0, "delta=0", f"delta = {inp.schedule.delta!r}")


def _delta_pos(inp):
    _require(inp.schedule.delta > 0.0, "delta>0", "log(1/delta) is infinite at delta=0")


def _half(inp, with_delta=True):
    s = inp.schedule
    _require(s.t0 <= 0.5, "t0<=1/2", f"t0 = {s.t0!r}")
    if with_delta:
        _require(s.delta <= 0.5, "delta<=1/2", f"delta = {s.delta!r}")


# --------------------------------------------------------------------------
# evaluators


def thm1_rhs(inp: BoundInputs) -> BoundValue:
    """Two-sided Lipschitz score, no early stopping, h_i <= eta."""
    _delta_zero(inp)
    _max_beta(inp)
    eta = _eta(inp, inp.report.max_step, "h_i<=eta", "")
    s, d = inp.schedule, inp.d
    t0 = s.t0
    IL = _int_L(inp, t0, s.t_final)
    init = t0 * (inp.mu_gap + math.sqrt(d * _int_L(inp, 0.0, t0, square=True)))
    disc = math.sqrt(d) * eta * math.sqrt(_int_L(inp, t0, s.t_final, square=True))
    score = 2 * _eps_integral(inp, 0.5)
    return BoundValue("thm1", math.exp(IL) * (init + disc + score), True)


def _step_term(inp: BoundInputs, eta: float) -> float:
    d = inp.d
    return math.sqrt(d * math.log(1 / inp.schedule.delta) + max(inp.trace_sigma, d)) * eta


def thm2_rhs(inp: BoundInputs) -> BoundValue:
    """One-sided Lipschitz score, h_i <= eta sqrt(1 - t_{i+1})."""
    _max_beta(inp)
    _delta_pos(inp)
    eta = _eta(inp, inp.report.eta_14, "eq14", inp.report.eta_14_reason)
    _half(inp)
    s, d = inp.schedule, inp.d
    t0 = s.t0
    IL = _int_L(inp, t0, s.t_final)
    init = t0 * inp.mu_gap + math.sqrt(d) * t0 * max(
        2 * math.sqrt(t0), math.sqrt(_int_L(inp, 0.0, t0, square=True))
    )
    body = init + _step_term(inp, eta) + 2 * _eps_integral(inp, 0.5)
    return BoundValue("thm2", math.sqrt(2) * math.exp(IL) * body + _es(inp), True)


def thm3_rhs(inp: BoundInputs) -> BoundValue:
    """Population score error, Lipschitz learned score."""
    _require(inp.score_lipschitz, "score_lipschitz", "learned score Lipschitz sandwich not asserted")
    _max_beta(inp)
    _delta_pos(inp)
    eta = _eta(inp, inp.report.eta_14, "eq14", inp.report.eta_14_reason)
    _half(inp)
    s, d = inp.schedule, inp.d
    t0 = s.t0
    IL = _int_L(inp, t0, s.t_final)
    init = t0 * (inp.mu_gap + math.sqrt(inp.trace_sigma + d))
    body = init + _step_term(inp, eta) + 2 * _eps_integral(inp, 0.5)
    return BoundValue("thm3", math.sqrt(2) * math.exp(IL) * body + _es(inp), True)


def cor1_rhs(inp: BoundInputs) -> BoundValue:
    """Weakly log-concave and semi-log-convex targets, delta = 0."""
    _delta_zero(inp)
    _max_beta(inp)
    eta = _eta(inp, inp.report.max_step, "h_i<=eta", "")
    s, d, lam = inp.schedule, inp.d, inp.lam
    t0 = s.t0
    body = (
        t0 * (inp.mu_gap + lam * math.sqrt(d * t0))
        + lam * math.sqrt(d) * eta
        + 2 * _eps_integral(inp, 0.5)
    )
    return BoundValue("cor1", math.exp(lam) * body, True)


def cor2_rhs(inp: BoundInputs) -> BoundValue:
    """Weakly log-concave targets with early stopping."""
    _max_beta(inp)
    _delta_pos(inp)
    eta = _eta(inp, inp.report.eta_14, "eq14", inp.report.eta_14_reason)
    _half(inp, with_delta=False)
    s, d, lam = inp.schedule, inp.d, inp.lam_wlc
    t0 = s.t0
    body = (
        t0 * inp.mu_gap
        + max(2.0, lam) * math.sqrt(d) * t0**1.5
        + _step_term(inp, eta)
        + 2 * _eps_integral(inp, 0.5)
    )
    return BoundValue("cor2", math.sqrt(2) * math.exp(lam) * body + _es(inp), True)


def _lc_checks(inp: BoundInputs) -> float:
    _require(inp.log_concave, "log_concave", "target log-concavity not asserted")
    _max_beta(inp)
    _delta_pos(inp)
    eta = _eta(inp, inp.report.eta_20, "eq20", inp.report.eta_20_reason)
    if inp.eta is not None:
        _require(inp.schedule.t0 >= eta**2 / 256, "eq20", "t0 < eta^2/256 for supplied eta")
    _half(inp)
    return eta


def _lc_step_term(inp: BoundInputs, eta: float) -> float:
    s, d, lam = inp.schedule, inp.d, inp.Lambda
    return (lam * math.sqrt(d * math.log(1 / s.t0)) + math.sqrt(d * math.log(1 / s.delta))) * eta


def thm7_rhs(inp: BoundInputs) -> BoundValue:
    """Log-concave targets, mu_hat close to mu (universal constant set to 1)."""
    eta = _lc_checks(inp)
    s, d = inp.schedule, inp.d
    body = (
        inp.mu_gap
        + inp.Lambda * math.sqrt(d * s.t0)
        + _lc_step_term(inp, eta)
        + _eps_integral(inp, 1.5)
    )
    return BoundValue("thm7", body + _es(inp), False)


def thm8_rhs(inp: BoundInputs) -> BoundValue:
    """Log-concave targets, arbitrary mu_hat (universal constants set to 1).

    The smallness requirements on t_0 are reported in ``flags`` rather than
    enforced; the threshold constant c is taken as 1.
    """
    eta = _lc_checks(inp)
    s, d, lam = inp.schedule, inp.d, inp.Lambda
    t0 = s.t0
    flags = {
        "t0<=1/(Lambda d^2)": t0 <= 1.0 / (lam * d * d),
        "sqrt(Lambda d log(1/t0)) eta<=1": math.sqrt(lam * d * math.log(1 / t0)) * eta <= 1.0,
        "t0<=c/(Lambda log^4(d+1))": t0 <= 1.0 / (lam * math.log(d + 1) ** 4),
    }
    gap = inp.mu_gap
    body = (
        math.sqrt(lam * t0) * gap
        + lam**-0.25 * t0**0.25 * gap**2
        + lam**1.5 * math.sqrt(d) * t0
        + _lc_step_term(inp, eta)
    )
    value = body + 4 * _eps_integral(inp, 1.5) + _es(inp)
    return BoundValue("thm8", value, False, flags)


def prop6_rhs(inp: BoundInputs) -> BoundValue:
    """KL(S_{t_N} P* | law Y_N) bound; the eta^2 term carries an unnamed constant (set to 1)."""
    _require(inp.L0 >= 1.0, "L0>=1", f"L0 = {inp.L0!r}")
    _delta_pos(inp)
    eta = _eta(inp, inp.report.eta_15, "eq15", inp.report.eta_15_reason)
    _require(0 < eta < 1 / 6, "eta<1/6", f"eta = {eta!r}")
    _half(inp)
    s, d = inp.schedule, inp.d
    t0 = s.t0
    value = (
        t0 / 2 * (inp.mu_gap**2 + inp.trace_sigma)
        + 2 * t0**2 * d
        + inp.L0**2 * d * eta**2 * math.log(1 / (t0 * s.delta))
        + 2 * _eps_integral(inp, 1.0, squared=True)
    )
    return BoundValue("prop6", value, False)


def early_stopping_rhs(trace_sigma: float, d: int, delta: float) -> BoundValue:
    """sqrt(tr(Sigma) delta^2 + d delta)."""
    if trace_sigma < 0 or d < 1 or not (0 <= delta < 1):
        raise ValidationError("need trace_sigma >= 0, d >= 1, delta in [0,1)")
    return BoundValue("early_stopping", math.sqrt(trace_sigma * delta**2 + d * delta), True)


RHS_EVALUATORS: dict[str, Callable[[BoundInputs], BoundValue]] = {
    "thm1": thm1_rhs,
    "thm2": thm2_rhs,
    "thm3": thm3_rhs,
    "cor1": cor1_rhs,
    "cor2": cor2_rhs,
    "thm7": thm7_rhs,
    "thm8": thm8_rhs,
    "prop6": prop6_rhs,
}


def evaluate_all(inp: BoundInputs, which=None) -> list[tuple[str, BoundValue | None, str]]:
    """Evaluate a selection of bounds; violations are captured, not raised."""
    out = []
    for name in which or RHS_EVALUATORS:
        try:
            fn = RHS_EVALUATORS[name]
        except KeyError:
            raise ValidationError(
                f"unknown bound {name!r}; choose from {sorted(RHS_EVALUATORS)}"
            ) from None
        try:
            out.append((name, fn(inp), "ok"))
        except HypothesisViolation as exc:
            out.append((name, None, f"violated:{exc.condition}"))
    return out


def bound_rows_csv(inp: BoundInputs, results) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(["bound_id", "params_hash", "value", "constant_known", "hypothesis_flags"])
    h = inp.params_hash()
    for name, bv, status in results:
        if bv is None:
            w.writerow([name, h, "", "", status])
            continue
        flags = [status] + [f"{k}={str(v).lower()}" for k, v in bv.flags.items()]
        w.writerow([name, h, repr(bv.value), str(bv.constant_known).lower(), ";".join(flags)])
    return buf.getvalue()


def inputs_from_dict(data: dict[str, Any]) -> BoundInputs:
    """Build BoundInputs from a JSON-style record.

    Either give a ``target`` (spherical Gaussian; regularity derived) plus
    ``mu_hat``, or give the raw fields (d, L, lam, ...) directly.
    """
    from .schedules import VarianceSchedule, build_schedule
    from .targets import target_from_dict

    sched = data.get("schedule")
    if sched is None:
        raise ValidationError("params need a 'schedule' entry")
    if "family" in sched and "betas" not in sched:
        args = {k: v for k, v in sched.items() if k != "family"}
        schedule = build_schedule(sched["family"], **args)
    else:
        schedule = VarianceSchedule.from_dict(sched)
    eps = profile_from_dict(data.get("epsilon", 0.0))
    extra = {k: data[k] for k in ("eta", "certified") if k in data}
    if "target" in data:
        target = target_from_dict(data["target"])
        if not isinstance(target, SphericalGaussianTarget):
            raise ValidationError("derived bound inputs need a Gaussian target; give raw fields")
        mu_hat = data.get("mu_hat", np.zeros(target.dim))
        return gaussian_bound_inputs(schedule, target, mu_hat, eps, **extra)
    raw = {}
    for key in ("d", "mu_gap", "trace_sigma", "sigma_op", "lam", "lam_wlc", "L0", "alpha", "M",
                "log_concave", "score_lipschitz"):
        if key in data:
            raw[key] = data[key]
    if "d" not in raw:
        raise ValidationError("params need 'd' when no target is given")
    L = profile_from_dict(data.get("L", 0.0))
    return BoundInputs(schedule=schedule, L=L, epsilon_score=eps, **raw, **extra)
