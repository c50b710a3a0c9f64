"""The one-shot verification suite: every acceptance criterion, pass/fail each.

Each check returns (passed, detail).  ``verify_all`` times them and never lets
one criterion's exception stop the others.
"""
from __future__ import annotations

import math
import time
from pathlib import Path
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np
from scipy import stats

from .bounds import evaluate_all, early_stopping_rhs, gaussian_bound_inputs
from .errors import ValidationError, W2LabError
from .gaussian_exact import (
    exact_sampler_w2,
    kl_pipeline_gaussian,
    lower_bound_eq13,
    sampler_law,
    smoothing_w2_gaussian,
)
from .harness import fit_loglog_slope
from .ot import w2_exact_assignment, w2_permutation_oracle
from .sampler import SamplerConfig, ddpm_run, follmer_run, make_perturbed_score
from .schedules import (
    VarianceSchedule,
    audit_schedule,
    constant_schedule,
    cosine_schedule,
    geometric_schedule,
    harmonic_schedule,
)
from .targets import GaussianMixtureTarget, SphericalGaussianTarget, score_exact, score_fd_oracle

__all__ = ["CriterionResult", "CRITERIA", "verify_all", "format_report", "QUICK_SKIP"]


@dataclass(frozen=True)
class CriterionResult:
    number: int
    name: str
    passed: bool
    detail: str
    seconds: float

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"[{tag}] {self.number:2d} {self.name}: {self.detail} ({self.seconds:.2f}s)"


def _e1(d: int, scale: float = 1.0) -> np.ndarray:
    v = np.zeros(d)
    v[0] = scale
    return v


# ---------------------------------------------------------------- criteria


def c01_null_consistency(quick: bool = False):
    worst = 0.0
    for d in (1, 16, 256):
        target = SphericalGaussianTarget(np.zeros(d), 1.0)
        for sched in (constant_schedule(64, 0.1, 0.0), harmonic_schedule(64), cosine_schedule(64, s=0.0)):
            worst = max(worst, exact_sampler_w2(sched, target, np.zeros(d)))
    return worst <= 1e-12, f"max W2 = {worst:.3e} (tol 1e-12)"


def c02_pathwise_equivalence(quick: bool = False):
    mix_means = np.array([[-2.0, 0.5], [1.5, -1.0], [0.0, 2.0]])
    targets = {
        "gaussian": SphericalGaussianTarget([1.0, -0.5, 2.0], 3.0),
        "mixture": GaussianMixtureTarget([0.3, 0.5, 0.2], mix_means, [0.5, 1.0, 0.25]),
    }
    worst = 0.0
    for name, target in targets.items():
        for sched in (harmonic_schedule(64), cosine_schedule(64)):
            cfg = SamplerConfig(np.zeros(target.dim), 1000, seed=11)
            a = ddpm_run(sched, target, cfg)
            b = follmer_run(sched, target, cfg)
            rel = np.linalg.norm(a - b, axis=1) / np.maximum(np.linalg.norm(a, axis=1), 1.0)
            worst = max(worst, float(rel.max()))
    return worst <= 1e-10, f"max per-chain relative discrepancy = {worst:.3e} (tol 1e-10)"


def c03_lower_bound(quick: bool = False):
    ns = range(8, 1025) if not quick else [2**k for k in range(3, 11)]
    worst, where, count = math.inf, None, 0
    targets = [SphericalGaussianTarget(np.zeros(d), sigma**2) for sigma in (0.5, 2.0, 4.0) for d in (1, 4, 64)]
    for n in ns:
        sched = harmonic_schedule(n)
        eta = float(sched.betas.min())
        for target in targets:
            sigma, d = math.sqrt(target.variance), target.dim
            for off in (0.0, 1.0, 10.0):
                mu_hat = _e1(d, off)
                margin = exact_sampler_w2(sched, target, mu_hat) - lower_bound_eq13(
                    sched.t0, eta, target, mu_hat
                )
                count += 1
                if margin < worst:
                    worst, where = margin, (sigma, d, n, off)
    ok = worst >= -1e-9
    return ok, f"{count} points, min(W2 - lower) = {worst:.3e} at (sigma, d, N, gap)={where}"


def _c04_grid():
    delta0 = [harmonic_schedule(8), harmonic_schedule(64), harmonic_schedule(512),
              cosine_schedule(64, s=0.0), constant_schedule(64, 0.1, 0.0)]
    delta_pos = [cosine_schedule(64, s=0.008), cosine_schedule(64, s=1 / 128),
                 geometric_schedule(256, 2.0, 4.0, 1e-3), cosine_schedule(512, s=0.05)]
    return delta0 + delta_pos


def c04_upper_bounds(quick: bool = False):
    names = ("thm1", "thm2", "cor1")
    evaluated = dict.fromkeys(names, 0)
    worst = dict.fromkeys(names, math.inf)
    failures = []
    for sched in _c04_grid():
        for s2 in (0.5, 0.8, 1.25, 2.0):
            for d in (1, 16):
                for mean_scale in (0.0, 3.0):
                    mu = np.full(d, mean_scale / math.sqrt(d))
                    target = SphericalGaussianTarget(mu, s2)
                    for off in (0.0, 1.0):
                        mu_hat = mu + _e1(d, off)
                        for eps in (0.0, 0.05):
                            model = make_perturbed_score(target, eps)
                            pert = model if model.kind == "perturbed" else None
                            w2 = exact_sampler_w2(sched, target, mu_hat, pert)
                            inp = gaussian_bound_inputs(
                                sched, target, mu_hat, model.profile if pert else None
                            )
                            for name, bv, _status in evaluate_all(inp, names):
                                if bv is None:
                                    continue
                                evaluated[name] += 1
                                ratio = bv.value / w2 if w2 > 0 else math.inf
                                worst[name] = min(worst[name], ratio)
                                if bv.value < w2:
                                    failures.append((name, sched.family, s2, d, off, eps))
    vacuous = [n for n, c in evaluated.items() if c == 0]
    ok = not failures and not vacuous
    parts = [f"{n}: {evaluated[n]} pts, min RHS/W2={worst[n]:.3g}" for n in names]
    extra = f"; violations {failures[:3]}" if failures else ""
    extra += f"; never applicable: {vacuous}" if vacuous else ""
    return ok, "; ".join(parts) + extra


def c05_dimension_scaling(quick: bool = False):
    worst = 0.0
    for sched in (harmonic_schedule(256), cosine_schedule(128)):
        base = exact_sampler_w2(sched, SphericalGaussianTarget(np.zeros(1), 4.0), np.zeros(1))
        for d in (2, 3, 16, 64, 256, 1000):
            w = exact_sampler_w2(sched, SphericalGaussianTarget(np.zeros(d), 4.0), np.zeros(d))
            worst = max(worst, abs(w / base - math.sqrt(d)) / math.sqrt(d))
    return worst <= 1e-12, f"max relative deviation from sqrt(d) = {worst:.3e} (tol 1e-12)"


def c06_step_scaling(quick: bool = False):
    target = SphericalGaussianTarget(np.zeros(1), 4.0)
    etas, ws = [], []
    for k in range(4, 13):
        sched = harmonic_schedule(2**k)
        etas.append(audit_schedule(sched).max_step)
        ws.append(exact_sampler_w2(sched, target, np.zeros(1)))
    slope = fit_loglog_slope(etas, ws)
    return 0.9 <= slope <= 1.1, f"log-log slope of W2 vs eta = {slope:.4f} (want [0.9, 1.1])"


def c07_cosine_assertions(quick: bool = False):
    # each assertion is an implication: a None flag means its premise is false
    ns = range(4, 2049) if not quick else [4, 5, 7, 16, 100, 513, 2048]
    bad, checked = [], 0
    tested = dict.fromkeys("abc", 0)
    for n in ns:
        for s in (1 / (2 * n), 0.008, 0.05):
            flags = audit_schedule(cosine_schedule(n, s=s)).prop5_flags
            checked += 1
            for key in "abc":
                if flags.get(key) is False:
                    bad.append((n, s, key))
                elif flags.get(key) is True:
                    tested[key] += 1
    vacuous = [k for k, c in tested.items() if c == 0]
    counts = ", ".join(f"({k}) {c}" for k, c in tested.items())
    if bad:
        return False, f"assertion fails at (N, s, flag) {bad[:4]}"
    if vacuous:
        return False, f"premise never met for {vacuous}"
    return True, f"{checked} schedules, conclusions verified where premise holds: {counts}"


PROJECTIONS = (
    np.array([1.0, 0.0, 0.0, 0.0]),
    np.array([1.0, 1.0, 1.0, 1.0]) / 2.0,
    np.array([1.0, -2.0, 0.0, 3.0]) / math.sqrt(14.0),
)


def c08_monte_carlo(quick: bool = False):
    n = 10**5 if not quick else 10**4
    target = SphericalGaussianTarget([1.0, -1.0, 0.5, 0.0], 4.0)
    sched = harmonic_schedule(128)
    mu_hat = np.zeros(4)
    samples = ddpm_run(sched, target, SamplerConfig(mu_hat, n, seed=20240611))
    mean, var = sampler_law(sched, target, mu_hat)
    z_mean = np.abs(samples.mean(axis=0) - mean) / math.sqrt(var / n)
    z_var = np.abs(samples.var(axis=0, ddof=1) - var) / (var * math.sqrt(2.0 / (n - 1)))
    pvals = [
        stats.kstest(samples @ u, "norm", args=(float(mean @ u), math.sqrt(var))).pvalue
        for u in PROJECTIONS
    ]
    ok = z_mean.max() <= 5 and z_var.max() <= 5 and min(pvals) > 1e-3
    return ok, (f"n={n}: max |z| mean {z_mean.max():.2f}, variance {z_var.max():.2f} (<=5); "
                f"KS p-values {', '.join(f'{p:.3g}' for p in pvals)} (>1e-3)")


def c09_mixture_score(quick: bool = False):
    rng = np.random.default_rng(9)
    worst = 0.0
    for k in range(100):
        d = 1 + k % 3
        m = 2 + k % 3
        w = rng.dirichlet(np.ones(m))
        target = GaussianMixtureTarget(w, rng.normal(0, 2, (m, d)), rng.uniform(0.3, 2.0, m))
        t = float(rng.uniform(0.02, 0.98))
        y = rng.normal(0, 2, d)
        a = score_exact(target, t, y)
        b = score_fd_oracle(target, t, y)
        worst = max(worst, float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1.0)))
    return worst <= 1e-5, f"max relative error over 100 points = {worst:.3e} (tol 1e-5)"


def c10_ot_oracle(quick: bool = False):
    rng = np.random.default_rng(10)
    worst = 0.0
    for k in range(200):
        n = 1 + k % 7
        d = 1 + k % 3
        x, y = rng.normal(size=(n, d)), rng.normal(size=(n, d))
        worst = max(worst, abs(w2_exact_assignment(x, y) - w2_permutation_oracle(x, y)))
    return worst <= 1e-12, f"max |assignment - brute force| over 200 instances = {worst:.3e}"


def c11_early_stopping(quick: bool = False):
    worst = math.inf
    for sigma in (0.5, 1.0, 2.0):
        for d in (1, 8, 64):
            target = SphericalGaussianTarget(np.zeros(d), sigma**2)
            for delta in (1e-4, 1e-2, 0.1):
                lhs = smoothing_w2_gaussian(target, 1.0 - delta)
                rhs = early_stopping_rhs(target.trace_sigma, d, delta).value
                worst = min(worst, rhs - lhs)
    return worst >= 0, f"min(RHS - W2(S_t P, P)) = {worst:.3e} over 27 points (mean zero)"


def _schedule_corpus() -> list[VarianceSchedule]:
    corpus = [harmonic_schedule(n) for n in (2, 3, 8, 64, 1024, 4096)]
    corpus += [cosine_schedule(n, s=s) for n in (8, 64, 512, 2048) for s in (0.008, 0.05, 1 / (2 * n))]
    corpus += [geometric_schedule(n, c0, c1, 1e-3) for n in (64, 256, 1024) for c0, c1 in ((1, 2), (2, 4))]
    corpus += [constant_schedule(n, b, 0.0) for n, b in ((16, 0.3), (64, 0.1), (256, 0.05))]
    return corpus


def _load_fixture(item) -> VarianceSchedule:
    if isinstance(item, VarianceSchedule):
        return item
    if isinstance(item, dict):
        return VarianceSchedule.from_dict(item)
    try:
        text = Path(item).read_text()
    except OSError as exc:
        raise ValidationError(f"cannot read schedule fixture {item}: {exc}") from exc
    return VarianceSchedule.from_json(text)


def c12_stepsum(quick: bool = False, fixtures: Iterable = ()):
    applicable, worst, where = 0, math.inf, None
    extra = []
    for item in fixtures:
        try:
            extra.append(_load_fixture(item))
        except ValidationError as exc:
            raise ValidationError(f"fixture {item if not isinstance(item, dict) else '<dict>'}: {exc}") from exc
    for sched in [*_schedule_corpus(), *extra]:
        rep = audit_schedule(sched)
        if not rep.stepsum_applicable:
            continue
        applicable += 1
        m = float(rep.stepsum_margins.min())
        if m < worst:
            worst, where = m, (sched.family, sched.n_steps)
    if applicable == 0:
        return False, "no audited schedule satisfies the hypotheses (vacuous)"
    return worst >= 0, f"{applicable} applicable schedules, min margin {worst:.3f} at {where}"


def c13_kl_scaling(quick: bool = False):
    target = SphericalGaussianTarget(np.zeros(4), 1.0)
    etas, kls = [], []
    for k in range(6, 13):
        sched = geometric_schedule(2**k, 2.0, 4.0, 1e-3)
        etas.append(audit_schedule(sched).max_step)
        kls.append(kl_pipeline_gaussian(sched, target, target.mean))
    decreasing = all(b < a for a, b in zip(kls, kls[1:]))
    slope = fit_loglog_slope(etas, kls)
    ok = decreasing and 1.6 <= slope <= 2.4
    return ok, (f"KL values {', '.join(f'{v:.2e}' for v in kls)}; decreasing={decreasing}; "
                f"slope={slope:.3f} (want [1.6, 2.4])")


CRITERIA: tuple[tuple[int, str, Callable], ...] = (
    (1, "null consistency", c01_null_consistency),
    (2, "pathwise DDPM/Follmer equivalence", c02_pathwise_equivalence),
    (3, "lower-bound domination", c03_lower_bound),
    (4, "upper-bound domination", c04_upper_bounds),
    (5, "dimension scaling", c05_dimension_scaling),
    (6, "step scaling", c06_step_scaling),
    (7, "cosine schedule assertions", c07_cosine_assertions),
    (8, "Monte Carlo law agreement", c08_monte_carlo),
    (9, "mixture score oracle", c09_mixture_score),
    (10, "OT oracle equivalence", c10_ot_oracle),
    (11, "early stopping", c11_early_stopping),
    (12, "step-sum inequality", c12_stepsum),
    (13, "KL scaling", c13_kl_scaling),
)

QUICK_SKIP: frozenset[int] = frozenset()


def verify_all(
    quick: bool = False,
    only: Iterable[int] | None = None,
    fixtures: Iterable = (),
) -> list[CriterionResult]:
    """Run the criteria in order.  ``quick`` thins the big grids and the Monte Carlo run.

    ``fixtures`` (schedules, schedule dicts or JSON paths) join the step-sum
    corpus; one that breaks a schedule invariant fails that criterion.
    """
    wanted = set(only) if only is not None else None
    fixtures = list(fixtures)
    results = []
    for number, name, fn in CRITERIA:
        if wanted is not None and number not in wanted:
            continue
        start = time.perf_counter()
        try:
            if number == 12:
                passed, detail = fn(quick, fixtures)
            else:
                passed, detail = fn(quick)
        except (W2LabError, ArithmeticError, ValueError) as exc:
            passed, detail = False, f"{type(exc).__name__}: {exc}"
        results.append(CriterionResult(number, name, bool(passed), detail, time.perf_counter() - start))
    return results


def format_report(results: list[CriterionResult]) -> str:
    lines = [r.line() for r in results]
    n_pass = sum(r.passed for r in results)
    lines.append(f"{n_pass}/{len(results)} criteria passed")
    return "\n".join(lines)
