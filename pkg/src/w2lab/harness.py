"""Pre-registered experiments: grid sweeps emitting CSV rows and SVG plots.

A grid point is one (schedule, N, d, sigma^2, |mu_hat - mu|, eps) tuple.  Grid
points run independently (optionally on a thread pool capped by the
W2LAB_THREADS environment variable) and are re-assembled in enumeration order,
so the CSV is byte-identical across runs and thread counts.
"""
from __future__ import annotations

import itertools
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import io as w2io
from .bounds import RHS_EVALUATORS, evaluate_all, gaussian_bound_inputs
from .errors import ValidationError, W2LabError
from .gaussian_exact import exact_sampler_w2, kl_pipeline_gaussian, sampler_law
from .ot import MAX_ASSIGNMENT_N, w2_exact_assignment, w2_sliced
from .sampler import SamplerConfig, ddpm_run, make_perturbed_score
from .schedules import _BUILDERS, audit_schedule, build_schedule
from .svg import line_plot
from .targets import GaussianMixtureTarget, SphericalGaussianTarget, sample_target

__all__ = [
    "ExperimentSpec",
    "ExperimentResult",
    "PRESETS",
    "preset",
    "run_experiment",
    "fit_loglog_slope",
    "thread_count",
    "COLUMNS",
]

OUTPUTS = ("exact", "monte-carlo", "bounds", "empirical-ot")
AXES = ("n_steps", "d", "sigma2", "offset", "eps")
BOUND_COLUMNS = tuple(f"bound_{name}" for name in RHS_EVALUATORS)
COLUMNS = (
    "index", "family", "schedule_params", *AXES,
    "eta", "t0", "delta",
    "exact_w2", "exact_w2_smoothed", "exact_kl", "law_variance",
    "mc_mean_gap", "mc_variance", "emp_w2", "emp_w2_baseline", "sliced_w2",
    *BOUND_COLUMNS,
    "error",
)


@dataclass(frozen=True)
class ExperimentSpec:
    """A sweep over schedules x N x d x sigma^2 x |mu_hat - mu| x eps.

    ``schedules`` holds builder keyword dicts with a ``family`` key; the step
    count comes from ``n_list``.  For ``target="mixture"`` the target is the
    two-component mixture 0.5 N(-sep e1, s2 I) + 0.5 N(sep e1, s2 I).
    ``plot`` = (x column, y column, series axis or "", logx, logy).
    ``fit`` = (x column, y column): a log-log slope per series goes in the summary.
    """

    id: str
    n_list: tuple[int, ...] = (256,)
    d_list: tuple[int, ...] = (1,)
    sigma2_list: tuple[float, ...] = (4.0,)
    offsets: tuple[float, ...] = (0.0,)
    eps_list: tuple[float, ...] = (0.0,)
    schedules: tuple[dict, ...] = ({"family": "harmonic"},)
    target: str = "gaussian"
    separation: float = 2.0
    n_chains: int = 0
    seed: int = 0
    outputs: tuple[str, ...] = ("exact",)
    plot: tuple | None = None
    fit: tuple[str, str] | None = None

    def __post_init__(self):
        for name in ("n_list", "d_list", "sigma2_list", "offsets", "eps_list", "schedules", "outputs"):
            value = tuple(getattr(self, name))
            object.__setattr__(self, name, value)
            if not value:
                raise ValidationError(f"experiment {self.id!r}: axis {name} is empty")
        for sched in self.schedules:
            fam = sched.get("family")
            if fam not in _BUILDERS:
                raise ValidationError(f"experiment {self.id!r}: unknown schedule family {fam!r}")
        bad = set(self.outputs) - set(OUTPUTS)
        if bad:
            raise ValidationError(f"unknown outputs {sorted(bad)}; choose from {list(OUTPUTS)}")
        if self.target not in ("gaussian", "mixture"):
            raise ValidationError(f"target must be 'gaussian' or 'mixture', got {self.target!r}")
        if ({"monte-carlo", "empirical-ot"} & set(self.outputs)) and int(self.n_chains) < 2:
            raise ValidationError("sampling outputs need n_chains >= 2")
        if any(int(n) < 1 for n in self.n_list) or any(int(d) < 1 for d in self.d_list):
            raise ValidationError("N and d must be positive")
        if any(not s2 > 0 for s2 in self.sigma2_list):
            raise ValidationError("variances must be positive")
        if any(o < 0 for o in self.offsets) or any(e < 0 for e in self.eps_list):
            raise ValidationError("offsets and eps must be non-negative")

    def to_dict(self) -> dict[str, Any]:
        return json.loads(json.dumps(asdict(self)))

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ExperimentSpec":
        if not isinstance(data, dict) or "id" not in data:
            raise ValidationError("experiment spec must be an object with an 'id'")
        known = set(cls.__dataclass_fields__)
        extra = set(data) - known
        if extra:
            raise ValidationError(f"unknown experiment fields {sorted(extra)}")
        kw = dict(data)
        for key in ("plot", "fit"):
            if kw.get(key) is not None:
                kw[key] = tuple(kw[key])
        if "schedules" in kw:
            kw["schedules"] = tuple(dict(s) for s in kw["schedules"])
        return cls(**kw)

    def grid(self):
        return itertools.product(
            self.schedules, self.n_list, self.d_list, self.sigma2_list, self.offsets, self.eps_list
        )


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    rows: list[dict[str, Any]]
    summary: dict[str, Any]
    csv: str
    svg: str | None = None
    paths: dict[str, str] = field(default_factory=dict)


def thread_count() -> int:
    raw = os.environ.get("W2LAB_THREADS")
    if raw is None:
        return min(4, os.cpu_count() or 1)
    try:
        n = int(raw)
    except ValueError:
        raise ValidationError(f"W2LAB_THREADS must be an integer, got {raw!r}") from None
    return max(1, n)


def fit_loglog_slope(x, y) -> float:
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    keep = (x > 0) & (y > 0) & np.isfinite(x) & np.isfinite(y)
    if keep.sum() < 2:
        return math.nan
    return float(np.polyfit(np.log(x[keep]), np.log(y[keep]), 1)[0])


def _row_seed(seed: int, index: int, stream: int) -> int:
    return int(np.random.SeedSequence([int(seed), index, stream]).generate_state(1, np.uint64)[0])


def _make_target(spec: ExperimentSpec, d: int, s2: float):
    if spec.target == "gaussian":
        return SphericalGaussianTarget(np.zeros(d), s2)
    means = np.zeros((2, d))
    means[0, 0], means[1, 0] = -spec.separation, spec.separation
    return GaussianMixtureTarget([0.5, 0.5], means, [s2, s2])


def _run_point(spec: ExperimentSpec, index: int, point) -> dict[str, Any]:
    sched_kw, n, d, s2, offset, eps = point
    family = sched_kw["family"]
    params = {k: v for k, v in sched_kw.items() if k != "family"}
    row: dict[str, Any] = {
        "index": index, "family": family,
        "schedule_params": json.dumps(params, sort_keys=True),
        "n_steps": int(n), "d": int(d), "sigma2": float(s2), "offset": float(offset), "eps": float(eps),
    }
    errors = []

    def stage(name, fn):
        try:
            fn()
        except (W2LabError, ArithmeticError, ValueError) as exc:
            errors.append(f"{name}:{type(exc).__name__}:{exc}")

    state: dict[str, Any] = {}

    def setup():
        schedule = build_schedule(family, n_steps=int(n), **params)
        state["schedule"] = schedule
        row["eta"] = audit_schedule(schedule).max_step
        row["t0"], row["delta"] = schedule.t0, schedule.delta
        target = _make_target(spec, int(d), float(s2))
        mu_hat = target.mean.copy()
        mu_hat[0] += offset
        state["target"], state["mu_hat"] = target, mu_hat
        state["model"] = make_perturbed_score(target, float(eps))

    stage("setup", setup)
    if "schedule" not in state:
        row["error"] = "; ".join(errors)
        return row
    schedule, target, mu_hat, model = (state[k] for k in ("schedule", "target", "mu_hat", "model"))
    gaussian = isinstance(target, SphericalGaussianTarget)
    pert = model if model.kind == "perturbed" else None

    if "exact" in spec.outputs and gaussian:
        def exact():
            row["exact_w2"] = exact_sampler_w2(schedule, target, mu_hat, pert)
            row["exact_w2_smoothed"] = exact_sampler_w2(schedule, target, mu_hat, pert, "smoothed")
            row["law_variance"] = sampler_law(schedule, target, mu_hat, pert)[1]
            row["exact_kl"] = kl_pipeline_gaussian(schedule, target, mu_hat, pert)
        stage("exact", exact)

    samples = None
    if {"monte-carlo", "empirical-ot"} & set(spec.outputs):
        def mc():
            nonlocal samples
            cfg = SamplerConfig(mu_hat, int(spec.n_chains), _row_seed(spec.seed, index, 0), model)
            samples = ddpm_run(schedule, target, cfg)
            if gaussian:
                ref_mean, _ = sampler_law(schedule, target, mu_hat, pert)
            else:
                ref_mean = target.mean
            row["mc_mean_gap"] = float(np.linalg.norm(samples.mean(axis=0) - ref_mean))
            row["mc_variance"] = float(samples.var(axis=0, ddof=1).mean())
        stage("monte-carlo", mc)

    if "empirical-ot" in spec.outputs and samples is not None:
        def ot():
            m = min(samples.shape[0], MAX_ASSIGNMENT_N)
            ref = sample_target(target, m, _row_seed(spec.seed, index, 1))
            ref2 = sample_target(target, m, _row_seed(spec.seed, index, 2))
            row["emp_w2"] = w2_exact_assignment(samples[:m], ref)
            row["emp_w2_baseline"] = w2_exact_assignment(ref2, ref)
            row["sliced_w2"] = w2_sliced(samples[:m], ref, seed=_row_seed(spec.seed, index, 3) % 2**32)
        stage("empirical-ot", ot)

    if "bounds" in spec.outputs and gaussian:
        def bounds():
            inp = gaussian_bound_inputs(schedule, target, mu_hat, model.profile if pert else None)
            for name, bv, _status in evaluate_all(inp):
                row[f"bound_{name}"] = None if bv is None else bv.value
        stage("bounds", bounds)

    row["error"] = "; ".join(errors) if errors else None
    return row


def _summary(spec: ExperimentSpec, rows: list[dict[str, Any]]) -> dict[str, Any]:
    out: dict[str, Any] = {
        "id": spec.id,
        "n_rows": len(rows),
        "n_errors": sum(1 for r in rows if r.get("error")),
    }
    if spec.fit:
        xcol, ycol = spec.fit
        series = _series(spec, rows, xcol, ycol)
        out["slopes"] = {name: fit_loglog_slope(xs, ys) for name, (xs, ys) in series.items()}
    return out


def _series_key(spec: ExperimentSpec, row) -> str:
    axis = spec.plot[2] if spec.plot and len(spec.plot) > 2 else ""
    if not axis:
        return "all"
    if axis == "family":
        return f"{row['family']} {row['schedule_params']}" if len(spec.schedules) > 1 else row["family"]
    return f"{axis}={row[axis]:g}"


def _series(spec, rows, xcol, ycol) -> dict[str, tuple[list[float], list[float]]]:
    series: dict[str, tuple[list[float], list[float]]] = {}
    for r in rows:
        x, y = r.get(xcol), r.get(ycol)
        if x is None or y is None:
            continue
        xs, ys = series.setdefault(_series_key(spec, r), ([], []))
        xs.append(float(x))
        ys.append(float(y))
    return series


def run_experiment(spec: ExperimentSpec, out_dir: str | Path | None = None) -> ExperimentResult:
    """Evaluate every grid point; failures are recorded per row and the run continues."""
    points = list(spec.grid())
    threads = min(thread_count(), len(points))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(lambda ip: _run_point(spec, *ip), enumerate(points)))
    else:
        rows = [_run_point(spec, i, p) for i, p in enumerate(points)]

    meta = {"seed": spec.seed, "git": w2io.git_describe(), "spec_hash": w2io.spec_hash(spec.to_dict())}
    csv_text = w2io.write_csv(rows, COLUMNS, meta)
    summary = _summary(spec, rows)
    svg = None
    if spec.plot:
        xcol, ycol = spec.plot[0], spec.plot[1]
        logx = bool(spec.plot[3]) if len(spec.plot) > 3 else False
        logy = bool(spec.plot[4]) if len(spec.plot) > 4 else False
        svg = line_plot(_series(spec, rows, xcol, ycol), title=spec.id, xlabel=xcol, ylabel=ycol,
                        logx=logx, logy=logy)
    result = ExperimentResult(spec, rows, summary, csv_text, svg)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {"csv": out / f"{spec.id}.csv", "summary": out / f"{spec.id}_summary.json"}
        paths["csv"].write_bytes(csv_text.encode())
        paths["summary"].write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
        if svg is not None:
            paths["svg"] = out / f"{spec.id}.svg"
            paths["svg"].write_text(svg)
        result.paths = {k: str(v) for k, v in paths.items()}
    return result


PRESETS: dict[str, ExperimentSpec] = {
    "E1": ExperimentSpec(
        "E1", n_list=(256,), d_list=(1, 2, 4, 8, 16, 32, 64, 128, 256), sigma2_list=(4.0,),
        outputs=("exact", "bounds"), plot=("d", "exact_w2", "", True, True), fit=("d", "exact_w2"),
    ),
    "E2": ExperimentSpec(
        "E2", n_list=tuple(2**k for k in range(4, 13)), d_list=(1,), sigma2_list=(4.0,),
        outputs=("exact", "bounds"), plot=("eta", "exact_w2", "", True, True),
        fit=("eta", "exact_w2"),
    ),
    "E3": ExperimentSpec(
        "E3", n_list=(256,), d_list=(4,), sigma2_list=(1.0,), offsets=(0.0, 0.5, 1.0, 2.0, 5.0, 10.0),
        outputs=("exact",), plot=("offset", "exact_w2", "", False, False),
    ),
    "E4": ExperimentSpec(
        "E4", n_list=(256,), d_list=(4,), sigma2_list=(2.0,),
        eps_list=(0.0, 0.01, 0.02, 0.05, 0.1, 0.2),
        outputs=("exact", "bounds"), plot=("eps", "exact_w2", "", False, False),
    ),
    "E5": ExperimentSpec(
        "E5", n_list=tuple(2**k for k in range(5, 11)), d_list=(4,), sigma2_list=(4.0,),
        schedules=(
            {"family": "harmonic"},
            {"family": "cosine", "s": 0.008},
            {"family": "geometric", "c0": 2.0, "c1": 4.0, "delta": 1e-3},
        ),
        outputs=("exact", "bounds"), plot=("n_steps", "exact_w2_smoothed", "family", True, True),
        fit=("eta", "exact_w2_smoothed"),
    ),
    "E6": ExperimentSpec(
        "E6", n_list=(16, 64, 256), d_list=(2,), sigma2_list=(0.5,), target="mixture",
        n_chains=2000, seed=2024, outputs=("monte-carlo", "empirical-ot"),
        plot=("n_steps", "emp_w2", "", True, False),
    ),
}


def preset(name: str) -> ExperimentSpec:
    try:
        return PRESETS[name]
    except KeyError:
        raise ValidationError(f"unknown experiment {name!r}; choose from {sorted(PRESETS)}") from None
