"""Command-line front end.

Exit codes: 0 ok, 1 verification failure, 2 validation error,
3 hypothesis infeasibility/violation, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import io as w2io
from .acceptance import format_report, verify_all
from .bounds import RHS_EVALUATORS, bound_rows_csv, evaluate_all, inputs_from_dict
from .errors import HypothesisViolation, NumericalError, ValidationError
from .gaussian_exact import exact_sampler_w2, sampler_law
from .harness import PRESETS, ExperimentSpec, preset, run_experiment
from .sampler import SamplerConfig, ddpm_run, make_perturbed_score
from .schedules import VarianceSchedule, audit_schedule, build_schedule
from .targets import GaussianMixtureTarget, SphericalGaussianTarget, target_from_dict

EXIT_OK, EXIT_FAIL, EXIT_VALIDATION, EXIT_HYPOTHESIS, EXIT_NUMERICAL = 0, 1, 2, 3, 4


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_bytes(text.encode())
    else:
        sys.stdout.write(text)


def _load_schedule(path: str) -> VarianceSchedule:
    data = w2io.read_json(path)
    if isinstance(data, dict) and "family" in data and "betas" not in data:
        return build_schedule(data["family"], **{k: v for k, v in data.items() if k != "family"})
    return VarianceSchedule.from_dict(data)


# ------------------------------------------------------------------ schedule


def cmd_schedule_build(args) -> int:
    params = {"n_steps": args.n, "c0": args.c0, "c1": args.c1, "delta": args.delta,
              "beta0": args.beta0, "s": args.s, "t0": args.t0}
    allowed = {
        "harmonic": ("n_steps",),
        "constant": ("n_steps", "beta0", "delta"),
        "geometric": ("n_steps", "c0", "c1", "delta"),
        "cosine": ("n_steps", "s", "t0"),
    }.get(args.family)
    if allowed is None:
        raise ValidationError(f"unknown schedule family {args.family!r}")
    stray = [k for k, v in params.items() if v is not None and k not in allowed]
    if stray:
        raise ValidationError(f"options {stray} do not apply to the {args.family} family")
    sched = build_schedule(args.family, **{k: params[k] for k in allowed})
    _emit(sched.to_json() + "\n", args.out)
    return EXIT_OK


def cmd_schedule_audit(args) -> int:
    report = audit_schedule(_load_schedule(args.input))
    _emit(report.to_json() + "\n" if args.json else report.to_csv(), args.out)
    return EXIT_HYPOTHESIS if report.any_infeasible else EXIT_OK


# ------------------------------------------------------------------ run


def _run_setup(args):
    cfg = w2io.read_json(args.config) if args.config else {}
    if not isinstance(cfg, dict):
        raise ValidationError("config must be a JSON object")
    if "target" in cfg:
        target = target_from_dict(cfg["target"])
    elif args.target == "gauss":
        target = SphericalGaussianTarget(np.zeros(args.d), args.sigma2)
    else:
        means = np.zeros((2, args.d))
        means[:, 0] = (-args.separation, args.separation)
        target = GaussianMixtureTarget([0.5, 0.5], means, [args.sigma2, args.sigma2])
    sched_cfg = cfg.get("schedule", {"family": args.schedule, "n_steps": args.n})
    if "betas" in sched_cfg:
        schedule = VarianceSchedule.from_dict(sched_cfg)
    else:
        sched_cfg = dict(sched_cfg)
        schedule = build_schedule(sched_cfg.pop("family"), **sched_cfg)
    mu_hat = np.asarray(cfg.get("mu_hat", target.mean + args.offset * np.eye(target.dim)[0]), float)
    eps = float(cfg.get("eps", args.eps))
    seed = int(cfg.get("seed", args.seed))
    chains = int(cfg.get("chains", args.chains))
    return target, schedule, mu_hat, eps, seed, chains


def cmd_run(args) -> int:
    target, schedule, mu_hat, eps, seed, chains = _run_setup(args)
    model = make_perturbed_score(target, eps)
    pert = model if model.kind == "perturbed" else None
    gaussian = isinstance(target, SphericalGaussianTarget)
    meta = {"seed": seed, "git": w2io.git_describe(),
            "spec_hash": w2io.spec_hash({"target": target.to_dict(), "schedule": schedule.to_dict(),
                                         "mu_hat": mu_hat, "eps": eps, "chains": chains})}
    rows = []
    if gaussian:
        mean, var = sampler_law(schedule, target, mu_hat, pert)
        w2 = exact_sampler_w2(schedule, target, mu_hat, pert)
        for j, m in enumerate(mean):
            rows.append({"source": "exact", "quantity": f"mean[{j}]", "value": m})
        rows.append({"source": "exact", "quantity": "variance", "value": var})
        rows.append({"source": "exact", "quantity": "w2_to_target", "value": w2})
    elif args.exact_only:
        raise ValidationError("--exact-only needs a spherical Gaussian target")
    if not args.exact_only:
        samples = ddpm_run(schedule, target, SamplerConfig(mu_hat, chains, seed, model))
        emp_mean = samples.mean(axis=0)
        for j, m in enumerate(emp_mean):
            rows.append({"source": "monte-carlo", "quantity": f"mean[{j}]", "value": m})
        rows.append({"source": "monte-carlo", "quantity": "variance",
                     "value": float(samples.var(axis=0, ddof=1).mean())})
        if args.out:
            Path(args.out).write_bytes(w2io.samples_csv(samples, meta).encode())
    sys.stdout.write(w2io.write_csv(rows, ("source", "quantity", "value"), meta))
    return EXIT_OK


# ------------------------------------------------------------------ bounds


def cmd_bounds(args) -> int:
    inp = inputs_from_dict(w2io.read_json(args.params))
    which = list(RHS_EVALUATORS) if args.all else [w.strip() for w in args.which.split(",")]
    results = evaluate_all(inp, which)
    _emit(bound_rows_csv(inp, results), args.out)
    violated = any(bv is None for _, bv, _ in results)
    return EXIT_HYPOTHESIS if violated and not args.all else EXIT_OK


# ------------------------------------------------------------------ experiment / verify


def cmd_experiment(args) -> int:
    if args.spec:
        spec = ExperimentSpec.from_dict(w2io.read_json(args.spec))
        specs = [spec]
    elif args.id == "all":
        specs = list(PRESETS.values())
    else:
        specs = [preset(args.id)]
    for spec in specs:
        result = run_experiment(spec, args.out)
        sys.stdout.write(json.dumps(result.summary, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_verify(args) -> int:
    only = None
    if args.only:
        try:
            only = [int(x) for x in args.only.split(",")]
        except ValueError:
            raise ValidationError(f"--only takes comma-separated integers, got {args.only!r}") from None
    results = verify_all(quick=args.quick, only=only, fixtures=args.fixture)
    sys.stdout.write(format_report(results) + "\n")
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAIL


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="w2lab", description="DDPM Wasserstein-error laboratory")
    sub = p.add_subparsers(dest="command", required=True)

    sch = sub.add_parser("schedule", help="build or audit variance schedules")
    ssub = sch.add_subparsers(dest="action", required=True)
    b = ssub.add_parser("build", help="print a schedule as JSON")
    b.add_argument("--family", required=True, choices=["harmonic", "constant", "geometric", "cosine"])
    b.add_argument("--n", type=int, required=True, help="number of steps N")
    b.add_argument("--beta0", type=float)
    b.add_argument("--c0", type=float)
    b.add_argument("--c1", type=float)
    b.add_argument("--delta", type=float)
    b.add_argument("--s", type=float)
    b.add_argument("--t0", type=float)
    b.add_argument("--out")
    b.set_defaults(func=cmd_schedule_build)
    a = ssub.add_parser("audit", help="print the condition report of a schedule JSON file")
    a.add_argument("--in", dest="input", required=True)
    a.add_argument("--json", action="store_true", help="JSON instead of CSV")
    a.add_argument("--out")
    a.set_defaults(func=cmd_schedule_audit)

    r = sub.add_parser("run", help="sample with the DDPM recursion and/or the closed form")
    r.add_argument("--target", choices=["gauss", "mixture"], default="gauss")
    r.add_argument("--sigma2", type=float, default=1.0)
    r.add_argument("--d", type=int, default=1)
    r.add_argument("--separation", type=float, default=2.0, help="mixture: components at +-sep e1")
    r.add_argument("--schedule", default="harmonic")
    r.add_argument("--n", type=int, default=128, help="number of steps N")
    r.add_argument("--offset", type=float, default=0.0, help="mu_hat = mean + offset e1")
    r.add_argument("--eps", type=float, default=0.0, help="constant-vector score error size")
    r.add_argument("--chains", type=int, default=1000)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--exact-only", action="store_true")
    r.add_argument("--out", help="write the terminal samples as CSV here")
    r.add_argument("--config", help="JSON with any of target, schedule, mu_hat, eps, seed, chains")
    r.set_defaults(func=cmd_run)

    bd = sub.add_parser("bounds", help="evaluate upper-bound right-hand sides")
    g = bd.add_mutually_exclusive_group(required=True)
    g.add_argument("--which", help=f"comma-separated subset of {','.join(RHS_EVALUATORS)}")
    g.add_argument("--all", action="store_true")
    bd.add_argument("--params", required=True)
    bd.add_argument("--out")
    bd.set_defaults(func=cmd_bounds)

    e = sub.add_parser("experiment", help="run a pre-registered experiment")
    e.add_argument("--id", default="all", help=f"one of {sorted(PRESETS)} or 'all'")
    e.add_argument("--spec", help="custom experiment spec JSON")
    e.add_argument("--out", default="results")
    e.set_defaults(func=cmd_experiment)

    v = sub.add_parser("verify", help="run the acceptance suite")
    v.add_argument("--quick", action="store_true")
    v.add_argument("--only", help="comma-separated criterion numbers")
    v.add_argument("--fixture", action="append", default=[], help="extra schedule JSON to audit")
    v.set_defaults(func=cmd_verify)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except HypothesisViolation as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_HYPOTHESIS
    except NumericalError as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
