"""Command-line front end.

Subcommands: schedule-plot, validate, sample-lambda, train, sample,
compare.  stdout carries machine-readable CSV/JSON only; diagnostics go
to stderr.  Exit codes: 0 success, 1 validation-threshold failure,
2 bad input, 3 runtime divergence.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, run_config_from_dict
from .datasets import make_dataset
from .metrics import CompareRow, compare_schedules
from .sampling import SamplingDivergenceError, build_plan, plan_rows, sample
from .schedules import Schedule, alpha_sigma, schedule_from_dict, validate_schedule
from .training import (
    TrainingDivergenceError,
    load_checkpoint,
    save_checkpoint,
    trace_to_csv,
    train,
)

EXIT_OK = 0
EXIT_THRESHOLD = 1
EXIT_BAD_INPUT = 2
EXIT_DIVERGED = 3

# documented self-consistency thresholds for `validate`
THRESHOLDS = {
    "normalization_error": 1e-4,
    "max_roundtrip_error": 1e-6,
    "max_density_vs_derivative_error": 1e-3,
}

PRESETS = {
    "laplace_best": {"family": "laplace", "mu": 0.0, "b": 0.5},
    "cauchy_best": {"family": "cauchy", "mu": 0.0, "gamma": 0.5},
    "cosine_scaled_best": {"family": "cosine_scaled", "s": 2.0},
}


def _err(msg: str) -> None:
    print(f"error: {msg}", file=sys.stderr)


def _load_schedule(args) -> Schedule:
    if getattr(args, "preset", None):
        return schedule_from_dict(dict(PRESETS[args.preset]))
    if not getattr(args, "spec", None):
        raise ValueError("provide --spec JSON or --preset")
    return schedule_from_dict(json.loads(args.spec))


def _write_or_stdout(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _csv_text(header: list[str], rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def cmd_schedule_plot(args) -> int:
    try:
        schedule = _load_schedule(args)
    except (ValueError, json.JSONDecodeError) as e:
        _err(f"bad schedule spec: {e}")
        return EXIT_BAD_INPUT
    if args.points < 2:
        _err("--points must be >= 2")
        return EXIT_BAD_INPUT
    lam = np.linspace(args.lambda_min, args.lambda_max, args.points)
    alpha, sigma = alpha_sigma(lam)
    rows = zip(lam, schedule.pdf(lam), schedule.survival(lam), alpha, sigma)
    text = _csv_text(["lambda", "pdf", "survival", "alpha", "sigma"],
                     ([repr(float(v)) for v in row] for row in rows))
    _write_or_stdout(text, args.out)
    return EXIT_OK


def cmd_validate(args) -> int:
    try:
        schedule = _load_schedule(args)
    except (ValueError, json.JSONDecodeError) as e:
        _err(f"bad schedule spec: {e}")
        return EXIT_BAD_INPUT
    try:
        report = validate_schedule(schedule, args.grid)
    except ValueError as e:
        _err(str(e))
        return EXIT_BAD_INPUT
    payload = report.to_dict()
    failing = [k for k, bound in THRESHOLDS.items() if payload[k] >= bound]
    payload["thresholds"] = THRESHOLDS
    payload["failing"] = failing
    print(json.dumps(payload, indent=2))
    if failing:
        _err("thresholds exceeded: " + ", ".join(failing))
        return EXIT_THRESHOLD
    return EXIT_OK


def cmd_sample_lambda(args) -> int:
    try:
        schedule = _load_schedule(args)
    except (ValueError, json.JSONDecodeError) as e:
        _err(f"bad schedule spec: {e}")
        return EXIT_BAD_INPUT
    if args.n < 1:
        _err("--n must be >= 1")
        return EXIT_BAD_INPUT
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(args.seed)))
    lam = schedule.lambda_of_t(rng.random(args.n))
    text = _csv_text(["lambda"], ([repr(float(v))] for v in np.atleast_1d(lam)))
    _write_or_stdout(text, args.out)
    return EXIT_OK


def _load_run_config(path: str):
    raw = json.loads(Path(path).read_text())
    return run_config_from_dict(raw)


def cmd_train(args) -> int:
    try:
        config = _load_run_config(args.config)
    except FileNotFoundError:
        _err(f"config file not found: {args.config}")
        return EXIT_BAD_INPUT
    except json.JSONDecodeError as e:
        _err(f"config is not valid JSON: {e}")
        return EXIT_BAD_INPUT
    except ConfigError as e:
        _err(f"invalid config field {e.field!r}: {e}")
        return EXIT_BAD_INPUT
    dataset = make_dataset(config.dataset_kind, config.dataset_n, config.dataset_seed)
    try:
        state, trace = train(config, dataset)
    except TrainingDivergenceError as e:
        _err(str(e))
        if args.out_trace:
            Path(args.out_trace).write_text(trace_to_csv([]))
        return EXIT_DIVERGED
    save_checkpoint(state, args.out_checkpoint)
    if args.out_trace:
        Path(args.out_trace).write_text(trace_to_csv(trace))
    final_loss = trace[-1][1] if trace else None
    print(json.dumps({"step": state.step, "final_loss": final_loss}))
    return EXIT_OK


def cmd_sample(args) -> int:
    try:
        state = load_checkpoint(args.checkpoint)
    except FileNotFoundError:
        _err(f"checkpoint not found: {args.checkpoint}")
        return EXIT_BAD_INPUT
    except (ValueError, json.JSONDecodeError, ConfigError) as e:
        _err(f"bad checkpoint: {e}")
        return EXIT_BAD_INPUT
    schedule = state.config.schedule
    if args.spec or args.preset:
        try:
            override = _load_schedule(args)
        except (ValueError, json.JSONDecodeError) as e:
            _err(f"bad schedule spec: {e}")
            return EXIT_BAD_INPUT
        if override != schedule and not args.force_schedule:
            _err(
                "requested schedule differs from the checkpoint's training "
                "schedule; pass --force-schedule to override"
            )
            return EXIT_BAD_INPUT
        schedule = override
    if args.n < 0:
        _err("--n must be >= 0")
        return EXIT_BAD_INPUT
    try:
        plan = build_plan(schedule, args.steps, args.t_max)
        points = sample(state, schedule, plan, args.n, args.seed)
    except SamplingDivergenceError as e:
        _err(str(e))
        return EXIT_DIVERGED
    except ValueError as e:
        _err(str(e))
        return EXIT_BAD_INPUT
    samples_text = _csv_text(
        ["x", "y"], ([repr(float(p[0])), repr(float(p[1]))] for p in points)
    )
    _write_or_stdout(samples_text, args.out_samples)
    if args.out_plan:
        plan_text = _csv_text(
            ["i", "t", "lambda", "t_prime", "alpha", "sigma"],
            ([str(r[0])] + [repr(float(v)) for v in r[1:]] for r in plan_rows(plan)),
        )
        Path(args.out_plan).write_text(plan_text)
    return EXIT_OK


def cmd_compare(args) -> int:
    try:
        raw = json.loads(Path(args.configs).read_text())
    except FileNotFoundError:
        _err(f"configs file not found: {args.configs}")
        return EXIT_BAD_INPUT
    except json.JSONDecodeError as e:
        _err(f"configs file is not valid JSON: {e}")
        return EXIT_BAD_INPUT
    if not isinstance(raw, list) or len(raw) < 2:
        _err("compare needs a JSON array of at least 2 run configs")
        return EXIT_BAD_INPUT
    configs = []
    for i, entry in enumerate(raw):
        try:
            configs.append(run_config_from_dict(entry))
        except ConfigError as e:
            _err(f"config #{i} invalid field {e.field!r}: {e}")
            return EXIT_BAD_INPUT
    first = configs[0]
    dataset = make_dataset(first.dataset_kind, first.dataset_n, first.dataset_seed)
    rows, errors = compare_schedules(configs, dataset)
    csv_text = _csv_text(
        ["config_id", "schedule_json", "step", "sliced_wasserstein", "energy_distance"],
        (
            [str(r.config_id), r.schedule_json, str(r.step),
             repr(r.sliced_wasserstein), repr(r.energy_distance)]
            for r in rows
        ),
    )
    if args.out_csv:
        Path(args.out_csv).write_text(csv_text)
    summary = _summarize(configs, rows, errors)
    if args.out_summary:
        Path(args.out_summary).write_text(json.dumps(summary, indent=2))
    print(json.dumps(summary, indent=2))
    if errors:
        _err(f"{len(errors)} config(s) diverged: {sorted(errors)}")
        return EXIT_DIVERGED
    return EXIT_OK


def _summarize(configs, rows: list[CompareRow], errors: dict[int, str]) -> dict:
    finals: dict[int, CompareRow] = {}
    for row in rows:
        finals[row.config_id] = row
    results = []
    for idx, cfg in enumerate(configs):
        entry = {
            "config_id": idx,
            "target": cfg.target,
            "schedule": cfg.schedule.to_dict(),
            "weighting": cfg.weighting.to_dict(),
        }
        if idx in errors:
            entry["error"] = errors[idx]
        elif idx in finals:
            entry["final_sliced_wasserstein"] = finals[idx].sliced_wasserstein
            entry["final_energy_distance"] = finals[idx].energy_distance
            entry["final_step"] = finals[idx].step
        results.append(entry)
    best_by_target: dict[str, list[int]] = {}
    for target in sorted({c.target for c in configs}):
        scored = [
            (r["final_sliced_wasserstein"], r["config_id"])
            for r in results
            if r["target"] == target and "final_sliced_wasserstein" in r
        ]
        if scored:
            best = min(s[0] for s in scored)
            best_by_target[target] = [cid for s, cid in scored if s == best]
    return {"results": results, "best_by_target": best_by_target}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="snrforge",
        description="Noise-schedule design toolkit and 2D diffusion lab",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_spec_args(p):
        p.add_argument("--spec", help="schedule spec as a JSON object string")
        p.add_argument("--preset", choices=sorted(PRESETS), help="named schedule preset")

    p = sub.add_parser("schedule-plot", help="dump lambda,pdf,survival,alpha,sigma as CSV")
    add_spec_args(p)
    p.add_argument("--lambda-min", type=float, default=-10.0)
    p.add_argument("--lambda-max", type=float, default=10.0)
    p.add_argument("--points", type=int, default=501)
    p.add_argument("--out", help="output CSV path (default: stdout)")
    p.set_defaults(func=cmd_schedule_plot)

    p = sub.add_parser("validate", help="run schedule self-consistency checks")
    add_spec_args(p)
    p.add_argument("--grid", type=int, default=10_000)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("sample-lambda", help="Monte-Carlo dump of intensity draws")
    add_spec_args(p)
    p.add_argument("--n", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="output CSV path (default: stdout)")
    p.set_defaults(func=cmd_sample_lambda)

    p = sub.add_parser("train", help="train the toy regressor from a JSON config")
    p.add_argument("config", help="path to a run-config JSON file")
    p.add_argument("--out-checkpoint", required=True, help="checkpoint blob path")
    p.add_argument("--out-trace", help="loss trace CSV path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="DDIM-sample from a checkpoint")
    p.add_argument("checkpoint", help="checkpoint blob path")
    add_spec_args(p)
    p.add_argument("--force-schedule", action="store_true",
                   help="allow sampling with a schedule other than the training one")
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--t-max", type=float, default=0.99)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-samples", help="samples CSV path (default: stdout)")
    p.add_argument("--out-plan", help="audit plan CSV path")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("compare", help="train several configs and score them")
    p.add_argument("configs", help="path to a JSON array of run configs")
    p.add_argument("--out-csv", help="long-format results CSV path")
    p.add_argument("--out-summary", help="summary JSON path")
    p.set_defaults(func=cmd_compare)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_BAD_INPUT if e.code not in (0, None) else EXIT_OK
    return args.func(args)


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
