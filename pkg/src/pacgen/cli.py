"""Command-line driver: run, sweep, eval, report.

Configs are single JSON documents with an explicit schema version; unknown
keys are errors so typos cannot silently corrupt an experiment. The
PACGEN_WORKERS environment variable sets the worker count for every
subcommand (default 1).
"""

import argparse
import csv
import glob
import json
import os
import sys
from dataclasses import replace

import numpy as np

from .bound import SimplexDistribution, report_from_dict
from .envsim import PolicyParams
from .pipeline import (
    CONFIG_SCHEMA,
    SWEEP_AXES,
    config_from_dict,
    estimate_true_cost,
    run_pipeline,
    sweep,
)
from .serialize import dump_json, load_json, round_floats, sig12

_DIST_KEYS = {"n_obstacles", "r_min", "r_max", "x_min", "x_max", "y_min", "y_max", "role"}
_ES_KEYS = {"population_size", "sigma", "learning_rate", "iterations"}
_SOLVER_KEYS = {"max_iters", "step_size", "tolerance", "floor"}
_TOP_KEYS = {
    "schema_version": None,
    "real": _DIST_KEYS,
    "generative": _DIST_KEYS,
    "N": None,
    "m": None,
    "l": None,
    "K": None,
    "delta": None,
    "es": _ES_KEYS,
    "solver": _SOLVER_KEYS,
    "master_seed": None,
    "n_eval": None,
    "output_dir": None,
}

REPORT_COLUMNS = ["N", "n_obstacles_gen", "seed", "bound", "empirical", "kl", "true_cost_estimate", "stderr"]


class ConfigError(ValueError):
    pass


def _validate_keys(doc):
    for key, value in doc.items():
        if key not in _TOP_KEYS:
            raise ConfigError(f"unknown key {key!r}")
        allowed = _TOP_KEYS[key]
        if allowed is not None:
            if not isinstance(value, dict):
                raise ConfigError(f"{key} must be a table of settings")
            for sub in value:
                if sub not in allowed:
                    raise ConfigError(f"unknown key {key!r}.{sub!r}")


def _apply_override(doc, spec):
    if "=" not in spec:
        raise ConfigError(f"override {spec!r} is not of the form key=value")
    key, raw = spec.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    target = doc
    parts = key.split(".")
    for part in parts[:-1]:
        target = target.setdefault(part, {})
        if not isinstance(target, dict):
            raise ConfigError(f"override {key!r} descends into a non-table value")
    target[parts[-1]] = value


def parse_config(path, overrides=()):
    """Load, override, and validate an experiment config document."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a JSON object")
    doc.setdefault("schema_version", CONFIG_SCHEMA)
    for spec in overrides:
        _apply_override(doc, spec)
    _validate_keys(doc)
    for required in ("N", "real", "generative"):
        if required not in doc:
            raise ConfigError(f"config is missing required key {required!r}")
    try:
        return config_from_dict(doc)
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigError(str(exc)) from exc


def _n_workers():
    raw = os.environ.get("PACGEN_WORKERS", "1")
    try:
        n = int(raw)
    except ValueError as exc:
        raise ConfigError(f"PACGEN_WORKERS must be an integer, got {raw!r}") from exc
    if n < 1:
        raise ConfigError(f"PACGEN_WORKERS must be >= 1, got {n}")
    return n


def _load_run_dir(run_dir):
    config = config_from_dict(load_json(os.path.join(run_dir, "config.json")))
    posterior_doc = load_json(os.path.join(run_dir, "posterior.json"))
    if posterior_doc.get("schema_version") != "pacgen_posterior_v1":
        raise ValueError(f"unrecognized posterior schema in {run_dir}")
    posterior = SimplexDistribution(np.asarray(posterior_doc["weights"]))
    policy_paths = sorted(glob.glob(os.path.join(run_dir, "policies", "policy_*.json")))
    policies = []
    for p in policy_paths:
        doc = load_json(p)
        if doc.get("schema_version") != "pacgen_policy_v1":
            raise ValueError(f"unrecognized policy schema in {p}")
        policies.append(PolicyParams(np.asarray(doc["theta"])))
    if len(policies) != posterior.m:
        raise ValueError(f"{len(policies)} policy files vs posterior of size {posterior.m}")
    return config, posterior, policies


def _report_row(report_doc, eval_doc=None):
    true_cost = report_doc.get("true_cost")
    stderr = report_doc.get("true_cost_stderr")
    if eval_doc is not None:
        true_cost = eval_doc["true_cost"]
        stderr = eval_doc["true_cost_stderr"]
    return {
        "N": report_doc["N"],
        "n_obstacles_gen": report_doc["n_obstacles_gen"],
        "seed": report_doc["master_seed"],
        "bound": repr(float(report_doc["pac_bound"])),
        "empirical": repr(float(report_doc["empirical_cost"])),
        "kl": repr(float(report_doc["kl"])),
        "true_cost_estimate": "" if true_cost is None else repr(float(true_cost)),
        "stderr": "" if stderr is None else repr(float(stderr)),
    }


def _summary_lines(report_doc, eval_doc=None):
    lines = [
        f"certified bound      {report_doc['pac_bound']}",
        f"empirical cost       {report_doc['empirical_cost']}",
        f"kl                   {report_doc['kl']}",
        f"regularizer          {report_doc['regularizer']}",
        f"N={report_doc['N']} m={report_doc['m']} l={report_doc['l']} K={report_doc['K']} delta={report_doc['delta']} seed={report_doc['master_seed']}",
    ]
    true_cost = report_doc.get("true_cost")
    stderr = report_doc.get("true_cost_stderr")
    if eval_doc is not None:
        true_cost, stderr = eval_doc["true_cost"], eval_doc["true_cost_stderr"]
    if true_cost is not None:
        lines.append(f"true cost estimate   {true_cost} (stderr {stderr})")
    return lines


def render_report(run_dir, out_csv=None):
    """Summarize persisted artifacts; never re-simulates.

    For a single run directory the summary covers its report.json (plus
    eval.json if present); for a sweep directory every cell appears as one
    CSV row, failed cells as blank rows. Returns (summary text, rows).
    """
    sweep_path = os.path.join(run_dir, "sweep.csv")
    rows = []
    if os.path.exists(sweep_path):
        with open(sweep_path, newline="") as fh:
            cells = list(csv.DictReader(fh))
        lines = [f"sweep of {len(cells)} cells"]
        for cell in cells:
            report_path = os.path.join(cell["cell_dir"], "report.json")
            if cell["status"] == "ok" and os.path.exists(report_path):
                report_doc = load_json(report_path)
                eval_path = os.path.join(cell["cell_dir"], "eval.json")
                eval_doc = load_json(eval_path) if os.path.exists(eval_path) else None
                rows.append(_report_row(report_doc, eval_doc))
                lines.append(
                    f"  {cell['axis']}={cell['axis_value']} seed={cell['seed']}: bound {report_doc['pac_bound']}"
                )
            else:
                rows.append({c: "" for c in REPORT_COLUMNS})
                lines.append(f"  {cell['axis']}={cell['axis_value']} seed={cell['seed']}: FAILED {cell['error']}")
    else:
        report_path = os.path.join(run_dir, "report.json")
        if not os.path.exists(report_path):
            raise FileNotFoundError(f"{run_dir} contains neither report.json nor sweep.csv")
        report_doc = load_json(report_path)
        report_from_dict(report_doc)  # schema validation
        eval_path = os.path.join(run_dir, "eval.json")
        eval_doc = load_json(eval_path) if os.path.exists(eval_path) else None
        rows.append(_report_row(report_doc, eval_doc))
        lines = _summary_lines(report_doc, eval_doc)
    if out_csv:
        with open(out_csv, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS)
            writer.writeheader()
            writer.writerows(rows)
    return "\n".join(lines), rows


def _cmd_run(args):
    config = parse_config(args.config, args.set or [])
    if args.out:
        config = replace(config, output_dir=args.out)
    report = run_pipeline(config, n_workers=_n_workers())
    print(f"run dir: {config.output_dir}")
    for line in _summary_lines(round_floats(report.to_dict())):
        print(line)
    return 0


def _cmd_sweep(args):
    config = parse_config(args.config, args.set or [])
    values = [int(v) for v in args.values.split(",") if v != ""]
    seeds = [int(s) for s in args.seeds.split(",") if s != ""]
    out = args.out or f"{config.output_dir}-sweep"
    cells = sweep(config, args.axis, values, seeds, out, n_workers=_n_workers())
    failures = [c for c in cells if c.report is None]
    print(f"sweep dir: {out} ({len(cells)} cells, {len(failures)} failed)")
    for cell in cells:
        if cell.report is None:
            print(f"  {cell.axis}={cell.value} seed={cell.seed}: FAILED {cell.error}")
        else:
            print(f"  {cell.axis}={cell.value} seed={cell.seed}: bound {sig12(cell.report.pac_bound)}")
    return 1 if failures else 0


def _cmd_eval(args):
    config, posterior, policies = _load_run_dir(args.run_dir)
    result = estimate_true_cost(
        posterior,
        policies,
        config.real,
        args.n_eval,
        config.master_seed,
        config.horizon,
        n_workers=_n_workers(),
    )
    eval_doc = {
        "schema_version": "pacgen_eval_v1",
        "true_cost": result.estimate,
        "true_cost_stderr": result.standard_error,
        "n_eval": result.n_eval,
        "stderr_defined": result.stderr_defined,
    }
    dump_json(os.path.join(args.run_dir, "eval.json"), eval_doc, round12=False)
    print(f"true cost estimate   {sig12(result.estimate)} (stderr {sig12(result.standard_error)}, n={result.n_eval})")
    return 0


def _cmd_report(args):
    summary, _ = render_report(args.run_dir, args.out)
    print(summary)
    if args.out:
        print(f"wrote {args.out}")
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(prog="pacgen", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute one experiment")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--set", action="append", metavar="KEY=VALUE")
    p_run.add_argument("--out", help="override the output directory")
    p_run.set_defaults(fn=_cmd_run)

    p_sweep = sub.add_parser("sweep", help="grid of runs over one axis")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument("--axis", required=True, choices=SWEEP_AXES)
    p_sweep.add_argument("--values", required=True, help="comma-separated integers")
    p_sweep.add_argument("--seeds", required=True, help="comma-separated integers")
    p_sweep.add_argument("--set", action="append", metavar="KEY=VALUE")
    p_sweep.add_argument("--out", help="sweep output directory")
    p_sweep.set_defaults(fn=_cmd_sweep)

    p_eval = sub.add_parser("eval", help="held-out evaluation of a finished run")
    p_eval.add_argument("--run-dir", required=True)
    p_eval.add_argument("--n-eval", type=int, required=True)
    p_eval.set_defaults(fn=_cmd_eval)

    p_report = sub.add_parser("report", help="summarize persisted artifacts")
    p_report.add_argument("--run-dir", required=True)
    p_report.add_argument("--out", help="write a tidy CSV here")
    p_report.set_defaults(fn=_cmd_report)

    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
