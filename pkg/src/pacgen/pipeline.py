"""End-to-end orchestration: sample, train, score, optimize, certify.

A run is a pure function of its config. Randomness flows from the master
seed through named substreams ("REAL", "GEN", "ES", "EVAL"), stage work is
split into pure tasks writing to pre-indexed slots, and floating-point
aggregation happens in fixed index order in the driver process, so the
emitted artifacts are bitwise independent of worker count.
"""

import csv
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .bound import BoundReport, SimplexDistribution, empirical_posterior_cost, kl_discrete, quad_pac_bound, regularizer
from .envsim import (
    DEFAULT_HORIZON,
    DistributionSpec,
    distribution_from_dict,
    rollout_costs,
    sample_environment,
    sample_synthetic_datasets,
)
from .es import EsConfig, es_config_from_dict, pushforward_policies
from .seeds import STREAM_SCHEME, derive_rng, derive_seed
from .serialize import dump_json, short_digest
from .simplex_opt import RepProblem, SolverConfig, optimize_posterior

CONFIG_SCHEMA = "pacgen_config_v1"

SWEEP_AXES = ("n_obstacles_gen", "N")


class PipelineError(RuntimeError):
    """Stage failure; the stage tag prefixes the message."""

    def __init__(self, stage, message):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


@dataclass(frozen=True)
class ExperimentConfig:
    real: DistributionSpec
    generative: DistributionSpec
    n_envs: int
    m: int = 50
    l: int = 50
    horizon: int = DEFAULT_HORIZON
    delta: float = 0.01
    es: EsConfig = EsConfig()
    solver: SolverConfig = SolverConfig()
    master_seed: int = 0
    n_eval: int = 0
    output_dir: str = "pacgen-run"

    def __post_init__(self):
        if not isinstance(self.real, DistributionSpec) or self.real.role != "real":
            raise ValueError("real must be a DistributionSpec with role 'real'")
        if not isinstance(self.generative, DistributionSpec) or self.generative.role != "generative":
            raise ValueError("generative must be a DistributionSpec with role 'generative'")
        for name in ("n_envs", "m", "l", "horizon"):
            v = getattr(self, name)
            if not (isinstance(v, (int, np.integer)) and v >= 1):
                raise ValueError(f"{name} must be a positive integer, got {v!r}")
            object.__setattr__(self, name, int(v))
        if not 0.0 < self.delta < 1.0:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta!r}")
        if not (isinstance(self.master_seed, (int, np.integer)) and 0 <= self.master_seed < 2 ** 64):
            raise ValueError(f"master_seed must fit in 64 unsigned bits, got {self.master_seed!r}")
        if not (isinstance(self.n_eval, (int, np.integer)) and self.n_eval >= 0):
            raise ValueError(f"n_eval must be a nonnegative integer, got {self.n_eval!r}")
        if not isinstance(self.es, EsConfig):
            raise TypeError("es must be an EsConfig")
        if not isinstance(self.solver, SolverConfig):
            raise TypeError("solver must be a SolverConfig")
        if not isinstance(self.output_dir, (str, os.PathLike)):
            raise TypeError("output_dir must be a path")

    def to_dict(self):
        es = self.es.to_dict()
        es.pop("seed")  # training streams derive from master_seed
        return {
            "schema_version": CONFIG_SCHEMA,
            "real": self.real.to_dict(),
            "generative": self.generative.to_dict(),
            "N": self.n_envs,
            "m": self.m,
            "l": self.l,
            "K": self.horizon,
            "delta": self.delta,
            "es": es,
            "solver": {
                "max_iters": self.solver.max_iters,
                "step_size": self.solver.step_size,
                "tolerance": self.solver.tolerance,
                "floor": self.solver.floor,
            },
            "master_seed": self.master_seed,
            "n_eval": self.n_eval,
            "output_dir": str(self.output_dir),
        }

    @property
    def digest(self):
        return short_digest(self.to_dict(), round12=False)


def config_from_dict(d):
    if d.get("schema_version") != CONFIG_SCHEMA:
        raise ValueError(f"unrecognized config schema: {d.get('schema_version')!r}")
    real = dict(d["real"])
    real.setdefault("role", "real")
    gen = dict(d["generative"])
    gen.setdefault("role", "generative")
    es = dict(d.get("es", {}))
    es.setdefault("seed", 0)
    solver = d.get("solver", {})
    return ExperimentConfig(
        real=distribution_from_dict(real),
        generative=distribution_from_dict(gen),
        n_envs=d["N"],
        m=d.get("m", 50),
        l=d.get("l", 50),
        horizon=d.get("K", DEFAULT_HORIZON),
        delta=d.get("delta", 0.01),
        es=es_config_from_dict(es),
        solver=SolverConfig(**solver),
        master_seed=d.get("master_seed", 0),
        n_eval=d.get("n_eval", 0),
        output_dir=d.get("output_dir", "pacgen-run"),
    )


@dataclass(frozen=True, eq=False)
class CostMatrix:
    """Rollout costs: row = real environment, column = trained policy.

    Column labels are the digests of the datasets the policies were trained
    from, so the persisted matrix links back to the synthetic store.
    """

    entries: np.ndarray
    env_digests: tuple
    column_digests: tuple

    def __post_init__(self):
        e = np.asarray(self.entries, dtype=np.float64)
        if e.ndim != 2 or e.size == 0:
            raise ValueError("entries must be a nonempty N x m matrix")
        if not np.all(np.isfinite(e)) or np.any(e < 0.0) or np.any(e > 1.0):
            raise ValueError("entries must lie in [0, 1]")
        if len(self.env_digests) != e.shape[0] or len(self.column_digests) != e.shape[1]:
            raise ValueError("digest labels must match the matrix shape")
        e = e.copy()
        e.flags.writeable = False
        object.__setattr__(self, "entries", e)
        object.__setattr__(self, "env_digests", tuple(self.env_digests))
        object.__setattr__(self, "column_digests", tuple(self.column_digests))

    @property
    def cost_vector(self):
        return self.entries.mean(axis=0)


def _matrix_rows(args):
    envs, thetas, horizon = args
    return np.vstack([rollout_costs(env, thetas, horizon) for env in envs])


def _chunk_slices(n, n_chunks):
    sizes = [n // n_chunks + (1 if i < n % n_chunks else 0) for i in range(n_chunks)]
    out = []
    start = 0
    for size in sizes:
        if size:
            out.append(slice(start, start + size))
        start += size
    return out


def build_cost_matrix(policies, real_envs, horizon=DEFAULT_HORIZON, n_workers=1, column_digests=None):
    """Score every policy in every real environment.

    Entry (i, j) equals rollout_cost(real_envs[i], policies[j], horizon);
    rows are computed in pre-indexed chunks so the result is identical for
    any worker count. column_digests labels the columns (the pipeline
    passes the training-dataset digests); the default labels columns by
    the policy parameters themselves.
    """
    if not policies or not real_envs:
        raise ValueError("need at least one policy and one environment")
    thetas = np.vstack([p.theta for p in policies])
    entries = np.empty((len(real_envs), len(policies)))
    slices = _chunk_slices(len(real_envs), max(1, min(n_workers, len(real_envs))))
    tasks = [(list(real_envs[s]), thetas, horizon) for s in slices]
    try:
        if n_workers > 1 and len(slices) > 1:
            with ProcessPoolExecutor(max_workers=n_workers) as pool:
                for s, rows in zip(slices, pool.map(_matrix_rows, tasks)):
                    entries[s] = rows
        else:
            for s, task in zip(slices, tasks):
                entries[s] = _matrix_rows(task)
    except Exception as exc:
        raise PipelineError("cost-matrix", str(exc)) from exc
    env_digests = tuple(e.digest for e in real_envs)
    if column_digests is None:
        column_digests = tuple(short_digest({"theta": list(map(float, p.theta))}, round12=False) for p in policies)
    return CostMatrix(entries, env_digests, tuple(column_digests))


@dataclass(frozen=True)
class EvalResult:
    estimate: float
    standard_error: float
    n_eval: int
    stderr_defined: bool


def _eval_values(args):
    real_dist_doc, seed, indices, thetas, weights, horizon = args
    dist = distribution_from_dict(real_dist_doc)
    out = np.empty(len(indices))
    for k, i in enumerate(indices):
        env = sample_environment(dist, derive_rng(seed, "EVAL", i))
        out[k] = float(np.dot(rollout_costs(env, thetas, horizon), weights))
    return out


def estimate_true_cost(posterior, policies, real_dist, n_eval, eval_seed, horizon=DEFAULT_HORIZON, n_workers=1):
    """Held-out estimate of the deployed posterior's expected cost.

    Samples n_eval fresh environments from the "EVAL" streams (disjoint
    from every training stream) and takes the exact posterior expectation
    sum_j q_j cost(env, theta_j) in each. Returns the mean and its standard
    error; with n_eval=1 the error is reported as zero and flagged
    undefined.
    """
    if not (isinstance(n_eval, (int, np.integer)) and n_eval >= 1):
        raise ValueError(f"n_eval must be a positive integer, got {n_eval!r}")
    if len(policies) != posterior.m:
        raise ValueError(f"{len(policies)} policies vs posterior of size {posterior.m}")
    thetas = np.vstack([p.theta for p in policies])
    weights = posterior.weights
    dist_doc = real_dist.to_dict()
    values = np.empty(n_eval)
    slices = _chunk_slices(n_eval, max(1, min(n_workers, n_eval)))
    tasks = [(dist_doc, eval_seed, list(range(s.start, s.stop)), thetas, weights, horizon) for s in slices]
    if n_workers > 1 and len(slices) > 1:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            for s, vals in zip(slices, pool.map(_eval_values, tasks)):
                values[s] = vals
    else:
        for s, task in zip(slices, tasks):
            values[s] = _eval_values(task)
    estimate = float(values.mean())
    if n_eval > 1:
        stderr = float(values.std(ddof=1) / np.sqrt(n_eval))
        return EvalResult(estimate, stderr, int(n_eval), True)
    return EvalResult(estimate, 0.0, 1, False)


def _write_cost_matrix_csv(path, matrix):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["env_digest"] + list(matrix.column_digests))
        for digest, row in zip(matrix.env_digests, matrix.entries):
            writer.writerow([digest] + [repr(float(v)) for v in row])


def read_cost_matrix_csv(path):
    """Parse the persisted cost matrix back to (entries, env_digests, column_digests)."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "env_digest":
        raise ValueError(f"{path} is not a cost-matrix CSV")
    column_digests = tuple(rows[0][1:])
    env_digests = tuple(r[0] for r in rows[1:])
    entries = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    return entries, env_digests, column_digests


def _stage(tag, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except PipelineError:
        raise
    except Exception as exc:
        raise PipelineError(tag, str(exc)) from exc


def run_pipeline(config, n_workers=1):
    """Execute one full experiment and write all artifacts.

    Stages: sample real environments, sample synthetic datasets, train the
    policy set, build the cost matrix, optimize the posterior, optionally
    evaluate on held-out environments, and write the certified report.
    Artifacts are flushed as each stage completes so a failed run leaves
    its partial state behind for diagnosis.
    """
    out = str(config.output_dir)
    os.makedirs(out, exist_ok=True)
    os.makedirs(os.path.join(out, "envs"), exist_ok=True)
    os.makedirs(os.path.join(out, "policies"), exist_ok=True)
    dump_json(os.path.join(out, "config.json"), config.to_dict(), round12=False)

    real_envs = _stage(
        "sample-real",
        lambda: [sample_environment(config.real, derive_rng(config.master_seed, "REAL", i)) for i in range(config.n_envs)],
    )
    real_doc = {
        "schema_version": "pacgen_envset_v1",
        "role": "real",
        "environments": [e.to_dict() for e in real_envs],
    }
    dump_json(os.path.join(out, "envs", "real.json"), real_doc, round12=False)

    datasets = _stage(
        "sample-synthetic",
        sample_synthetic_datasets,
        config.generative,
        config.m,
        config.l,
        config.master_seed,
    )
    synth_doc = {
        "schema_version": "pacgen_datasets_v1",
        "role": "generative",
        "datasets": [
            {"seed": ds.seed, "dist_digest": ds.dist_digest, "environments": [e.to_dict() for e in ds.environments]}
            for ds in datasets
        ],
    }
    dump_json(os.path.join(out, "envs", "synthetic.json"), synth_doc, round12=False)

    es_config = replace(config.es, seed=config.master_seed)
    policies = _stage("train", pushforward_policies, datasets, es_config, config.horizon, n_workers)
    for i, policy in enumerate(policies):
        # theta lands at 12 significant digits; exact reconstruction goes
        # through the recorded seed provenance, not the decimals.
        doc = {
            "schema_version": "pacgen_policy_v1",
            "index": i,
            "dataset_digest": datasets[i].digest,
            "es": es_config.to_dict(),
            "seed_provenance": {
                "scheme": STREAM_SCHEME,
                "master_seed": config.master_seed,
                "stream": ["ES", i],
                "derived_seed": derive_seed(config.master_seed, "ES", i),
            },
            "theta": [float(v) for v in policy.theta],
        }
        dump_json(os.path.join(out, "policies", f"policy_{i:03d}.json"), doc, round12=True)

    matrix = _stage(
        "cost-matrix",
        build_cost_matrix,
        policies,
        real_envs,
        config.horizon,
        n_workers,
        tuple(ds.digest for ds in datasets),
    )
    _write_cost_matrix_csv(os.path.join(out, "cost_matrix.csv"), matrix)

    prior = SimplexDistribution.uniform(config.m)
    problem = RepProblem(matrix.cost_vector, prior, config.n_envs, config.delta)
    result = _stage("solve", optimize_posterior, problem, config.solver)
    posterior_doc = {
        "schema_version": "pacgen_posterior_v1",
        "weights": [float(w) for w in result.posterior.weights],
        "prior": "uniform",
        "objective": result.objective,
        "iterations": result.iterations,
        "converged": result.converged,
    }
    dump_json(os.path.join(out, "posterior.json"), posterior_doc, round12=False)

    eval_result = None
    if config.n_eval > 0:
        eval_result = _stage(
            "eval",
            estimate_true_cost,
            result.posterior,
            policies,
            config.real,
            config.n_eval,
            config.master_seed,
            config.horizon,
            n_workers,
        )
        eval_doc = {
            "schema_version": "pacgen_eval_v1",
            "true_cost": eval_result.estimate,
            "true_cost_stderr": eval_result.standard_error,
            "n_eval": eval_result.n_eval,
            "stderr_defined": eval_result.stderr_defined,
        }
        dump_json(os.path.join(out, "eval.json"), eval_doc, round12=False)

    report = _stage("report", _assemble_report, config, matrix, result, real_envs, eval_result)
    dump_json(os.path.join(out, "report.json"), report.to_dict(), round12=True)
    return report


def _assemble_report(config, matrix, result, real_envs, eval_result):
    cost_vector = matrix.cost_vector
    empirical = empirical_posterior_cost(cost_vector, result.posterior)
    kl = kl_discrete(result.posterior, SimplexDistribution.uniform(config.m))
    reg = regularizer(kl, config.n_envs, config.delta)
    raw = quad_pac_bound(empirical, reg)
    return BoundReport(
        empirical_cost=empirical,
        kl=kl,
        regularizer=reg,
        raw_bound=raw,
        pac_bound=min(raw, 1.0),
        n_envs=config.n_envs,
        m=config.m,
        l=config.l,
        horizon=config.horizon,
        delta=config.delta,
        master_seed=config.master_seed,
        config_digest=config.digest,
        stream_scheme=STREAM_SCHEME,
        real_envs_digest=short_digest([e.digest for e in real_envs], round12=False),
        n_obstacles_real=config.real.n_obstacles,
        n_obstacles_gen=config.generative.n_obstacles,
        solver_iterations=result.iterations,
        solver_converged=result.converged,
        n_eval=0 if eval_result is None else eval_result.n_eval,
        true_cost=None if eval_result is None else eval_result.estimate,
        true_cost_stderr=None if eval_result is None else eval_result.standard_error,
        true_cost_stderr_defined=True if eval_result is None else eval_result.stderr_defined,
    )


@dataclass(frozen=True)
class SweepCell:
    axis: str
    value: int
    seed: int
    directory: str
    report: BoundReport = None
    error: str = None


def _cell_config(config, axis, value, seed, directory):
    if axis == "n_obstacles_gen":
        return replace(
            config,
            generative=replace(config.generative, n_obstacles=int(value)),
            master_seed=int(seed),
            output_dir=directory,
        )
    if axis == "N":
        return replace(config, n_envs=int(value), master_seed=int(seed), output_dir=directory)
    raise ValueError(f"axis must be one of {SWEEP_AXES}, got {axis!r}")


SWEEP_COLUMNS = [
    "axis",
    "axis_value",
    "seed",
    "status",
    "cell_dir",
    "N",
    "n_obstacles_gen",
    "pac_bound",
    "raw_bound",
    "empirical_cost",
    "kl",
    "regularizer",
    "true_cost",
    "true_cost_stderr",
    "real_envs_digest",
    "error",
]


def sweep(config, axis, values, seeds, sweep_dir, n_workers=1):
    """Grid of runs over one axis x seeds, sharing real data within a seed.

    Every cell of a seed uses that seed as master, so cells differing only
    in the generative axis see identical real environments. Cell failures
    are recorded and the sweep continues. Returns the cells in row order
    (seed-major) and writes sweep.csv.
    """
    if axis not in SWEEP_AXES:
        raise ValueError(f"axis must be one of {SWEEP_AXES}, got {axis!r}")
    if not values or not seeds:
        raise ValueError("need at least one axis value and one seed")
    os.makedirs(sweep_dir, exist_ok=True)
    cells = []
    for seed in seeds:
        for value in values:
            directory = os.path.join(sweep_dir, "cells", f"{axis}-{value}-seed-{seed}")
            try:
                cell_cfg = _cell_config(config, axis, value, seed, directory)
                report = run_pipeline(cell_cfg, n_workers=n_workers)
                cells.append(SweepCell(axis, int(value), int(seed), directory, report=report))
            except Exception as exc:
                cells.append(SweepCell(axis, int(value), int(seed), directory, error=str(exc)))
    _write_sweep_csv(os.path.join(sweep_dir, "sweep.csv"), cells)
    return cells


def _write_sweep_csv(path, cells):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS)
        writer.writeheader()
        for cell in cells:
            row = {
                "axis": cell.axis,
                "axis_value": cell.value,
                "seed": cell.seed,
                "status": "ok" if cell.report is not None else "error",
                "cell_dir": cell.directory,
                "error": cell.error or "",
            }
            if cell.report is not None:
                r = cell.report
                row.update(
                    {
                        "N": r.n_envs,
                        "n_obstacles_gen": r.n_obstacles_gen,
                        "pac_bound": repr(r.pac_bound),
                        "raw_bound": repr(r.raw_bound),
                        "empirical_cost": repr(r.empirical_cost),
                        "kl": repr(r.kl),
                        "regularizer": repr(r.regularizer),
                        "true_cost": "" if r.true_cost is None else repr(r.true_cost),
                        "true_cost_stderr": "" if r.true_cost_stderr is None else repr(r.true_cost_stderr),
                        "real_envs_digest": r.real_envs_digest,
                    }
                )
            writer.writerow(row)
