"""End-to-end acceptance gate: nine checks, one verdict line each.

These run the full pipeline many times and take roughly an hour on one
core. For the quick development loop deselect them with

    pytest -m "not acceptance"
"""

import math

import numpy as np
import pytest

from pacgen.bound import SimplexDistribution, kl_discrete, regularizer
from pacgen.envsim import (
    D_MAX,
    N_RAYS,
    N_THETA,
    DistributionSpec,
    EnvironmentSpec,
    RobotState,
    raycast_scan,
    rollout_costs,
    sample_environment,
)
from pacgen.es import EsConfig
from pacgen.pipeline import ExperimentConfig, run_pipeline, sweep
from pacgen.seeds import derive_rng
from pacgen.simplex_opt import (
    RepProblem,
    brute_force_posterior,
    optimize_posterior,
    rep_gradient,
    rep_objective,
)

pytestmark = pytest.mark.acceptance

REAL = DistributionSpec(n_obstacles=23, role="real")
GEN_MATCHED = DistributionSpec(n_obstacles=23, role="generative")
GEN_SPARSE = 5  # deliberately mismatched generative obstacle count
TRAINING = EsConfig(iterations=100)


def _verdict(label, ok, detail):
    print(f"[{'PASS' if ok else 'FAIL'}] {label}: {detail}", flush=True)
    assert ok, f"{label}: {detail}"


@pytest.fixture(scope="module")
def validity_trials(tmp_path_factory):
    """50 independent runs at delta=0.05 with held-out evaluation."""
    base = tmp_path_factory.mktemp("validity")
    reports = []
    for seed in range(50):
        config = ExperimentConfig(
            real=REAL,
            generative=GEN_MATCHED,
            n_envs=100,
            m=10,
            l=10,
            delta=0.05,
            es=TRAINING,
            master_seed=seed,
            n_eval=2000,
            output_dir=str(base / f"seed-{seed}"),
        )
        reports.append(run_pipeline(config))
    return reports


@pytest.fixture(scope="module")
def mismatch_sweep(tmp_path_factory):
    """Generative obstacle count {5, 23} against 23-obstacle reality."""
    out = tmp_path_factory.mktemp("mismatch")
    base = ExperimentConfig(
        real=REAL,
        generative=GEN_MATCHED,
        n_envs=200,
        m=10,
        l=10,
        delta=0.01,
        es=TRAINING,
        output_dir=str(out / "base"),
    )
    cells = sweep(base, "n_obstacles_gen", [GEN_SPARSE, 23], [0, 1, 2, 3, 4], str(out / "cells"))
    assert all(cell.report is not None for cell in cells), [cell.error for cell in cells]
    return cells


@pytest.fixture(scope="module")
def sample_count_sweep(tmp_path_factory):
    """Real sample count {100, 400, 1600} with the matched model."""
    out = tmp_path_factory.mktemp("nscale")
    base = ExperimentConfig(
        real=REAL,
        generative=GEN_MATCHED,
        n_envs=200,
        m=10,
        l=10,
        delta=0.01,
        es=TRAINING,
        output_dir=str(out / "base"),
    )
    cells = sweep(base, "N", [100, 400, 1600], [0, 1, 2, 3, 4], str(out / "cells"))
    assert all(cell.report is not None for cell in cells), [cell.error for cell in cells]
    return cells


@pytest.fixture(scope="module")
def determinism_runs(tmp_path_factory):
    """Bytes of report.json and cost_matrix.csv across repeats and workers."""
    out = tmp_path_factory.mktemp("determinism") / "run"
    config = ExperimentConfig(
        real=REAL,
        generative=GEN_MATCHED,
        n_envs=20,
        m=4,
        l=4,
        delta=0.05,
        es=EsConfig(iterations=20),
        master_seed=3,
        output_dir=str(out),
    )

    def snapshot():
        blobs = {}
        for name in ("report.json", "cost_matrix.csv"):
            with open(out / name, "rb") as fh:
                blobs[name] = fh.read()
        return blobs

    report = run_pipeline(config)
    first = snapshot()
    run_pipeline(config)
    second = snapshot()
    run_pipeline(config, n_workers=3)
    parallel = snapshot()
    return report, first, second, parallel


def test_certified_bound_holds_on_held_out_estimates(validity_trials):
    # Violation: the bound falls below the held-out estimate even after
    # granting the estimate three standard errors of sampling slack.
    violations = sum(
        1 for r in validity_trials if r.pac_bound < r.true_cost + 3.0 * r.true_cost_stderr
    )
    worst = min(r.pac_bound - r.true_cost for r in validity_trials)
    _verdict(
        "bound validity over 50 seeds",
        violations <= 2,
        f"{violations}/50 violations, worst bound-estimate gap {worst:.4f}",
    )


def test_solver_matches_grid_search_oracle():
    rng = np.random.default_rng(20260819)
    worst = 0.0
    for k in range(100):
        m = int(rng.integers(2, 4))
        n_envs = int(rng.choice([50, 500]))
        if rng.integers(2):
            prior = SimplexDistribution.uniform(m)
        else:
            prior = SimplexDistribution(rng.dirichlet(np.full(m, 4.0)))
        problem = RepProblem(rng.uniform(0.0, 1.0, m), prior, n_envs, 0.01)
        solved = optimize_posterior(problem)
        oracle = brute_force_posterior(problem, 0.005)
        worst = max(worst, abs(rep_objective(problem, solved.posterior) - oracle.objective))
    _verdict(
        "solver vs 0.005-grid oracle on 100 problems",
        worst <= 1e-4,
        f"worst objective gap {worst:.3e}",
    )


def test_matched_generative_model_gives_tighter_bounds(mismatch_sweep):
    by_value = {}
    for cell in mismatch_sweep:
        by_value.setdefault(cell.value, []).append(cell.report.pac_bound)
    matched = float(np.mean(by_value[23]))
    mismatched = float(np.mean(by_value[GEN_SPARSE]))
    _verdict(
        "matched generative model tightens the bound",
        matched < mismatched,
        f"mean bound {matched:.4f} (23 obstacles) vs {mismatched:.4f} ({GEN_SPARSE} obstacles)",
    )


def test_bounds_shrink_as_real_sample_count_grows(sample_count_sweep):
    # Complexity term at zero KL, frozen from 50-digit evaluation of
    # ln(2 sqrt(N) / delta) / (2 N).
    assert regularizer(0.0, 100, 0.01) == pytest.approx(0.03800451229771041, rel=1e-12)
    assert regularizer(0.0, 400, 0.01) == pytest.approx(0.010367562050127535, rel=1e-12)
    assert regularizer(0.0, 1600, 0.01) == pytest.approx(0.0028084990064568666, rel=1e-12)
    by_n = {}
    for cell in sample_count_sweep:
        by_n.setdefault(cell.value, []).append(cell.report.pac_bound)
    means = [float(np.mean(by_n[n])) for n in (100, 400, 1600)]
    ok = means[0] >= means[1] >= means[2]
    _verdict(
        "bound non-increasing in the real sample count",
        ok,
        "mean bounds " + " -> ".join(f"{v:.4f}" for v in means),
    )


def test_certified_bound_dominates_empirical_cost_everywhere(
    validity_trials, mismatch_sweep, sample_count_sweep, determinism_runs
):
    reports = list(validity_trials)
    reports += [cell.report for cell in mismatch_sweep]
    reports += [cell.report for cell in sample_count_sweep]
    reports.append(determinism_runs[0])
    for report in reports:
        assert report.raw_bound >= report.empirical_cost
        assert report.pac_bound >= report.empirical_cost
        assert report.pac_bound == min(report.raw_bound, 1.0)
    _verdict(
        "bound dominates empirical cost on every run",
        True,
        f"{len(reports)} pipeline runs checked exactly",
    )


def test_artifacts_are_bitwise_deterministic(determinism_runs):
    _, first, second, parallel = determinism_runs
    ok = first == second == parallel
    _verdict(
        "byte-identical artifacts across repeats and worker counts",
        ok,
        "report.json and cost_matrix.csv compared over 3 executions",
    )


def test_analytic_gradient_matches_finite_differences():
    rng = np.random.default_rng(915)
    h = 1e-6
    worst = 0.0
    for _ in range(100):
        m = int(rng.integers(2, 7))
        problem = RepProblem(
            rng.uniform(0.0, 1.0, m),
            SimplexDistribution(rng.dirichlet(np.full(m, 5.0))),
            int(rng.choice([50, 200, 1000])),
            float(rng.choice([0.01, 0.05, 0.1])),
        )
        w = rng.dirichlet(np.full(m, 5.0))
        w = np.maximum(w, 1e-4)
        w /= w.sum()
        q = SimplexDistribution(w)
        grad = rep_gradient(problem, q)
        # Only tangent components are observable on the simplex: step along
        # e_i - 1/m, renormalize, central-difference.
        for i in range(m):
            d = -np.full(m, 1.0 / m)
            d[i] += 1.0
            up = SimplexDistribution((w + h * d) / np.sum(w + h * d))
            dn = SimplexDistribution((w - h * d) / np.sum(w - h * d))
            fd = (rep_objective(problem, up) - rep_objective(problem, dn)) / (2.0 * h)
            analytic = float(np.dot(grad, d))
            worst = max(worst, abs(analytic - fd) / max(1.0, abs(fd)))
    _verdict(
        "analytic gradient vs central differences on 100 problems",
        worst <= 1e-4,
        f"worst relative error {worst:.3e}",
    )


def test_kl_never_increases_under_lookup_maps():
    rng = np.random.default_rng(4242)
    worst_gap = -np.inf
    worst_eq = 0.0
    for _ in range(100):
        m = int(rng.integers(3, 11))
        q = SimplexDistribution(rng.dirichlet(np.ones(m)))
        q0 = SimplexDistribution(rng.dirichlet(np.ones(m)))
        full = kl_discrete(q, q0)

        # Lookup table into k < m buckets: pigeonhole forces a collision.
        k = int(rng.integers(2, m))
        table = rng.integers(0, k, size=m)
        gq = np.zeros(k)
        gq0 = np.zeros(k)
        np.add.at(gq, table, q.weights)
        np.add.at(gq0, table, q0.weights)
        grouped = kl_discrete(SimplexDistribution(gq), SimplexDistribution(gq0))
        worst_gap = max(worst_gap, grouped - full)

        # Injective relabeling preserves the divergence exactly.
        perm = rng.permutation(m)
        relabeled = kl_discrete(
            SimplexDistribution(q.weights[perm]), SimplexDistribution(q0.weights[perm])
        )
        worst_eq = max(worst_eq, abs(relabeled - full))
    _verdict(
        "kl contraction under lookup maps, 100 pairs",
        worst_gap <= 1e-12 and worst_eq <= 1e-12,
        f"worst contraction slack {worst_gap:.3e}, worst injective drift {worst_eq:.3e}",
    )


def _dense_depth(env, x, y, angle, n_samples=50_000):
    # Brute-force oracle: march the ray, first strictly-inside sample wins.
    # Spacing 1e-4 m keeps the discretization far below the 1e-3 tolerance.
    t = np.linspace(0.0, D_MAX, n_samples)
    px = x + t * np.cos(angle)
    py = y + t * np.sin(angle)
    hit = np.abs(px) > env.corridor_half_width
    for ox, oy, r in env.obstacles:
        hit |= (px - ox) ** 2 + (py - oy) ** 2 < r * r
    idx = int(np.argmax(hit))
    if not hit[idx]:
        return D_MAX
    return float(t[idx])


def test_raycast_matches_dense_sampling_and_costs_quantize():
    rng = np.random.default_rng(777)
    fov_offsets = np.linspace(-math.pi / 3.0, math.pi / 3.0, N_RAYS)
    worst = 0.0
    for _ in range(1000):
        n_obs = int(rng.integers(0, 9))
        obstacles = np.column_stack(
            [
                rng.uniform(-4.5, 4.5, n_obs),
                rng.uniform(0.0, 14.0, n_obs),
                rng.uniform(0.05, 0.5, n_obs),
            ]
        )
        env = EnvironmentSpec(obstacles)
        # A sensor buried inside an obstacle reads the exit distance while
        # the marching oracle reads zero; keep poses in free space.
        while True:
            px, py = rng.uniform(-4.0, 4.0), rng.uniform(0.0, 14.0)
            if n_obs == 0 or np.all(
                np.hypot(obstacles[:, 0] - px, obstacles[:, 1] - py) > obstacles[:, 2] + 1e-6
            ):
                break
        state = RobotState(float(px), float(py), float(rng.uniform(-math.pi, math.pi)))
        scan = raycast_scan(env, state)
        ray = int(rng.integers(N_RAYS))
        oracle = _dense_depth(env, state.x, state.y, state.heading + fov_offsets[ray])
        worst = max(worst, abs(float(scan.depths[ray]) - oracle))
    _verdict(
        "raycast vs dense-sampling oracle on 1000 scenes",
        worst <= 1e-3,
        f"worst depth gap {worst:.2e} m",
    )

    grid = {1.0 - k / 12.0 for k in range(13)}
    off_grid = 0
    for i in range(100):
        env = sample_environment(REAL, derive_rng(31337, "quantization", i))
        thetas = rng.normal(0.0, 1.0, size=(100, N_THETA))
        costs = rollout_costs(env, thetas)
        off_grid += sum(1 for c in costs if float(c) not in grid)
    _verdict(
        "rollout costs on the 13-point grid for 10000 pairs",
        off_grid == 0,
        f"{off_grid} off-grid costs",
    )
