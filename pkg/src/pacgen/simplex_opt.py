"""Posterior optimization over the probability simplex.

Minimizes the certificate objective F(q) = quad_pac_bound(C.q, reg(KL(q||q0)))
with exponentiated-gradient mirror descent, plus a grid-enumeration oracle
used to cross-check the solver on small problems.

F is a pointwise minimum of convex surrogates (see surrogate_objective) but
is not itself convex, so the solver only accepts steps that decrease the
objective and the oracle stays the ground truth for global quality.
"""

import math
from dataclasses import dataclass

import numpy as np

from .bound import SimplexDistribution, empirical_posterior_cost, kl_discrete, quad_pac_bound, regularizer

# Weights are clamped here before gradient evaluation; keeps logs finite
# without noticeably moving the evaluation point.
WEIGHT_FLOOR = 1e-12

# Convergence is declared when the objective decrease over this many
# iterations falls below SolverConfig.tolerance.
STALL_WINDOW = 10

# Step sizes below this mean no descent direction is left at float64.
_MIN_STEP = 1e-18


@dataclass(frozen=True, eq=False)
class RepProblem:
    """One posterior-optimization instance."""

    cost_vector: np.ndarray
    prior: SimplexDistribution
    n_envs: int
    delta: float

    def __post_init__(self):
        c = np.asarray(self.cost_vector, dtype=np.float64)
        if c.ndim != 1 or c.size < 1:
            raise ValueError("cost_vector must be a nonempty 1-d vector")
        if not np.all(np.isfinite(c)) or np.any(c < 0.0) or np.any(c > 1.0):
            raise ValueError("cost entries must lie in [0, 1]")
        if not isinstance(self.prior, SimplexDistribution):
            raise TypeError("prior must be a SimplexDistribution")
        if c.size != self.prior.m:
            raise ValueError(f"dimension mismatch: {c.size} costs vs prior of size {self.prior.m}")
        if np.any(self.prior.weights <= 0.0):
            raise ValueError("prior must have full support")
        if not (isinstance(self.n_envs, (int, np.integer)) and self.n_envs >= 1):
            raise ValueError(f"n_envs must be a positive integer, got {self.n_envs!r}")
        if not 0.0 < self.delta < 1.0:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta!r}")
        c = c.copy()
        c.flags.writeable = False
        object.__setattr__(self, "cost_vector", c)
        object.__setattr__(self, "n_envs", int(self.n_envs))
        object.__setattr__(self, "delta", float(self.delta))

    @property
    def m(self):
        return int(self.cost_vector.size)


@dataclass(frozen=True)
class SolverConfig:
    max_iters: int = 50_000
    step_size: float = 0.1
    tolerance: float = 1e-10
    floor: float = WEIGHT_FLOOR

    def __post_init__(self):
        if not (isinstance(self.max_iters, (int, np.integer)) and self.max_iters >= 1):
            raise ValueError(f"max_iters must be a positive integer, got {self.max_iters!r}")
        if not self.step_size > 0.0:
            raise ValueError(f"step_size must be positive, got {self.step_size!r}")
        if not self.tolerance > 0.0:
            raise ValueError(f"tolerance must be positive, got {self.tolerance!r}")
        if not self.floor > 0.0:
            raise ValueError(f"floor must be positive, got {self.floor!r}")


@dataclass(frozen=True, eq=False)
class SolveResult:
    posterior: SimplexDistribution
    objective: float
    iterations: int
    converged: bool


def _objective_on_weights(problem, w):
    # Same arithmetic as rep_objective, skipping dataclass validation so the
    # solver loop stays cheap. w must be a simplex point.
    support = w > 0.0
    ws = w[support]
    kl = max(float(np.sum(ws * np.log(ws / problem.prior.weights[support]))), 0.0)
    c = float(np.dot(problem.cost_vector, w))
    r = (kl + math.log(2.0 * math.sqrt(problem.n_envs) / problem.delta)) / (2.0 * problem.n_envs)
    return (math.sqrt(c + r) + math.sqrt(r)) ** 2


def rep_objective(problem, q):
    """Certificate value at posterior q."""
    if q.m != problem.m:
        raise ValueError(f"dimension mismatch: posterior of size {q.m} vs problem of size {problem.m}")
    c = empirical_posterior_cost(problem.cost_vector, q)
    r = regularizer(kl_discrete(q, problem.prior), problem.n_envs, problem.delta)
    return quad_pac_bound(c, r)


def surrogate_objective(problem, q, lam):
    """Convex upper surrogate G_lam(q) = (1+lam) C.q + (2+lam+1/lam) reg(q).

    min over lam > 0 recovers rep_objective (attained at
    lam = sqrt(reg / (C.q + reg))), and each fixed-lam slice is convex in q,
    which is the structure the descent solver exploits.
    """
    if not lam > 0.0:
        raise ValueError(f"lam must be positive, got {lam!r}")
    c = empirical_posterior_cost(problem.cost_vector, q)
    r = regularizer(kl_discrete(q, problem.prior), problem.n_envs, problem.delta)
    return (1.0 + lam) * c + (2.0 + lam + 1.0 / lam) * r


def rep_gradient(problem, q, floor=WEIGHT_FLOOR):
    """Gradient of the certificate objective at q, weights clamped to >= floor.

    With c = C.q, R = (KL + ln(2 sqrt(N)/delta)) / (2N), s = sqrt(c + R),
    t = sqrt(R) and r_i = (ln(q_i / q0_i) + 1) / (2N):

        dF/dq_i = (s + t) * ((C_i + r_i) / s + r_i / t)

    t > 0 always holds because delta < 1 < 2 sqrt(N).
    """
    if q.m != problem.m:
        raise ValueError(f"dimension mismatch: posterior of size {q.m} vs problem of size {problem.m}")
    if not floor > 0.0:
        raise ValueError("floor must be positive; the gradient is undefined on the boundary")
    w = np.maximum(q.weights, floor)
    log_ratio = np.log(w / problem.prior.weights)
    kl = float(np.dot(w, log_ratio))
    c = float(np.dot(problem.cost_vector, w))
    two_n = 2.0 * problem.n_envs
    big_r = (kl + math.log(2.0 * math.sqrt(problem.n_envs) / problem.delta)) / two_n
    s = math.sqrt(c + big_r)
    t = math.sqrt(big_r)
    r_vec = (log_ratio + 1.0) / two_n
    return (s + t) * ((problem.cost_vector + r_vec) / s + r_vec / t)


def optimize_posterior(problem, config=None, on_iterate=None):
    """Minimize the certificate objective by exponentiated-gradient descent.

    Multiplicative updates keep every iterate strictly inside the simplex;
    a step is halved until it does not increase the objective, so the final
    value never exceeds the objective at the prior. on_iterate, if given,
    receives each accepted weight vector (for instrumentation).
    """
    if config is None:
        config = SolverConfig()
    if config.floor > 1.0 / problem.m:
        raise ValueError(f"floor {config.floor!r} exceeds 1/m for m={problem.m}")
    w = problem.prior.weights.copy()
    f = _objective_on_weights(problem, w)
    history = [f]
    iterations = 0
    converged = False
    for it in range(1, config.max_iters + 1):
        iterations = it
        grad = rep_gradient(problem, SimplexDistribution(w), config.floor)
        grad = grad - grad.max()  # shift-invariant on the simplex; avoids exp overflow
        step = config.step_size
        improved = False
        while step >= _MIN_STEP:
            cand = w * np.exp(-step * grad)
            cand = cand / cand.sum()
            fc = _objective_on_weights(problem, cand)
            if fc <= f:
                improved = True
                break
            step = 0.5 * step
        if not improved:
            converged = True
            break
        w, f = cand, fc
        history.append(f)
        if on_iterate is not None:
            on_iterate(w.copy())
        if len(history) > STALL_WINDOW and history[-1 - STALL_WINDOW] - f < config.tolerance:
            converged = True
            break
    posterior = SimplexDistribution(w)
    return SolveResult(posterior, rep_objective(problem, posterior), iterations, converged)


def _grid_compositions(total, parts):
    # All integer vectors of the given length summing to total, ascending
    # lexicographic order.
    if parts == 1:
        yield (total,)
        return
    for k in range(total + 1):
        for rest in _grid_compositions(total - k, parts - 1):
            yield (k,) + rest


def brute_force_posterior(problem, grid_step):
    """Exhaustive search over the simplex grid with spacing grid_step.

    Ground-truth oracle for small m; refuses m > 4 because the grid grows
    as (1/grid_step)^(m-1). Ties break toward the lowest lexicographic
    grid index. The reported iteration count is the number of grid points.
    """
    if problem.m > 4:
        raise ValueError(f"grid enumeration supports m <= 4, got m={problem.m}")
    if not 0.0 < grid_step <= 1.0:
        raise ValueError(f"grid_step must lie in (0, 1], got {grid_step!r}")
    n = round(1.0 / grid_step)
    if n < 1 or abs(n * grid_step - 1.0) > 1e-9:
        raise ValueError(f"1/grid_step must be an integer, got {grid_step!r}")
    grid = np.array(list(_grid_compositions(n, problem.m)), dtype=np.float64) / n
    c = grid @ problem.cost_vector
    ratio = grid / problem.prior.weights
    with np.errstate(divide="ignore", invalid="ignore"):
        # 0 * log(0) rows produce nan before the where; masked to the 0 branch.
        logs = np.log(ratio)
        terms = np.where(grid > 0.0, grid * logs, 0.0)
    kl = np.maximum(terms.sum(axis=1), 0.0)
    two_n = 2.0 * problem.n_envs
    big_r = (kl + math.log(2.0 * math.sqrt(problem.n_envs) / problem.delta)) / two_n
    objectives = (np.sqrt(c + big_r) + np.sqrt(big_r)) ** 2
    best = int(np.argmin(objectives))  # argmin returns the first minimum: lowest lex index
    posterior = SimplexDistribution(grid[best])
    return SolveResult(posterior, rep_objective(problem, posterior), grid.shape[0], True)
