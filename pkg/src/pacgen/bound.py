"""Certificate arithmetic: empirical cost, KL divergence, regularizer, bound.

All quantities are plain float64 scalars or vectors, all logarithms are
natural, and every reduction runs in fixed index order so repeated calls
are bit-identical.
"""

import math
from dataclasses import dataclass, field

import numpy as np

# Tolerance on "weights sum to one" when validating simplex points.
SIMPLEX_ATOL = 1e-9


@dataclass(frozen=True, eq=False)
class SimplexDistribution:
    """Point on the probability simplex: nonnegative weights summing to 1."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 1 or w.size < 1:
            raise ValueError("weights must be a nonempty 1-d vector")
        if not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite")
        if np.any(w < 0.0):
            raise ValueError("weights must be nonnegative")
        total = float(w.sum())
        if abs(total - 1.0) > SIMPLEX_ATOL:
            raise ValueError(f"weights sum to {total!r}, expected 1 within {SIMPLEX_ATOL}")
        w = w.copy()
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)

    @property
    def m(self):
        return int(self.weights.size)

    @classmethod
    def uniform(cls, m):
        if m < 1:
            raise ValueError(f"need at least one atom, got m={m}")
        return cls(np.full(m, 1.0 / m))


def kl_discrete(q, q0):
    """KL(q || q0) in nats between two finite distributions.

    Zero-probability atoms of q contribute zero (0 * log 0 = 0). Mass in q
    on an atom where q0 has none is a domain error, not infinity.
    """
    if not isinstance(q, SimplexDistribution) or not isinstance(q0, SimplexDistribution):
        raise TypeError("kl_discrete expects SimplexDistribution arguments")
    if q.m != q0.m:
        raise ValueError(f"dimension mismatch: {q.m} vs {q0.m}")
    qw, pw = q.weights, q0.weights
    support = qw > 0.0
    if np.any(support & (pw <= 0.0)):
        raise ValueError("q places mass outside the support of q0")
    qs = qw[support]
    total = float(np.sum(qs * np.log(qs / pw[support])))
    # Exact-zero floor: rounding can leave a tiny negative for q ~ q0.
    return max(total, 0.0)


def regularizer(kl, n_envs, delta):
    """Complexity term (kl + ln(2 sqrt(N) / delta)) / (2 N)."""
    if not (isinstance(kl, (int, float)) and math.isfinite(kl) and kl >= 0.0):
        raise ValueError(f"kl must be finite and nonnegative, got {kl!r}")
    if not (isinstance(n_envs, (int, np.integer)) and n_envs >= 1):
        raise ValueError(f"n_envs must be a positive integer, got {n_envs!r}")
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta!r}")
    return (kl + math.log(2.0 * math.sqrt(n_envs) / delta)) / (2.0 * n_envs)


def quad_pac_bound(empirical_cost, reg):
    """Quadratic certificate (sqrt(cost + reg) + sqrt(reg))^2."""
    if not (math.isfinite(empirical_cost) and 0.0 <= empirical_cost <= 1.0):
        raise ValueError(f"empirical cost must lie in [0, 1], got {empirical_cost!r}")
    if not (math.isfinite(reg) and reg >= 0.0):
        raise ValueError(f"regularizer must be finite and nonnegative, got {reg!r}")
    return (math.sqrt(empirical_cost + reg) + math.sqrt(reg)) ** 2


def empirical_posterior_cost(cost_vector, q):
    """Posterior-weighted empirical cost: dot(cost_vector, q)."""
    c = np.asarray(cost_vector, dtype=np.float64)
    if c.ndim != 1:
        raise ValueError("cost_vector must be 1-d")
    if not np.all(np.isfinite(c)) or np.any(c < 0.0) or np.any(c > 1.0):
        raise ValueError("cost entries must lie in [0, 1]")
    if c.size != q.m:
        raise ValueError(f"dimension mismatch: {c.size} costs vs {q.m} weights")
    return float(np.dot(c, q.weights))


@dataclass(frozen=True, eq=False)
class BoundInputs:
    """Validated ingredients of a certificate evaluation."""

    cost_vector: np.ndarray
    n_envs: int
    delta: float

    def __post_init__(self):
        c = np.asarray(self.cost_vector, dtype=np.float64)
        if c.ndim != 1 or c.size < 1:
            raise ValueError("cost_vector must be a nonempty 1-d vector")
        if not np.all(np.isfinite(c)) or np.any(c < 0.0) or np.any(c > 1.0):
            raise ValueError("cost entries must lie in [0, 1]")
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
class BoundReport:
    """Certificate plus the provenance needed to re-derive it."""

    empirical_cost: float
    kl: float
    regularizer: float
    raw_bound: float
    pac_bound: float
    n_envs: int
    m: int
    l: int
    horizon: int
    delta: float
    master_seed: int
    config_digest: str
    stream_scheme: str = ""
    real_envs_digest: str = ""
    n_obstacles_real: int = -1
    n_obstacles_gen: int = -1
    solver_iterations: int = 0
    solver_converged: bool = True
    n_eval: int = 0
    true_cost: float = None
    true_cost_stderr: float = None
    true_cost_stderr_defined: bool = True

    def __post_init__(self):
        for name in ("empirical_cost", "kl", "regularizer", "raw_bound", "pac_bound"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v)):
                raise ValueError(f"{name} must be a finite float, got {v!r}")
        if not 0.0 <= self.empirical_cost <= 1.0:
            raise ValueError(f"empirical_cost must lie in [0, 1], got {self.empirical_cost!r}")
        if self.kl < 0.0:
            raise ValueError(f"kl must be nonnegative, got {self.kl!r}")
        if self.raw_bound < self.empirical_cost:
            raise ValueError("raw_bound must dominate empirical_cost")
        if self.pac_bound != min(self.raw_bound, 1.0):
            raise ValueError("pac_bound must equal min(raw_bound, 1)")
        # Slack absorbs the 12-significant-digit rounding of persisted reports.
        if self.regularizer < regularizer(0.0, self.n_envs, self.delta) * (1.0 - 1e-11):
            raise ValueError("regularizer below its kl=0 baseline")
        for name in ("n_envs", "m", "l", "horizon"):
            v = getattr(self, name)
            if not (isinstance(v, (int, np.integer)) and v >= 1):
                raise ValueError(f"{name} must be a positive integer, got {v!r}")
        if not 0 <= self.master_seed < 2 ** 64:
            raise ValueError(f"master_seed must fit in 64 unsigned bits, got {self.master_seed!r}")

    def to_dict(self):
        d = {
            "schema_version": "pacgen_report_v1",
            "empirical_cost": self.empirical_cost,
            "kl": self.kl,
            "regularizer": self.regularizer,
            "raw_bound": self.raw_bound,
            "pac_bound": self.pac_bound,
            "N": self.n_envs,
            "m": self.m,
            "l": self.l,
            "K": self.horizon,
            "delta": self.delta,
            "master_seed": self.master_seed,
            "config_digest": self.config_digest,
            "stream_scheme": self.stream_scheme,
            "real_envs_digest": self.real_envs_digest,
            "n_obstacles_real": self.n_obstacles_real,
            "n_obstacles_gen": self.n_obstacles_gen,
            "solver_iterations": self.solver_iterations,
            "solver_converged": self.solver_converged,
            "n_eval": self.n_eval,
            "true_cost": self.true_cost,
            "true_cost_stderr": self.true_cost_stderr,
            "true_cost_stderr_defined": self.true_cost_stderr_defined,
        }
        return d


def report_from_dict(d):
    """Inverse of BoundReport.to_dict."""
    if d.get("schema_version") != "pacgen_report_v1":
        raise ValueError(f"unrecognized report schema: {d.get('schema_version')!r}")
    return BoundReport(
        empirical_cost=d["empirical_cost"],
        kl=d["kl"],
        regularizer=d["regularizer"],
        raw_bound=d["raw_bound"],
        pac_bound=d["pac_bound"],
        n_envs=d["N"],
        m=d["m"],
        l=d["l"],
        horizon=d["K"],
        delta=d["delta"],
        master_seed=d["master_seed"],
        config_digest=d["config_digest"],
        stream_scheme=d.get("stream_scheme", ""),
        real_envs_digest=d.get("real_envs_digest", ""),
        n_obstacles_real=d.get("n_obstacles_real", -1),
        n_obstacles_gen=d.get("n_obstacles_gen", -1),
        solver_iterations=d.get("solver_iterations", 0),
        solver_converged=d.get("solver_converged", True),
        n_eval=d.get("n_eval", 0),
        true_cost=d.get("true_cost"),
        true_cost_stderr=d.get("true_cost_stderr"),
        true_cost_stderr_defined=d.get("true_cost_stderr_defined", True),
    )
