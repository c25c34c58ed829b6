"""Seeded evolution-strategies trainer mapping datasets to policies.

The trainer is a deterministic function of (dataset, config): antithetic
Gaussian perturbations come from a dedicated stream in a fixed order,
losses are clamped to [0, 1] before the gradient estimate, and the update
is plain descent on the smoothed loss. Two calls with equal inputs return
bit-identical parameter vectors, which is what lets a distribution over
datasets push forward to a well-defined distribution over policies.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .envsim import DEFAULT_HORIZON, N_THETA, PolicyParams, dataset_losses
from .seeds import derive_seed


@dataclass(frozen=True)
class EsConfig:
    population_size: int = 32
    sigma: float = 0.05
    learning_rate: float = 0.02
    iterations: int = 300
    seed: int = 0

    def __post_init__(self):
        if not (isinstance(self.population_size, (int, np.integer)) and self.population_size >= 2):
            raise ValueError(f"population_size must be an integer >= 2, got {self.population_size!r}")
        if self.population_size % 2:
            raise ValueError(f"population_size must be even for antithetic pairs, got {self.population_size}")
        if not self.sigma > 0.0:
            raise ValueError(f"sigma must be positive, got {self.sigma!r}")
        if not self.learning_rate > 0.0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate!r}")
        if not (isinstance(self.iterations, (int, np.integer)) and self.iterations >= 0):
            raise ValueError(f"iterations must be a nonnegative integer, got {self.iterations!r}")
        if not (isinstance(self.seed, (int, np.integer)) and 0 <= self.seed < 2 ** 64):
            raise ValueError(f"seed must fit in 64 unsigned bits, got {self.seed!r}")

    def to_dict(self):
        return {
            "population_size": self.population_size,
            "sigma": self.sigma,
            "learning_rate": self.learning_rate,
            "iterations": self.iterations,
            "seed": self.seed,
        }


def es_config_from_dict(d):
    return EsConfig(**d)


def train_policy(dataset, config, init, loss_fn=None, horizon=DEFAULT_HORIZON):
    """Run the ES loop from an initial parameter vector.

    loss_fn maps a (P, n_theta) candidate matrix and the dataset to a (P,)
    loss vector; the default is the mean rollout cost over the dataset's
    environments. Losses are clamped to [0, 1] before the gradient
    estimate; a non-finite loss aborts with the offending iteration index.
    """
    if not isinstance(init, PolicyParams):
        raise TypeError("init must be PolicyParams")
    if loss_fn is None:
        loss_fn = lambda cands, ds: dataset_losses(cands, ds, horizon)
    theta = init.theta.copy()
    rng = np.random.default_rng(config.seed)
    half = config.population_size // 2
    for it in range(config.iterations):
        eps = rng.standard_normal((half, theta.size))
        cands = np.concatenate([theta[None, :] + config.sigma * eps, theta[None, :] - config.sigma * eps])
        losses = np.asarray(loss_fn(cands, dataset), dtype=np.float64)
        if losses.shape != (config.population_size,):
            raise ValueError(f"loss_fn returned shape {losses.shape}, expected ({config.population_size},)")
        if not np.all(np.isfinite(losses)):
            raise RuntimeError(f"non-finite loss in iteration {it}")
        losses = np.clip(losses, 0.0, 1.0)
        grad = (losses[:half] - losses[half:]) @ eps / (config.population_size * config.sigma)
        theta = theta - config.learning_rate * grad
    return PolicyParams(theta)


def _train_one(args):
    index, dataset, config, horizon = args
    init = PolicyParams(np.zeros(N_THETA))
    try:
        return index, train_policy(dataset, config, init, horizon=horizon)
    except Exception as exc:
        raise RuntimeError(f"training failed for dataset {index}: {exc}") from exc


def pushforward_policies(datasets, config, horizon=DEFAULT_HORIZON, n_workers=1):
    """Train one policy per dataset from zero initialization.

    Dataset i trains with the seed substream (config.seed, "ES", i), so the
    result is independent of worker count and of which other datasets are
    in the list. Returns policies in dataset order.
    """
    if not datasets:
        raise ValueError("need at least one dataset")
    tasks = [
        (i, ds, replace(config, seed=derive_seed(config.seed, "ES", i)), horizon)
        for i, ds in enumerate(datasets)
    ]
    results = [None] * len(tasks)
    if n_workers > 1:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            for index, policy in pool.map(_train_one, tasks):
                results[index] = policy
    else:
        for task in tasks:
            index, policy = _train_one(task)
            results[index] = policy
    return results
