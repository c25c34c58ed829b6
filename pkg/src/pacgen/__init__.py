"""Certified expected-cost bounds for policy distributions trained on
generative environment models.

Workflow: sample synthetic datasets from a generative law, push them
through a deterministic trainer to get a discrete distribution over
policies, score the policies on the real environments, optimize the
posterior weights, and certify the result with a quadratic
generalization bound.
"""

from .bound import (
    BoundInputs,
    BoundReport,
    SimplexDistribution,
    empirical_posterior_cost,
    kl_discrete,
    quad_pac_bound,
    regularizer,
    report_from_dict,
)
from .envsim import (
    DEFAULT_PRIMITIVES,
    DistributionSpec,
    EnvironmentSpec,
    PolicyParams,
    PrimitiveLibrary,
    RayScan,
    RobotState,
    START_STATE,
    SyntheticDataset,
    dataset_loss,
    dataset_losses,
    execute_primitive,
    policy_forward,
    raycast_scan,
    rollout_cost,
    rollout_costs,
    sample_environment,
    sample_synthetic_datasets,
)
from .es import EsConfig, pushforward_policies, train_policy
from .pipeline import (
    CostMatrix,
    EvalResult,
    ExperimentConfig,
    PipelineError,
    SweepCell,
    build_cost_matrix,
    config_from_dict,
    estimate_true_cost,
    run_pipeline,
    sweep,
)
from .seeds import STREAM_SCHEME, derive_rng, derive_seed
from .simplex_opt import (
    RepProblem,
    SolveResult,
    SolverConfig,
    brute_force_posterior,
    optimize_posterior,
    rep_gradient,
    rep_objective,
    surrogate_objective,
)

__version__ = "0.1.0"
