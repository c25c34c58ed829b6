"""Planar corridor navigation: environments, sensing, primitives, rollouts.

A point robot starts at the corridor mouth facing +y and must reach the far
end without touching an obstacle or leaving the side walls. Each control
cycle it takes a 16-ray depth scan, picks one of 11 constant-curvature arc
primitives with a small two-layer network, and executes it; collision
checking samples 100 points along the arc. Cost of a rollout is the
fraction of the horizon not completed.

Everything here is built from elementwise numpy ops and fixed-order
reductions, so evaluating a batch of policies gives bit-identical results
to evaluating them one at a time. The batched entry points
(rollout_costs, dataset_losses) are what make the training loop affordable.
"""

import math
from dataclasses import dataclass

import numpy as np

from .seeds import derive_rng
from .serialize import short_digest

N_RAYS = 16
FOV = 2.0 * math.pi / 3.0
D_MAX = 5.0
HIDDEN_WIDTH = 16
ARC_SAMPLES = 100
DEFAULT_HORIZON = 12

# Heading changes smaller than this execute as straight segments; the
# closed-form arc displacement divides by curvature and loses all precision
# near zero. The position error of the substitution is below 1e-9 m.
_STRAIGHT_EPS = 1e-9

_ROLES = ("real", "generative")


def wrap_heading(psi):
    """Normalize headings to (-pi, pi]; values already in range are untouched."""
    psi = np.asarray(psi, dtype=np.float64)
    wrapped = np.pi - np.mod(np.pi - psi, 2.0 * np.pi)
    out = np.where((psi > -np.pi) & (psi <= np.pi), psi, wrapped)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class RobotState:
    """Pose of the point robot; heading is normalized to (-pi, pi]."""

    x: float
    y: float
    heading: float

    def __post_init__(self):
        for name in ("x", "y", "heading"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v)):
                raise ValueError(f"{name} must be a finite float, got {v!r}")
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "heading", wrap_heading(float(self.heading)))


START_STATE = RobotState(0.0, 0.0, math.pi / 2.0)


@dataclass(frozen=True, eq=False)
class EnvironmentSpec:
    """Fixed corridor with circular obstacles.

    obstacles is an (n, 3) array with columns x, y, radius. Walls sit at
    x = +-corridor_half_width; the goal line is y = corridor_length.
    """

    obstacles: np.ndarray
    corridor_half_width: float = 5.0
    corridor_length: float = 14.0

    def __post_init__(self):
        obs = np.asarray(self.obstacles, dtype=np.float64)
        if obs.size == 0:
            obs = obs.reshape(0, 3)
        if obs.ndim != 2 or obs.shape[1] != 3:
            raise ValueError(f"obstacles must be an (n, 3) array, got shape {obs.shape}")
        if not np.all(np.isfinite(obs)):
            raise ValueError("obstacle entries must be finite")
        if np.any(obs[:, 2] <= 0.0):
            raise ValueError("obstacle radii must be positive")
        if not (math.isfinite(self.corridor_half_width) and self.corridor_half_width > 0.0):
            raise ValueError(f"corridor_half_width must be positive, got {self.corridor_half_width!r}")
        if not (math.isfinite(self.corridor_length) and self.corridor_length > 0.0):
            raise ValueError(f"corridor_length must be positive, got {self.corridor_length!r}")
        obs = obs.copy()
        obs.flags.writeable = False
        object.__setattr__(self, "obstacles", obs)
        object.__setattr__(self, "corridor_half_width", float(self.corridor_half_width))
        object.__setattr__(self, "corridor_length", float(self.corridor_length))

    @property
    def n_obstacles(self):
        return int(self.obstacles.shape[0])

    def to_dict(self):
        return {
            "schema_version": "pacgen_env_v1",
            "obstacles": [[float(v) for v in row] for row in self.obstacles],
            "corridor_half_width": self.corridor_half_width,
            "corridor_length": self.corridor_length,
        }

    @property
    def digest(self):
        return short_digest(self.to_dict(), round12=False)


def environment_from_dict(d):
    if d.get("schema_version") != "pacgen_env_v1":
        raise ValueError(f"unrecognized environment schema: {d.get('schema_version')!r}")
    return EnvironmentSpec(
        np.asarray(d["obstacles"], dtype=np.float64).reshape(-1, 3),
        corridor_half_width=d["corridor_half_width"],
        corridor_length=d["corridor_length"],
    )


@dataclass(frozen=True)
class DistributionSpec:
    """Sampling law for environments: obstacle count, radii, center rectangle.

    The rectangle doubles as the corridor geometry: walls at x = +-x_max
    (so x_min must equal -x_max) and goal line at y = y_max.
    """

    n_obstacles: int
    r_min: float = 0.05
    r_max: float = 0.30
    x_min: float = -5.0
    x_max: float = 5.0
    y_min: float = 0.0
    y_max: float = 14.0
    role: str = "real"

    def __post_init__(self):
        if not (isinstance(self.n_obstacles, (int, np.integer)) and self.n_obstacles >= 0):
            raise ValueError(f"n_obstacles must be a nonnegative integer, got {self.n_obstacles!r}")
        if not 0.0 < self.r_min < self.r_max:
            raise ValueError(f"need 0 < r_min < r_max, got {self.r_min!r}, {self.r_max!r}")
        if not self.x_min < self.x_max:
            raise ValueError("need x_min < x_max")
        if self.x_min != -self.x_max:
            raise ValueError("center rectangle must be wall-symmetric: x_min == -x_max")
        if not self.y_min < self.y_max:
            raise ValueError("need y_min < y_max")
        if not self.y_max > 0.0:
            raise ValueError("goal line y_max must be positive")
        if self.role not in _ROLES:
            raise ValueError(f"role must be one of {_ROLES}, got {self.role!r}")
        object.__setattr__(self, "n_obstacles", int(self.n_obstacles))
        for name in ("r_min", "r_max", "x_min", "x_max", "y_min", "y_max"):
            object.__setattr__(self, name, float(getattr(self, name)))

    def to_dict(self):
        return {
            "n_obstacles": self.n_obstacles,
            "r_min": self.r_min,
            "r_max": self.r_max,
            "x_min": self.x_min,
            "x_max": self.x_max,
            "y_min": self.y_min,
            "y_max": self.y_max,
            "role": self.role,
        }

    @property
    def digest(self):
        return short_digest(self.to_dict(), round12=False)


def distribution_from_dict(d):
    return DistributionSpec(**d)


def sample_environment(dist, stream):
    """Draw one environment. Draw order is fixed: all x, all y, all radii."""
    n = dist.n_obstacles
    xs = stream.uniform(dist.x_min, dist.x_max, n)
    ys = stream.uniform(dist.y_min, dist.y_max, n)
    rs = stream.uniform(dist.r_min, dist.r_max, n)
    obstacles = np.column_stack([xs, ys, rs]) if n else np.zeros((0, 3))
    return EnvironmentSpec(obstacles, corridor_half_width=dist.x_max, corridor_length=dist.y_max)


@dataclass(frozen=True, eq=False)
class SyntheticDataset:
    """Environments drawn from a generative law, with sampling provenance."""

    environments: tuple
    seed: int
    dist_digest: str

    def __post_init__(self):
        envs = tuple(self.environments)
        if len(envs) < 1:
            raise ValueError("a dataset needs at least one environment")
        for e in envs:
            if not isinstance(e, EnvironmentSpec):
                raise TypeError("environments must be EnvironmentSpec instances")
        object.__setattr__(self, "environments", envs)

    @property
    def l(self):
        return len(self.environments)

    @property
    def digest(self):
        doc = {
            "environments": [e.to_dict() for e in self.environments],
            "seed": self.seed,
            "dist_digest": self.dist_digest,
        }
        return short_digest(doc, round12=False)


def sample_synthetic_datasets(dist, m, l, master_seed):
    """Draw m datasets of l environments each from dedicated streams.

    Dataset i, environment j uses the stream (master_seed, "GEN", i, j), so
    any single environment can be re-derived without sampling the rest.
    """
    if m < 1 or l < 1:
        raise ValueError(f"need m >= 1 and l >= 1, got m={m}, l={l}")
    datasets = []
    for i in range(m):
        envs = tuple(sample_environment(dist, derive_rng(master_seed, "GEN", i, j)) for j in range(l))
        datasets.append(SyntheticDataset(envs, master_seed, dist.digest))
    return datasets


@dataclass(frozen=True, eq=False)
class PrimitiveLibrary:
    """Constant-curvature arcs of a common length, one per heading change."""

    arc_length: float
    heading_changes: np.ndarray

    def __post_init__(self):
        if not (isinstance(self.arc_length, (int, float)) and math.isfinite(self.arc_length) and self.arc_length > 0.0):
            raise ValueError(f"arc_length must be positive, got {self.arc_length!r}")
        hc = np.asarray(self.heading_changes, dtype=np.float64)
        if hc.ndim != 1 or hc.size < 2:
            raise ValueError("need at least two primitives")
        if not np.all(np.isfinite(hc)):
            raise ValueError("heading changes must be finite")
        if np.unique(hc).size != hc.size:
            raise ValueError("heading changes must be distinct")
        hc = hc.copy()
        hc.flags.writeable = False
        object.__setattr__(self, "arc_length", float(self.arc_length))
        object.__setattr__(self, "heading_changes", hc)

    @property
    def size(self):
        return int(self.heading_changes.size)


DEFAULT_PRIMITIVES = PrimitiveLibrary(1.25, np.linspace(-math.pi / 3.0, math.pi / 3.0, 11))
N_PRIMITIVES = DEFAULT_PRIMITIVES.size


def n_theta(library=DEFAULT_PRIMITIVES):
    """Parameter count of the scan -> primitive network (16 -> 16 -> K)."""
    k = library.size
    return N_RAYS * HIDDEN_WIDTH + HIDDEN_WIDTH + HIDDEN_WIDTH * k + k


N_THETA = n_theta()


@dataclass(frozen=True, eq=False)
class PolicyParams:
    """Flat parameter vector of the scan -> primitive network."""

    theta: np.ndarray

    def __post_init__(self):
        th = np.asarray(self.theta, dtype=np.float64)
        if th.ndim != 1 or th.size < 1:
            raise ValueError("theta must be a nonempty 1-d vector")
        if not np.all(np.isfinite(th)):
            raise ValueError("theta must be finite")
        th = th.copy()
        th.flags.writeable = False
        object.__setattr__(self, "theta", th)


@dataclass(frozen=True, eq=False)
class RayScan:
    """Depth readings of one scan, in ray order."""

    depths: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.depths, dtype=np.float64)
        if d.ndim != 1 or d.size < 1:
            raise ValueError("depths must be a nonempty 1-d vector")
        if not np.all(np.isfinite(d)) or np.any(d < 0.0):
            raise ValueError("depths must be finite and nonnegative")
        d = d.copy()
        d.flags.writeable = False
        object.__setattr__(self, "depths", d)


def _ray_offsets(n_ray, fov):
    if n_ray < 1:
        raise ValueError(f"need at least one ray, got {n_ray}")
    if not 0.0 < fov <= 2.0 * math.pi:
        raise ValueError(f"fov must lie in (0, 2 pi], got {fov!r}")
    if n_ray == 1:
        return np.zeros(1)
    return np.linspace(-fov / 2.0, fov / 2.0, n_ray)


def _raycast_batch(env, x, y, psi, n_ray=N_RAYS, fov=FOV, d_max=D_MAX):
    # Depths for a batch of poses; (A, n_ray). Pure elementwise work plus
    # exact mins, so results do not depend on the batch size.
    angles = psi[:, None] + _ray_offsets(n_ray, fov)[None, :]
    dx = np.cos(angles)
    dy = np.sin(angles)
    depth = np.full(angles.shape, float(d_max))
    hw = env.corridor_half_width
    with np.errstate(divide="ignore", invalid="ignore"):
        for wall in (hw, -hw):
            t = (wall - x[:, None]) / dx
            depth = np.minimum(depth, np.where(t > 0.0, t, np.inf))
    if env.n_obstacles:
        ox = env.obstacles[:, 0]
        oy = env.obstacles[:, 1]
        orad = env.obstacles[:, 2]
        fx = ox[None, None, :] - x[:, None, None]
        fy = oy[None, None, :] - y[:, None, None]
        b = dx[:, :, None] * fx + dy[:, :, None] * fy
        disc = b * b - (fx * fx + fy * fy) + (orad * orad)[None, None, :]
        hit = disc >= 0.0
        root = np.sqrt(np.where(hit, disc, 0.0))
        t_near = b - root
        t_far = b + root
        t_hit = np.where(t_near > 0.0, t_near, np.where(t_far > 0.0, t_far, np.inf))
        t_hit = np.where(hit, t_hit, np.inf)
        depth = np.minimum(depth, t_hit.min(axis=2))
    return np.minimum(depth, float(d_max))


def raycast_scan(env, state, n_ray=N_RAYS, fov=FOV, d_max=D_MAX):
    """Depth scan from a pose: evenly spread rays over the field of view.

    Each depth is the distance to the nearest obstacle boundary or wall
    along the ray, clamped to d_max.
    """
    depths = _raycast_batch(
        env,
        np.array([state.x]),
        np.array([state.y]),
        np.array([state.heading]),
        n_ray=n_ray,
        fov=fov,
        d_max=d_max,
    )
    return RayScan(depths[0])


def _unpack(thetas, library):
    p, width = thetas.shape
    expected = n_theta(library)
    if width != expected:
        raise ValueError(f"theta length {width} does not match the {N_RAYS}->{HIDDEN_WIDTH}->{library.size} network ({expected})")
    i0 = N_RAYS * HIDDEN_WIDTH
    i1 = i0 + HIDDEN_WIDTH
    i2 = i1 + HIDDEN_WIDTH * library.size
    w1 = thetas[:, :i0].reshape(p, N_RAYS, HIDDEN_WIDTH)
    b1 = thetas[:, i0:i1]
    w2 = thetas[:, i1:i2].reshape(p, HIDDEN_WIDTH, library.size)
    b2 = thetas[:, i2:]
    return w1, b1, w2, b2


def _forward_batch(w1, b1, w2, b2, scans):
    # scans (P, N_RAYS) -> primitive indices (P,). Sums run over axes of
    # fixed small length, elementwise otherwise: batch-size invariant.
    x = scans / D_MAX
    hidden = np.tanh((x[:, :, None] * w1).sum(axis=1) + b1)
    scores = (hidden[:, :, None] * w2).sum(axis=1) + b2
    return np.argmax(scores, axis=1)


def policy_forward(theta, scan, library=DEFAULT_PRIMITIVES):
    """Primitive index chosen by the network for one scan.

    Inputs are depths scaled by the standard sensor range; ties in the
    output scores break toward the lowest index (argmax convention).
    """
    if not isinstance(theta, PolicyParams):
        raise TypeError("theta must be PolicyParams")
    if scan.depths.size != N_RAYS:
        raise ValueError(f"expected a {N_RAYS}-ray scan, got {scan.depths.size}")
    w1, b1, w2, b2 = _unpack(theta.theta[None, :], library)
    return int(_forward_batch(w1, b1, w2, b2, scan.depths[None, :])[0])


def _execute_batch(env, x, y, psi, dpsi, library):
    # Roll a batch of arcs; returns (nx, ny, npsi, collided). A collision
    # freezes the state at the first of the 100 sampled points that is
    # inside an obstacle (distance < radius, strict) or outside the walls
    # (|x| > half width, strict).
    a = x.size
    s = library.arc_length
    u = s * np.arange(1, ARC_SAMPLES + 1) / ARC_SAMPLES
    kappa = dpsi / s
    straight = np.abs(dpsi) < _STRAIGHT_EPS
    ksafe = np.where(straight, 1.0, kappa)
    psi_u = psi[:, None] + kappa[:, None] * u[None, :]
    sin0 = np.sin(psi)[:, None]
    cos0 = np.cos(psi)[:, None]
    xs_arc = x[:, None] + (np.sin(psi_u) - sin0) / ksafe[:, None]
    ys_arc = y[:, None] - (np.cos(psi_u) - cos0) / ksafe[:, None]
    xs = np.where(straight[:, None], x[:, None] + u[None, :] * cos0, xs_arc)
    ys = np.where(straight[:, None], y[:, None] + u[None, :] * sin0, ys_arc)
    bad = np.abs(xs) > env.corridor_half_width
    if env.n_obstacles:
        # Obstacles beyond the arc's reach cannot collide; checking only the
        # near ones changes nothing but the work done.
        ox = env.obstacles[:, 0]
        oy = env.obstacles[:, 1]
        orad = env.obstacles[:, 2]
        reach = s + orad[None, :]
        near = (ox[None, :] - x[:, None]) ** 2 + (oy[None, :] - y[:, None]) ** 2 <= reach * reach
        pair_a, pair_c = np.nonzero(near)
        if pair_a.size:
            d2 = (xs[pair_a] - ox[pair_c, None]) ** 2 + (ys[pair_a] - oy[pair_c, None]) ** 2
            inside = d2 < (orad[pair_c, None] ** 2)
            # pair_a is nondecreasing (row-major nonzero), so contiguous
            # segments share an arc; fold each segment with an exact "or".
            starts = np.flatnonzero(np.r_[True, pair_a[1:] != pair_a[:-1]])
            bad[pair_a[starts]] |= np.logical_or.reduceat(inside, starts, axis=0)
    collided = bad.any(axis=1)
    first = bad.argmax(axis=1)
    rows = np.arange(a)
    land = ARC_SAMPLES - 1
    stop = np.where(collided, first, land)
    nx = xs[rows, stop]
    ny = ys[rows, stop]
    npsi = psi_u[rows, stop]
    return nx, ny, wrap_heading(npsi), collided


def execute_primitive(env, state, index, library=DEFAULT_PRIMITIVES):
    """Execute one arc primitive from a state.

    Returns (new_state, collided). On collision the state freezes at the
    first sampled point that violates an obstacle or wall.
    """
    if not 0 <= index < library.size:
        raise ValueError(f"primitive index {index} outside [0, {library.size})")
    dpsi = library.heading_changes[np.array([index])]
    nx, ny, npsi, collided = _execute_batch(
        env, np.array([state.x]), np.array([state.y]), np.array([state.heading]), dpsi, library
    )
    return RobotState(float(nx[0]), float(ny[0]), float(npsi[0])), bool(collided[0])


def rollout_costs(env, thetas, horizon=DEFAULT_HORIZON, library=DEFAULT_PRIMITIVES):
    """Costs of rolling out a batch of policies in one environment.

    thetas is (P, n_theta); returns (P,) costs 1 - k/horizon where k is the
    number of control cycles completed without collision. Reaching the goal
    line (y >= corridor length, checked after each primitive) counts every
    remaining cycle as completed.
    """
    thetas = np.asarray(thetas, dtype=np.float64)
    if thetas.ndim != 2:
        raise ValueError("thetas must be a (P, n_theta) matrix")
    if not (isinstance(horizon, (int, np.integer)) and horizon >= 1):
        raise ValueError(f"horizon must be a positive integer, got {horizon!r}")
    p = thetas.shape[0]
    w1, b1, w2, b2 = _unpack(thetas, library)
    x = np.zeros(p)
    y = np.zeros(p)
    psi = np.full(p, START_STATE.heading)
    completed = np.zeros(p, dtype=np.int64)
    active = np.ones(p, dtype=bool)
    for _ in range(horizon):
        if not active.any():
            break
        ai = np.flatnonzero(active)
        scans = _raycast_batch(env, x[ai], y[ai], psi[ai])
        idx = _forward_batch(w1[ai], b1[ai], w2[ai], b2[ai], scans)
        dpsi = library.heading_changes[idx]
        nx, ny, npsi, collided = _execute_batch(env, x[ai], y[ai], psi[ai], dpsi, library)
        x[ai] = nx
        y[ai] = ny
        psi[ai] = npsi
        ok = ~collided
        completed[ai] += ok
        reached = ok & (ny >= env.corridor_length)
        completed[ai[reached]] = horizon
        active[ai[collided]] = False
        active[ai[reached]] = False
    return 1.0 - completed / float(horizon)


def rollout_cost(env, theta, horizon=DEFAULT_HORIZON, library=DEFAULT_PRIMITIVES):
    """Cost of one policy in one environment; see rollout_costs."""
    if not isinstance(theta, PolicyParams):
        raise TypeError("theta must be PolicyParams")
    return float(rollout_costs(env, theta.theta[None, :], horizon, library)[0])


def dataset_losses(thetas, dataset, horizon=DEFAULT_HORIZON, library=DEFAULT_PRIMITIVES):
    """Mean rollout cost over a dataset for a batch of policies; (P,)."""
    thetas = np.asarray(thetas, dtype=np.float64)
    total = np.zeros(thetas.shape[0])
    for env in dataset.environments:
        total = total + rollout_costs(env, thetas, horizon, library)
    return total / float(dataset.l)


def dataset_loss(theta, dataset, horizon=DEFAULT_HORIZON, library=DEFAULT_PRIMITIVES):
    """Mean rollout cost of one policy over a dataset's environments."""
    if not isinstance(theta, PolicyParams):
        raise TypeError("theta must be PolicyParams")
    return float(dataset_losses(theta.theta[None, :], dataset, horizon, library)[0])
