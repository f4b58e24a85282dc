"""Synthetic demonstrations: random reaches under a known constraint.

Each trajectory starts from a sampled joint state, reaches a sampled task
target with the linear attractor of the constrained coordinates, and resolves
redundancy with one shared joint-space point attractor, so the null-space
policy is consistent across the whole set.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np

from .chains import SerialChain, forward_kinematics, get_chain, jacobian, wrap_angle
from .constraints import TRUNCATE_PINV, ConstraintModel, constraint_preset
from .errors import InfeasibleRegion
from .policies import POINT_ATTRACTOR, NullPolicy, TaskPolicy
from .simulator import Trajectory, simulate


@dataclass(frozen=True)
class DemoConfig:
    """Everything needed to regenerate a demonstration set.

    Angles in ``start_ranges_deg`` and ``psi_star_deg`` are degrees; target
    ranges are in task units (m, rad). ``record_steps`` simulated steps are
    down-sampled to ``points_per_traj`` when they differ.
    """

    chain: str = "planar3"
    constraint: str = "xy"
    n_trajectories: int = 100
    points_per_traj: int = 10
    record_steps: int = 10
    start_ranges_deg: tuple = ((0.0, 10.0), (90.0, 100.0), (0.0, 10.0))
    target_ranges: tuple = ((-1.0, 1.0), (0.0, 2.0), (0.0, np.pi))
    psi_star_deg: tuple = (10.0, -10.0, 10.0)
    null_alpha: float = 1.0
    seed: int = 0
    dt: float = 0.02
    ik_max_iter: int = 200
    ik_damping: float = 1e-3
    ik_tol: float = 1e-4
    max_rejections: int = 1000
    neutral_deg: Optional[tuple] = None

    def __post_init__(self):
        for name in ("n_trajectories", "points_per_traj", "record_steps"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.points_per_traj > self.record_steps:
            raise ValueError("points_per_traj cannot exceed record_steps")
        for lo, hi in (*self.start_ranges_deg, *self.target_ranges):
            if lo > hi:
                raise ValueError(f"range ({lo}, {hi}) is not well ordered")
        if len(self.start_ranges_deg) != len(self.psi_star_deg):
            raise ValueError("start ranges and psi_star disagree on the number of joints")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in an unsigned 64-bit integer")
        # normalize nested lists from JSON into tuples so configs hash and compare
        object.__setattr__(self, "start_ranges_deg", tuple(tuple(map(float, r)) for r in self.start_ranges_deg))
        object.__setattr__(self, "target_ranges", tuple(tuple(map(float, r)) for r in self.target_ranges))
        object.__setattr__(self, "psi_star_deg", tuple(map(float, self.psi_star_deg)))
        if self.neutral_deg is not None:
            object.__setattr__(self, "neutral_deg", tuple(map(float, self.neutral_deg)))

    @property
    def psi_star(self) -> np.ndarray:
        return np.deg2rad(self.psi_star_deg)

    @property
    def neutral(self) -> np.ndarray:
        """IK seed pose: configured, else the centre of the start ranges."""
        if self.neutral_deg is not None:
            return np.deg2rad(self.neutral_deg)
        return np.deg2rad(np.mean(self.start_ranges_deg, axis=1))

    def with_(self, **changes) -> "DemoConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: (list(map(list, v)) if k in ("start_ranges_deg", "target_ranges") else
                    list(v) if isinstance(v, tuple) else v) for k, v in d.items()}


PLANAR_DEMOS = DemoConfig()

SPATIAL7_START_DEG = (-100.0, 30.0, -100.0, 40.0, -60.0, -70.0, 250.0)
SPATIAL7_JITTER_DEG = 5.0
SPATIAL7_PSI_OFFSET_DEG = 10.0

# Starts scatter around the nominal pose: from a single start the targets
# excite too few directions of J(q) w for the constraint row to be pinned down.
# The null space is pulled towards a posture a fixed offset from the nominal.
SPATIAL7_DEMOS = DemoConfig(
    chain="spatial7",
    constraint="x",
    n_trajectories=50,
    points_per_traj=10,
    record_steps=100,
    start_ranges_deg=tuple((a - SPATIAL7_JITTER_DEG, a + SPATIAL7_JITTER_DEG) for a in SPATIAL7_START_DEG),
    target_ranges=((-1.0, 1.0), (0.0, 0.0), (0.0, 0.0)),
    psi_star_deg=tuple(a + SPATIAL7_PSI_OFFSET_DEG * (-1) ** i for i, a in enumerate(SPATIAL7_START_DEG)),
    dt=0.01,
)

DEMO_PRESETS = {"planar3": PLANAR_DEMOS, "spatial7": SPATIAL7_DEMOS}


def default_demo_config(chain: str = "planar3", **overrides) -> DemoConfig:
    return DEMO_PRESETS[chain].with_(**overrides)


@dataclass
class DemonstrationSet:
    trajectories: list
    config: DemoConfig
    targets: Optional[np.ndarray] = None
    extra: dict = field(default_factory=dict)

    def stacked(self) -> tuple[np.ndarray, np.ndarray]:
        """All (state, action) pairs as two (N, dof) arrays."""
        pairs = [t.pairs() for t in self.trajectories]
        return np.vstack([p[0] for p in pairs]), np.vstack([p[1] for p in pairs])

    def groups(self) -> np.ndarray:
        """Trajectory index of every stacked pair."""
        return np.concatenate([np.full(len(t.actions), i) for i, t in enumerate(self.trajectories)])

    @property
    def n_points(self) -> int:
        return sum(len(t.actions) for t in self.trajectories)


def trajectory_rng(seed: int, index: int) -> np.random.Generator:
    """Counter-based stream for one trajectory: Philox keyed by seed XOR index."""
    return np.random.Generator(np.random.Philox(key=(int(seed) ^ int(index)) & (2**64 - 1)))


def sample_start(cfg: DemoConfig, rng: np.random.Generator) -> np.ndarray:
    lo, hi = np.array(cfg.start_ranges_deg).T
    return np.deg2rad(rng.uniform(lo, hi))


def ik_residual(chain: SerialChain, model: ConstraintModel, r_star, q) -> np.ndarray:
    d = np.asarray(r_star, dtype=float) - forward_kinematics(chain, q)
    mask = chain.angular_task_mask
    d[mask] = wrap_angle(d[mask])
    return model.lam @ d


def solve_ik(chain: SerialChain, model: ConstraintModel, r_star, q0, max_iter: int = 200,
             damping: float = 1e-3, tol: float = 1e-4) -> tuple[np.ndarray, bool]:
    """Damped least squares on the constrained task coordinates only."""
    q = np.array(q0, dtype=float)
    lam2 = damping**2 * np.eye(model.k)
    for _ in range(max_iter):
        e = ik_residual(chain, model, r_star, q)
        if np.linalg.norm(e) < tol:
            return q, True
        A = model.lam @ jacobian(chain, q)
        q = q + A.T @ np.linalg.solve(A @ A.T + lam2, e)
    return q, bool(np.linalg.norm(ik_residual(chain, model, r_star, q)) < tol)


def sample_target(cfg: DemoConfig, chain: SerialChain, rng: np.random.Generator,
                  model: Optional[ConstraintModel] = None) -> np.ndarray:
    """Rejection-sample a task target the constrained coordinates can reach."""
    model = model or constraint_preset(chain, cfg.constraint)
    lo, hi = np.array(cfg.target_ranges).T
    for _ in range(cfg.max_rejections):
        r_star = rng.uniform(lo, hi)
        _, ok = solve_ik(chain, model, r_star, cfg.neutral, cfg.ik_max_iter, cfg.ik_damping, cfg.ik_tol)
        if ok:
            return r_star
    raise InfeasibleRegion(f"{cfg.max_rejections} consecutive targets had no IK solution")


def downsample(t: Trajectory, n: int) -> Trajectory:
    """Keep ``n`` (state, action) pairs at uniformly spaced indices, endpoints included."""
    states, actions = t.pairs()
    m = len(actions)
    if n > m:
        raise ValueError(f"cannot down-sample {m} points to {n}")
    if n < 1:
        raise ValueError("n must be >= 1")
    idx = np.rint(np.linspace(0, m - 1, n)).astype(int)
    meta = dict(t.meta, downsample_indices=idx.tolist())
    return Trajectory(states[idx], actions[idx], t.dt, meta)


def generate_trajectory(cfg: DemoConfig, chain: SerialChain, model: ConstraintModel,
                        index: int) -> tuple[Trajectory, np.ndarray]:
    rng = trajectory_rng(cfg.seed, index)
    q0 = sample_start(cfg, rng)
    r_star = sample_target(cfg, chain, rng, model)
    pi = NullPolicy(POINT_ATTRACTOR, cfg.psi_star, alpha=cfg.null_alpha)
    meta = {"constraint": cfg.constraint, "seed": cfg.seed, "policy": POINT_ATTRACTOR,
            "chain": cfg.chain, "index": index}
    out = simulate(chain, model, TaskPolicy(r_star), pi, TRUNCATE_PINV, q0, cfg.record_steps, cfg.dt,
                   meta=meta)
    states, actions = out.trajectory.pairs()
    traj = Trajectory(states[: cfg.record_steps], actions[: cfg.record_steps], cfg.dt, meta)
    if cfg.points_per_traj != cfg.record_steps:
        traj = downsample(traj, cfg.points_per_traj)
    return traj, r_star


def generate_demos(cfg: DemoConfig, chain: Optional[SerialChain] = None) -> DemonstrationSet:
    chain = chain or get_chain(cfg.chain)
    model = constraint_preset(chain, cfg.constraint)
    trajs, targets = [], []
    for i in range(cfg.n_trajectories):
        t, r = generate_trajectory(cfg, chain, model, i)
        trajs.append(t)
        targets.append(r)
    return DemonstrationSet(trajs, cfg, np.array(targets))
