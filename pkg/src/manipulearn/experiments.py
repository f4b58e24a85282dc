"""Experiment recipes shared by the CLI and the acceptance suite.

Each recipe is deterministic given its seed. Per-trial seeds come from
:func:`derive_seed`, which hashes the base seed with a label, because
trajectory streams are keyed by ``seed XOR index`` and adjacent seeds would
otherwise share most of their trajectories.
"""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .chains import forward_kinematics, get_chain
from .constraints import PLAIN_PINV, TRUNCATE_PINV, ConstraintModel, constraint_preset
from .demos import SPATIAL7_START_DEG, DemoConfig, default_demo_config, generate_demos, sample_start, \
    sample_target, trajectory_rng
from .learning import DEFAULT_LEARNER, LearnerConfig, LearnResult, learn_constraint
from .metrics import EvalReport, manipulability_values, nmie_values, summarize, trajectory_rmse
from .policies import MANIP_GRADIENT, POINT_ATTRACTOR, ZERO, NullPolicy, TaskPolicy
from .simulator import SimOutcome, simulate

log = logging.getLogger(__name__)

TABLE1_CONSTRAINTS = ("xy", "xtheta", "ytheta")


def derive_seed(seed: int, *labels) -> int:
    """Independent 64-bit seed for a labeled sub-experiment."""
    words = [int(seed) & (2**64 - 1)] + [int.from_bytes(str(l).encode(), "little") % 2**63 for l in labels]
    return int(np.random.SeedSequence(words).generate_state(1, np.uint64)[0])


# --- learning trials ------------------------------------------------------------

@dataclass
class TrialResult:
    nmie: float
    k: int
    v_variance: float
    n_points: int
    learn: LearnResult = field(repr=False, default=None)


def learning_trial(demo: DemoConfig, seed: int, n_test: Optional[int] = None,
                   learner: LearnerConfig = DEFAULT_LEARNER) -> TrialResult:
    """Learn from one demonstration set and score NMIE on held-out trajectories."""
    chain = get_chain(demo.chain)
    true_model = constraint_preset(chain, demo.constraint)
    train = generate_demos(demo.with_(seed=derive_seed(seed, "train")), chain)
    test_cfg = demo.with_(seed=derive_seed(seed, "test"), n_trajectories=n_test or demo.n_trajectories)
    Q_test, _ = generate_demos(test_cfg, chain).stacked()
    res = learn_constraint(train, chain, config=learner)
    v = manipulability_values(true_model, chain, Q_test)
    v_hat = manipulability_values(res.model, chain, Q_test)
    return TrialResult(nmie_values(v, v_hat), res.estimate.k, float(np.var(v)), len(Q_test), res)


def _trial_summary(args) -> tuple:
    r = learning_trial(*args)
    return r.nmie, r.k, r.v_variance, r.n_points


def map_trials(fn, jobs: list, workers: int = 1) -> list:
    """Results of ``fn`` over ``jobs`` in job order, optionally across processes.

    Every job carries its own derived seed, so the reduction is identical for
    any worker count.
    """
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


def eval_nmie(demo: DemoConfig, seed: int, trials: int, n_test: Optional[int] = None,
              learner: LearnerConfig = DEFAULT_LEARNER, label: str = "", workers: int = 1) -> EvalReport:
    report = EvalReport(label or f"{demo.chain}/{demo.constraint}")
    jobs = [(demo, derive_seed(seed, demo.constraint, t), n_test, learner) for t in range(trials)]
    for t, (value, k, var, n) in enumerate(map_trials(_trial_summary, jobs, workers)):
        report.add(nmie=value, v_variance=var, n_points=n, k=k)
        log.info("%s trial %d: nmie=%.3e k=%d", report.label, t, value, k)
    return report


def table1(seed: int, trials: int = 50, n_train: int = 100, n_test: int = 100,
           learner: LearnerConfig = DEFAULT_LEARNER, constraints=TABLE1_CONSTRAINTS, workers: int = 1,
           **demo_overrides):
    """NMIE over repeated trials for each planar constraint.

    Returns ``(rows, reports)`` with rows ``(constraint, nmie_mean, nmie_sd)``.
    """
    rows, reports = [], {}
    for c in constraints:
        demo = default_demo_config("planar3", constraint=c, n_trajectories=n_train, **demo_overrides)
        rep = eval_nmie(demo, seed, trials, n_test, learner, label=c, workers=workers)
        s = rep.nmie_summary
        rows.append((c, s.mean, s.sd))
        reports[c] = rep
    return rows, reports


# --- controller equivalence -----------------------------------------------------

def eval_rmse(seed: int, trials: int = 20, steps: int = 100, chain_name: str = "planar3", constraint: str = "xy",
              learner: LearnerConfig = DEFAULT_LEARNER, demo: Optional[DemoConfig] = None,
              alpha: float = 1.0, learnt: Optional[ConstraintModel] = None) -> EvalReport:
    """RMSE between gradient ascent on the true and the learnt index.

    One model is learnt from a demonstration set, then ``trials`` random
    start/target pairs from the demonstration sampling ranges are run for
    ``steps`` steps under both controllers.
    """
    demo = demo or default_demo_config(chain_name, constraint=constraint)
    chain = get_chain(demo.chain)
    true_model = constraint_preset(chain, demo.constraint)
    if learnt is None:
        learnt = learn_constraint(generate_demos(demo.with_(seed=derive_seed(seed, "train")), chain),
                                  chain, config=learner).model
    report = EvalReport(f"rmse {demo.chain}/{demo.constraint}")
    base = derive_seed(seed, "rmse")
    for t in range(trials):
        rng = trajectory_rng(base, t)
        q0 = sample_start(demo, rng)
        r_star = sample_target(demo, chain, rng, true_model)
        r = trajectory_rmse(chain, true_model, learnt, q0, r_star, steps, demo.dt, alpha=alpha, strict=False)
        report.add(rmse=r.rmse, k=learnt.k, flag="" if r.ok else "diverged")
    return report


# --- scenarios --------------------------------------------------------------------

@dataclass(frozen=True)
class Scenario:
    """Fixed start, target and policies for a singular-start comparison."""

    name: str
    q0_deg: tuple
    target: tuple
    psi_star_deg: tuple
    pinv: str
    alpha: float = 10.0
    steps: int = 200
    dt: float = 0.02
    constraint: str = "xy"
    chain: str = "planar3"

    @property
    def q0(self) -> np.ndarray:
        return np.deg2rad(np.array(self.q0_deg, dtype=float))

    @property
    def pinv_policy(self):
        return PLAIN_PINV if self.pinv == "plain" else TRUNCATE_PINV


SCENARIOS = {
    # outstretched straight up, asked to reach the base: the whole command lies
    # along the singular direction
    "compare1": Scenario("compare1", (90.0 + 1e-12, 360.0, -360.0), (0.0, 0.0, 0.0),
                         (-190.0, 9.0, -307.0), "truncate"),
    # folded onto the y axis, 1e-10 deg off singular; the target keeps the task
    # command off the singular direction
    "compare2": Scenario("compare2", (90.0, -180.0, -180.0 + 1e-10), (1.0, 1.0, 0.0),
                         (-33.0, -283.0, 193.0), "plain"),
}

POLICY_ORDER = (ZERO, MANIP_GRADIENT, POINT_ATTRACTOR)


def scenario_policies(sc: Scenario, learnt: Optional[ConstraintModel]) -> dict:
    return {
        ZERO: NullPolicy(ZERO),
        MANIP_GRADIENT: NullPolicy(MANIP_GRADIENT, alpha=sc.alpha, model=learnt),
        POINT_ATTRACTOR: NullPolicy(POINT_ATTRACTOR, np.deg2rad(sc.psi_star_deg), alpha=sc.alpha),
    }


def learn_scenario_model(seed: int, constraint: str = "xy", learner: LearnerConfig = DEFAULT_LEARNER) -> LearnResult:
    demo = default_demo_config("planar3", constraint=constraint, seed=derive_seed(seed, "scenario"))
    return learn_constraint(generate_demos(demo), config=learner)


def run_scenario(sc: Scenario, learnt: Optional[ConstraintModel] = None) -> dict:
    """Run the three null policies; the gradient policy ascends ``learnt`` (true model if None)."""
    chain = get_chain(sc.chain)
    true_model = constraint_preset(chain, sc.constraint)
    b = TaskPolicy(sc.target)
    out = {}
    for name, p in scenario_policies(sc, learnt).items():
        out[name] = simulate(chain, true_model, b, p, sc.pinv_policy, sc.q0, sc.steps, sc.dt,
                             true_model=true_model, meta={"scenario": sc.name, "policy": name})
    return out


def end_effector_path(outcome: SimOutcome, chain_name: str = "planar3") -> np.ndarray:
    chain = get_chain(chain_name)
    return np.array([forward_kinematics(chain, q) for q in outcome.trajectory.states])


# --- 7-DOF analog -----------------------------------------------------------------

# Demonstrations for the 7-DOF analog scatter the start around the nominal pose
# and pull the null space towards a posture near it; see the demos preset.
def spatial7_trial(seed: int, learner: LearnerConfig = DEFAULT_LEARNER, **demo_overrides) -> TrialResult:
    demo = default_demo_config("spatial7", **demo_overrides)
    return learning_trial(demo, seed, learner=learner)


__all__ = [
    "derive_seed", "map_trials", "learning_trial", "eval_nmie", "table1", "eval_rmse", "Scenario", "SCENARIOS",
    "run_scenario", "learn_scenario_model", "end_effector_path", "spatial7_trial", "TrialResult",
    "TABLE1_CONSTRAINTS", "POLICY_ORDER", "summarize", "SPATIAL7_START_DEG",
]
