"""Resolved-rate execution of u = pinv(A) b + N pi with explicit Euler integration."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .chains import SerialChain
from .constraints import (
    ConstraintModel,
    PinvPolicy,
    TRUNCATE_PINV,
    constraint_matrix,
    manipulability,
    pseudoinverse,
)
from .errors import SingularConstraint
from .policies import NullPolicy, TaskPolicy, null_policy, task_policy

COMPLETED = "completed"
STUCK = "stuck"
DIVERGED = "diverged"
SINGULAR_ABORT = "singular_abort"

DIVERGENCE_LIMIT = 1e9


@dataclass
class Trajectory:
    """Recorded joint states and the joint velocities applied at each of them."""

    states: np.ndarray
    actions: np.ndarray
    dt: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.states = np.atleast_2d(np.asarray(self.states, dtype=float))
        self.actions = np.asarray(self.actions, dtype=float).reshape(-1, self.states.shape[1])
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        extra = len(self.states) - len(self.actions)
        if extra not in (0, 1):
            raise ValueError(f"{len(self.states)} states do not match {len(self.actions)} actions")

    def __len__(self):
        return len(self.states)

    def pairs(self) -> tuple[np.ndarray, np.ndarray]:
        """(state, action) pairs, dropping a trailing action-less state."""
        n = len(self.actions)
        return self.states[:n], self.actions


@dataclass
class SimOutcome:
    trajectory: Trajectory
    status: str
    manip_trace: np.ndarray
    task_error_trace: np.ndarray

    @property
    def final_state(self) -> np.ndarray:
        return self.trajectory.states[-1]


@dataclass
class StepParts:
    """Decomposition of one control action."""

    u: np.ndarray
    task: np.ndarray
    null: np.ndarray
    A: np.ndarray
    b: np.ndarray


def control_parts(chain: SerialChain, model: ConstraintModel, b: TaskPolicy, p: NullPolicy,
                  policy: PinvPolicy, q) -> StepParts:
    q = np.asarray(q, dtype=float)
    A = constraint_matrix(model, chain, q)
    A_pinv = pseudoinverse(A, policy)
    bq = task_policy(b, chain, model, q)
    N = np.eye(chain.dof) - A_pinv @ A
    u_task = A_pinv @ bq
    if p.kind == "zero":
        u_null = np.zeros(chain.dof)
    else:
        u_null = N @ null_policy(p, model, chain, q)
    return StepParts(u_task + u_null, u_task, u_null, A, bq)


def control_step(chain: SerialChain, model: ConstraintModel, b: TaskPolicy, p: NullPolicy,
                 policy: PinvPolicy, q) -> np.ndarray:
    """Joint velocity u = pinv(A) b + N pi. No clipping is applied."""
    return control_parts(chain, model, b, p, policy, q).u


def simulate(chain: SerialChain, model: ConstraintModel, b: TaskPolicy, p: NullPolicy,
             pinv_policy: PinvPolicy = TRUNCATE_PINV, q0=None, steps: int = 100, dt: float = 0.02,
             true_model: Optional[ConstraintModel] = None, meta: Optional[dict] = None,
             stuck_speed: float = 1e-12, stuck_steps: int = 5, tolerance: float = 1e-3,
             divergence_limit: float = DIVERGENCE_LIMIT) -> SimOutcome:
    """Integrate ``steps`` control steps from ``q0``.

    The manipulability trace is evaluated on ``true_model`` when given, else on
    the executing ``model``. The run ends early on divergence (any joint beyond
    ``divergence_limit`` or non-finite) or on a singular abort; a stuck run keeps
    integrating so its trajectory covers the full horizon.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    trace_model = true_model if true_model is not None else model
    q = np.asarray(q0, dtype=float).copy()
    states, actions, manip, errs = [q.copy()], [], [manipulability(trace_model, chain, q)], []
    status = COMPLETED
    slow = 0
    ever_stuck = False
    for _ in range(steps):
        try:
            parts = control_parts(chain, model, b, p, pinv_policy, q)
        except SingularConstraint:
            status = SINGULAR_ABORT
            break
        err = float(np.linalg.norm(parts.b))
        errs.append(err)
        u = parts.u
        actions.append(u)
        speed = np.linalg.norm(u)
        if speed < stuck_speed and err > tolerance:
            slow += 1
            ever_stuck |= slow >= stuck_steps
        else:
            slow = 0
        q = q + dt * u
        states.append(q.copy())
        if not np.all(np.isfinite(q)) or np.any(np.abs(q) > divergence_limit):
            status = DIVERGED
            manip.append(manipulability(trace_model, chain, q) if np.all(np.isfinite(q)) else np.nan)
            break
        manip.append(manipulability(trace_model, chain, q))
    if status == COMPLETED and ever_stuck:
        final_err = float(np.linalg.norm(task_policy(b, chain, model, q)))
        if final_err > tolerance:
            status = STUCK
    traj = Trajectory(np.array(states), np.array(actions).reshape(-1, chain.dof), dt, dict(meta or {}))
    return SimOutcome(traj, status, np.array(manip), np.array(errs))
