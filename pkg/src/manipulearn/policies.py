"""Task-space attractor and null-space policies."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .chains import SerialChain, forward_kinematics, wrap_angle
from .constraints import ConstraintModel, manipulability

ZERO = "zero"
POINT_ATTRACTOR = "point_attractor"
MANIP_GRADIENT = "manip_gradient"
NULL_KINDS = (ZERO, POINT_ATTRACTOR, MANIP_GRADIENT)


@dataclass(frozen=True)
class TaskPolicy:
    """Linear point attractor towards ``r_star`` in task space."""

    r_star: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.r_star, dtype=float)
        if not np.all(np.isfinite(r)):
            raise ValueError("task target must be finite")
        object.__setattr__(self, "r_star", r)


@dataclass(frozen=True)
class NullPolicy:
    """Null-space policy configuration.

    ``model`` optionally pins the constraint whose manipulability is ascended
    (e.g. a learnt model while the controller executes the true constraint).
    When omitted the executing model is used.
    """

    kind: str = ZERO
    psi_star: Optional[np.ndarray] = None
    h: float = 1e-6
    alpha: float = 1.0
    model: Optional[ConstraintModel] = None

    def __post_init__(self):
        if self.kind not in NULL_KINDS:
            raise ValueError(f"unknown null policy {self.kind!r}; expected one of {NULL_KINDS}")
        if self.h <= 0 or self.alpha <= 0:
            raise ValueError("h and alpha must be positive")
        if self.kind == POINT_ATTRACTOR:
            if self.psi_star is None:
                raise ValueError("point attractor needs psi_star")
            psi = np.asarray(self.psi_star, dtype=float)
            if not np.all(np.isfinite(psi)):
                raise ValueError("psi_star must be finite")
            object.__setattr__(self, "psi_star", psi)


def task_error(b: TaskPolicy, chain: SerialChain, q) -> np.ndarray:
    """Full task-space error r* - r with angular coordinates wrapped."""
    d = b.r_star - forward_kinematics(chain, q)
    mask = chain.angular_task_mask
    d[mask] = wrap_angle(d[mask])
    return d


def task_policy(b: TaskPolicy, chain: SerialChain, model: ConstraintModel, q) -> np.ndarray:
    """Constrained task command: lam @ (r* - r)."""
    return model.lam @ task_error(b, chain, q)


def manipulability_gradient(model: ConstraintModel, chain: SerialChain, q, h: float = 1e-6) -> np.ndarray:
    """Finite-difference gradient of the manipulability index.

    Central differences are used per axis. Where both one-sided slopes point
    uphill (v has a local minimum along that axis, as at the kink of v on a
    singular configuration) the steeper one-sided slope is returned instead,
    since the central difference of a symmetric kink is zero.
    """
    q = np.asarray(q, dtype=float)
    v0 = manipulability(model, chain, q)
    g = np.empty_like(q)
    e = np.zeros_like(q)
    for i in range(q.size):
        e[i] = h
        vp = manipulability(model, chain, q + e)
        vm = manipulability(model, chain, q - e)
        e[i] = 0.0
        up, down = vp - v0, vm - v0
        if up > 0 and down > 0:
            g[i] = up / h if up >= down else -down / h
        else:
            g[i] = (vp - vm) / (2 * h)
    return g


def null_policy(p: NullPolicy, model: ConstraintModel, chain: SerialChain, q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if p.kind == ZERO:
        return np.zeros_like(q)
    if p.kind == POINT_ATTRACTOR:
        return p.alpha * (p.psi_star - q)
    target = p.model if p.model is not None else model
    return p.alpha * manipulability_gradient(target, chain, q, p.h)
