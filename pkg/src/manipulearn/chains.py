"""Forward kinematics and task Jacobians for serial revolute chains.

Two chain kinds are supported:

* ``planar`` -- links in the plane, task coordinates ``(r_x, r_y, r_theta)``.
* ``spatial_dh`` -- standard Denavit-Hartenberg chain, task coordinates are the
  Cartesian position ``(r_x, r_y, r_z)`` of the last frame.

Joint angles are never wrapped internally; only the planar orientation output
of :func:`forward_kinematics` is wrapped to ``(-pi, pi]``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError

PLANAR = "planar"
SPATIAL_DH = "spatial_dh"


def wrap_angle(a):
    """Wrap angle(s) to the half-open interval (-pi, pi]."""
    w = np.mod(np.asarray(a, dtype=float) + np.pi, 2 * np.pi) - np.pi
    w = np.where(w <= -np.pi, w + 2 * np.pi, w)
    return w if np.ndim(w) else float(w)


@dataclass(frozen=True)
class SerialChain:
    """Kinematic description of a serial chain of revolute joints.

    ``link_params`` holds one entry per joint: a link length (m) for planar
    chains, or a DH tuple ``(a, alpha, d, theta_offset)`` for spatial chains.
    """

    kind: str
    link_params: tuple
    name: str = ""
    _params: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in (PLANAR, SPATIAL_DH):
            raise ValueError(f"unknown chain kind {self.kind!r}")
        params = np.asarray(self.link_params, dtype=float)
        if params.size == 0:
            raise ValueError("chain needs at least one joint")
        if self.kind == PLANAR:
            params = params.reshape(-1)
            if np.any(params <= 0):
                raise ValueError("planar link lengths must be strictly positive")
        else:
            if params.ndim != 2 or params.shape[1] != 4:
                raise ValueError("DH parameters must be (a, alpha, d, theta_offset) tuples")
        if not np.all(np.isfinite(params)):
            raise ValueError("link parameters must be finite")
        object.__setattr__(self, "link_params", tuple(map(tuple, params)) if params.ndim == 2 else tuple(params))
        object.__setattr__(self, "_params", params)

    @property
    def dof(self) -> int:
        return len(self.link_params)

    @property
    def task_dim(self) -> int:
        return 3

    @property
    def task_labels(self) -> tuple[str, ...]:
        return ("x", "y", "theta") if self.kind == PLANAR else ("x", "y", "z")

    @property
    def angular_task_mask(self) -> np.ndarray:
        """Boolean mask of task coordinates that are angles."""
        return np.array([False, False, self.kind == PLANAR])

    @property
    def reach(self) -> float:
        if self.kind == PLANAR:
            return float(self._params.sum())
        return float(np.abs(self._params[:, 0]).sum() + np.abs(self._params[:, 2]).sum())


def planar_chain(lengths=(1.0, 1.0, 1.0), name: str = "planar3") -> SerialChain:
    return SerialChain(PLANAR, tuple(lengths), name)


# Anthropomorphic 7-joint arm (shoulder-elbow-wrist, all a = 0); link offsets
# sum to 1.26 m.
SPATIAL7_DH = (
    (0.0, -np.pi / 2, 0.36, 0.0),
    (0.0, np.pi / 2, 0.0, 0.0),
    (0.0, np.pi / 2, 0.42, 0.0),
    (0.0, -np.pi / 2, 0.0, 0.0),
    (0.0, -np.pi / 2, 0.40, 0.0),
    (0.0, np.pi / 2, 0.0, 0.0),
    (0.0, 0.0, 0.08, 0.0),
)


def spatial7_chain(dh=SPATIAL7_DH, name: str = "spatial7") -> SerialChain:
    return SerialChain(SPATIAL_DH, tuple(dh), name)


PRESETS = {
    "planar3": planar_chain,
    "spatial7": spatial7_chain,
}


def get_chain(name: str, link_params=None) -> SerialChain:
    """Load a chain preset by name, optionally overriding its link parameters."""
    try:
        factory = PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown chain preset {name!r}; known: {sorted(PRESETS)}") from None
    if link_params is None:
        return factory()
    return factory(tuple(link_params), name=name)


def _check_q(chain: SerialChain, q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape != (chain.dof,):
        raise DimensionError(f"expected {chain.dof} joint angles, got shape {q.shape}")
    if not np.all(np.isfinite(q)):
        raise ValueError("joint angles must be finite")
    return q


def dh_transform(a, alpha, d, theta):
    ct, st = np.cos(theta), np.sin(theta)
    ca, sa = np.cos(alpha), np.sin(alpha)
    return np.array([
        [ct, -st * ca, st * sa, a * ct],
        [st, ct * ca, -ct * sa, a * st],
        [0.0, sa, ca, d],
        [0.0, 0.0, 0.0, 1.0],
    ])


def dh_frames(chain: SerialChain, q) -> list[np.ndarray]:
    """Homogeneous transforms of frames 0..dof in the base frame."""
    q = _check_q(chain, q)
    frames = [np.eye(4)]
    for (a, alpha, d, offset), qi in zip(chain._params, q):
        frames.append(frames[-1] @ dh_transform(a, alpha, d, qi + offset))
    return frames


def forward_kinematics(chain: SerialChain, q) -> np.ndarray:
    """Task pose of the end effector."""
    q = _check_q(chain, q)
    if chain.kind == PLANAR:
        phi = np.cumsum(q)
        L = chain._params
        return np.array([L @ np.cos(phi), L @ np.sin(phi), wrap_angle(phi[-1])])
    return dh_frames(chain, q)[-1][:3, 3].copy()


def jacobian(chain: SerialChain, q) -> np.ndarray:
    """Analytic task Jacobian ``dr/dq`` (3 x dof)."""
    q = _check_q(chain, q)
    if chain.kind == PLANAR:
        phi = np.cumsum(q)
        L = chain._params
        # column i sums link contributions from joint i outwards
        jx = -np.cumsum((L * np.sin(phi))[::-1])[::-1]
        jy = np.cumsum((L * np.cos(phi))[::-1])[::-1]
        return np.vstack([jx, jy, np.ones_like(q)])
    frames = dh_frames(chain, q)
    p_end = frames[-1][:3, 3]
    J = np.empty((3, chain.dof))
    for i in range(chain.dof):
        z = frames[i][:3, 2]
        J[:, i] = np.cross(z, p_end - frames[i][:3, 3])
    return J


def jacobians(chain: SerialChain, Q) -> np.ndarray:
    """Jacobians for a batch of joint states, shape (n, 3, dof)."""
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    if Q.shape[1] != chain.dof:
        raise DimensionError(f"expected {chain.dof} columns, got {Q.shape[1]}")
    if chain.kind == PLANAR:
        phi = np.cumsum(Q, axis=1)
        L = chain._params
        jx = -np.cumsum((L * np.sin(phi))[:, ::-1], axis=1)[:, ::-1]
        jy = np.cumsum((L * np.cos(phi))[:, ::-1], axis=1)[:, ::-1]
        return np.stack([jx, jy, np.ones_like(Q)], axis=1)
    return np.stack([jacobian(chain, q) for q in Q])
