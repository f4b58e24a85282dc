"""Constraint algebra: A(q) = Lambda J(q), pseudoinverses, projectors, manipulability."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .chains import SerialChain, jacobian
from .errors import DimensionError, NumericalDet, SingularConstraint

PLAIN = "plain"
TRUNCATE = "truncate"
MATLAB_LIKE = "matlab_like"
FIXED = "fixed"

# Gram determinants down to this negative value are treated as round-off.
DET_CLAMP = -1e-12


@dataclass(frozen=True)
class PinvPolicy:
    """How singular values are handled when forming a pseudoinverse.

    ``plain`` inverts every strictly positive singular value, however small.
    ``truncate`` zeroes reciprocals of singular values at or below a threshold,
    either ``max(rows, cols) * spacing(sigma_max)`` (``matlab_like``) or
    ``fixed_threshold``.
    """

    mode: str = TRUNCATE
    threshold_rule: str = MATLAB_LIKE
    fixed_threshold: float = 0.0

    def __post_init__(self):
        if self.mode not in (PLAIN, TRUNCATE):
            raise ValueError(f"unknown pseudoinverse mode {self.mode!r}")
        if self.threshold_rule not in (MATLAB_LIKE, FIXED):
            raise ValueError(f"unknown threshold rule {self.threshold_rule!r}")
        if self.fixed_threshold < 0:
            raise ValueError("fixed_threshold must be nonnegative")


PLAIN_PINV = PinvPolicy(PLAIN)
TRUNCATE_PINV = PinvPolicy(TRUNCATE)


def matlab_threshold(A) -> float:
    """Default rank tolerance of MATLAB's ``pinv``: max(size(A)) * eps(norm(A))."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    sigma_max = np.linalg.norm(A, 2) if A.size else 0.0
    return max(A.shape) * float(np.spacing(sigma_max))


def pseudoinverse(A, policy: PinvPolicy = TRUNCATE_PINV) -> np.ndarray:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.size == 0:
        raise DimensionError("pseudoinverse of an empty matrix")
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    if policy.mode == PLAIN:
        if not np.any(s > 0):
            raise SingularConstraint("plain pseudoinverse of a matrix with no nonzero singular value")
        keep = s > 0
    else:
        if policy.threshold_rule == MATLAB_LIKE:
            tol = max(A.shape) * float(np.spacing(s[0]))
        else:
            tol = policy.fixed_threshold
        keep = s > tol
    s_inv = np.zeros_like(s)
    s_inv[keep] = 1.0 / s[keep]
    return (Vt.T * s_inv) @ U.T


def nullspace_projector(A, policy: PinvPolicy = TRUNCATE_PINV) -> np.ndarray:
    """N = I - pinv(A) A."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    return np.eye(A.shape[1]) - pseudoinverse(A, policy) @ A


@dataclass(frozen=True, eq=False)
class ConstraintModel:
    """Constraint A(q) = lam @ Phi(q) with the Jacobian as feature matrix.

    All-zero rows of ``lam`` are dropped on construction, so ``k`` counts only
    the effective constraint rows.
    """

    lam: np.ndarray
    feature_kind: str = "jacobian"
    name: str = ""

    def __post_init__(self):
        lam = np.atleast_2d(np.asarray(self.lam, dtype=float))
        if lam.ndim != 2:
            raise DimensionError("selection matrix must be 2-D")
        if not np.all(np.isfinite(lam)):
            raise ValueError("selection matrix must be finite")
        lam = lam[np.any(lam != 0.0, axis=1)]
        if lam.shape[0] == 0:
            raise ValueError("selection matrix has no nonzero rows")
        if lam.shape[0] > lam.shape[1]:
            raise DimensionError(f"k={lam.shape[0]} exceeds feature dimension {lam.shape[1]}")
        if self.feature_kind != "jacobian":
            raise ValueError(f"unsupported feature kind {self.feature_kind!r}")
        lam.setflags(write=False)
        object.__setattr__(self, "lam", lam)

    @property
    def k(self) -> int:
        return self.lam.shape[0]

    @property
    def dim_phi(self) -> int:
        return self.lam.shape[1]

    def normalized(self) -> ConstraintModel:
        """Copy with every row scaled to unit Euclidean norm."""
        return ConstraintModel(self.lam / np.linalg.norm(self.lam, axis=1, keepdims=True),
                               self.feature_kind, self.name)

    def __eq__(self, other):
        if not isinstance(other, ConstraintModel):
            return NotImplemented
        return self.feature_kind == other.feature_kind and np.array_equal(self.lam, other.lam)

    def __hash__(self):
        return hash((self.feature_kind, self.lam.tobytes()))


# Coordinate selections of the task space, in task-coordinate order.
SELECTIONS = {
    "planar3": {
        "xy": ("x", "y"),
        "xtheta": ("x", "theta"),
        "ytheta": ("y", "theta"),
        "x": ("x",),
        "y": ("y",),
        "theta": ("theta",),
        "full": ("x", "y", "theta"),
    },
    "spatial7": {
        "x": ("x",),
        "y": ("y",),
        "z": ("z",),
        "xy": ("x", "y"),
        "full": ("x", "y", "z"),
    },
}


def selection_matrix(labels: tuple[str, ...], coords) -> np.ndarray:
    """Square selection matrix with ones on the diagonal of chosen coordinates.

    Unselected coordinates leave all-zero rows, which ConstraintModel drops.
    """
    lam = np.zeros((len(labels), len(labels)))
    for c in coords:
        i = labels.index(c)
        lam[i, i] = 1.0
    return lam


def constraint_preset(chain: SerialChain, constraint_id: str) -> ConstraintModel:
    """True constraint model for a named coordinate selection."""
    table = SELECTIONS.get(chain.name) or SELECTIONS["planar3" if chain.kind == "planar" else "spatial7"]
    try:
        coords = table[constraint_id]
    except KeyError:
        raise KeyError(f"unknown constraint {constraint_id!r}; known: {sorted(table)}") from None
    return ConstraintModel(selection_matrix(chain.task_labels, coords), name=constraint_id)


def constraint_matrix(model: ConstraintModel, chain: SerialChain, q) -> np.ndarray:
    if model.dim_phi != chain.task_dim:
        raise DimensionError(f"model feature dimension {model.dim_phi} != chain task dimension {chain.task_dim}")
    return model.lam @ jacobian(chain, q)


def gram_det(A) -> float:
    """det(A A^T), clamped at zero for round-off negatives."""
    A = np.atleast_2d(A)
    G = A @ A.T
    try:
        L = np.linalg.cholesky(G)
        return float(np.prod(np.diag(L)) ** 2)
    except np.linalg.LinAlgError:
        pass
    det = float(np.linalg.det(G))
    if det < DET_CLAMP:
        raise NumericalDet(f"Gram determinant {det:.3e} is negative beyond round-off")
    return max(det, 0.0)


def manipulability_of(A) -> float:
    """sqrt(det(A A^T)) of an explicit constraint matrix.

    Taken as the product of singular values of A rather than through the Gram
    matrix, which would square the conditioning and leave ~1e-8 at exact
    singularities.
    """
    A = np.atleast_2d(A)
    if A.shape[0] > A.shape[1]:
        return 0.0
    return float(np.prod(np.linalg.svd(A, compute_uv=False)))


def manipulability(model: ConstraintModel, chain: SerialChain, q) -> float:
    """Manipulability index of the constrained chain at ``q``.

    Applied to the true model this is v(q); applied to a learnt model it gives
    the estimate used by the gradient policy.
    """
    return manipulability_of(constraint_matrix(model, chain, q))
