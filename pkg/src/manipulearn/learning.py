"""Learning the constraint from demonstrations.

Two stages:

1. :func:`separate_null_component` fits a smooth model of the null-space part
   of the demonstrated actions. The fit minimizes ``sum_n ||P_n u_n - w_n||^2``
   where ``w_n`` is the model's prediction at ``q_n`` and ``P_n`` projects onto
   ``w_n``; the true null component makes this zero because the task and
   null-space parts of every action are orthogonal.
2. :func:`learn_lambda` estimates selection rows ``Lambda`` so that the
   predicted null motion is annihilated by ``Lambda J(q_n)``, i.e. it minimizes
   ``sum_n w_n^T pinv(Lambda J_n) (Lambda J_n) w_n``.
"""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.cluster.vq import kmeans2
from scipy.optimize import minimize
from scipy.spatial.distance import pdist

from .chains import SerialChain, get_chain, jacobians
from .constraints import ConstraintModel
from .errors import DegenerateData

log = logging.getLogger(__name__)


RBF = "rbf"
QUADRATIC = "quadratic"
AFFINE = "affine"
MODEL_KINDS = (AFFINE, QUADRATIC, RBF)
_TAIL = {AFFINE: 1, QUADRATIC: 2}

# minimum share of null-motion energy the features must see for rows to be identifiable
VISIBLE_FLOOR = 1e-10


@dataclass(frozen=True)
class LearnerConfig:
    """Learner hyper-parameters.

    ``candidates`` lists the null-component model families tried; with more
    than one, the family with the lowest held-out separation objective under
    trajectory-wise ``cv_folds``-fold cross-validation is refit on all data.

    With ``polish_rows`` the greedy rows are refined against the raw actions
    (see :func:`polish_rows`) with a polynomial policy of ``polish_degree``,
    keeping the selected rank.

    RBF capacity follows the data: the weight count ``dof * n_features`` is
    held to ``param_budget`` times the number of points. A quadratic tail is
    used while it fits in half the budget, else an affine one; an explicit
    ``tail_degree`` overrides that choice.
    """

    candidates: tuple = (RBF,)
    cv_folds: int = 5
    max_centers: int = 100
    ridge: float = 1e-8
    max_iter: int = 100
    tol: float = 1e-10
    refine: bool = True
    refine_max_iter: int = 1000
    refine_tol: float = 1e-14
    basis_rcond: float = 1e-10
    width_scale: float = 2.0
    tail_degree: Optional[int] = None
    param_budget: float = 0.4
    kmeans_seed: int = 0
    grid: int = 36
    n_starts: int = 4
    angle_tol: float = 1e-10
    eps_rank: float = 1e-3
    polish_rows: bool = False
    polish_degree: int = 2
    polish_step: float = 0.05
    polish_max_eval: int = 1000
    polish_ftol: float = 1e-20

    def __post_init__(self):
        object.__setattr__(self, "candidates", tuple(self.candidates))
        if not self.candidates or any(c not in MODEL_KINDS for c in self.candidates):
            raise ValueError(f"candidates must be a nonempty subset of {MODEL_KINDS}")
        if self.cv_folds < 2:
            raise ValueError("cv_folds must be >= 2")
        if self.tail_degree not in (None, 0, 1, 2):
            raise ValueError("tail_degree must be 0, 1, 2 or None")
        if self.polish_degree not in (1, 2):
            raise ValueError("polish_degree must be 1 or 2")
        if self.param_budget <= 0:
            raise ValueError("param_budget must be positive")
        if self.eps_rank <= 0 or self.ridge < 0:
            raise ValueError("eps_rank must be positive and ridge nonnegative")

    def digest(self) -> str:
        blob = json.dumps(self.__dict__, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


DEFAULT_LEARNER = LearnerConfig()


def monomials(Q: np.ndarray, degree: int) -> np.ndarray:
    """Columns 1, q_i and (degree 2) q_i q_j for i <= j."""
    cols = [np.ones((len(Q), 1)), Q]
    if degree >= 2:
        i, j = np.triu_indices(Q.shape[1])
        cols.append(Q[:, i] * Q[:, j])
    return np.hstack(cols)


@dataclass
class NullComponentModel:
    """Linear-in-features regression q -> predicted null action.

    ``rbf`` features are the Gaussians ``exp(-|q - c_i|^2 / 2 width^2)``
    followed by all monomials of ``q`` up to ``tail_degree``; ``affine`` and
    ``quadratic`` use the monomials alone.
    """

    centers: np.ndarray
    width: float
    weights: np.ndarray  # (dof, n_features)
    tail_degree: int = 2
    objective_trace: list = field(default_factory=list)
    kind: str = RBF
    cv_scores: dict = field(default_factory=dict)

    def __post_init__(self):
        self.centers = np.asarray(self.centers, dtype=float)
        self.weights = np.atleast_2d(np.asarray(self.weights, dtype=float))
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.tail_degree not in (0, 1, 2):
            raise ValueError("tail_degree must be 0, 1 or 2")
        if self.kind == RBF:
            self.centers = np.atleast_2d(self.centers)
            if len(self.centers) < 1:
                raise ValueError("need at least one RBF center")
            if not self.width > 0:
                raise ValueError("RBF width must be positive")
        elif self.tail_degree < 1:
            raise ValueError("polynomial models need tail_degree >= 1")

    @property
    def n_centers(self) -> int:
        return len(self.centers) if self.kind == RBF else 0

    def features(self, Q) -> np.ndarray:
        Q = np.atleast_2d(np.asarray(Q, dtype=float))
        cols = []
        if self.kind == RBF:
            d2 = ((Q[:, None, :] - self.centers[None, :, :]) ** 2).sum(-1)
            cols.append(np.exp(-d2 / (2 * self.width**2)))
        if self.tail_degree >= 1:
            cols.append(monomials(Q, self.tail_degree))
        return np.hstack(cols)

    def predict(self, Q) -> np.ndarray:
        return self.features(Q) @ self.weights.T

    @property
    def objective(self) -> float:
        return self.objective_trace[-1] if self.objective_trace else float("nan")


def projected_targets(W: np.ndarray, U: np.ndarray) -> np.ndarray:
    """P_n u_n with P_n the projection onto the current prediction w_n."""
    sq = np.einsum("nd,nd->n", W, W)
    coef = np.divide(np.einsum("nd,nd->n", W, U), sq, out=np.zeros_like(sq), where=sq > 0)
    return coef[:, None] * W


def separation_objective(W: np.ndarray, U: np.ndarray) -> float:
    return float(((projected_targets(W, U) - W) ** 2).sum())


def _residual_blocks(W: np.ndarray, U: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Residuals r_n = P_n u_n - w_n and their Jacobians d r_n / d w_n."""
    dof = W.shape[1]
    sq = np.einsum("nd,nd->n", W, W)
    inv = np.divide(1.0, sq, out=np.zeros_like(sq), where=sq > 0)
    c = np.einsum("nd,nd->n", W, U) * inv
    r = c[:, None] * W - W
    D = (np.einsum("ni,nj->nij", W, U) * inv[:, None, None]
         + (c[:, None, None] - 1.0) * np.eye(dof)
         - 2 * c[:, None, None] * np.einsum("ni,nj->nij", W, W) * inv[:, None, None])
    return r, D


def _levenberg_marquardt(F: np.ndarray, U: np.ndarray, theta: np.ndarray, max_iter: int,
                         tol: float) -> tuple[np.ndarray, list]:
    """Minimize the separation objective over linear weights ``theta`` (p, dof).

    Exploits w_n = F_n theta: the Gauss-Newton matrix is assembled from
    per-point (dof x dof) blocks instead of the full residual Jacobian.
    """
    p, dof = theta.shape
    r, D = _residual_blocks(F @ theta, U)
    E = float((r**2).sum())
    trace = [E]
    damping = 1e-3
    for _ in range(max_iter):
        M = np.einsum("nij,nik->njk", D, D)
        H = np.empty((p, dof, p, dof))
        for j in range(dof):
            for k in range(j, dof):
                H[:, j, :, k] = F.T @ (F * M[:, j, k][:, None])
                if k != j:
                    H[:, k, :, j] = H[:, j, :, k].T
        H = H.reshape(p * dof, p * dof)
        g = (F.T @ np.einsum("nij,ni->nj", D, r)).reshape(-1)
        # Marquardt scaling, floored so flat directions stay well posed
        scaling = np.diag(H) + 1e-12 * np.diag(H).max()
        improved = False
        for _ in range(30):
            try:
                step = np.linalg.solve(H + np.diag(damping * scaling), -g)
            except np.linalg.LinAlgError:
                damping *= 10
                continue
            cand = theta + step.reshape(p, dof)
            r_new, D_new = _residual_blocks(F @ cand, U)
            E_new = float((r_new**2).sum())
            if E_new < E:
                improved = True
                damping = max(damping / 3, 1e-12)
                break
            damping *= 4
        if not improved:
            break
        decrease = E - E_new
        theta, r, D, E = cand, r_new, D_new, E_new
        trace.append(E)
        if decrease <= tol * max(trace[0], 1e-300):
            break
    return theta, trace


def n_tail_terms(dof: int, degree: int) -> int:
    """Monomials of ``dof`` variables up to ``degree`` (degree <= 2)."""
    return [1, 1 + dof, 1 + dof + dof * (dof + 1) // 2][degree]


def rbf_size(n_points: int, dof: int, config: LearnerConfig = DEFAULT_LEARNER) -> tuple[int, int]:
    """Number of centers and tail degree for ``n_points`` samples."""
    budget = config.param_budget * n_points / dof
    tail = config.tail_degree
    if tail is None:
        tail = 2 if n_tail_terms(dof, 2) <= budget / 2 else 1
    n_centers = int(min(config.max_centers, budget - n_tail_terms(dof, tail)))
    return max(1, n_centers), tail


def _build_model(Q: np.ndarray, kind: str, dof: int, config: LearnerConfig) -> NullComponentModel:
    if kind != RBF:
        return NullComponentModel(np.zeros((0, dof)), 1.0, np.zeros((dof, 1)), _TAIL[kind], kind=kind)
    n_centers, tail = rbf_size(len(Q), dof, config)
    unique = np.unique(Q, axis=0)
    if n_centers >= len(unique):
        centers = unique
    else:
        centers, _ = kmeans2(Q, n_centers, seed=np.random.default_rng(config.kmeans_seed), minit="++")
    width = float(np.median(pdist(centers))) if len(centers) > 1 else 1.0
    if not width > 0:
        width = 1.0
    return NullComponentModel(centers, config.width_scale * width, np.zeros((dof, 1)), tail)


def fit_null_model(Q, U, kind: str = RBF, config: LearnerConfig = DEFAULT_LEARNER) -> NullComponentModel:
    """Fit one model family to the separation objective.

    Starts from a regression of the raw actions, alternates between fixing the
    projections from the current prediction and a ridge regression onto the
    projected actions, then polishes the weights with Levenberg-Marquardt on
    the same objective. The fixed-point alternation alone stalls far from the
    optimum, so the polish does most of the work.
    """
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    U = np.atleast_2d(np.asarray(U, dtype=float))
    model = _build_model(Q, kind, U.shape[1], config)
    F = model.features(Q)
    G = F.T @ F + config.ridge * np.eye(F.shape[1])
    chol = np.linalg.cholesky(G)

    def fit(T):
        return np.linalg.solve(chol.T, np.linalg.solve(chol, F.T @ T))

    # the raw-action initialization scores a trivial zero, so the trace starts
    # from the first fit
    theta = fit(U)
    trace = [separation_objective(F @ theta, U)]
    for _ in range(config.max_iter):
        cand = fit(projected_targets(F @ theta, U))
        obj = separation_objective(F @ cand, U)
        if obj > trace[-1]:
            break
        theta = cand
        trace.append(obj)
        if trace[-2] - trace[-1] < config.tol:
            break
    if config.refine:
        # polish in an orthonormal basis of the feature span; the raw Gaussian
        # features are too collinear for well-conditioned Gauss-Newton steps
        Uf, S, Vt = np.linalg.svd(F, full_matrices=False)
        keep = S > config.basis_rcond * S[0]
        basis = Uf[:, keep]
        coords, lm_trace = _levenberg_marquardt(basis, U, basis.T @ (F @ theta),
                                                config.refine_max_iter, config.refine_tol)
        theta = Vt[keep].T @ (coords / S[keep, None])
        trace.extend(lm_trace[1:])
    model.weights = theta.T.copy()
    model.objective_trace = trace
    return model


def cross_validate(Q, U, groups, kind: str, config: LearnerConfig = DEFAULT_LEARNER) -> float:
    """Held-out separation objective, relative to the held-out action energy.

    Folds never split a group (trajectory). A model that absorbed the
    target-dependent task part of the training actions scores badly on unseen
    targets, while the consistent null-space part carries over.
    """
    labels = np.unique(groups)
    folds = min(config.cv_folds, len(labels))
    fold_of = {g: i % folds for i, g in enumerate(labels)}
    fold = np.array([fold_of[g] for g in groups])
    num = den = 0.0
    for f in range(folds):
        test = fold == f
        m = fit_null_model(Q[~test], U[~test], kind, config)
        num += separation_objective(m.predict(Q[test]), U[test])
        den += float((U[test] ** 2).sum())
    return num / den


def separate_null_component(Q, U, config: LearnerConfig = DEFAULT_LEARNER, groups=None) -> NullComponentModel:
    """Fit the null-space component of actions ``U`` observed at states ``Q``.

    ``groups`` labels the trajectory of each point. With several candidate
    families the one with the best trajectory-wise cross-validation score is
    refit on everything; without groups, contiguous blocks of ten points stand
    in for trajectories.

    With a single constrained coordinate on a highly redundant chain a
    flexible model can reproduce the whole action along each demonstrated path
    (also a zero of the objective), so capacity has to be chosen from data.
    """
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    U = np.atleast_2d(np.asarray(U, dtype=float))
    n, dof = U.shape
    if n < 2:
        raise DegenerateData("need at least two data points")
    if not np.abs(U).max() > 1e-12:
        raise DegenerateData("all demonstrated actions are (near) zero")
    groups = np.arange(n) // 10 if groups is None else np.asarray(groups)
    if len(groups) != n:
        raise ValueError("groups must label every data point")
    scores = {}
    if len(config.candidates) > 1 and len(np.unique(groups)) >= 2:
        for kind in config.candidates:
            scores[kind] = cross_validate(Q, U, groups, kind, config)
        best = min(config.candidates, key=lambda k: scores[k])
    else:
        best = config.candidates[-1]
    model = fit_null_model(Q, U, best, config)
    model.cv_scores = scores
    log.debug("null-component model %s, cv scores %s", best, scores)
    return model


# --- constraint rows ---------------------------------------------------------


def sphere_point(angles) -> np.ndarray:
    """Unit vector in R^(m+1) from m generalized spherical angles."""
    angles = np.atleast_1d(np.asarray(angles, dtype=float))
    x = np.ones(angles.size + 1)
    s = 1.0
    for i, a in enumerate(angles):
        x[i] = s * np.cos(a)
        s *= np.sin(a)
    x[-1] = s
    return x


def orthogonal_complement(rows: np.ndarray, dim: int) -> np.ndarray:
    """Orthonormal basis (as columns) of the complement of ``rows``' span."""
    if len(rows) == 0:
        return np.eye(dim)
    _, _, Vt = np.linalg.svd(np.atleast_2d(rows), full_matrices=True)
    return Vt[len(rows):].T


def constraint_objective(rows: np.ndarray, Phi: np.ndarray, W: np.ndarray) -> float:
    """sum_n w_n^T pinv(A_n) A_n w_n with A_n = rows @ Phi_n."""
    rows = np.atleast_2d(rows)
    A = np.einsum("kp,npd->nkd", rows, Phi)
    if len(rows) == 1:
        a = A[:, 0, :]
        sq = np.einsum("nd,nd->n", a, a)
        num = np.einsum("nd,nd->n", a, W) ** 2
        return float(np.divide(num, sq, out=np.zeros_like(sq), where=sq > 0).sum())
    k, dof = A.shape[1:]
    rcond = max(k, dof) * np.finfo(float).eps
    P = np.linalg.pinv(A, rcond=rcond)
    proj = np.einsum("ndk,nk->nd", P, np.einsum("nkd,nd->nk", A, W))
    return float(np.einsum("nd,nd->n", W, proj).sum())


@dataclass
class LambdaEstimate:
    rows: np.ndarray
    objective_value: float
    k: int
    angles: list = field(default_factory=list)
    objective_trace: list = field(default_factory=list)
    reference: float = float("nan")
    config_hash: str = ""
    polish_residual: float = float("nan")

    def __post_init__(self):
        self.rows = np.atleast_2d(np.asarray(self.rows, dtype=float))
        if self.k != len(self.rows):
            raise ValueError("k does not match the number of rows")


def _angle_grid(m: int, n: int) -> np.ndarray:
    """Grid over m angles covering the unit sphere up to sign."""
    if m == 0:
        return np.zeros((1, 0))
    axes = [np.linspace(0.0, np.pi, n) for _ in range(m - 1)]
    axes.append(np.linspace(0.0, np.pi, n, endpoint=False))
    return np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, m)


def _best_row(prev: np.ndarray, Phi: np.ndarray, W: np.ndarray, config: LearnerConfig):
    dim = Phi.shape[1]
    B = orthogonal_complement(prev, dim)
    m = B.shape[1] - 1

    def objective(angles):
        row = B @ sphere_point(angles)
        return constraint_objective(np.vstack([prev, row]) if len(prev) else row, Phi, W)

    grid = _angle_grid(m, config.grid)
    if m == 0:
        return B @ sphere_point([]), np.zeros(0), objective(np.zeros(0))
    values = np.array([objective(g) for g in grid])
    order = np.argsort(values, kind="stable")[: config.n_starts]
    best = None
    for idx in order:
        res = minimize(objective, grid[idx], method="BFGS",
                       options={"gtol": config.angle_tol, "maxiter": 500})
        cand = (res.fun, res.x) if res.fun <= values[idx] else (values[idx], grid[idx])
        if best is None or cand[0] < best[0]:
            best = cand
    fun, angles = best
    return B @ sphere_point(angles), np.asarray(angles), float(fun)


def learn_lambda(Q, W, chain: SerialChain, k_max: Optional[int] = None,
                 config: LearnerConfig = DEFAULT_LEARNER) -> LambdaEstimate:
    """Greedy row-by-row estimate of the selection matrix.

    Each new row is a unit vector orthogonal to the rows already accepted. A
    row is accepted while the objective increase it causes stays below
    ``eps_rank`` times the objective of the full feature space (the null-space
    energy the features can see), i.e. while it still (almost) annihilates the
    null-space motion; at least one row is always kept.
    """
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    W = np.atleast_2d(np.asarray(W, dtype=float))
    Phi = jacobians(chain, Q)
    dim = Phi.shape[1]
    k_max = dim if k_max is None else k_max
    if not 1 <= k_max <= dim:
        raise ValueError(f"k_max must be in [1, {dim}]")
    reference = constraint_objective(np.eye(dim), Phi, W)
    # null motion the features cannot see (self-motion only) leaves every row
    # equally good, so the rows would be arbitrary
    if not reference > VISIBLE_FLOOR * float(np.einsum("nd,nd->", W, W)):
        raise DegenerateData("predicted null-space motion is invisible to the feature matrix")
    rows = np.zeros((0, dim))
    angles, trace = [], []
    current = 0.0
    for j in range(k_max):
        row, ang, value = _best_row(rows, Phi, W, config)
        trace.append(value)
        if j > 0 and value - current > config.eps_rank * reference:
            break
        rows = np.vstack([rows, row])
        angles.append(ang.tolist())
        current = value
    log.debug("learnt %d rows, objective trace %s", len(rows), trace)
    return LambdaEstimate(rows, current, len(rows), angles, trace, reference, config.digest())


def _rows_chart(rows: np.ndarray):
    """Local chart of row spaces near ``rows``: x (k, dim - k) -> orthonormal rows."""
    k, dim = rows.shape
    B = orthogonal_complement(rows, dim).T

    def chart(x):
        Q, _ = np.linalg.qr((rows + x.reshape(k, dim - k) @ B).T)
        return Q.T

    return chart, k * (dim - k)


def consistency_residuals(rows: np.ndarray, Phi: np.ndarray, U: np.ndarray, F: np.ndarray) -> np.ndarray:
    """Residuals N_n (u_n - Theta f_n) with Theta the least-squares optimum for these rows.

    Under the true rows N_n u_n = N_n pi(q_n) for the demonstrator's policy
    pi, so the residual vanishes when the features can represent pi.
    """
    A = np.einsum("kp,npd->nkd", rows, Phi)
    N = np.eye(U.shape[1])[None] - np.einsum("ndk,nke->nde", np.linalg.pinv(A), A)
    n, d = U.shape
    X = np.einsum("nde,nf->ndef", N, F).reshape(n * d, -1)
    y = np.einsum("nde,ne->nd", N, U).ravel()
    theta = np.linalg.lstsq(X, y, rcond=None)[0]
    return y - X @ theta


def polish_rows(est: LambdaEstimate, Q, U, chain: SerialChain,
                config: LearnerConfig = DEFAULT_LEARNER) -> LambdaEstimate:
    """Refine the row space so the null-space part of the raw actions is a feature-linear policy.

    The separation stage can leave part of the task action in its prediction
    (the separation objective also vanishes at w = u), which tilts the greedy
    rows. Here the rows and an unconstrained policy Theta f(q), f the
    monomials up to ``polish_degree``, are fitted jointly to the recorded
    actions instead, by variable projection: for fixed rows Theta is a linear
    least-squares solution, and the rows move in a local chart around the
    greedy estimate. The rank is kept. A low-degree policy is deliberate: a
    flexible one can trade row tilt against policy shape.
    """
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    U = np.atleast_2d(np.asarray(U, dtype=float))
    # standardized inputs keep the monomials far from collinear
    scale = Q.std(axis=0)
    F = monomials((Q - Q.mean(axis=0)) / np.where(scale > 0, scale, 1.0), config.polish_degree)
    Phi = jacobians(chain, Q)
    if est.k >= Phi.shape[1]:
        return est
    chart, n_params = _rows_chart(est.rows)

    def fun(x):
        r = consistency_residuals(chart(x), Phi, U, F)
        return float(r @ r)

    # simplex search: the valley is long and flat (the policy absorbs most of
    # a tilt) and finite-difference Gauss-Newton steps stall in it
    x0 = np.zeros(n_params)
    f0 = fun(x0)
    simplex = np.vstack([x0, config.polish_step * np.eye(n_params)])
    res = minimize(fun, x0, method="Nelder-Mead",
                   options={"initial_simplex": simplex, "xatol": config.angle_tol, "fatol": config.polish_ftol * f0,
                            "maxfev": config.polish_max_eval * n_params})
    if not res.fun < f0:
        return replace(est, polish_residual=f0)
    log.debug("polished rows: consistency %.3e -> %.3e", f0, res.fun)
    return replace(est, rows=chart(res.x), polish_residual=float(res.fun))


def learned_model(est: LambdaEstimate, name: str = "learnt") -> ConstraintModel:
    return ConstraintModel(est.rows, name=name)


@dataclass
class LearnResult:
    null_model: NullComponentModel
    estimate: LambdaEstimate
    model: ConstraintModel


def learn_constraint(data, chain: Optional[SerialChain] = None, k_max: Optional[int] = None,
                     config: LearnerConfig = DEFAULT_LEARNER) -> LearnResult:
    """Full pipeline on a demonstration set: separate, then estimate the rows."""
    chain = chain or get_chain(data.config.chain)
    Q, U = data.stacked()
    null_model = separate_null_component(Q, U, config, data.groups())
    W = null_model.predict(Q)
    est = learn_lambda(Q, W, chain, k_max, config)
    if config.polish_rows:
        est = polish_rows(est, Q, U, chain, config)
        est.objective_value = constraint_objective(est.rows, jacobians(chain, Q), W)
    return LearnResult(null_model, est, learned_model(est))
