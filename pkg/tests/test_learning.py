import numpy as np
import pytest
from hypothesis import given, strategies as st

from manipulearn.chains import get_chain, jacobians
from manipulearn.constraints import constraint_matrix, constraint_preset, manipulability, nullspace_projector
from manipulearn.demos import default_demo_config, generate_demos
from manipulearn.errors import DegenerateData
from manipulearn.learning import (
    AFFINE, QUADRATIC, RBF, LearnerConfig, NullComponentModel, constraint_objective, fit_null_model,
    LambdaEstimate, consistency_residuals, learn_constraint, learn_lambda, monomials, n_tail_terms,
    orthogonal_complement, polish_rows, projected_targets, rbf_size, separate_null_component,
    separation_objective, sphere_point,
)
from manipulearn.policies import POINT_ATTRACTOR, NullPolicy, null_policy

PLANAR = get_chain("planar3")


def true_null_actions(chain, model, cfg, Q):
    pi = NullPolicy(POINT_ATTRACTOR, cfg.psi_star, alpha=cfg.null_alpha)
    return np.array([nullspace_projector(constraint_matrix(model, chain, q)) @ null_policy(pi, model, chain, q)
                     for q in Q])


def row_alignment(learnt_rows, true_rows):
    """Largest principal-angle cosine deficit between the two row spaces."""
    a = np.linalg.qr(np.atleast_2d(learnt_rows).T)[0]
    b = np.linalg.qr(np.atleast_2d(true_rows).T)[0]
    return 1.0 - np.linalg.svd(a.T @ b, compute_uv=False).min()


@given(st.lists(st.floats(-10, 10), min_size=0, max_size=5))
def test_sphere_point_is_unit(angles):
    assert np.linalg.norm(sphere_point(angles)) == pytest.approx(1.0)


def test_sphere_point_hand_values():
    np.testing.assert_allclose(sphere_point([0.0, 0.0]), [1, 0, 0], atol=1e-15)
    np.testing.assert_allclose(sphere_point([np.pi / 2, 0.0]), [0, 1, 0], atol=1e-15)
    np.testing.assert_allclose(sphere_point([np.pi / 2, np.pi / 2]), [0, 0, 1], atol=1e-15)


def test_orthogonal_complement():
    rows = np.array([[1.0, 1.0, 0.0]]) / np.sqrt(2)
    B = orthogonal_complement(rows, 3)
    np.testing.assert_allclose(B.T @ B, np.eye(2), atol=1e-12)
    np.testing.assert_allclose(rows @ B, 0.0, atol=1e-12)
    np.testing.assert_array_equal(orthogonal_complement(np.zeros((0, 3)), 3), np.eye(3))


def test_projected_targets_hand_value():
    W = np.array([[2.0, 0.0], [0.0, 0.0]])
    U = np.array([[3.0, 5.0], [1.0, 1.0]])
    np.testing.assert_allclose(projected_targets(W, U), [[3.0, 0.0], [0.0, 0.0]])
    # residual (3 - 2, 0) -> 1
    assert separation_objective(W, U) == pytest.approx(1.0)


def test_separation_objective_vanishes_at_true_null_component():
    cfg = default_demo_config("planar3", n_trajectories=5, seed=3)
    Q, U = generate_demos(cfg).stacked()
    W = true_null_actions(PLANAR, constraint_preset(PLANAR, "xy"), cfg, Q)
    assert separation_objective(W, U) < 1e-20


def test_constraint_objective_hand_value_single_row():
    Phi = np.array([[[1.0, 0.0], [0.0, 1.0]]])
    W = np.array([[3.0, 4.0]])
    # A = (1, 0): w^T pinv(A) A w = 3^2
    assert constraint_objective(np.array([[1.0, 0.0]]), Phi, W) == pytest.approx(9.0)
    assert constraint_objective(np.eye(2), Phi, W) == pytest.approx(25.0)


@pytest.mark.parametrize("cid", ["xy", "xtheta", "ytheta"])
def test_rows_recovered_from_exact_null_actions(cid):
    cfg = default_demo_config("planar3", constraint=cid, n_trajectories=20, seed=5)
    model = constraint_preset(PLANAR, cid)
    Q, _ = generate_demos(cfg).stacked()
    W = true_null_actions(PLANAR, model, cfg, Q)
    est = learn_lambda(Q, W, PLANAR)
    assert est.k == 2
    assert row_alignment(est.rows, model.lam) < 1e-10
    assert est.objective_value < 1e-12 * est.reference


def test_single_row_recovered_on_spatial_chain():
    chain = get_chain("spatial7")
    cfg = default_demo_config("spatial7", n_trajectories=10, seed=5)
    model = constraint_preset(chain, "x")
    Q, _ = generate_demos(cfg).stacked()
    est = learn_lambda(Q, true_null_actions(chain, model, cfg, Q), chain)
    assert est.k == 1
    assert row_alignment(est.rows, model.lam) < 1e-10


def test_invisible_null_motion_is_rejected():
    Q = np.random.default_rng(0).uniform(-1, 1, (20, 3))
    with pytest.raises(DegenerateData):
        learn_lambda(Q, np.zeros((20, 3)), PLANAR)
    chain = get_chain("spatial7")
    Q7 = np.random.default_rng(0).uniform(-1, 1, (20, 7))
    # rotating the last joint never moves the flange origin
    W7 = np.zeros((20, 7))
    W7[:, 6] = 1.0
    with pytest.raises(DegenerateData):
        learn_lambda(Q7, W7, chain)


def test_rows_are_unit_and_mutually_orthogonal():
    cfg = default_demo_config("planar3", n_trajectories=10, seed=8)
    Q, _ = generate_demos(cfg).stacked()
    est = learn_lambda(Q, true_null_actions(PLANAR, constraint_preset(PLANAR, "xy"), cfg, Q), PLANAR)
    np.testing.assert_allclose(est.rows @ est.rows.T, np.eye(est.k), atol=1e-12)


def test_k_max_limits_rows():
    cfg = default_demo_config("planar3", n_trajectories=10, seed=8)
    Q, _ = generate_demos(cfg).stacked()
    W = true_null_actions(PLANAR, constraint_preset(PLANAR, "xy"), cfg, Q)
    assert learn_lambda(Q, W, PLANAR, k_max=1).k == 1
    with pytest.raises(ValueError):
        learn_lambda(Q, W, PLANAR, k_max=4)


def test_refinement_never_worsens_the_alternation():
    cfg = default_demo_config("planar3", n_trajectories=20, seed=2)
    Q, U = generate_demos(cfg).stacked()
    rough = fit_null_model(Q, U, RBF, LearnerConfig(refine=False))
    fine = fit_null_model(Q, U, RBF)
    assert fine.objective <= rough.objective
    assert fine.objective == pytest.approx(separation_objective(fine.predict(Q), U), rel=1e-6)


def test_polynomial_families_have_no_gaussians():
    Q = np.random.default_rng(1).uniform(-1, 1, (30, 3))
    U = np.random.default_rng(2).normal(size=(30, 3))
    for kind, n in ((AFFINE, 4), (QUADRATIC, 10)):
        m = fit_null_model(Q, U, kind)
        assert m.n_centers == 0 and m.features(Q).shape == (30, n)


def test_rbf_capacity_follows_data_size():
    assert n_tail_terms(3, 2) == 10 and n_tail_terms(7, 1) == 8
    assert rbf_size(1000, 3) == (100, 2)
    assert rbf_size(500, 7) == (20, 1)
    assert rbf_size(500, 7, LearnerConfig(tail_degree=2))[1] == 2


def test_separation_rejects_degenerate_actions():
    with pytest.raises(DegenerateData):
        separate_null_component(np.zeros((5, 3)), np.zeros((5, 3)))
    with pytest.raises(DegenerateData):
        separate_null_component(np.zeros((1, 3)), np.ones((1, 3)))


def test_cross_validation_records_scores_for_each_candidate():
    cfg = default_demo_config("planar3", n_trajectories=10, seed=2)
    data = generate_demos(cfg)
    Q, U = data.stacked()
    m = separate_null_component(Q, U, LearnerConfig(candidates=(AFFINE, QUADRATIC), cv_folds=2), data.groups())
    assert set(m.cv_scores) == {AFFINE, QUADRATIC}
    assert m.kind == min(m.cv_scores, key=m.cv_scores.get)


def test_planar_pipeline_recovers_manipulability():
    cfg = default_demo_config("planar3", n_trajectories=100, seed=21)
    res = learn_constraint(generate_demos(cfg))
    true = constraint_preset(PLANAR, "xy")
    assert res.estimate.k == 2
    Q = generate_demos(cfg.with_(seed=22, n_trajectories=20)).stacked()[0]
    v = np.array([manipulability(true, PLANAR, q) for q in Q])
    vh = np.array([manipulability(res.model, PLANAR, q) for q in Q])
    assert np.mean((v - vh) ** 2) / np.var(v) < 1e-5


def test_model_and_config_validation():
    with pytest.raises(ValueError):
        LearnerConfig(candidates=("spline",))
    with pytest.raises(ValueError):
        LearnerConfig(tail_degree=3)
    with pytest.raises(ValueError):
        LearnerConfig(cv_folds=1)
    with pytest.raises(ValueError):
        LearnerConfig(polish_degree=3)
    with pytest.raises(ValueError):
        NullComponentModel(np.zeros((1, 3)), 0.0, np.zeros((3, 1)))
    with pytest.raises(ValueError):
        NullComponentModel(np.zeros((0, 3)), 1.0, np.zeros((3, 1)), 0, kind=AFFINE)
    assert LearnerConfig().digest() == LearnerConfig().digest()
    assert LearnerConfig(eps_rank=1e-2).digest() != LearnerConfig().digest()


def test_monomials_layout():
    Q = np.array([[2.0, 3.0]])
    np.testing.assert_array_equal(monomials(Q, 1), [[1, 2, 3]])
    np.testing.assert_array_equal(monomials(Q, 2), [[1, 2, 3, 4, 6, 9]])


def test_consistency_residual_vanishes_at_true_rows():
    cfg = default_demo_config("planar3", n_trajectories=10, seed=6)
    Q, U = generate_demos(cfg).stacked()
    Phi = jacobians(PLANAR, Q)
    F = monomials(Q, 1)
    true_rows = constraint_preset(PLANAR, "xy").lam
    assert np.abs(consistency_residuals(true_rows, Phi, U, F)).max() < 1e-10
    tilted = np.linalg.qr((true_rows + 0.05 * np.array([[0, 0, 1.0], [0, 0, 0]])).T)[0].T
    assert np.abs(consistency_residuals(tilted, Phi, U, F)).max() > 1e-4


@pytest.mark.parametrize("name,cid,n", [("planar3", "xtheta", 20), ("spatial7", "x", 20)])
def test_polish_recovers_rows_from_a_tilted_start(name, cid, n):
    chain = get_chain(name)
    cfg = default_demo_config(name, constraint=cid, n_trajectories=n, seed=9)
    Q, U = generate_demos(cfg).stacked()
    truth = constraint_preset(chain, cid).lam
    k = truth.shape[0]
    start = np.linalg.qr((truth + 0.1 * np.random.default_rng(0).normal(size=truth.shape)).T)[0].T
    est = polish_rows(LambdaEstimate(start, 0.0, k), Q, U, chain)
    assert est.k == k
    assert row_alignment(est.rows, truth) < 1e-12
    assert est.polish_residual < 1e-20


def test_polish_skips_full_rank_estimate():
    cfg = default_demo_config("planar3", n_trajectories=3, seed=1)
    Q, U = generate_demos(cfg).stacked()
    est = LambdaEstimate(np.eye(3), 0.0, 3)
    assert polish_rows(est, Q, U, PLANAR) is est


def test_polish_can_be_disabled():
    cfg = default_demo_config("planar3", n_trajectories=30, seed=4)
    res = learn_constraint(generate_demos(cfg), config=LearnerConfig(polish_rows=False))
    assert np.isnan(res.estimate.polish_residual) and res.estimate.k == 2


def test_pure_task_motion_has_no_null_component():
    cfg = default_demo_config("planar3", n_trajectories=50, seed=3)
    Q, U = generate_demos(cfg).stacked()
    U = U - true_null_actions(PLANAR, constraint_preset(PLANAR, "xy"), cfg, Q)
    m = separate_null_component(Q, U)
    W = m.predict(Q)
    assert np.linalg.norm(W, axis=1).mean() < 0.05 * np.linalg.norm(U, axis=1).mean()
    assert m.objective < 1e-4 * np.sum(U**2)


def test_separation_tracks_the_true_null_component():
    cfg = default_demo_config("planar3", n_trajectories=100, seed=3)
    Q, U = generate_demos(cfg).stacked()
    truth = true_null_actions(PLANAR, constraint_preset(PLANAR, "xy"), cfg, Q)
    m = separate_null_component(Q, U)
    err = np.linalg.norm(m.predict(Q) - truth, axis=1).mean() / np.linalg.norm(truth, axis=1).mean()
    assert err < 0.05
    first = fit_null_model(Q, U, RBF, LearnerConfig(max_iter=1, refine=False))
    assert m.objective < first.objective


def test_learnt_rows_beat_random_orthonormal_rows():
    cfg = default_demo_config("planar3", n_trajectories=30, seed=6)
    data = generate_demos(cfg)
    res = learn_constraint(data)
    Q, _ = data.stacked()
    W = res.null_model.predict(Q)
    Phi = jacobians(PLANAR, Q)
    best = constraint_objective(res.estimate.rows, Phi, W)
    rng = np.random.default_rng(0)
    for _ in range(100):
        rows = np.linalg.qr(rng.normal(size=(3, 3)))[0][:, : res.estimate.k].T
        assert best <= constraint_objective(rows, Phi, W)


def test_single_task_coordinate_gives_rank_one():
    cfg = default_demo_config("planar3", constraint="x", n_trajectories=50, seed=4)
    assert learn_constraint(generate_demos(cfg)).estimate.k == 1


def test_principal_angles_to_the_true_rows():
    cfg = default_demo_config("planar3", n_trajectories=100, seed=21)
    rows = learn_constraint(generate_demos(cfg)).estimate.rows
    a = np.linalg.qr(rows.T)[0]
    b = np.linalg.qr(constraint_preset(PLANAR, "xy").lam.T)[0]
    cosines = np.clip(np.linalg.svd(a.T @ b, compute_uv=False), -1.0, 1.0)
    assert np.arccos(cosines).max() < 1e-3
