import numpy as np
import pytest
from hypothesis import given, strategies as st

from manipulearn.chains import forward_kinematics, get_chain
from manipulearn.constraints import ConstraintModel, constraint_preset, manipulability
from manipulearn.policies import (
    MANIP_GRADIENT, POINT_ATTRACTOR, ZERO, NullPolicy, TaskPolicy, manipulability_gradient, null_policy,
    task_error, task_policy,
)

PLANAR = get_chain("planar3")
XY = constraint_preset(PLANAR, "xy")


def five_point_gradient(f, q, h=1e-3):
    g = np.empty_like(q)
    for i in range(q.size):
        e = np.zeros_like(q)
        e[i] = h
        g[i] = (-f(q + 2 * e) + 8 * f(q + e) - 8 * f(q - e) + f(q - 2 * e)) / (12 * h)
    return g


@pytest.mark.parametrize("name,cid", [("planar3", "xy"), ("planar3", "xtheta"), ("spatial7", "x")])
def test_gradient_matches_five_point_stencil_away_from_singularities(name, cid):
    chain = get_chain(name)
    model = constraint_preset(chain, cid)
    rng = np.random.default_rng(11)
    checked = 0
    while checked < 20:
        q = rng.uniform(-np.pi, np.pi, chain.dof)
        if manipulability(model, chain, q) < 0.1:
            continue
        ref = five_point_gradient(lambda x: manipulability(model, chain, x), q)
        np.testing.assert_allclose(manipulability_gradient(model, chain, q), ref, atol=1e-6, rtol=1e-5)
        checked += 1


def test_gradient_leaves_a_singular_kink():
    # stretched arm: v = 0 is a minimum along q2, so the central difference
    # alone would vanish there
    q = np.array([np.pi / 2, 0.0, 0.0])
    g = manipulability_gradient(XY, PLANAR, q)
    assert abs(g[1]) > 0.5
    v0 = manipulability(XY, PLANAR, q)
    assert manipulability(XY, PLANAR, q + 1e-3 * g / np.linalg.norm(g)) > v0


def test_gradient_on_learnt_model_equals_gradient_on_same_rows():
    twin = ConstraintModel(XY.lam.copy())
    q = np.array([0.2, 1.1, -0.4])
    np.testing.assert_array_equal(manipulability_gradient(twin, PLANAR, q), manipulability_gradient(XY, PLANAR, q))


@given(st.lists(st.floats(-3, 3), min_size=3, max_size=3), st.lists(st.floats(-3, 3), min_size=3, max_size=3),
       st.floats(0.1, 10))
def test_point_attractor_is_linear(q, psi, alpha):
    p = NullPolicy(POINT_ATTRACTOR, psi, alpha=alpha)
    np.testing.assert_allclose(null_policy(p, XY, PLANAR, q), alpha * (np.array(psi) - np.array(q)))


def test_zero_policy():
    np.testing.assert_array_equal(null_policy(NullPolicy(ZERO), XY, PLANAR, [1, 2, 3]), np.zeros(3))


def test_gradient_policy_uses_pinned_model():
    theta = constraint_preset(PLANAR, "theta")
    p = NullPolicy(MANIP_GRADIENT, model=theta)
    # theta-only manipulability is constant, so the pinned gradient vanishes
    np.testing.assert_allclose(null_policy(p, XY, PLANAR, [0.3, 0.4, 0.5]), 0.0, atol=1e-6)


def test_task_policy_selects_error_rows():
    q = np.array([0.1, 0.2, 0.3])
    r = forward_kinematics(PLANAR, q)
    b = TaskPolicy(r + np.array([0.5, -0.25, 0.1]))
    np.testing.assert_allclose(task_policy(b, PLANAR, XY, q), [0.5, -0.25], atol=1e-12)


def test_spatial_task_policy_hand_value():
    chain = get_chain("spatial7")
    q = np.linspace(-0.5, 0.5, 7)
    r = forward_kinematics(chain, q)
    model = constraint_preset(chain, "x")
    b = TaskPolicy(r + np.array([0.2, 0.7, -0.3]))
    np.testing.assert_allclose(task_policy(b, chain, model, q), [0.2], atol=1e-12)


def test_task_error_wraps_orientation():
    q = np.array([np.pi - 0.1, 0.0, 0.0])
    b = TaskPolicy(np.array([0.0, 0.0, -np.pi + 0.1]))
    assert task_error(b, PLANAR, q)[2] == pytest.approx(0.2)


def test_policy_validation():
    with pytest.raises(ValueError):
        NullPolicy("random")
    with pytest.raises(ValueError):
        NullPolicy(POINT_ATTRACTOR)
    with pytest.raises(ValueError):
        NullPolicy(MANIP_GRADIENT, alpha=0.0)
    with pytest.raises(ValueError):
        TaskPolicy([0.0, np.inf, 0.0])


def test_attractor_fixed_point_and_hand_values():
    q = np.array([0.3, 0.2, 0.1])
    r = forward_kinematics(PLANAR, q)
    np.testing.assert_allclose(task_policy(TaskPolicy(r), PLANAR, XY, q), 0.0, atol=1e-15)
    # pose with r = (1, 1): first link along y, second along x, third folded back on the second
    q = np.array([np.pi / 2, -np.pi / 2, np.pi])
    np.testing.assert_allclose(forward_kinematics(PLANAR, q)[:2], [0.0, 1.0], atol=1e-12)
    q = np.array([0.0, np.pi / 2, -np.pi / 2])
    np.testing.assert_allclose(forward_kinematics(PLANAR, q)[:2], [2.0, 1.0], atol=1e-12)
    np.testing.assert_allclose(task_policy(TaskPolicy([1.0, 0.0, 0.0]), PLANAR, XY, q), [-1.0, -1.0], atol=1e-12)


def test_gradient_vanishes_at_a_local_maximum():
    from scipy.optimize import minimize
    res = minimize(lambda x: -manipulability(XY, PLANAR, x), [0.0, 1.2, 0.8], method="Nelder-Mead",
                   options={"xatol": 1e-12, "fatol": 1e-15, "maxiter": 5000})
    assert np.linalg.norm(manipulability_gradient(XY, PLANAR, res.x)) < 1e-6
