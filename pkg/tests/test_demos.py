import numpy as np
import pytest

from manipulearn.chains import get_chain
from manipulearn.constraints import TRUNCATE_PINV, constraint_preset
from manipulearn.demos import (
    DemoConfig, default_demo_config, downsample, generate_demos, generate_trajectory, sample_start,
    sample_target, solve_ik, trajectory_rng,
)
from manipulearn.errors import InfeasibleRegion
from manipulearn.policies import POINT_ATTRACTOR, NullPolicy, TaskPolicy, task_policy
from manipulearn.simulator import Trajectory, control_step

SMALL = default_demo_config("planar3", n_trajectories=5)


def test_same_seed_gives_identical_data():
    a = generate_demos(SMALL.with_(seed=42))
    b = generate_demos(SMALL.with_(seed=42))
    for x, y in zip(a.stacked(), b.stacked()):
        np.testing.assert_array_equal(x, y)
    c = generate_demos(SMALL.with_(seed=43))
    assert not np.array_equal(a.stacked()[0], c.stacked()[0])


def test_trajectories_are_independent_of_set_size():
    chain = get_chain("planar3")
    model = constraint_preset(chain, "xy")
    big = generate_demos(SMALL.with_(n_trajectories=8, seed=9))
    t, _ = generate_trajectory(SMALL.with_(seed=9), chain, model, 6)
    np.testing.assert_array_equal(big.trajectories[6].states, t.states)


def test_stream_is_keyed_by_seed_xor_index():
    a = trajectory_rng(12, 5).uniform(size=4)
    b = trajectory_rng(12 ^ 5, 0).uniform(size=4)
    np.testing.assert_array_equal(a, b)


def test_planar_preset_shape_and_ranges():
    d = generate_demos(default_demo_config("planar3", n_trajectories=20, seed=1))
    Q, U = d.stacked()
    assert Q.shape == U.shape == (200, 3)
    starts = np.rad2deg(np.array([t.states[0] for t in d.trajectories]))
    lo, hi = np.array(SMALL.start_ranges_deg).T
    assert np.all(starts >= lo) and np.all(starts <= hi)
    lo, hi = np.array(SMALL.target_ranges).T
    assert np.all(d.targets >= lo) and np.all(d.targets <= hi)
    np.testing.assert_array_equal(d.groups(), np.repeat(np.arange(20), 10))


def test_recorded_actions_follow_the_control_law():
    d = generate_demos(SMALL.with_(seed=4))
    chain = get_chain("planar3")
    model = constraint_preset(chain, "xy")
    pi = NullPolicy(POINT_ATTRACTOR, SMALL.psi_star)
    for t, r in zip(d.trajectories, d.targets):
        for q, u in zip(*t.pairs()):
            np.testing.assert_allclose(u, control_step(chain, model, TaskPolicy(r), pi, TRUNCATE_PINV, q),
                                       atol=1e-12)


def test_spatial_preset_downsamples_to_ten_points():
    cfg = default_demo_config("spatial7", n_trajectories=3, seed=2)
    d = generate_demos(cfg)
    assert all(len(t.actions) == 10 for t in d.trajectories)
    assert d.trajectories[0].meta["downsample_indices"][0] == 0
    assert d.trajectories[0].meta["downsample_indices"][-1] == 99
    assert np.all(np.abs(d.targets[:, 1:]) == 0)


def test_downsample_keeps_endpoints():
    t = Trajectory(np.arange(11.0)[:, None], np.arange(10.0)[:, None], 0.1)
    s = downsample(t, 4)
    np.testing.assert_array_equal(s.states[:, 0], [0, 3, 6, 9])
    with pytest.raises(ValueError):
        downsample(t, 11)


def test_ik_reaches_reachable_target():
    chain = get_chain("planar3")
    model = constraint_preset(chain, "xy")
    q, ok = solve_ik(chain, model, [0.5, 1.5, 0.0], np.deg2rad([5, 95, 5]))
    assert ok


def test_unreachable_target_region_raises():
    cfg = SMALL.with_(target_ranges=((5.0, 6.0), (5.0, 6.0), (0.0, 1.0)), max_rejections=5, ik_max_iter=20)
    with pytest.raises(InfeasibleRegion):
        generate_demos(cfg)


def test_sample_start_in_radians():
    q = sample_start(SMALL, np.random.default_rng(0))
    assert np.all(q >= 0) and np.all(q <= np.deg2rad(100))


def test_config_validation():
    with pytest.raises(ValueError):
        DemoConfig(points_per_traj=20, record_steps=10)
    with pytest.raises(ValueError):
        DemoConfig(start_ranges_deg=((10.0, 0.0), (0.0, 1.0), (0.0, 1.0)))
    with pytest.raises(ValueError):
        DemoConfig(psi_star_deg=(0.0, 0.0))
    with pytest.raises(ValueError):
        DemoConfig(seed=-1)


def test_config_round_trips_through_dict():
    cfg = default_demo_config("spatial7")
    assert DemoConfig(**cfg.to_dict()) == cfg


def test_degenerate_start_interval_and_uniform_support():
    cfg = SMALL.with_(start_ranges_deg=((5.0, 5.0), (90.0, 100.0), (0.0, 10.0)))
    rng = np.random.default_rng(1)
    draws = np.rad2deg(np.array([sample_start(cfg, rng) for _ in range(10_000)]))
    assert np.allclose(draws[:, 0], 5.0, rtol=0, atol=1e-12)
    assert draws[:, 1].min() >= 90.0 and draws[:, 1].max() <= 100.0
    assert draws[:, 2].min() >= 0.0 and draws[:, 2].max() <= 10.0


def test_reachable_and_unreachable_targets():
    chain = get_chain("planar3")
    model = constraint_preset(chain, "xy")
    cfg = SMALL.with_(target_ranges=((0.0, 0.0), (1.5, 1.5), (0.0, np.pi)))
    np.testing.assert_array_equal(sample_target(cfg, chain, np.random.default_rng(0), model)[:2], [0.0, 1.5])
    far = SMALL.with_(target_ranges=((2.2, 2.5), (2.2, 2.5), (0.0, 1.0)), max_rejections=20)
    with pytest.raises(InfeasibleRegion):
        sample_target(far, chain, np.random.default_rng(0), model)


def test_accepted_targets_are_reproducible():
    chain = get_chain("planar3")
    a = [sample_target(SMALL, chain, trajectory_rng(11, i)) for i in range(5)]
    b = [sample_target(SMALL, chain, trajectory_rng(11, i)) for i in range(5)]
    np.testing.assert_array_equal(a, b)


def test_recorded_actions_satisfy_the_constraint_and_move_the_null_space():
    from manipulearn.constraints import constraint_matrix, nullspace_projector
    chain = get_chain("planar3")
    model = constraint_preset(chain, "xy")
    d = generate_demos(SMALL.with_(seed=12))
    for t, r in zip(d.trajectories, d.targets):
        for q, u in zip(*t.pairs()):
            A = constraint_matrix(model, chain, q)
            np.testing.assert_allclose(A @ u, task_policy(TaskPolicy(r), chain, model, q), atol=1e-8)
            assert np.linalg.norm(nullspace_projector(A) @ u) > 1e-6


def test_downsample_spacing_identity_and_actions():
    states = np.arange(101.0)[:, None]
    actions = 10.0 * np.arange(100.0)[:, None]
    t = Trajectory(states, actions, 0.01)
    s = downsample(t, 10)
    assert s.meta["downsample_indices"] == [0, 11, 22, 33, 44, 55, 66, 77, 88, 99]
    np.testing.assert_array_equal(s.actions[:, 0], 10.0 * np.arange(0, 100, 11))
    same = downsample(t, 100)
    np.testing.assert_array_equal(same.actions, actions)
    np.testing.assert_array_equal(same.states, states[:100])
