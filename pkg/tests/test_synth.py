import numpy as np
import pytest

from segopt.errors import InvalidArgument
from segopt.graph import reprojection_residuals
from segopt.metrics import ate_rmse
from segopt.segmentation import compute_frame_stats
from segopt.solver import optimize_pose_graph
from segopt.synth import (
    OBSERVER_WINDOW,
    Event,
    LoopClosure,
    WorldConfig,
    default_loops,
    generate,
    inject_events,
    spread_events,
)


def noiseless(**kw):
    return WorldConfig(odom_rot_std=0.0, odom_trans_std=0.0, pixel_std=0.0, **kw)


def test_noiseless_world_matches_ground_truth():
    w = generate(noiseless(frames=100, shape="circle"))
    for est, gt in zip(w.problem.poses, w.gt_poses):
        np.testing.assert_allclose(est.matrix(), gt.matrix(), atol=1e-9)
    np.testing.assert_allclose(w.problem.landmark_positions, w.gt_landmarks, atol=1e-6)
    r, valid = reprojection_residuals(w.problem)
    assert valid.all()
    assert np.abs(r).max() < 1e-8
    assert ate_rmse(w.problem.poses, w.gt_poses) < 1e-9


def test_same_seed_is_bit_identical_and_seeds_differ():
    cfg = WorldConfig(frames=80, seed=3, loop_closures=default_loops(80))
    a, b = generate(cfg), generate(cfg)
    c = generate(WorldConfig(frames=80, seed=4, loop_closures=default_loops(80)))
    np.testing.assert_array_equal(a.problem.obs_pixel, b.problem.obs_pixel)
    np.testing.assert_array_equal(a.problem.landmark_positions, b.problem.landmark_positions)
    assert all(p == q for p, q in zip(a.problem.poses, b.problem.poses))
    assert not np.array_equal(a.problem.obs_pixel[:50], c.problem.obs_pixel[:50])


@pytest.mark.parametrize("shape", ["line", "circle", "figure-eight", "random-walk"])
def test_shapes_generate_valid_problems(shape):
    w = generate(WorldConfig(frames=60, shape=shape, seed=1))
    w.problem.validate()
    assert len(w.problem.frames) == 60
    assert np.all(np.bincount(w.problem.obs_frame, minlength=60) > 0)
    np.testing.assert_allclose(np.diff(w.timestamps), 0.1)


def test_drift_grows_and_full_optimisation_reduces_it():
    n = 1000
    cfg = WorldConfig(frames=n, shape="figure-eight", loop_closures=[LoopClosure(0, n - 1)], seed=2)
    w = generate(cfg)
    err = np.array([np.linalg.norm(e.translation - g.translation) for e, g in zip(w.problem.poses, w.gt_poses)])
    assert err[n // 10:n // 5].mean() < err[n // 2:].mean()
    before = ate_rmse(w.problem.poses, w.gt_poses)
    poses, _ = optimize_pose_graph(w.graph)
    assert ate_rmse(poses, w.gt_poses) < before


def test_empty_event_list_leaves_world_unchanged():
    w = generate(WorldConfig(frames=60))
    assert inject_events(w, []) is w


def _deviation(stats):
    return np.r_[0.0, np.linalg.norm(np.diff(stats.velocity, axis=0), axis=1)]


def test_velocity_spike_shows_in_frame_stats():
    w = inject_events(generate(WorldConfig(frames=120, seed=5)), [Event("velocity-spike", 50, 6, 10.0)])
    dev = _deviation(compute_frame_stats(w.problem))
    assert dev[50] > 5 * np.median(dev)


def test_noise_burst_raises_window_reprojection():
    w = inject_events(generate(WorldConfig(frames=120, seed=6)), [Event("noise-burst", 30, 7, 10.0)])
    rep = compute_frame_stats(w.problem).reproj
    inside = rep[30:37].mean()
    assert inside > rep[15:22].mean()
    assert inside > rep[45:52].mean()


@pytest.mark.parametrize("kind", ["velocity-spike", "noise-burst"])
def test_events_are_local_in_velocity(kind):
    base = generate(WorldConfig(frames=150, seed=7))
    ev = Event(kind, 60, 6, 8.0)
    hit = inject_events(base, [ev])
    v0 = compute_frame_stats(base.problem).velocity
    v1 = compute_frame_stats(hit.problem).velocity
    outside = np.ones(150, dtype=bool)
    outside[60:66] = False
    np.testing.assert_allclose(v1[outside], v0[outside], atol=1e-9)


def test_noise_burst_is_local_in_reprojection():
    base = generate(WorldConfig(frames=300, seed=8))
    hit = inject_events(base, [Event("noise-burst", 150, 6, 8.0)])
    r0 = compute_frame_stats(base.problem).reproj
    r1 = compute_frame_stats(hit.problem).reproj
    far = np.r_[0:150 - 2 * OBSERVER_WINDOW - 1, 156 + 2 * OBSERVER_WINDOW + 1:300]
    np.testing.assert_allclose(r1[far], r0[far], atol=1e-9)


def test_helpers_and_validation():
    loops = default_loops(100, 3)
    assert [(lc.a, lc.b) for lc in loops] == [(0, 99), (1, 99), (0, 98)]
    evs = spread_events(1000, 4)
    assert [e.kind for e in evs] == ["velocity-spike", "noise-burst"] * 2
    assert all(30 < e.center < 970 for e in evs)
    with pytest.raises(InvalidArgument):
        WorldConfig(frames=1)
    with pytest.raises(InvalidArgument):
        WorldConfig(shape="spiral")
    with pytest.raises(InvalidArgument):
        WorldConfig(frames=10, events=[Event("velocity-spike", 10)])
    with pytest.raises(InvalidArgument):
        Event("earthquake", 5)
    with pytest.raises(InvalidArgument):
        WorldConfig.from_dict({"frames": 10, "colour": "red"})


def test_config_dict_round_trip():
    cfg = WorldConfig(frames=50, loop_closures=default_loops(50, 2), events=spread_events(50, 1, margin=10))
    assert WorldConfig.from_dict(cfg.to_dict()) == cfg
