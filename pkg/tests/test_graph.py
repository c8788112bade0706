import numpy as np
import pytest

from segopt import geometry as geo
from segopt.errors import InvalidArgument
from segopt.graph import (
    BaProblem,
    Camera,
    EdgeKind,
    Frame,
    Landmark,
    Observation,
    PoseEdge,
    PoseGraph,
    covisibility,
    pose_edge_residual,
    project,
    reprojection_residuals,
    total_cost_ba,
    total_cost_pose_graph,
)

from helpers import chain_graph, random_pose, small_ba, straight_poses


def test_consistent_edge_has_zero_residual():
    rng = np.random.default_rng(0)
    Ti, Z = random_pose(rng), random_pose(rng)
    e = PoseEdge(0, 1, Z, np.eye(6))
    assert np.max(np.abs(pose_edge_residual(e, Ti, Ti.compose(Z)))) < 1e-9


def test_identity_measurement_equal_poses():
    rng = np.random.default_rng(1)
    T = random_pose(rng)
    e = PoseEdge(0, 1, geo.Pose.identity(), np.eye(6))
    np.testing.assert_allclose(pose_edge_residual(e, T, T), np.zeros(6), atol=1e-12)


def test_residual_is_first_order_in_perturbation():
    rng = np.random.default_rng(2)
    Ti, Z = random_pose(rng), random_pose(rng)
    e = PoseEdge(0, 1, Z, np.eye(6))
    for scale in (1e-2, 1e-3, 1e-4):
        d = rng.normal(size=6)
        d *= scale / np.linalg.norm(d)
        r = pose_edge_residual(e, Ti, Ti.compose(Z).compose(geo.se3_exp(d)))
        assert np.linalg.norm(r - d) < 2 * scale ** 2


def test_project_examples():
    cam = Camera(500, 500, 320, 320)
    np.testing.assert_allclose(project(cam, geo.Pose.identity(), [0, 0, 5]), [320, 320])
    np.testing.assert_allclose(project(cam, geo.Pose.identity(), [1, 0, 5]), [420, 320])
    assert project(cam, geo.Pose.identity(), [0, 0, -1]) is None


def test_behind_camera_observation_is_dropped_from_cost():
    rng = np.random.default_rng(3)
    problem, _, pts = small_ba(rng, n_frames=3, n_landmarks=6)
    moved = pts.copy()
    moved[0, 2] = -3.0
    p2 = problem.with_state(landmark_positions=moved)
    r, valid = reprojection_residuals(p2)
    assert (~valid).sum() == 3
    assert np.isfinite(total_cost_ba(p2))


def test_covisibility_examples():
    rng = np.random.default_rng(4)
    problem, _, _ = small_ba(rng, n_frames=3, n_landmarks=10)
    assert covisibility(problem, 1, 1) == 10
    assert covisibility(problem, 0, 2) == covisibility(problem, 2, 0) == 10
    with pytest.raises(InvalidArgument):
        covisibility(problem, 0, 7)


def test_covisibility_disjoint_and_planted():
    cam = Camera(500, 500, 320, 240)
    frames = [Frame(i, float(i), geo.Pose.identity(), is_fixed=(i == 0)) for i in range(4)]
    # frames 0 and 1 share 17 landmarks; frames 2 and 3 share 5 others
    obs = [(f, l) for f in (0, 1) for l in range(17)] + [(f, l) for f in (2, 3) for l in range(17, 22)]
    obs += [(0, l) for l in range(22, 25)] + [(3, l) for l in range(22, 25)]
    lms = [Landmark(l, np.array([0.0, 0.0, 5.0])) for l in range(25)]
    p = BaProblem.from_records(frames, lms, [Observation(f, l, np.zeros(2)) for f, l in obs], cam)
    assert covisibility(p, 0, 1) == 17
    assert covisibility(p, 1, 2) == 0
    assert covisibility(p, 0, 3) == 3


def test_pose_graph_cost_examples():
    poses = straight_poses(6, turn=0.1)
    assert total_cost_pose_graph(chain_graph(poses, loops=[(0, 5)])) < 1e-18
    g = chain_graph(poses[:2])
    d = np.array([0.01, -0.02, 0.03, 0.001, 0.002, -0.003])
    bent = g.with_poses([poses[0], poses[1].compose(geo.se3_exp(d))])
    assert abs(total_cost_pose_graph(bent) - d @ d) < 1e-12


def test_pose_graph_cost_matches_per_edge_sum():
    rng = np.random.default_rng(5)
    poses = [random_pose(rng) for _ in range(8)]
    A = rng.normal(size=(6, 6))
    info = A @ A.T + np.eye(6)
    g = chain_graph(straight_poses(8), info=info, loops=[(0, 7), (2, 5)]).with_poses(poses)
    total = 0.0
    for e in g.edges:
        r = pose_edge_residual(e, poses[e.source], poses[e.target])
        total += r @ e.information @ r
    assert abs(total_cost_pose_graph(g) - total) < 1e-9 * max(1.0, total)


def test_ba_cost_matches_per_observation_sum():
    rng = np.random.default_rng(6)
    problem, _, _ = small_ba(rng, n_frames=4, n_landmarks=12, pixel_noise=1.0)
    total = 0.0
    for o in problem.observations:
        pos = problem.landmark_positions[problem.landmark_index[o.landmark]]
        r = o.pixel - project(problem.camera, problem.frames[o.frame].pose, pos)
        total += r @ o.information @ r
    assert abs(total_cost_ba(problem) - total) < 1e-9 * total


def test_noiseless_ba_cost_is_zero():
    problem, _, _ = small_ba(np.random.default_rng(7))
    assert total_cost_ba(problem) < 1e-18


def test_ba_cost_invariant_under_landmark_relabeling():
    rng = np.random.default_rng(8)
    problem, _, _ = small_ba(rng, n_frames=3, n_landmarks=8, pixel_noise=2.0)
    relabeled = BaProblem.from_records(
        problem.frames,
        [Landmark(1000 - lm.id, lm.position) for lm in reversed(problem.landmarks)],
        [Observation(o.frame, 1000 - o.landmark, o.pixel, o.information) for o in problem.observations],
        problem.camera,
    )
    assert abs(total_cost_ba(relabeled) - total_cost_ba(problem)) < 1e-9


def test_validation_errors():
    p = geo.Pose.identity()
    with pytest.raises(InvalidArgument):
        PoseEdge(1, 1, p, np.eye(6))
    with pytest.raises(InvalidArgument):
        PoseEdge(0, 1, p, -np.eye(6))
    with pytest.raises(InvalidArgument):
        PoseGraph([Frame(0, 0.0, p, True), Frame(1, 0.0, p)], [PoseEdge(0, 1, p, np.eye(6))])
    with pytest.raises(InvalidArgument):
        PoseGraph([Frame(0, 0.0, p, True), Frame(1, 1.0, p)])
    with pytest.raises(InvalidArgument):
        PoseGraph([Frame(0, 0.0, p), Frame(1, 1.0, p)], [PoseEdge(0, 1, p, np.eye(6))])
    cam = Camera(500, 500, 320, 240)
    with pytest.raises(InvalidArgument):
        BaProblem.from_records([Frame(0, 0.0, p, True), Frame(1, 1.0, p)], [Landmark(0, np.ones(3))],
                               [Observation(0, 0, np.zeros(2))], cam)


def test_edge_kind_values():
    assert {k.value for k in EdgeKind} == {"odometry", "loop-closure", "synthesized"}
