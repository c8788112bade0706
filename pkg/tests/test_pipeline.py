import json
from dataclasses import replace

import numpy as np
import pytest

from segopt.errors import InvalidArgument
from segopt.formats import Trajectory
from segopt.metrics import ate_rmse
from segopt.pipeline import METHODS, PHASES, run_method
from segopt.segmentation import SegmentationParams, SegmentationResult
from segopt.solver import SolverConfig
from segopt.synth import WorldConfig, default_loops, generate, spread_events

TIGHT = SolverConfig(max_iterations=100, cost_rel_tolerance=1e-14, step_norm_tolerance=1e-12)


@pytest.fixture(scope="module")
def noiseless():
    loops = [replace(lc, rot_std=0.0, trans_std=0.0) for lc in default_loops(150, 2)]
    return generate(WorldConfig(frames=150, shape="figure-eight", odom_rot_std=0.0, odom_trans_std=0.0,
                                pixel_std=0.0, loop_closures=loops, seed=3))


@pytest.fixture(scope="module")
def noisy():
    return generate(WorldConfig(frames=240, shape="figure-eight", loop_closures=default_loops(240, 2),
                                events=spread_events(240, 2), seed=4))


@pytest.mark.parametrize("method", ["full", "segmented"])
@pytest.mark.parametrize("stage", ["pose-graph", "ba"])
def test_noiseless_world_is_exact(noiseless, method, stage):
    res = run_method(noiseless.problem, method, TIGHT, gt_poses=noiseless.gt_poses, stage=stage)
    assert res.report.ate_rmse < 1e-9


def _max_gap(a, b):
    return max(np.max(np.abs(p.matrix() - q.matrix())) for p, q in zip(a, b))


def test_all_buffer_segmentation_reproduces_full(noisy):
    p = noisy.problem
    full = run_method(p, "full", TIGHT)
    seg = run_method(p, "segmented", TIGHT, segmentation=SegmentationResult.all_buffer(len(p.frames)))
    assert _max_gap(full.poses, seg.poses) < 1e-6
    assert seg.report.segmentation["kept_fraction_pose_graph"] == 1.0


def test_all_buffer_forced_by_thresholds(noisy):
    p = noisy.problem
    params = SegmentationParams(sigma_v=1e-12, sigma_r=1e-12)
    seg = run_method(p, "segmented", TIGHT, params)
    assert seg.report.segmentation["segment_count"] == 0
    full = run_method(p, "full", TIGHT)
    assert _max_gap(full.poses, seg.poses) < 1e-6


@pytest.mark.parametrize("method", list(METHODS))
def test_every_method_reports_finite_values(noisy, method):
    res = run_method(noisy.problem, method, gt_poses=noisy.gt_poses)
    d = res.report.to_dict()
    json.dumps(d, allow_nan=False)
    t = res.report.timings
    assert t["total"] >= sum(t[k] for k in PHASES) - 1e-3
    assert res.report.monotone
    assert np.isfinite(res.report.ate_rmse)
    if method != "linear-interp":
        # the linear baseline blends absolute poses and cuts corners on curves
        assert res.report.ate_rmse < 1.0
    assert len(res.poses) == len(noisy.problem.frames)
    if method != "full":
        assert res.report.segmentation["kept_fraction_pose_graph"] < 1.0


def test_segmented_improves_on_initial_estimate(noisy):
    seg = run_method(noisy.problem, "segmented", gt_poses=noisy.gt_poses)
    assert seg.report.ate_rmse < ate_rmse(noisy.problem.poses, noisy.gt_poses)
    assert seg.report.cost_after["pose_graph"] < seg.report.cost_before["pose_graph"]


def test_both_stage_and_trajectory_ground_truth(noisy):
    gt = Trajectory(noisy.timestamps, noisy.gt_poses)
    res = run_method(noisy.problem, "segmented", stage="both", gt_poses=gt)
    assert set(res.report.iterations) >= {"pose_graph", "ba"}
    assert res.landmarks.shape == noisy.problem.landmark_positions.shape
    assert np.isfinite(res.report.ate_rmse)


def test_ground_truth_given_as_poses_or_trajectory_agree(noisy):
    a = run_method(noisy.problem, "full", gt_poses=noisy.gt_poses).report.ate_rmse
    b = run_method(noisy.problem, "full", gt_poses=Trajectory(noisy.timestamps, noisy.gt_poses)).report.ate_rmse
    assert a == pytest.approx(b, abs=1e-12)


def test_validation(noisy):
    with pytest.raises(InvalidArgument, match="registered"):
        run_method(noisy.problem, "nope")
    with pytest.raises(InvalidArgument):
        run_method(noisy.problem, stage="sideways")
    with pytest.raises(InvalidArgument):
        run_method(noisy.graph, stage="ba")
    with pytest.raises(InvalidArgument):
        run_method(noisy.problem, segmentation=SegmentationResult.all_buffer(3))
