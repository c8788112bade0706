"""
End-to-end optimisation methods and their run reports.

``full`` solves the chosen objective over every frame. ``segmented``
segments the initial estimate once, solves the reduced problem and fills in
the pruned frames. The remaining registered methods swap one ingredient of
``segmented``.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import geometry as geo
from .errors import InvalidArgument
from .graph import BaProblem, PoseGraph, total_cost_ba, total_cost_pose_graph
from .interpolation import interpolate_poses, local_solve_update, update_landmarks
from .formats import Trajectory
from .metrics import ate_rmse, umeyama_align
from .reduction import ReductionOptions, reduce_ba, reduce_pose_graph
from .segmentation import (
    FrameStats,
    SegmentationParams,
    SegmentationResult,
    compute_frame_stats,
    segment_trajectory,
)
from .solver import SolveReport, SolverConfig, optimize_ba, optimize_pose_graph, optimize_reduced


@dataclass(frozen=True)
class Method:
    name: str
    segmented: bool = True
    strategy: str = "hybrid"
    use_buffer: bool = True
    updater: str = "interp"


METHODS: dict[str, Method] = {
    m.name: m
    for m in (
        Method("full", segmented=False),
        Method("segmented"),
        Method("fixed-length", strategy="fixed-length"),
        Method("covis", strategy="covis"),
        Method("reproj-only", strategy="reproj-only"),
        Method("velocity-only", strategy="velocity-only"),
        Method("no-buffer", use_buffer=False),
        Method("local-ba", updater="local-ba"),
        Method("linear-interp", updater="linear"),
    )
}

STAGES = ("pose-graph", "ba", "both")
PHASES = ("segmentation", "reduction", "global_solve", "interpolation", "landmark_update")


def get_method(name: str) -> Method:
    try:
        return METHODS[name]
    except KeyError:
        raise InvalidArgument(f"unknown method {name!r}; registered: {', '.join(METHODS)}") from None


@dataclass
class RunReport:
    method: str
    frames: int
    stage: str = "pose-graph"
    segmentation: dict = field(default_factory=dict)
    timings: dict = field(default_factory=lambda: {p: 0.0 for p in PHASES} | {"total": 0.0})
    ate_rmse: float | None = None
    cost_before: dict = field(default_factory=dict)
    cost_after: dict = field(default_factory=dict)
    dropped_loop_edges: int = 0
    dropped_observations: int = 0
    iterations: dict = field(default_factory=dict)
    monotone: bool = True

    @property
    def solve_time(self) -> float:
        """Optimisation wall time: reduction, solves and pose/landmark updates."""
        t = self.timings
        return t["reduction"] + t["global_solve"] + t["interpolation"] + t["landmark_update"]

    def to_dict(self) -> dict:
        return finite_values({
            "method": self.method,
            "stage": self.stage,
            "frames": self.frames,
            "segmentation": self.segmentation,
            "timings": dict(self.timings) | {"solve": self.solve_time},
            "ate_rmse": self.ate_rmse,
            "cost_before": self.cost_before,
            "cost_after": self.cost_after,
            "dropped_loop_edges": self.dropped_loop_edges,
            "dropped_observations": self.dropped_observations,
            "iterations": self.iterations,
            "monotone": self.monotone,
        })


@dataclass
class RunResult:
    poses: list[geo.Pose]
    landmarks: np.ndarray | None
    report: RunReport
    segmentation: SegmentationResult | None = None


def finite_values(obj):
    """Replace non-applicable NaN entries with None so reports stay finite."""
    if isinstance(obj, dict):
        return {k: finite_values(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [finite_values(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _monotone(report: SolveReport) -> bool:
    trace = report.cost_trace
    return all(b <= a for a, b in zip(trace, trace[1:]))


class _Clock:
    def __init__(self, report: RunReport):
        self.report = report

    def __call__(self, phase: str):
        return _Phase(self.report.timings, phase)


class _Phase:
    def __init__(self, timings: dict, phase: str):
        self.timings, self.phase = timings, phase

    def __enter__(self):
        self.t0 = time.perf_counter()

    def __exit__(self, *exc):
        self.timings[self.phase] += time.perf_counter() - self.t0


def _record(report: RunReport, stage: str, sr: SolveReport) -> None:
    report.iterations[stage] = sr.iterations
    report.monotone &= _monotone(sr)
    report.dropped_observations += sr.dropped_observations


def _costs(problem, poses, landmarks) -> dict:
    if isinstance(problem, BaProblem):
        p = problem.with_state(poses, landmarks)
        out = {"pose_graph": total_cost_pose_graph(p.pose_graph())}
        if len(problem.obs_frame):
            out["ba"] = total_cost_ba(p)
        return out
    return {"pose_graph": total_cost_pose_graph(problem.with_poses(poses))}


def _fill(method: Method, problem, pre, post, anchors, stats, config, objective):
    if method.updater == "local-ba":
        return local_solve_update(problem, pre, post, anchors, stats, config, objective=objective)
    mode = "linear" if method.updater == "linear" else "interp"
    return interpolate_poses(pre, post, anchors, stats, mode, problem.timestamps)


def _has_obs(problem) -> bool:
    return isinstance(problem, BaProblem) and len(problem.obs_frame) > 0


def _full_pose_graph(problem, config, report, clock):
    graph = problem.pose_graph() if isinstance(problem, BaProblem) else problem
    with clock("global_solve"):
        poses, sr = optimize_pose_graph(graph, config)
    _record(report, "pose_graph", sr)
    if not isinstance(problem, BaProblem):
        return poses, None
    with clock("landmark_update"):
        P, _ = update_landmarks(problem, problem.poses, poses, np.arange(len(poses)))
    return poses, P


def _full_ba(problem, config, report, clock):
    with clock("global_solve"):
        poses, P, sr = optimize_ba(problem, config)
    _record(report, "ba", sr)
    return poses, P


def _segmented_pose_graph(problem, method, seg, stats, config, report, clock, options):
    graph = problem.pose_graph() if isinstance(problem, BaProblem) else problem
    pre = problem.poses
    with clock("reduction"):
        rpg = reduce_pose_graph(graph, seg, options)
    report.dropped_loop_edges = rpg.dropped_loop_edges
    with clock("global_solve"):
        post, sr = optimize_reduced(rpg, config)
    _record(report, "pose_graph", sr)
    with clock("interpolation"):
        poses = _fill(method, problem, pre, post, rpg.frame_ids, stats, config, "pose-graph")
    if not isinstance(problem, BaProblem):
        return poses, None
    with clock("landmark_update"):
        P, _ = update_landmarks(problem, pre, poses, np.arange(len(pre)))
    return poses, P


def _segmented_ba(problem, method, seg, stats, config, report, clock, options):
    pre = problem.poses
    with clock("reduction"):
        rba = reduce_ba(problem, seg, options)
    with clock("global_solve"):
        post, P_opt, sr = optimize_reduced(rba, config)
    _record(report, "ba", sr)
    with clock("interpolation"):
        poses = _fill(method, problem, pre, post, rba.frame_ids, stats, config, "ba")
    with clock("landmark_update"):
        solved = np.zeros(len(P_opt), dtype=bool)
        solved[rba.landmark_idx] = True
        P, _ = update_landmarks(problem, pre, poses, rba.frame_ids, optimized=solved)
        P[solved] = P_opt[solved]
    return poses, P


def run_method(problem: BaProblem | PoseGraph, method: str | Method = "segmented",
               solver: SolverConfig | None = None, seg_params: SegmentationParams | None = None,
               gt_poses=None, segmentation: SegmentationResult | None = None,
               reduction: ReductionOptions | None = None, stage: str = "pose-graph") -> RunResult:
    """Run one registered method and time each phase.

    ``stage`` picks the objective: ``pose-graph``, ``ba`` or ``both`` (pose
    graph, then BA from its result). Pose-graph runs on a problem with
    landmarks re-anchor the landmarks afterwards. ``segmentation`` overrides
    the computed segmentation, which is otherwise taken once from the initial
    estimate. ``gt_poses`` (index-matched poses or a timestamped ``Trajectory``)
    enables the ATE entry of the report.
    """
    method = get_method(method) if isinstance(method, str) else method
    if stage not in STAGES:
        raise InvalidArgument(f"unknown stage {stage!r}; choose from {', '.join(STAGES)}")
    if stage != "pose-graph" and not _has_obs(problem):
        raise InvalidArgument(f"stage {stage!r} needs a problem with observations")
    config = solver or SolverConfig()
    reduction = reduction or ReductionOptions()
    report = RunReport(method.name, len(problem.frames), stage)
    clock = _Clock(report)
    P0 = np.array(problem.landmark_positions) if isinstance(problem, BaProblem) else None
    report.cost_before = _costs(problem, problem.poses, P0)
    t0 = time.perf_counter()
    seg = None
    if method.segmented:
        with clock("segmentation"):
            stats = compute_frame_stats(problem)
            if segmentation is None:
                params = replace(seg_params or SegmentationParams(), strategy=method.strategy,
                                 use_buffer=method.use_buffer)
                segmentation = segment_trajectory(problem, params, stats)
            elif len(segmentation.labels) != len(problem.frames):
                raise InvalidArgument("segmentation does not cover every frame")
        seg = segmentation
        report.segmentation = seg.summary()
    current = problem
    poses, P = problem.poses, P0
    for part in (("pose-graph", "ba") if stage == "both" else (stage,)):
        if method.segmented:
            run = _segmented_pose_graph if part == "pose-graph" else _segmented_ba
            poses, P = run(current, method, seg, stats, config, report, clock, reduction)
        else:
            run = _full_pose_graph if part == "pose-graph" else _full_ba
            poses, P = run(current, config, report, clock)
        if isinstance(problem, BaProblem):
            current = current.with_state(poses, P)
    report.timings["total"] = time.perf_counter() - t0
    report.cost_after = _costs(problem, poses, P)
    if isinstance(gt_poses, Trajectory):
        report.ate_rmse = umeyama_align(Trajectory(problem.timestamps, poses), gt_poses).rmse
    elif gt_poses is not None:
        report.ate_rmse = ate_rmse(poses, gt_poses)
    return RunResult(poses, P, report, seg)
