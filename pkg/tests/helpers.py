"""Shared constructors for small test problems."""

import numpy as np

from segopt import geometry as geo
from segopt.graph import BaProblem, Camera, EdgeKind, Frame, Landmark, Observation, PoseEdge, PoseGraph


def random_pose(rng, angle=1.0, scale=2.0):
    phi = rng.normal(size=3)
    phi *= rng.uniform(0, angle) / np.linalg.norm(phi)
    return geo.Pose(geo.Rotation.from_rotvec(phi), rng.normal(scale=scale, size=3))


def straight_poses(n, step=(0.5, 0.0, 0.0), turn=0.0):
    """Constant-velocity trajectory: every step applies the same body motion."""
    delta = geo.Pose(geo.Rotation.from_rotvec([0.0, 0.0, turn]), step)
    poses = [geo.Pose.identity()]
    for _ in range(n - 1):
        poses.append(poses[-1].compose(delta))
    return poses


def chain_graph(poses, info=None, loops=(), fixed=0, timestamps=None):
    """Consistent odometry chain (plus optional loops) over the given poses."""
    info = np.eye(6) if info is None else info
    ts = np.arange(len(poses)) * 0.1 if timestamps is None else timestamps
    frames = [Frame(i, float(ts[i]), p, is_fixed=(i == fixed)) for i, p in enumerate(poses)]
    edges = [PoseEdge(i, i + 1, geo.relative(poses[i], poses[i + 1]), info, EdgeKind.ODOMETRY)
             for i in range(len(poses) - 1)]
    edges += [PoseEdge(i, j, geo.relative(poses[i], poses[j]), info, EdgeKind.LOOP) for i, j in loops]
    return PoseGraph(frames, edges)


def pinhole():
    return Camera(500.0, 500.0, 320.0, 240.0, 640, 480)


def small_ba(rng, n_frames=5, n_landmarks=20, pixel_noise=0.0, pose_noise=0.0, point_noise=0.0,
             edges=True):
    """Camera moving along +x looking down +z at a slab of points.

    Every landmark is seen by every frame. Returns ``(problem, gt_poses, gt_points)``.
    """
    cam = pinhole()
    gt = [geo.Pose(geo.Rotation.from_rotvec(rng.normal(scale=0.02, size=3)), [0.3 * k, 0.05 * k, 0.0])
          for k in range(n_frames)]
    pts = np.column_stack([
        rng.uniform(-2.0, 2.0 + 0.3 * n_frames, n_landmarks),
        rng.uniform(-1.5, 1.5, n_landmarks),
        rng.uniform(4.0, 8.0, n_landmarks),
    ])
    obs_f, obs_l, uv = [], [], []
    for f, p in enumerate(gt):
        for l in range(n_landmarks):
            obs_f.append(f)
            obs_l.append(l)
            pc = p.inverse().act(pts[l])
            uv.append([cam.fx * pc[0] / pc[2] + cam.cx, cam.fy * pc[1] / pc[2] + cam.cy])
    uv = np.array(uv) + rng.normal(scale=pixel_noise, size=(len(uv), 2)) if pixel_noise else np.array(uv)
    init = [gt[0]] + [p.compose(geo.se3_exp(rng.normal(scale=pose_noise, size=6))) if pose_noise else p
                      for p in gt[1:]]
    frames = [Frame(i, 0.1 * i, p, is_fixed=(i == 0)) for i, p in enumerate(init)]
    pose_edges = []
    if edges:
        pose_edges = [PoseEdge(i, i + 1, geo.relative(gt[i], gt[i + 1]), np.eye(6), EdgeKind.ODOMETRY)
                      for i in range(n_frames - 1)]
    P0 = pts + rng.normal(scale=point_noise, size=pts.shape) if point_noise else pts.copy()
    problem = BaProblem(frames, np.arange(n_landmarks), P0, obs_f, obs_l, uv,
                        np.tile(np.eye(2), (len(uv), 1, 1)), cam, pose_edges)
    return problem, gt, pts
