"""Trajectory alignment (Umeyama) and absolute trajectory error."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import geometry as geo
from .errors import AlignmentError, InvalidArgument, RankDeficiencyError
from .formats import Trajectory

ASSOCIATION_TOLERANCE = 0.02


@dataclass
class AlignmentResult:
    transform: geo.Pose | geo.SimPose
    rmse: float
    errors: np.ndarray
    matches: np.ndarray  # (k, 2) index pairs (est, gt)


def associate(est_ts, gt_ts, tolerance: float = ASSOCIATION_TOLERANCE) -> np.ndarray:
    """Nearest-timestamp matches within ``tolerance``, one gt sample per estimate."""
    est_ts = np.asarray(est_ts, dtype=float)
    gt_ts = np.asarray(gt_ts, dtype=float)
    if len(gt_ts) == 0 or len(est_ts) == 0:
        return np.zeros((0, 2), dtype=np.int64)
    pos = np.clip(np.searchsorted(gt_ts, est_ts), 1, max(len(gt_ts) - 1, 1))
    left = np.clip(pos - 1, 0, len(gt_ts) - 1)
    right = np.clip(pos, 0, len(gt_ts) - 1)
    pick = np.where(np.abs(gt_ts[left] - est_ts) <= np.abs(gt_ts[right] - est_ts), left, right)
    ok = np.abs(gt_ts[pick] - est_ts) <= tolerance
    pairs = np.stack([np.nonzero(ok)[0], pick[ok]], axis=1)
    _, first = np.unique(pairs[:, 1], return_index=True)
    return pairs[np.sort(first)]


def umeyama(src: np.ndarray, dst: np.ndarray, with_scale: bool) -> tuple[np.ndarray, np.ndarray, float]:
    """Least-squares ``dst ~ s R src + t``. Returns ``(R, t, s)``."""
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    n = len(src)
    if n < 3:
        raise AlignmentError(f"alignment needs at least 3 associated positions, got {n}")
    mu_s, mu_d = src.mean(0), dst.mean(0)
    xs, xd = src - mu_s, dst - mu_d
    var_s = float((xs ** 2).sum()) / n
    sv = np.linalg.svd(xs, compute_uv=False)
    if sv[0] <= 0 or sv[1] <= 1e-10 * sv[0]:
        raise RankDeficiencyError("positions are collinear; alignment is not unique")
    C = xd.T @ xs / n
    U, D, Vt = np.linalg.svd(C)
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2, 2] = -1.0
    R = U @ S @ Vt
    s = float(np.trace(np.diag(D) @ S) / var_s) if with_scale else 1.0
    t = mu_d - s * R @ mu_s
    return R, t, s


def umeyama_align(est: Trajectory, gt: Trajectory, mode: str = "se3",
                  tolerance: float = ASSOCIATION_TOLERANCE) -> AlignmentResult:
    """Align estimate positions onto ground truth and report the ATE."""
    if mode not in ("se3", "sim3"):
        raise InvalidArgument(f"unknown alignment mode {mode!r}")
    matches = associate(est.timestamps, gt.timestamps, tolerance)
    if len(matches) < 3:
        raise AlignmentError(f"only {len(matches)} timestamp associations within {tolerance} s")
    pe = est.positions[matches[:, 0]]
    pg = gt.positions[matches[:, 1]]
    R, t, s = umeyama(pe, pg, mode == "sim3")
    aligned = s * pe @ R.T + t
    errors = np.linalg.norm(aligned - pg, axis=1)
    rmse = float(np.sqrt(np.mean(errors ** 2)))
    rot = geo.Rotation.from_matrix(R)
    transform = geo.SimPose(rot, t, s) if mode == "sim3" else geo.Pose(rot, t)
    return AlignmentResult(transform, rmse, errors, matches)


def ate_rmse(est_poses, gt_poses, mode: str = "se3") -> float:
    """ATE of index-matched pose lists."""
    if len(est_poses) != len(gt_poses):
        raise InvalidArgument("trajectories differ in length")
    ts = np.arange(len(est_poses), dtype=float)
    return umeyama_align(Trajectory(ts, list(est_poses)), Trajectory(ts, list(gt_poses)), mode).rmse
