"""
Pose update for frames left out of the global solve.

Each non-anchor frame C between anchors H and T receives two predictions: the
optimized head pose carried forward by the pre-optimization relative pose
``H -> C``, and the optimized tail pose carried back by ``T -> C``. The two
are blended on SO(3) x R^3 with weight ``alpha / (1 + alpha)`` on the tail
prediction, where ``alpha`` is the ratio of RMS speeds on either side of C.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import geometry as geo
from .errors import AnchoringError, InvalidArgument
from .graph import BaProblem, Frame, PoseEdge, PoseGraph
from .segmentation import FrameStats
from .solver import SolverConfig, optimize_ba, optimize_pose_graph

log = logging.getLogger(__name__)

ALPHA_MAX = 1e6
DEGENERATE_SPEED = 1e-12

UPDATERS = ("interp", "linear", "local-ba")


@dataclass
class AnchorPair:
    head: int
    tail: int
    head_pre: geo.Pose
    head_post: geo.Pose
    tail_pre: geo.Pose
    tail_post: geo.Pose

    def __post_init__(self):
        if not self.head < self.tail:
            raise InvalidArgument("head anchor must precede tail anchor")


def _alpha_from_sums(left_sq, right_sq, n_left, n_right):
    left = np.sqrt(np.asarray(left_sq, dtype=float))
    right = np.sqrt(np.asarray(right_sq, dtype=float))
    both_flat = (left < DEGENERATE_SPEED) & (right < DEGENERATE_SPEED)
    right_flat = right < DEGENERATE_SPEED
    with np.errstate(divide="ignore", invalid="ignore"):
        alpha = np.where(right_flat, ALPHA_MAX, left / np.where(right_flat, 1.0, right))
        ratio = np.asarray(n_left, dtype=float) / np.maximum(np.asarray(n_right, dtype=float), 1.0)
    alpha = np.where(both_flat, ratio, alpha)
    return np.minimum(alpha, ALPHA_MAX)


def interpolation_factor(stats: FrameStats, head: int, current: int, tail: int) -> float:
    """Ratio of RMS speeds over ``(head, current]`` and ``(current, tail]``."""
    if not head < current < tail:
        raise InvalidArgument(f"need head < current < tail, got {head}, {current}, {tail}")
    sq = stats.speed ** 2
    left = float(sq[head + 1: current + 1].sum())
    right = float(sq[current + 1: tail + 1].sum())
    return float(_alpha_from_sums(left, right, current - head, tail - current))


def blend_weight(alpha):
    """Weight of the tail prediction for a given ``alpha``."""
    alpha = np.asarray(alpha, dtype=float)
    return alpha / (1.0 + alpha)


def blend_scale(s_head: float, s_tail: float, alpha: float) -> float:
    return s_head / (alpha + 1.0) + alpha * s_tail / (alpha + 1.0)


def _spans(n: int, anchors: np.ndarray):
    """Previous and next anchor for every frame; raises when one is missing."""
    anchors = np.asarray(anchors, dtype=np.int64)
    is_anchor = np.zeros(n, dtype=bool)
    is_anchor[anchors] = True
    free = np.nonzero(~is_anchor)[0]
    if len(free) == 0:
        return free, free, free
    pos = np.searchsorted(anchors, free)
    if len(anchors) == 0 or pos.min() == 0 or pos.max() == len(anchors):
        bad = free[0] if len(anchors) == 0 or pos[0] == 0 else free[-1]
        raise AnchoringError(f"frame {int(bad)} has no anchor on one side")
    return free, anchors[pos - 1], anchors[pos]


def _apply_left(Rd, td, R, t):
    return Rd @ R, np.einsum("nij,nj->ni", Rd, t) + td


def interpolate_poses(pre_poses, post_poses, anchors, stats: FrameStats | None = None, mode: str = "interp",
                      timestamps=None) -> list[geo.Pose]:
    """Fill every non-anchor frame from its surrounding anchors.

    ``post_poses`` must hold optimized poses at the anchor indices; other
    entries are ignored. Anchor poses are returned as given.
    """
    n = len(pre_poses)
    Rp, tp = geo.poses_to_arrays(pre_poses)
    Ro, to = geo.poses_to_arrays(post_poses)
    free, h, tl = _spans(n, anchors)
    out = list(post_poses)
    if len(free) == 0:
        return out

    if mode == "linear":
        if timestamps is None:
            raise InvalidArgument("linear interpolation needs timestamps")
        ts = np.asarray(timestamps, dtype=float)
        w = (ts[free] - ts[h]) / (ts[tl] - ts[h])
        RA, tA, RB, tB = Ro[h], to[h], Ro[tl], to[tl]
    elif mode == "interp":
        if stats is None:
            raise InvalidArgument("velocity-weighted interpolation needs frame statistics")
        cs = np.concatenate([[0.0], np.cumsum(stats.speed ** 2)])
        left = cs[free + 1] - cs[h + 1]
        right = cs[tl + 1] - cs[free + 1]
        w = blend_weight(_alpha_from_sums(left, right, free - h, tl - free))
        # left corrections D = T_post T_pre^-1 of both anchors applied to C_pre
        RdH = Ro[h] @ np.transpose(Rp[h], (0, 2, 1))
        tdH = to[h] - np.einsum("nij,nj->ni", RdH, tp[h])
        RdT = Ro[tl] @ np.transpose(Rp[tl], (0, 2, 1))
        tdT = to[tl] - np.einsum("nij,nj->ni", RdT, tp[tl])
        RA, tA = _apply_left(RdH, tdH, Rp[free], tp[free])
        RB, tB = _apply_left(RdT, tdT, Rp[free], tp[free])
    else:
        raise InvalidArgument(f"unknown interpolation mode {mode!r}")

    rel = geo.so3_log(np.einsum("nki,nkj->nij", RA, RB))
    R = RA @ geo.so3_exp(w[:, None] * rel)
    t = tA + w[:, None] * (tB - tA)
    for f, p in zip(free.tolist(), geo.arrays_to_poses(R, t)):
        out[f] = p
    return out


def interpolate_segment(pre_poses, anchors: AnchorPair, stats: FrameStats, mode: str = "interp",
                        timestamps=None) -> list[geo.Pose]:
    """Updated poses for the frames strictly between one anchor pair."""
    h, t = anchors.head, anchors.tail
    pre = list(pre_poses[h: t + 1])
    post = list(pre)
    post[0], post[-1] = anchors.head_post, anchors.tail_post
    pre[0], pre[-1] = anchors.head_pre, anchors.tail_pre
    sub_stats = FrameStats(stats.velocity[h: t + 1], stats.reproj[h: t + 1]) if stats is not None else None
    ts = None if timestamps is None else np.asarray(timestamps)[h: t + 1]
    res = interpolate_poses(pre, post, np.array([0, t - h]), sub_stats, mode, ts)
    return res[1:-1]


def interpolate_sim_segment(pre_poses, head_post: geo.SimPose, tail_post: geo.SimPose, head: int, tail: int,
                            stats: FrameStats) -> list[geo.SimPose]:
    """Similarity variant: the scale is blended with the same ``alpha``."""
    out = []
    Hpre, Tpre = pre_poses[head].to_sim(), pre_poses[tail].to_sim()
    DH = head_post.compose(Hpre.inverse())
    DT = tail_post.compose(Tpre.inverse())
    for c in range(head + 1, tail):
        a = interpolation_factor(stats, head, c, tail)
        w = float(blend_weight(a))
        C = pre_poses[c].to_sim()
        PH, PT = DH.compose(C), DT.compose(C)
        rot = geo.slerp(PH.rotation, PT.rotation, w)
        trans = geo.lerp(PH.translation, PT.translation, w)
        out.append(geo.SimPose(rot, trans, blend_scale(head_post.scale, tail_post.scale, a)))
    return out


# ---------------------------------------------------------------------------
# landmarks
# ---------------------------------------------------------------------------


def landmark_references(problem: BaProblem, kept_frames) -> np.ndarray:
    """Reference frame per landmark (-1 when it has no observer).

    The reference is the kept observer closest in time to the landmark's
    median observer; without kept observers the median observer itself.
    """
    m = len(problem.landmark_ids)
    kept = np.zeros(len(problem.frames), dtype=bool)
    kept[np.asarray(kept_frames, dtype=np.int64)] = True
    ref = np.full(m, -1, dtype=np.int64)
    if len(problem.obs_frame) == 0:
        return ref
    order = np.lexsort((problem.obs_frame, problem.obs_landmark))
    lms = problem.obs_landmark[order]
    frs = problem.obs_frame[order]
    counts = np.bincount(lms, minlength=m)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    has = counts > 0
    med = np.zeros(m, dtype=np.int64)
    med[has] = frs[starts[has] + (counts[has] - 1) // 2]
    dist = np.where(kept[frs], np.abs(frs - med[lms]).astype(float), np.inf)
    # first entry per landmark after sorting by distance, then frame
    best = np.lexsort((frs, dist, lms))
    first = best[starts[has]]
    ref[has] = np.where(np.isfinite(dist[first]), frs[first], med[has])
    return ref


def update_landmarks(problem: BaProblem, pre_poses, post_poses, kept_frames, optimized=None):
    """Carry each landmark rigidly with its reference frame.

    ``optimized`` marks landmarks solved directly; those are left untouched.
    Returns ``(positions, skipped)`` where ``skipped`` counts landmarks with
    no observer.
    """
    P = np.array(problem.landmark_positions, dtype=float)
    ref = landmark_references(problem, kept_frames)
    todo = ref >= 0
    if optimized is not None:
        todo &= ~np.asarray(optimized, dtype=bool)
    skipped = int((ref < 0).sum())
    if skipped:
        log.info("%d landmarks have no observing frame; left unchanged", skipped)
    Rp, tp = geo.poses_to_arrays(pre_poses)
    Ro, to = geo.poses_to_arrays(post_poses)
    r = ref[todo]
    local = np.einsum("nji,nj->ni", Rp[r], P[todo] - tp[r])
    P[todo] = np.einsum("nij,nj->ni", Ro[r], local) + to[r]
    return P, skipped


# ---------------------------------------------------------------------------
# local solve updater
# ---------------------------------------------------------------------------


def local_solve_update(problem, pre_poses, post_poses, anchors, stats, config=None, landmarks=None,
                       objective: str | None = None):
    """Refine each run of non-anchor frames with its bounding anchors fixed.

    The interpolated poses seed each local solve. ``objective="ba"`` runs
    bundle adjustment on the frames of the span, ``"pose-graph"`` uses the
    pose edges inside the span. The default is BA when observations exist.
    """
    config = config or SolverConfig()
    if objective not in (None, "ba", "pose-graph"):
        raise InvalidArgument(f"unknown local objective {objective!r}")
    seed = interpolate_poses(pre_poses, post_poses, anchors, stats)
    n = len(seed)
    anchors = np.asarray(anchors, dtype=np.int64)
    is_anchor = np.zeros(n, dtype=bool)
    is_anchor[anchors] = True
    out = list(seed)
    ts = problem.timestamps
    has_obs = isinstance(problem, BaProblem) and len(problem.obs_frame) > 0
    if objective == "ba" and not has_obs:
        raise InvalidArgument("local bundle adjustment needs observations")
    if objective == "pose-graph":
        has_obs = False
    P = None
    if has_obs:
        P = np.array(problem.landmark_positions if landmarks is None else landmarks, dtype=float)
    # contiguous runs of free frames
    free = np.nonzero(~is_anchor)[0]
    if len(free) == 0:
        return out
    breaks = np.nonzero(np.diff(free) > 1)[0]
    run_starts = np.concatenate([[free[0]], free[breaks + 1]])
    run_ends = np.concatenate([free[breaks], [free[-1]]])
    for a, b in zip(run_starts.tolist(), run_ends.tolist()):
        lo, hi = a - 1, b + 1
        if lo < 0 or hi >= n:
            raise AnchoringError(f"frames {a}..{b} lack an anchor on one side")
        ids = list(range(lo, hi + 1))
        frames = [Frame(k, float(ts[f]), out[f], k == 0) for k, f in enumerate(ids)]
        fixed = {0, len(ids) - 1}
        if has_obs:
            sel = (problem.obs_frame >= lo) & (problem.obs_frame <= hi)
            lm = problem.obs_landmark[sel]
            counts = np.bincount(lm, minlength=len(P))
            sel &= counts[problem.obs_landmark] >= 2
            used = np.unique(problem.obs_landmark[sel])
            if len(used) == 0:
                continue
            remap = np.full(len(P), -1, dtype=np.int64)
            remap[used] = np.arange(len(used))
            sub = BaProblem(frames, problem.landmark_ids[used], P[used], problem.obs_frame[sel] - lo,
                            remap[problem.obs_landmark[sel]], problem.obs_pixel[sel], problem.obs_info[sel],
                            problem.camera, validate=False)
            poses, pts, _ = optimize_ba(sub, config, fixed=fixed)
        else:
            edges = [e for e in problem.edges if lo <= e.source <= hi and lo <= e.target <= hi]
            edges = [PoseEdge(e.source - lo, e.target - lo, e.measurement, e.information, e.kind) for e in edges]
            if not edges:
                continue
            poses, _ = optimize_pose_graph(PoseGraph(frames, edges, validate=False), config, fixed=fixed)
        for k, f in enumerate(ids[1:-1], start=1):
            out[f] = poses[k]
    return out
