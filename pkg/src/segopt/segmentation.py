"""
Trajectory segmentation from per-frame velocity and reprojection statistics.

A sequential scan grows a segment while each new frame's velocity stays close
to the running mean of the segment and its reprojection error stays low. The
first failing frame closes the segment and opens a buffer; the buffer ends at
the first frame whose weighted relative deviation from the last closed
segment drops below ``eta_threshold``, and a new segment opens there.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo
from .errors import ConnectingGapError, InvalidArgument
from .graph import BaProblem, PoseGraph, project_batch

log = logging.getLogger(__name__)

STRATEGIES = ("hybrid", "reproj-only", "velocity-only", "covis", "fixed-length")

MAD_SCALE = 1.4826


class Label(str, enum.Enum):
    HEAD = "head"
    INTERIOR = "interior"
    TAIL = "tail"
    BUFFER = "buffer"
    CONNECTING = "connecting"


@dataclass
class FrameStats:
    """Per-frame velocity twists (per second) and mean reprojection errors."""

    velocity: np.ndarray
    reproj: np.ndarray

    def __len__(self) -> int:
        return len(self.reproj)

    @property
    def speed(self) -> np.ndarray:
        return np.linalg.norm(self.velocity, axis=1)


@dataclass
class SegmentationParams:
    sigma_v: float | None = None
    sigma_r: float | None = None
    alpha: float = 0.2
    beta: float = 0.8
    eta_threshold: float = 0.5
    head_len: int = 2
    tail_len: int = 2
    min_segment_len: int = 8
    covis_threshold: int = 30
    strategy: str = "hybrid"
    use_buffer: bool = True
    num_segments: int | None = None
    adaptive_window: int = 10
    adaptive_k: float = 3.0

    def __post_init__(self):
        if abs(self.alpha + self.beta - 1.0) > 1e-9:
            raise InvalidArgument("alpha + beta must equal 1")
        if self.alpha < 0 or self.beta < 0:
            raise InvalidArgument("alpha and beta must be non-negative")
        for name in ("sigma_v", "sigma_r"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise InvalidArgument(f"{name} must be positive")
        if not self.eta_threshold > 0:
            raise InvalidArgument("eta_threshold must be positive")
        if self.head_len < 1 or self.tail_len < 1:
            raise InvalidArgument("head_len and tail_len must be >= 1")
        if self.min_segment_len < self.head_len + self.tail_len + 1:
            raise InvalidArgument("min_segment_len must be >= head_len + tail_len + 1")
        if self.covis_threshold < 0:
            raise InvalidArgument("covis_threshold must be >= 0")
        if self.strategy not in STRATEGIES:
            raise InvalidArgument(f"unknown strategy {self.strategy!r}; choose from {', '.join(STRATEGIES)}")
        if self.num_segments is not None and self.num_segments < 1:
            raise InvalidArgument("num_segments must be >= 1")


@dataclass
class SegmentationResult:
    labels: list[Label]
    segments: list[tuple[int, int]]
    buffers: list[tuple[int, int]]
    head_len: int = 2
    tail_len: int = 2
    connecting: dict[int, list[int]] = field(default_factory=dict)
    gap_segments: list[int] = field(default_factory=list)
    sigma_v: float = float("nan")
    sigma_r: float = float("nan")
    strategy: str = "hybrid"

    def __len__(self) -> int:
        return len(self.labels)

    def segment_of(self) -> np.ndarray:
        """Segment index per frame, -1 for buffer frames."""
        out = np.full(len(self.labels), -1, dtype=np.int64)
        for k, (s, e) in enumerate(self.segments):
            out[s: e + 1] = k
        return out

    def label_array(self) -> np.ndarray:
        return np.array([lab.value for lab in self.labels])

    def kept_pose_graph(self) -> np.ndarray:
        """Frames kept by pose-graph reduction (head, tail, buffer)."""
        return np.array([i for i, lab in enumerate(self.labels)
                         if lab in (Label.HEAD, Label.TAIL, Label.BUFFER)], dtype=np.int64)

    def kept_ba(self) -> np.ndarray:
        """Frames kept by BA reduction (head, tail, buffer, connecting)."""
        return np.array([i for i, lab in enumerate(self.labels) if lab != Label.INTERIOR], dtype=np.int64)

    def summary(self) -> dict:
        n = len(self.labels)
        nb = sum(e - s + 1 for s, e in self.buffers)
        return {
            "frames": n,
            "strategy": self.strategy,
            "segment_count": len(self.segments),
            "buffer_count": len(self.buffers),
            "buffer_fraction": nb / n if n else 0.0,
            "kept_fraction_pose_graph": len(self.kept_pose_graph()) / n if n else 0.0,
            "kept_fraction_ba": len(self.kept_ba()) / n if n else 0.0,
            "segments": [[int(s), int(e)] for s, e in self.segments],
            "buffers": [[int(s), int(e)] for s, e in self.buffers],
            "connecting": {str(k): [int(x) for x in v] for k, v in sorted(self.connecting.items())},
            "gap_segments": [int(k) for k in self.gap_segments],
            "sigma_v": float(self.sigma_v),
            "sigma_r": float(self.sigma_r),
        }

    @classmethod
    def all_buffer(cls, n: int, head_len: int = 2, tail_len: int = 2) -> SegmentationResult:
        return cls([Label.BUFFER] * n, [], [(0, n - 1)] if n else [], head_len, tail_len, strategy="all-buffer")


# ---------------------------------------------------------------------------
# statistics
# ---------------------------------------------------------------------------


def compute_frame_stats(problem: BaProblem | PoseGraph) -> FrameStats:
    """Velocity twists from consecutive poses and mean pixel error per frame."""
    n = len(problem.frames)
    if n < 2:
        raise InvalidArgument("frame statistics need at least 2 frames")
    ts = problem.timestamps
    dt = np.diff(ts)
    if np.any(dt <= 0):
        k = int(np.argmax(dt <= 0)) + 1
        raise InvalidArgument(f"timestamps must be strictly increasing (frame {k})")
    R, t = geo.poses_to_arrays(problem.poses)
    Rrel = np.einsum("nki,nkj->nij", R[:-1], R[1:])
    trel = np.einsum("nki,nk->ni", R[:-1], t[1:] - t[:-1])
    vel = np.empty((n, 6))
    vel[1:] = geo.se3_log_arrays(Rrel, trel) / dt[:, None]
    vel[0] = vel[1]

    reproj = np.zeros(n)
    if isinstance(problem, BaProblem) and len(problem.obs_frame):
        f, l = problem.obs_frame, problem.obs_landmark
        uv, _, valid = project_batch(problem.camera, R[f], t[f], problem.landmark_positions[l])
        err = np.linalg.norm(problem.obs_pixel - uv, axis=1)
        fv = f[valid]
        sums = np.bincount(fv, weights=err[valid], minlength=n)
        counts = np.bincount(fv, minlength=n)
        np.divide(sums, counts, out=reproj, where=counts > 0)
    return FrameStats(vel, reproj)


def robust_threshold(values: np.ndarray, k: float = 3.0) -> float:
    """``median + k * MAD`` with the MAD scaled to a Gaussian sigma."""
    values = np.asarray(values, dtype=float)
    if len(values) == 0:
        return 0.0
    med = float(np.median(values))
    mad = float(np.median(np.abs(values - med))) * MAD_SCALE
    return med + k * mad


def adaptive_thresholds(stats: FrameStats, params: SegmentationParams) -> tuple[float, float]:
    """Thresholds for the velocity deviation and the reprojection error.

    The velocity statistic is each frame's distance from the mean of the
    preceding ``adaptive_window`` velocities, which approximates the running
    segment mean the scan compares against.
    """
    vel = stats.velocity
    n = len(vel)
    w = params.adaptive_window
    csum = np.vstack([np.zeros((1, 6)), np.cumsum(vel, axis=0)])
    idx = np.arange(1, n)
    lo = np.maximum(idx - w, 0)
    means = (csum[idx] - csum[lo]) / (idx - lo)[:, None]
    dev = np.linalg.norm(vel[1:] - means, axis=1)
    scale = float(np.median(stats.speed)) + 1.0
    sigma_v = params.sigma_v
    if sigma_v is None:
        sigma_v = max(robust_threshold(dev, params.adaptive_k), 1e-6 * scale)
    sigma_r = params.sigma_r
    if sigma_r is None:
        observed = stats.reproj[stats.reproj > 0]
        sigma_r = max(robust_threshold(observed, params.adaptive_k), 1e-6)
    return float(sigma_v), float(sigma_r)


# ---------------------------------------------------------------------------
# scans
# ---------------------------------------------------------------------------


def _scan(stats: FrameStats, sigma_v: float, sigma_r: float, params: SegmentationParams,
          use_v: bool, use_r: bool):
    """Raw segment/buffer ranges before short-segment merging."""
    vel, rep = stats.velocity, stats.reproj
    n = len(rep)
    segments: list[tuple[int, int]] = []
    buffers: list[tuple[int, int]] = []
    start, vsum, rsum, cnt = 0, vel[0].copy(), float(rep[0]), 1
    in_segment = True
    last_v = last_r = None
    bstart = 0
    i = 1
    while i < n:
        if in_segment:
            mv = vsum / cnt
            ok = True
            if use_v:
                ok = ok and float(np.linalg.norm(vel[i] - mv)) < sigma_v
            if use_r:
                ok = ok and rep[i] < sigma_r
            if ok:
                vsum += vel[i]
                rsum += rep[i]
                cnt += 1
                i += 1
                continue
            if params.use_buffer:
                segments.append((start, i - 1))
                last_v, last_r = mv, rsum / cnt
                in_segment = False
                bstart = i
                i += 1
            else:
                # the splitting frame stays with the earlier segment
                segments.append((start, i))
                start = i + 1
                if start < n:
                    vsum, rsum, cnt = vel[start].copy(), float(rep[start]), 1
                i = start + 1
            continue
        eta_v = float(np.linalg.norm(vel[i] - last_v)) / max(float(np.linalg.norm(last_v)), 1e-12)
        eta_r = abs(rep[i] - last_r) / max(last_r, 1e-12)
        if use_v and use_r:
            eta = params.alpha * eta_v + params.beta * eta_r
        elif use_v:
            eta = eta_v
        else:
            eta = eta_r
        if eta < params.eta_threshold:
            buffers.append((bstart, i - 1))
            in_segment = True
            start, vsum, rsum, cnt = i, vel[i].copy(), float(rep[i]), 1
        i += 1
    if in_segment:
        if start < n:
            segments.append((start, n - 1))
    else:
        buffers.append((bstart, n - 1))
    return segments, buffers


def _covis_scan(problem, params: SegmentationParams):
    n = len(problem.frames)
    fl = problem.frame_landmarks if isinstance(problem, BaProblem) else [frozenset()] * n
    segments = []
    start = 0
    for i in range(1, n):
        if len(fl[start] & fl[i]) < params.covis_threshold:
            segments.append((start, i - 1))
            start = i
    segments.append((start, n - 1))
    return segments, []


def _fixed_scan(n: int, num_segments: int):
    bounds = np.linspace(0, n, num_segments + 1).round().astype(int)
    return [(int(a), int(b) - 1) for a, b in zip(bounds[:-1], bounds[1:]) if b > a], []


def _merge_short(segments, buffers, n: int, params: SegmentationParams):
    """Turn too-short segments into buffer (or fold them into a neighbour)."""
    L = params.min_segment_len
    if not params.use_buffer or params.strategy in ("covis", "fixed-length"):
        merged: list[list[int]] = []
        for s, e in segments:
            if e - s + 1 < L and merged:
                merged[-1][1] = e
            else:
                merged.append([s, e])
        if len(merged) > 1 and merged[0][1] - merged[0][0] + 1 < L:
            merged[1][0] = merged[0][0]
            merged.pop(0)
        if merged and merged[0][1] - merged[0][0] + 1 < L:
            return [], [(0, n - 1)]
        return [tuple(m) for m in merged], []
    keep = [seg for seg in segments if seg[1] - seg[0] + 1 >= L]
    mask = np.ones(n, dtype=bool)
    for s, e in keep:
        mask[s: e + 1] = False
    new_buffers = []
    i = 0
    while i < n:
        if mask[i]:
            j = i
            while j + 1 < n and mask[j + 1]:
                j += 1
            new_buffers.append((i, j))
            i = j + 1
        else:
            i += 1
    return keep, new_buffers


def _labels(n, segments, params):
    labels = [Label.BUFFER] * n
    for s, e in segments:
        for i in range(s, e + 1):
            labels[i] = Label.INTERIOR
        for i in range(s, min(s + params.head_len, e + 1)):
            labels[i] = Label.HEAD
        for i in range(max(e - params.tail_len + 1, s), e + 1):
            labels[i] = Label.TAIL
    return labels


def select_connecting_frames(problem: BaProblem, seg: tuple[int, int], params: SegmentationParams) -> list[int]:
    """Greedy covisibility chain from the last head frame to the first tail frame.

    Starting at the last head frame, repeatedly jump to the latest interior
    frame sharing more than ``covis_threshold`` landmarks with the current
    one, until the current frame shares more than the threshold with the
    first tail frame.
    """
    s, e = seg
    if e - s + 1 < params.head_len + params.tail_len:
        raise InvalidArgument(f"segment {seg} has no room for head and tail")
    fl = problem.frame_landmarks
    thr = params.covis_threshold
    cur = s + params.head_len - 1
    first_tail = e - params.tail_len + 1
    chain: list[int] = []
    while len(fl[cur] & fl[first_tail]) <= thr:
        nxt = None
        for f in range(first_tail - 1, cur, -1):
            if len(fl[cur] & fl[f]) > thr:
                nxt = f
                break
        if nxt is None:
            raise ConnectingGapError(f"covisibility chain of segment {seg} breaks after frame {cur}")
        chain.append(nxt)
        cur = nxt
    return chain


def segment_trajectory(problem: BaProblem | PoseGraph, params: SegmentationParams | None = None,
                       stats: FrameStats | None = None, connecting: bool | None = None) -> SegmentationResult:
    """Label every frame as head, interior, tail, buffer or connecting.

    ``connecting`` selects connecting frames per segment (defaults to on for
    problems with observations). The pose-graph reduction treats connecting
    frames like interior ones.
    """
    params = params or SegmentationParams()
    n = len(problem.frames)
    if n < params.min_segment_len:
        return SegmentationResult.all_buffer(n, params.head_len, params.tail_len)
    has_obs = isinstance(problem, BaProblem) and len(problem.obs_frame) > 0
    if connecting is None:
        connecting = has_obs
    sigma_v = sigma_r = float("nan")
    strategy = params.strategy
    if strategy == "covis":
        segments, buffers = _covis_scan(problem, params)
    elif strategy == "fixed-length":
        k = params.num_segments
        if k is None:
            base = SegmentationParams(**{**params.__dict__, "strategy": "hybrid", "use_buffer": True})
            k = max(len(segment_trajectory(problem, base, stats, connecting=False).segments), 1)
        segments, buffers = _fixed_scan(n, min(k, n))
    else:
        stats = stats or compute_frame_stats(problem)
        sigma_v, sigma_r = adaptive_thresholds(stats, params)
        use_v = strategy in ("hybrid", "velocity-only")
        use_r = strategy in ("hybrid", "reproj-only")
        if not np.any(stats.reproj > 0):
            # no observations: reprojection carries no information
            if strategy == "reproj-only":
                return SegmentationResult.all_buffer(n, params.head_len, params.tail_len)
            use_r = False
            use_v = True
        segments, buffers = _scan(stats, sigma_v, sigma_r, params, use_v, use_r)
    segments, buffers = _merge_short(segments, buffers, n, params)
    labels = _labels(n, segments, params)
    result = SegmentationResult(labels, segments, buffers, params.head_len, params.tail_len,
                                sigma_v=sigma_v, sigma_r=sigma_r, strategy=strategy)
    if connecting and has_obs:
        assign_connecting(problem, result, params)
    return result


def assign_connecting(problem: BaProblem, result: SegmentationResult, params: SegmentationParams) -> None:
    """Mark connecting frames in place; a broken chain marks the whole interior."""
    for k, seg in enumerate(result.segments):
        s, e = seg
        interior = range(s + params.head_len, e - params.tail_len + 1)
        try:
            chain = select_connecting_frames(problem, seg, params)
        except ConnectingGapError as exc:
            log.info("%s; keeping the whole interior", exc)
            chain = list(interior)
            result.gap_segments.append(k)
        result.connecting[k] = chain
        for f in chain:
            result.labels[f] = Label.CONNECTING


def write_labels(result: SegmentationResult, path) -> None:
    seg_of = result.segment_of()
    with open(path, "w") as fh:
        for i, lab in enumerate(result.labels):
            fh.write(f"{i} {lab.value} {int(seg_of[i])}\n")
