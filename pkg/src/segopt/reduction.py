"""
Reduced problems for global optimisation.

The pose-graph reduction keeps head, tail and buffer frames and replaces each
segment interior by a single synthesized edge from the last head frame to the
first tail frame. The BA reduction additionally keeps connecting frames and
the landmarks still seen at least twice by kept frames.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo
from .errors import ReductionError
from .graph import BaProblem, EdgeKind, Frame, PoseEdge, PoseGraph
from .segmentation import SegmentationResult

log = logging.getLogger(__name__)

LOOP_DROP_WARN_FRACTION = 0.10


@dataclass
class ReductionOptions:
    synth_information: str = "propagated"  # or "identity"
    bridge_unconstrained: bool = True


@dataclass
class ReducedPoseGraph:
    graph: PoseGraph
    frame_ids: np.ndarray
    synthesized: list[PoseEdge]
    dropped_loop_edges: int = 0
    total_loop_edges: int = 0
    gauge_substituted: bool = False
    synthesized_segments: list[int] = field(default_factory=list)
    source: PoseGraph | None = None

    def local_index(self) -> dict[int, int]:
        return {int(f): k for k, f in enumerate(self.frame_ids)}


@dataclass
class ReducedBaProblem:
    problem: BaProblem
    frame_ids: np.ndarray
    landmark_idx: np.ndarray
    synthesized: list[PoseEdge]
    gauge_substituted: bool = False
    source: BaProblem | None = None

    def local_index(self) -> dict[int, int]:
        return {int(f): k for k, f in enumerate(self.frame_ids)}


def _odometry_lookup(edges) -> dict[tuple[int, int], PoseEdge]:
    out = {}
    for e in edges:
        if e.target == e.source + 1 and (e.source, e.target) not in out:
            out[(e.source, e.target)] = e
    return out


class _Chain:
    """Pose arrays and per-step odometry covariances shared by chain edges."""

    def __init__(self, poses, edges, mode: str):
        self.R, self.t = geo.poses_to_arrays(poses)
        self.mode = mode
        n = len(self.R)
        self.cov = np.broadcast_to(np.eye(6), (max(n - 1, 0), 6, 6)).copy()
        if mode != "identity":
            odo = _odometry_lookup(edges)
            if odo:
                ks = np.array(sorted(odo), dtype=np.int64)[:, 0]
                self.cov[ks] = np.linalg.inv(np.array([odo[(k, k + 1)].information for k in ks]))

    def edge(self, a: int, b: int, kind: EdgeKind = EdgeKind.SYNTHESIZED) -> PoseEdge:
        R, t = self.R, self.t
        Ra = R[a]
        Z = geo.Pose.from_rt(Ra.T @ R[b], Ra.T @ (t[b] - t[a]))
        if self.mode == "identity":
            return PoseEdge(a, b, Z, np.eye(6), kind)
        # step k's noise reaches the chain end through T_b^-1 T_{k+1}
        Rb = R[b]
        Rk = np.einsum("ji,njk->nik", Rb, R[a + 1: b + 1])
        tk = (t[a + 1: b + 1] - t[b]) @ Rb
        Ad = geo.se3_adjoint(Rk, tk)
        cov = np.einsum("nij,njk,nlk->il", Ad, self.cov[a:b], Ad)
        cov = 0.5 * (cov + cov.T)
        info = np.linalg.inv(cov)
        return PoseEdge(a, b, Z, 0.5 * (info + info.T), kind)


def chain_edge(poses, a: int, b: int, edges, mode: str = "propagated",
               kind: EdgeKind = EdgeKind.SYNTHESIZED) -> PoseEdge:
    """Edge ``a -> b`` measuring the current relative pose along the chain.

    With ``mode="propagated"`` the covariance is the sum of the per-step
    odometry covariances transported to the end of the chain with the adjoint;
    steps without an odometry edge contribute identity covariance.
    """
    return _Chain(poses, edges, mode).edge(a, b, kind)


def _components(n: int, pairs) -> np.ndarray:
    parent = np.arange(n)

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for a, b in pairs:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[ra] = rb
    return np.array([find(i) for i in range(n)])


def _reindex_frames(frames, kept, fixed_original):
    fixed_kept = fixed_original in set(kept.tolist())
    out = []
    for k, f in enumerate(kept):
        fr = frames[int(f)]
        is_fixed = (int(f) == fixed_original) if fixed_kept else (k == 0)
        out.append(Frame(k, fr.timestamp, fr.pose, is_fixed))
    return out, not fixed_kept


def _remap_edge(e: PoseEdge, local: dict) -> PoseEdge:
    return PoseEdge(local[e.source], local[e.target], e.measurement, e.information, e.kind)


def reduce_pose_graph(graph: PoseGraph, seg: SegmentationResult,
                      options: ReductionOptions | None = None) -> ReducedPoseGraph:
    options = options or ReductionOptions()
    n = len(graph.frames)
    if len(seg.labels) != n:
        raise ReductionError(f"segmentation covers {len(seg.labels)} frames, graph has {n}")
    kept = seg.kept_pose_graph()
    kept_set = set(kept.tolist())
    local = {int(f): k for k, f in enumerate(kept)}
    chain = _Chain(graph.poses, graph.edges, options.synth_information)

    kept_edges, dropped_loops, total_loops = [], 0, 0
    for e in graph.edges:
        if e.kind == EdgeKind.LOOP:
            total_loops += 1
        if e.source in kept_set and e.target in kept_set:
            kept_edges.append(e)
        elif e.kind == EdgeKind.LOOP:
            dropped_loops += 1
    if total_loops and dropped_loops / total_loops > LOOP_DROP_WARN_FRACTION:
        log.warning("reduction dropped %d of %d loop-closure edges touching interior frames",
                    dropped_loops, total_loops)

    synthesized, synth_segments = [], []
    for k, (s, e) in enumerate(seg.segments):
        h = s + seg.head_len - 1
        t = e - seg.tail_len + 1
        if t - h < 2:
            continue
        synthesized.append(chain.edge(h, t))
        synth_segments.append(k)

    frames, substituted = _reindex_frames(graph.frames, kept, graph.fixed_frame if n else -1)
    edges = [_remap_edge(e, local) for e in kept_edges + synthesized]
    reduced = PoseGraph(frames, edges, validate=False)
    if len(frames) > 1:
        comp = _components(len(frames), [(e.source, e.target) for e in edges])
        bad = np.nonzero(comp != comp[0])[0]
        if len(bad):
            orig = int(kept[bad[0]])
            seg_of = seg.segment_of()
            where = f"segment {int(seg_of[orig])}" if seg_of[orig] >= 0 else "a buffer region"
            raise ReductionError(f"reduced pose graph is disconnected at frame {orig} ({where})")
    if substituted:
        log.info("fixed frame %d was pruned; fixing frame %d instead", graph.fixed_frame, int(kept[0]))
    return ReducedPoseGraph(reduced, kept, synthesized, dropped_loops, total_loops, substituted, synth_segments,
                            graph)


def reduce_ba(problem: BaProblem, seg: SegmentationResult,
              options: ReductionOptions | None = None) -> ReducedBaProblem:
    options = options or ReductionOptions()
    n = len(problem.frames)
    if len(seg.labels) != n:
        raise ReductionError(f"segmentation covers {len(seg.labels)} frames, problem has {n}")
    kept = seg.kept_ba()
    keep_frame = np.zeros(n, dtype=bool)
    keep_frame[kept] = True
    local_f = np.full(n, -1, dtype=np.int64)
    local_f[kept] = np.arange(len(kept))

    obs_keep = keep_frame[problem.obs_frame]
    m = len(problem.landmark_ids)
    counts = np.bincount(problem.obs_landmark[obs_keep], minlength=m)
    keep_lm = counts >= 2
    lm_idx = np.nonzero(keep_lm)[0]
    local_l = np.full(m, -1, dtype=np.int64)
    local_l[lm_idx] = np.arange(len(lm_idx))
    obs_keep &= keep_lm[problem.obs_landmark]

    frames, substituted = _reindex_frames(problem.frames, kept, problem.fixed_frame if n else -1)
    local = {int(f): k for k, f in enumerate(kept)}
    edges = [_remap_edge(e, local) for e in problem.edges if keep_frame[e.source] and keep_frame[e.target]]

    of = local_f[problem.obs_frame[obs_keep]]
    ol = local_l[problem.obs_landmark[obs_keep]]
    synthesized: list[PoseEdge] = []
    if len(kept) > 1:
        # frames sharing a kept landmark are mutually constrained
        order = np.argsort(ol, kind="stable")
        ls, fs = ol[order], of[order]
        same = ls[:-1] == ls[1:]
        comp = _components(len(kept), zip(fs[:-1][same].tolist(), fs[1:][same].tolist()))
        if not options.bridge_unconstrained:
            bad = np.nonzero(comp != comp[0])[0]
            if len(bad):
                orig = int(kept[bad[0]])
                seg_of = seg.segment_of()
                where = f"segment {int(seg_of[orig])}" if seg_of[orig] >= 0 else "a buffer region"
                raise ReductionError(f"reduced BA problem is disconnected at frame {orig} ({where})")
        parent = {int(c): int(c) for c in comp}

        def root(x):
            while parent[x] != x:
                x = parent[x]
            return x

        chain = _Chain(problem.poses, problem.edges, options.synth_information)
        for k in range(len(kept) - 1):
            ra, rb = root(int(comp[k])), root(int(comp[k + 1]))
            if ra == rb:
                continue
            a, b = int(kept[k]), int(kept[k + 1])
            e = chain.edge(a, b)
            synthesized.append(PoseEdge(k, k + 1, e.measurement, e.information, EdgeKind.SYNTHESIZED))
            parent[ra] = rb

    reduced = BaProblem(
        frames,
        problem.landmark_ids[lm_idx],
        problem.landmark_positions[lm_idx],
        of,
        ol,
        problem.obs_pixel[obs_keep],
        problem.obs_info[obs_keep],
        problem.camera,
        edges,
        validate=False,
    )
    if substituted:
        log.info("fixed frame %d was pruned; fixing frame %d instead", problem.fixed_frame, int(kept[0]))
    return ReducedBaProblem(reduced, kept, lm_idx, synthesized, substituted, problem)
