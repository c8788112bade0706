"""
Problem data: frames, landmarks, relative-pose edges and pixel observations.

Two problem kinds are modelled. A :class:`PoseGraph` is a set of frames tied
together by relative-pose edges; its objective is the information-weighted
sum of squared SE(3) log residuals. A :class:`BaProblem` adds landmarks seen
through a shared pinhole camera; its objective is the information-weighted
sum of squared reprojection errors. Both are treated as immutable once built.

Observations are stored column-wise (numpy arrays) because real problems hold
tens of thousands of them; :class:`Observation` is the per-record view.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import geometry as geo
from .errors import InvalidArgument
from .geometry import Pose

MIN_DEPTH = 1e-6


class EdgeKind(str, enum.Enum):
    ODOMETRY = "odometry"
    LOOP = "loop-closure"
    SYNTHESIZED = "synthesized"


@dataclass(frozen=True)
class Frame:
    id: int
    timestamp: float
    pose: Pose
    is_fixed: bool = False

    def with_pose(self, pose: Pose) -> Frame:
        return Frame(self.id, self.timestamp, pose, self.is_fixed)


@dataclass(frozen=True)
class Landmark:
    id: int
    position: np.ndarray


@dataclass(frozen=True, eq=False)
class PoseEdge:
    source: int
    target: int
    measurement: Pose
    information: np.ndarray
    kind: EdgeKind = EdgeKind.ODOMETRY

    def __post_init__(self):
        if self.source == self.target:
            raise InvalidArgument(f"edge endpoints must differ, got {self.source}")
        info = np.asarray(self.information, dtype=float)
        if info.shape != (6, 6):
            raise InvalidArgument(f"edge information must be 6x6, got {info.shape}")
        check_information(info, f"edge {self.source}->{self.target}")
        object.__setattr__(self, "information", info)


@dataclass(frozen=True, eq=False)
class Observation:
    frame: int
    landmark: int
    pixel: np.ndarray
    information: np.ndarray = field(default_factory=lambda: np.eye(2))


@dataclass(frozen=True)
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int = 640
    height: int = 480

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidArgument("focal lengths must be positive")


def check_information(info: np.ndarray, what: str) -> None:
    if not np.allclose(info, info.T, atol=1e-9, rtol=0):
        raise InvalidArgument(f"{what}: information matrix is not symmetric")
    try:
        np.linalg.cholesky(info)
    except np.linalg.LinAlgError:
        raise InvalidArgument(f"{what}: information matrix is not positive definite") from None


def _check_frames(frames: list[Frame]) -> None:
    for k, f in enumerate(frames):
        if f.id != k:
            raise InvalidArgument(f"frame ids must be dense 0..N-1 in order; position {k} has id {f.id}")
    for a, b in zip(frames, frames[1:]):
        if not b.timestamp > a.timestamp:
            raise InvalidArgument(
                f"timestamps must be strictly increasing (frame {b.id}: {b.timestamp} <= {a.timestamp})"
            )


class PoseGraph:
    """Frames plus relative-pose edges."""

    def __init__(self, frames, edges=(), validate: bool = True):
        self.frames: list[Frame] = list(frames)
        self.edges: list[PoseEdge] = list(edges)
        if validate:
            self.validate()

    def validate(self) -> None:
        _check_frames(self.frames)
        n = len(self.frames)
        for e in self.edges:
            if not (0 <= e.source < n and 0 <= e.target < n):
                raise InvalidArgument(f"edge {e.source}->{e.target} references a missing frame")
        if n == 0:
            return
        fixed = [f.id for f in self.frames if f.is_fixed]
        if len(fixed) != 1:
            raise InvalidArgument(f"exactly one fixed frame required, found {len(fixed)}")
        if n > 1 and not _connected(n, [(e.source, e.target) for e in self.edges]):
            raise InvalidArgument("pose graph is not connected")

    @property
    def poses(self) -> list[Pose]:
        return [f.pose for f in self.frames]

    @property
    def timestamps(self) -> np.ndarray:
        return np.array([f.timestamp for f in self.frames], dtype=float)

    @property
    def fixed_frame(self) -> int:
        return next(f.id for f in self.frames if f.is_fixed)

    def with_poses(self, poses) -> PoseGraph:
        frames = [f.with_pose(p) for f, p in zip(self.frames, poses)]
        return PoseGraph(frames, self.edges, validate=False)

    def __len__(self) -> int:
        return len(self.frames)


class BaProblem:
    """Frames, landmarks, pixel observations and the odometry/loop edges.

    The pose edges are not part of the reprojection objective; they carry the
    front-end relative motion used for velocity statistics and for pose-graph
    optimisation of the same trajectory.
    """

    def __init__(
        self,
        frames,
        landmark_ids,
        landmark_positions,
        obs_frame,
        obs_landmark,
        obs_pixel,
        obs_info,
        camera: Camera,
        edges=(),
        validate: bool = True,
    ):
        self.frames: list[Frame] = list(frames)
        self.landmark_ids = np.array(landmark_ids, dtype=np.int64).reshape(-1)
        self.landmark_positions = np.array(landmark_positions, dtype=float).reshape(-1, 3)
        self.obs_frame = np.array(obs_frame, dtype=np.int64).reshape(-1)
        # obs_landmark holds landmark *indices* into landmark_ids/positions
        self.obs_landmark = np.array(obs_landmark, dtype=np.int64).reshape(-1)
        self.obs_pixel = np.array(obs_pixel, dtype=float).reshape(-1, 2)
        self.obs_info = np.array(obs_info, dtype=float).reshape(-1, 2, 2)
        self.camera = camera
        self.edges: list[PoseEdge] = list(edges)
        for arr in (self.landmark_ids, self.landmark_positions, self.obs_frame, self.obs_landmark,
                    self.obs_pixel, self.obs_info):
            arr.flags.writeable = False
        if validate:
            self.validate()

    @classmethod
    def from_records(cls, frames, landmarks, observations, camera, edges=(), validate=True) -> BaProblem:
        landmarks = list(landmarks)
        ids = np.array([lm.id for lm in landmarks], dtype=np.int64)
        pos = np.array([lm.position for lm in landmarks], dtype=float).reshape(-1, 3)
        index = {int(i): k for k, i in enumerate(ids)}
        observations = list(observations)
        try:
            lm_idx = [index[o.landmark] for o in observations]
        except KeyError as exc:
            raise InvalidArgument(f"observation references unknown landmark {exc.args[0]}") from None
        return cls(
            frames,
            ids,
            pos,
            [o.frame for o in observations],
            lm_idx,
            np.array([o.pixel for o in observations], dtype=float).reshape(-1, 2),
            np.array([o.information for o in observations], dtype=float).reshape(-1, 2, 2),
            camera,
            edges,
            validate,
        )

    def validate(self) -> None:
        _check_frames(self.frames)
        n, m = len(self.frames), len(self.landmark_ids)
        if len(np.unique(self.landmark_ids)) != m:
            raise InvalidArgument("landmark ids must be unique")
        k = len(self.obs_frame)
        if not (len(self.obs_landmark) == len(self.obs_pixel) == len(self.obs_info) == k):
            raise InvalidArgument("observation arrays have inconsistent lengths")
        if k:
            if self.obs_frame.min() < 0 or self.obs_frame.max() >= n:
                raise InvalidArgument("observation references a missing frame")
            if self.obs_landmark.min() < 0 or self.obs_landmark.max() >= m:
                raise InvalidArgument("observation references a missing landmark")
            pairs = self.obs_frame * max(m, 1) + self.obs_landmark
            if len(np.unique(pairs)) != k:
                raise InvalidArgument("(frame, landmark) observation pairs must be unique")
        counts = np.bincount(self.obs_landmark, minlength=m)
        if m and counts.min() < 2:
            bad = int(self.landmark_ids[np.argmin(counts)])
            raise InvalidArgument(f"landmark {bad} has fewer than 2 observations")
        for e in self.edges:
            if not (0 <= e.source < n and 0 <= e.target < n):
                raise InvalidArgument(f"edge {e.source}->{e.target} references a missing frame")
        if n:
            fixed = [f.id for f in self.frames if f.is_fixed]
            if len(fixed) != 1:
                raise InvalidArgument(f"exactly one fixed frame required, found {len(fixed)}")

    # -- views ---------------------------------------------------------------

    @property
    def poses(self) -> list[Pose]:
        return [f.pose for f in self.frames]

    @property
    def timestamps(self) -> np.ndarray:
        return np.array([f.timestamp for f in self.frames], dtype=float)

    @property
    def fixed_frame(self) -> int:
        return next(f.id for f in self.frames if f.is_fixed)

    @property
    def landmarks(self) -> list[Landmark]:
        return [Landmark(int(i), p.copy()) for i, p in zip(self.landmark_ids, self.landmark_positions)]

    @property
    def observations(self) -> list[Observation]:
        return [
            Observation(int(f), int(self.landmark_ids[l]), px.copy(), info.copy())
            for f, l, px, info in zip(self.obs_frame, self.obs_landmark, self.obs_pixel, self.obs_info)
        ]

    @cached_property
    def frame_landmarks(self) -> list[frozenset]:
        """Landmark indices observed by each frame."""
        out: list[set] = [set() for _ in self.frames]
        for f, l in zip(self.obs_frame.tolist(), self.obs_landmark.tolist()):
            out[f].add(l)
        return [frozenset(s) for s in out]

    @cached_property
    def landmark_index(self) -> dict[int, int]:
        return {int(i): k for k, i in enumerate(self.landmark_ids)}

    def pose_graph(self) -> PoseGraph:
        return PoseGraph(self.frames, self.edges, validate=False)

    def with_state(self, poses=None, landmark_positions=None) -> BaProblem:
        frames = self.frames if poses is None else [f.with_pose(p) for f, p in zip(self.frames, poses)]
        pos = self.landmark_positions if landmark_positions is None else landmark_positions
        return BaProblem(
            frames, self.landmark_ids, pos, self.obs_frame, self.obs_landmark,
            self.obs_pixel, self.obs_info, self.camera, self.edges, validate=False,
        )

    def __len__(self) -> int:
        return len(self.frames)


def _connected(n: int, pairs) -> bool:
    parent = list(range(n))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for a, b in pairs:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[ra] = rb
    root = find(0)
    return all(find(i) == root for i in range(n))


# ---------------------------------------------------------------------------
# residuals and costs
# ---------------------------------------------------------------------------


def pose_edge_residual(edge: PoseEdge, Ti: Pose, Tj: Pose) -> np.ndarray:
    """``log(Z^-1 Ti^-1 Tj)`` as a (rho, phi) twist."""
    return geo.se3_log(edge.measurement.inverse().compose(geo.relative(Ti, Tj)))


def project(camera: Camera, frame_pose: Pose, landmark) -> np.ndarray | None:
    """Pixel of a world point, or ``None`` when it lies behind the camera."""
    pc = frame_pose.inverse().act(np.asarray(landmark, dtype=float))
    if pc[2] <= MIN_DEPTH:
        return None
    return np.array([camera.fx * pc[0] / pc[2] + camera.cx, camera.fy * pc[1] / pc[2] + camera.cy])


def project_batch(camera: Camera, R: np.ndarray, t: np.ndarray, points: np.ndarray):
    """Vectorised projection: per-row world point through per-row pose (R, t).

    Returns ``(pixels, camera_points, valid)``; invalid rows hold NaN pixels.
    """
    pc = np.einsum("nji,nj->ni", R, points - t)
    z = pc[:, 2]
    valid = z > MIN_DEPTH
    zs = np.where(valid, z, 1.0)
    uv = np.stack([camera.fx * pc[:, 0] / zs + camera.cx, camera.fy * pc[:, 1] / zs + camera.cy], axis=1)
    uv[~valid] = np.nan
    return uv, pc, valid


def edge_arrays(edges) -> dict[str, np.ndarray]:
    edges = list(edges)
    if not edges:
        return {
            "i": np.zeros(0, dtype=np.int64), "j": np.zeros(0, dtype=np.int64),
            "R": np.zeros((0, 3, 3)), "t": np.zeros((0, 3)), "info": np.zeros((0, 6, 6)),
        }
    R, t = geo.poses_to_arrays([e.measurement for e in edges])
    return {
        "i": np.array([e.source for e in edges], dtype=np.int64),
        "j": np.array([e.target for e in edges], dtype=np.int64),
        "R": R,
        "t": t,
        "info": np.array([e.information for e in edges]),
    }


def pose_edge_residuals(R: np.ndarray, t: np.ndarray, ea: dict[str, np.ndarray]) -> np.ndarray:
    """Vectorised edge residuals for poses given as arrays."""
    Ri, ti, Rj, tj = R[ea["i"]], t[ea["i"]], R[ea["j"]], t[ea["j"]]
    # Ti^-1 Tj
    Rij = np.einsum("nki,nkj->nij", Ri, Rj)
    tij = np.einsum("nki,nk->ni", Ri, tj - ti)
    # Z^-1 (Ti^-1 Tj)
    RE = np.einsum("nki,nkj->nij", ea["R"], Rij)
    tE = np.einsum("nki,nk->ni", ea["R"], tij - ea["t"])
    return geo.se3_log_arrays(RE, tE)


def total_cost_pose_graph(graph: PoseGraph, edges=None) -> float:
    edges = graph.edges if edges is None else edges
    if not edges:
        return 0.0
    R, t = geo.poses_to_arrays(graph.poses)
    ea = edge_arrays(edges)
    e = pose_edge_residuals(R, t, ea)
    return float(np.einsum("ni,nij,nj->", e, ea["info"], e))


def reprojection_residuals(problem: BaProblem, R=None, t=None, points=None):
    """Residuals ``u - pi(L, F)`` for every observation, plus the validity mask."""
    if R is None:
        R, t = geo.poses_to_arrays(problem.poses)
    if points is None:
        points = problem.landmark_positions
    f, l = problem.obs_frame, problem.obs_landmark
    uv, _, valid = project_batch(problem.camera, R[f], t[f], points[l])
    return problem.obs_pixel - uv, valid


def ba_cost_terms(problem: BaProblem, R=None, t=None, points=None) -> tuple[float, int]:
    """Reprojection cost over valid observations and the number of behind-camera drops."""
    r, valid = reprojection_residuals(problem, R, t, points)
    rv = r[valid]
    cost = float(np.einsum("ni,nij,nj->", rv, problem.obs_info[valid], rv))
    return cost, int((~valid).sum())


def total_cost_ba(problem: BaProblem) -> float:
    return ba_cost_terms(problem)[0]


def covisibility(problem: BaProblem, a: int, b: int) -> int:
    n = len(problem.frames)
    for x in (a, b):
        if not (0 <= x < n):
            raise InvalidArgument(f"unknown frame id {x}")
    fl = problem.frame_landmarks
    return len(fl[a] & fl[b])
