"""
Text formats: g2o-style graph files, TUM and KITTI trajectories, label files.

Graph records::

    VERTEX_SE3:QUAT id tx ty tz qx qy qz qw
    EDGE_SE3:QUAT i j tx ty tz qx qy qz qw I11 I12 .. I16 I22 .. I66
    VERTEX_TRACKXYZ id x y z
    EDGE_PROJECT frame landmark u v I11 I12 I22
    PARAMS_CAM fx fy cx cy [width height]
    FIX id
    TS id t

Pose-edge kinds are not stored: an edge between consecutive frames reads back
as odometry and any other edge as a loop closure.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import geometry as geo
from .errors import InvalidArgument, ParseError
from .graph import BaProblem, Camera, EdgeKind, Frame, PoseEdge, PoseGraph

log = logging.getLogger(__name__)

DEFAULT_RATE = 10.0
_IU6 = np.triu_indices(6)
_IU2 = np.triu_indices(2)


def fmt(x: float) -> str:
    return format(float(x), ".17g")


def _join(values) -> str:
    return " ".join(fmt(v) for v in values)


@dataclass
class ParseStats:
    records: int = 0
    skipped: int = 0


# ---------------------------------------------------------------------------
# graphs
# ---------------------------------------------------------------------------


def _floats(tokens, count: int, line: int, path, what: str) -> list[float]:
    if len(tokens) != count:
        raise ParseError(f"{what} expects {count} values, got {len(tokens)}", line, path)
    try:
        vals = [float(t) for t in tokens]
    except ValueError:
        raise ParseError(f"{what} has a non-numeric value", line, path) from None
    if not all(np.isfinite(vals)):
        raise ParseError(f"{what} has a non-finite value", line, path)
    return vals


def _int(token: str, line: int, path, what: str) -> int:
    try:
        return int(token)
    except ValueError:
        raise ParseError(f"{what} id {token!r} is not an integer", line, path) from None


def _pose_from(vals) -> geo.Pose:
    tx, ty, tz, qx, qy, qz, qw = vals
    q = np.array([qw, qx, qy, qz])
    if not np.linalg.norm(q) > 0:
        raise InvalidArgument("zero quaternion")
    return geo.Pose(geo.Rotation(q), np.array([tx, ty, tz]))


def _sym_from_upper(vals, n: int, iu) -> np.ndarray:
    M = np.zeros((n, n))
    M[iu] = vals
    return M + np.triu(M, 1).T


def parse_graph(text: str, path: str | None = None) -> tuple[PoseGraph | BaProblem, ParseStats]:
    """Parse graph text; returns the problem and record counts."""
    stats = ParseStats()
    vertices: dict[int, geo.Pose] = {}
    edges_raw = []
    landmarks: dict[int, np.ndarray] = {}
    obs = []
    camera = None
    fixed: list[int] = []
    stamps: dict[int, float] = {}
    unknown: dict[str, int] = {}
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tok = line.split()
        tag, rest = tok[0], tok[1:]
        if tag == "VERTEX_SE3:QUAT":
            if not rest:
                raise ParseError("VERTEX_SE3:QUAT needs an id", ln, path)
            vid = _int(rest[0], ln, path, "vertex")
            if vid in vertices:
                raise ParseError(f"duplicate vertex {vid}", ln, path)
            try:
                vertices[vid] = _pose_from(_floats(rest[1:], 7, ln, path, tag))
            except InvalidArgument as exc:
                raise ParseError(str(exc), ln, path) from None
        elif tag == "EDGE_SE3:QUAT":
            if len(rest) < 2:
                raise ParseError("EDGE_SE3:QUAT needs two ids", ln, path)
            i, j = _int(rest[0], ln, path, "edge"), _int(rest[1], ln, path, "edge")
            vals = _floats(rest[2:], 28, ln, path, tag)
            try:
                Z = _pose_from(vals[:7])
            except InvalidArgument as exc:
                raise ParseError(str(exc), ln, path) from None
            edges_raw.append((ln, i, j, Z, _sym_from_upper(vals[7:], 6, _IU6)))
        elif tag == "VERTEX_TRACKXYZ":
            if not rest:
                raise ParseError("VERTEX_TRACKXYZ needs an id", ln, path)
            lid = _int(rest[0], ln, path, "landmark")
            if lid in landmarks:
                raise ParseError(f"duplicate landmark {lid}", ln, path)
            landmarks[lid] = np.array(_floats(rest[1:], 3, ln, path, tag))
        elif tag == "EDGE_PROJECT":
            if len(rest) < 2:
                raise ParseError("EDGE_PROJECT needs frame and landmark ids", ln, path)
            f, l = _int(rest[0], ln, path, "frame"), _int(rest[1], ln, path, "landmark")
            vals = _floats(rest[2:], 5, ln, path, tag)
            obs.append((ln, f, l, vals[:2], _sym_from_upper(vals[2:], 2, _IU2)))
        elif tag == "PARAMS_CAM":
            if len(rest) not in (4, 6):
                raise ParseError(f"PARAMS_CAM expects 4 or 6 values, got {len(rest)}", ln, path)
            vals = _floats(rest, len(rest), ln, path, tag)
            try:
                camera = Camera(*vals[:4]) if len(vals) == 4 else Camera(*vals[:4], int(vals[4]), int(vals[5]))
            except InvalidArgument as exc:
                raise ParseError(str(exc), ln, path) from None
        elif tag == "FIX":
            if len(rest) != 1:
                raise ParseError("FIX expects one id", ln, path)
            fixed.append(_int(rest[0], ln, path, "vertex"))
        elif tag == "TS":
            if len(rest) != 2:
                raise ParseError("TS expects an id and a time", ln, path)
            stamps[_int(rest[0], ln, path, "vertex")] = _floats(rest[1:], 1, ln, path, tag)[0]
        else:
            unknown[tag] = unknown.get(tag, 0) + 1
            stats.skipped += 1
            continue
        stats.records += 1
    for tag, count in unknown.items():
        log.warning("skipped %d unknown %s record(s)%s", count, tag, f" in {path}" if path else "")

    n = len(vertices)
    ids = sorted(vertices)
    if ids != list(range(n)):
        raise ParseError("vertex ids must be dense 0..N-1", None, path)
    for vid in list(stamps) + fixed:
        if vid not in vertices:
            raise ParseError(f"reference to unknown vertex {vid}", None, path)
    if n and not fixed:
        log.warning("no FIX record; fixing vertex 0")
        fixed = [0]
    if len(set(fixed)) > 1:
        log.warning("several FIX records; keeping vertex %d fixed", fixed[0])
    frames = [
        Frame(i, stamps.get(i, i / DEFAULT_RATE), vertices[i], i == (fixed[0] if fixed else -1)) for i in range(n)
    ]
    edges = []
    for ln, i, j, Z, info in edges_raw:
        if not (0 <= i < n and 0 <= j < n):
            raise ParseError(f"edge {i}->{j} references an unknown vertex", ln, path)
        kind = EdgeKind.ODOMETRY if j == i + 1 else EdgeKind.LOOP
        try:
            edges.append(PoseEdge(i, j, Z, info, kind))
        except InvalidArgument as exc:
            raise ParseError(str(exc), ln, path) from None

    if not landmarks and not obs and camera is None:
        try:
            return PoseGraph(frames, edges, validate=n > 0), stats
        except InvalidArgument as exc:
            raise ParseError(str(exc), None, path) from None
    if camera is None:
        raise ParseError("observations present but no PARAMS_CAM record", None, path)
    lids = sorted(landmarks)
    lindex = {lid: k for k, lid in enumerate(lids)}
    of, ol, ouv, oinfo = [], [], [], []
    for ln, f, l, uv, info in obs:
        if not 0 <= f < n:
            raise ParseError(f"observation references unknown frame {f}", ln, path)
        if l not in lindex:
            raise ParseError(f"observation references unknown landmark {l}", ln, path)
        of.append(f)
        ol.append(lindex[l])
        ouv.append(uv)
        oinfo.append(info)
    try:
        problem = BaProblem(
            frames, lids, np.array([landmarks[k] for k in lids]).reshape(-1, 3), of, ol,
            np.array(ouv).reshape(-1, 2), np.array(oinfo).reshape(-1, 2, 2), camera, edges,
        )
    except InvalidArgument as exc:
        raise ParseError(str(exc), None, path) from None
    return problem, stats


def read_graph(path) -> PoseGraph | BaProblem:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"cannot read: {exc.strerror}", None, str(path)) from None
    return parse_graph(text, str(path))[0]


def _pose_tokens(p: geo.Pose) -> str:
    x, y, z, w = p.rotation.xyzw()
    return _join([*p.translation, x, y, z, w])


def format_graph(problem: PoseGraph | BaProblem) -> str:
    out = []
    if isinstance(problem, BaProblem):
        c = problem.camera
        out.append(f"PARAMS_CAM {_join([c.fx, c.fy, c.cx, c.cy])} {int(c.width)} {int(c.height)}")
    for f in problem.frames:
        out.append(f"VERTEX_SE3:QUAT {f.id} {_pose_tokens(f.pose)}")
    for f in problem.frames:
        out.append(f"TS {f.id} {fmt(f.timestamp)}")
    for f in problem.frames:
        if f.is_fixed:
            out.append(f"FIX {f.id}")
    for e in problem.edges:
        out.append(f"EDGE_SE3:QUAT {e.source} {e.target} {_pose_tokens(e.measurement)} "
                   f"{_join(np.asarray(e.information)[_IU6])}")
    if isinstance(problem, BaProblem):
        for lid, p in zip(problem.landmark_ids, problem.landmark_positions):
            out.append(f"VERTEX_TRACKXYZ {int(lid)} {_join(p)}")
        for f, l, uv, info in zip(problem.obs_frame, problem.obs_landmark, problem.obs_pixel, problem.obs_info):
            out.append(f"EDGE_PROJECT {int(f)} {int(problem.landmark_ids[l])} {_join(uv)} {_join(info[_IU2])}")
    return "\n".join(out) + ("\n" if out else "")


def write_graph(problem: PoseGraph | BaProblem, path) -> None:
    Path(path).write_text(format_graph(problem))


# ---------------------------------------------------------------------------
# trajectories
# ---------------------------------------------------------------------------


@dataclass
class Trajectory:
    timestamps: np.ndarray
    poses: list[geo.Pose]

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=float).reshape(-1)
        if len(self.timestamps) != len(self.poses):
            raise InvalidArgument("timestamps and poses differ in length")
        if np.any(np.diff(self.timestamps) <= 0):
            raise InvalidArgument("trajectory timestamps must be strictly increasing")

    def __len__(self) -> int:
        return len(self.poses)

    @property
    def positions(self) -> np.ndarray:
        return np.array([p.translation for p in self.poses]).reshape(-1, 3)


def format_trajectory(traj: Trajectory, fmt_name: str = "tum") -> str:
    lines = []
    if fmt_name == "tum":
        for ts, p in zip(traj.timestamps, traj.poses):
            lines.append(f"{ts:.6f} {_pose_tokens(p)}")
    elif fmt_name == "kitti":
        for p in traj.poses:
            lines.append(_join(p.matrix()[:3].reshape(-1)))
    else:
        raise InvalidArgument(f"unknown trajectory format {fmt_name!r}")
    return "\n".join(lines) + ("\n" if lines else "")


def parse_trajectory(text: str, fmt_name: str = "tum", path: str | None = None) -> Trajectory:
    ts, poses = [], []
    count = {"tum": 8, "kitti": 12}.get(fmt_name)
    if count is None:
        raise InvalidArgument(f"unknown trajectory format {fmt_name!r}")
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        vals = _floats(line.split(), count, ln, path, f"{fmt_name.upper()} line")
        try:
            if fmt_name == "tum":
                ts.append(vals[0])
                poses.append(_pose_from(vals[1:]))
            else:
                M = np.eye(4)
                M[:3] = np.array(vals).reshape(3, 4)
                poses.append(geo.Pose.from_matrix(M))
                ts.append(len(ts) / DEFAULT_RATE)
        except (InvalidArgument, ValueError) as exc:
            raise ParseError(str(exc), ln, path) from None
    try:
        return Trajectory(np.array(ts), poses)
    except InvalidArgument as exc:
        raise ParseError(str(exc), None, path) from None


def read_trajectory(path, fmt_name: str = "tum") -> Trajectory:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"cannot read: {exc.strerror}", None, str(path)) from None
    return parse_trajectory(text, fmt_name, str(path))


def write_trajectory(traj: Trajectory, path, fmt_name: str = "tum") -> None:
    Path(path).write_text(format_trajectory(traj, fmt_name))


# ---------------------------------------------------------------------------
# labels
# ---------------------------------------------------------------------------


def read_labels(path) -> list[tuple[int, str, int]]:
    out = []
    for ln, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        tok = raw.split()
        if not tok:
            continue
        if len(tok) != 3:
            raise ParseError("label line expects 'frame label segment'", ln, str(path))
        try:
            out.append((int(tok[0]), tok[1], int(tok[2])))
        except ValueError:
            raise ParseError("bad integer in label line", ln, str(path)) from None
    return out
