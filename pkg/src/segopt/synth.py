"""
Deterministic synthetic worlds for exercising the optimisers.

Ground truth follows a planar curve sampled at constant nominal speed with a
forward-looking camera (z along travel, y down). Landmarks are scattered in
each frame's local neighbourhood, observations are noisy projections, and the
initial estimate is dead-reckoned from noisy odometry.

All random draws come from independent child streams of one seed and do not
depend on the events, so injecting an event only perturbs its own window.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo
from .errors import GenerationError, InvalidArgument
from .graph import BaProblem, Camera, EdgeKind, Frame, PoseEdge, PoseGraph

log = logging.getLogger(__name__)

SHAPES = ("line", "circle", "figure-eight", "random-walk")
EVENT_KINDS = ("velocity-spike", "noise-burst")

# information matrices are built from max(std, STD_FLOOR) so noiseless worlds stay finite
STD_FLOOR = 1e-4
OBSERVER_WINDOW = 40


@dataclass
class Event:
    kind: str
    center: int
    duration: int = 6
    magnitude: float = 5.0

    def __post_init__(self):
        if self.kind not in EVENT_KINDS:
            raise InvalidArgument(f"unknown event kind {self.kind!r}")
        if self.duration < 1:
            raise InvalidArgument("event duration must be >= 1")
        if not self.magnitude > 1:
            raise InvalidArgument("event magnitude must exceed 1")

    def weights(self) -> np.ndarray:
        """Linearly decaying weights over the event window, 1 at onset."""
        k = np.arange(self.duration)
        return 1.0 - k / self.duration


@dataclass
class LoopClosure:
    a: int
    b: int
    rot_std: float = 0.001
    trans_std: float = 0.005


@dataclass
class WorldConfig:
    frames: int = 200
    shape: str = "circle"
    speed: float = 4.0
    rate: float = 10.0
    landmarks_per_frame: int = 6
    camera: Camera = field(default_factory=lambda: Camera(500.0, 500.0, 320.0, 240.0, 640, 480))
    odom_rot_std: float = 0.002
    odom_trans_std: float = 0.01
    pixel_std: float = 1.0
    loop_closures: list[LoopClosure] = field(default_factory=list)
    events: list[Event] = field(default_factory=list)
    seed: int = 0
    max_range: float = 14.0
    min_depth: float = 0.5
    lateral: tuple[float, float] = (2.0, 6.0)
    height: tuple[float, float] = (-3.0, 1.5)
    ahead: tuple[float, float] = (4.0, 12.0)

    def __post_init__(self):
        if self.frames < 2:
            raise InvalidArgument("a world needs at least 2 frames")
        if self.shape not in SHAPES:
            raise InvalidArgument(f"unknown shape {self.shape!r}; choose from {', '.join(SHAPES)}")
        if not (self.speed > 0 and self.rate > 0):
            raise InvalidArgument("speed and rate must be positive")
        for name in ("odom_rot_std", "odom_trans_std", "pixel_std"):
            if getattr(self, name) < 0:
                raise InvalidArgument(f"{name} must be >= 0")
        if self.landmarks_per_frame < 0:
            raise InvalidArgument("landmarks_per_frame must be >= 0")
        self.loop_closures = [lc if isinstance(lc, LoopClosure) else _loop_from_seq(lc) for lc in self.loop_closures]
        self.events = [ev if isinstance(ev, Event) else Event(**ev) for ev in self.events]
        for lc in self.loop_closures:
            if not (0 <= lc.a < self.frames and 0 <= lc.b < self.frames) or lc.a == lc.b:
                raise InvalidArgument(f"loop closure ({lc.a}, {lc.b}) out of range")
            if lc.rot_std < 0 or lc.trans_std < 0:
                raise InvalidArgument("loop closure std must be >= 0")
        for ev in self.events:
            _check_event(ev, self.frames)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["camera"] = {k: getattr(self.camera, k) for k in ("fx", "fy", "cx", "cy", "width", "height")}
        d["lateral"] = list(self.lateral)
        d["height"] = list(self.height)
        d["ahead"] = list(self.ahead)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> WorldConfig:
        d = dict(d)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidArgument(f"unknown world config keys: {', '.join(sorted(unknown))}")
        if "camera" in d and isinstance(d["camera"], dict):
            d["camera"] = Camera(**d["camera"])
        for k in ("lateral", "height", "ahead"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


def _loop_from_seq(seq) -> LoopClosure:
    if isinstance(seq, dict):
        return LoopClosure(**seq)
    seq = list(seq)
    if len(seq) == 3:
        return LoopClosure(int(seq[0]), int(seq[1]), float(seq[2]), float(seq[2]))
    if len(seq) == 4:
        return LoopClosure(int(seq[0]), int(seq[1]), float(seq[2]), float(seq[3]))
    raise InvalidArgument(f"loop closure needs (a, b, std) or (a, b, rot_std, trans_std), got {seq}")


def _check_event(ev: Event, n: int) -> None:
    if not 1 <= ev.center < n:
        raise InvalidArgument(f"event at frame {ev.center} outside 1..{n - 1}")


@dataclass
class SyntheticWorld:
    config: WorldConfig
    gt_poses: list[geo.Pose]
    gt_landmarks: np.ndarray
    problem: BaProblem
    graph: PoseGraph

    @property
    def timestamps(self) -> np.ndarray:
        return self.problem.timestamps


# ---------------------------------------------------------------------------
# trajectories
# ---------------------------------------------------------------------------


def _camera_rotations(yaw: np.ndarray) -> np.ndarray:
    f = np.stack([np.cos(yaw), np.sin(yaw), np.zeros_like(yaw)], axis=1)
    down = np.broadcast_to(np.array([0.0, 0.0, -1.0]), f.shape)
    right = np.cross(down, f)
    return np.stack([right, down, f], axis=2)


def _nominal_path(cfg: WorldConfig, rng: np.random.Generator, pad: int = 0):
    """Nominal camera poses; ``pad`` extra frames continue past the end."""
    n = cfg.frames + pad
    step = cfg.speed / cfg.rate
    s = np.arange(n) * step
    total = (cfg.frames - 1) * step
    if cfg.shape == "line":
        pos = np.stack([s, np.zeros(n), np.zeros(n)], axis=1)
        yaw = np.zeros(n)
    elif cfg.shape == "circle":
        r = total / (2 * math.pi) if total > 0 else 1.0
        th = s / r
        pos = np.stack([r * np.sin(th), r * (1 - np.cos(th)), np.zeros(n)], axis=1)
        yaw = th
    elif cfg.shape == "figure-eight":
        u = np.linspace(0.0, 2 * math.pi, 20001)
        xy = np.stack([np.sin(u), 0.5 * np.sin(2 * u)], axis=1)
        seg = np.linalg.norm(np.diff(xy, axis=0), axis=1)
        arc = np.concatenate([[0.0], np.cumsum(seg)])
        a = total / arc[-1] if total > 0 else 1.0
        q = s / a
        cycles = np.floor(q / arc[-1])
        us = np.interp(q - cycles * arc[-1], arc, u) + 2 * math.pi * cycles
        pos = np.stack([a * np.sin(us), 0.5 * a * np.sin(2 * us), np.zeros(n)], axis=1)
        yaw = np.arctan2(np.cos(2 * us), np.cos(us))
    else:
        rates = rng.normal(0.0, 0.15, size=n)
        kernel = np.ones(15) / 15.0
        rates = np.convolve(rates, kernel, mode="same")
        yaw = np.concatenate([[0.0], np.cumsum(rates[1:] * step)])
        heading = np.stack([np.cos(yaw), np.sin(yaw)], axis=1)
        xy = np.vstack([[0.0, 0.0], np.cumsum(heading[:-1] * step, axis=0)])
        pos = np.column_stack([xy, np.zeros(n)])
    return _camera_rotations(yaw), pos


def _compose_arrays(R, t, dR, dt):
    return R @ dR, t + R @ dt


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------


def generate(config: WorldConfig) -> SyntheticWorld:
    """Build ground truth, noisy measurements and a dead-reckoned estimate."""
    cfg = config
    n = cfg.frames
    ss = np.random.SeedSequence(cfg.seed)
    shape_ss, odom_ss, lm_ss, px_ss, loop_ss = ss.spawn(5)
    shape_rng = np.random.default_rng(shape_ss)
    odom_raw = np.random.default_rng(odom_ss).standard_normal((n, 6))
    lm_rng = np.random.default_rng(lm_ss)
    loop_raw = np.random.default_rng(loop_ss).standard_normal((max(len(cfg.loop_closures), 1), 6))

    # frames past the end only anchor landmarks, so the last real frames see a full field
    pad = int(math.ceil(cfg.ahead[1] * cfg.rate / cfg.speed)) + 1
    Rn, tn = _nominal_path(cfg, shape_rng, pad)
    # nominal body twists between consecutive frames
    Rrel = np.einsum("nki,nkj->nij", Rn[:-1], Rn[1:])
    trel = np.einsum("nki,nk->ni", Rn[:-1], tn[1:] - tn[:-1])
    xi_all = np.zeros((n + pad, 6))
    xi_all[1:] = geo.se3_log_arrays(Rrel, trel)
    xi = xi_all[:n]

    speed_scale = np.ones(n)
    noise_scale = np.ones(n)
    for ev in cfg.events:
        _check_event(ev, n)
        w = ev.weights()
        idx = np.arange(ev.center, min(ev.center + ev.duration, n))
        w = w[: len(idx)]
        if ev.kind == "velocity-spike":
            speed_scale[idx] *= 1.0 + (ev.magnitude - 1.0) * w
        else:
            noise_scale[idx] *= 1.0 + (ev.magnitude - 1.0) * w

    # ground truth and odometry
    Mr, Mt = geo.se3_exp_arrays(xi * speed_scale[:, None])
    sig = np.array([cfg.odom_trans_std] * 3 + [cfg.odom_rot_std] * 3)
    Er, Et = geo.se3_exp_arrays(odom_raw * sig * noise_scale[:, None])
    Zr, Zt = Mr @ Er, Mt + np.einsum("nij,nj->ni", Mr, Et)
    Rg = np.empty((n, 3, 3))
    tg = np.empty((n, 3))
    Rx = np.empty((n, 3, 3))
    tx = np.empty((n, 3))
    Rg[0], tg[0] = Rn[0], tn[0]
    Rx[0], tx[0] = Rn[0], tn[0]
    for i in range(1, n):
        Rg[i], tg[i] = _compose_arrays(Rg[i - 1], tg[i - 1], Mr[i], Mt[i])
        Rx[i], tx[i] = _compose_arrays(Rx[i - 1], tx[i - 1], Zr[i], Zt[i])
    Ra, ta = np.empty((n + pad, 3, 3)), np.empty((n + pad, 3))
    Ra[:n], ta[:n] = Rg, tg
    Pr, Pt = geo.se3_exp_arrays(xi_all[n:])
    for i in range(n, n + pad):
        Ra[i], ta[i] = _compose_arrays(Ra[i - 1], ta[i - 1], Pr[i - n], Pt[i - n])
    gt_poses = geo.arrays_to_poses(Rg, tg)
    est_poses = geo.arrays_to_poses(Rx, tx)
    meas = geo.arrays_to_poses(Zr, Zt)

    sig_floor = np.maximum(sig, STD_FLOOR)
    edges = []
    for i in range(1, n):
        info = np.diag(1.0 / (sig_floor * noise_scale[i]) ** 2)
        edges.append(PoseEdge(i - 1, i, meas[i], info, EdgeKind.ODOMETRY))
    for k, lc in enumerate(cfg.loop_closures):
        lsig = np.array([lc.trans_std] * 3 + [lc.rot_std] * 3)
        rel = geo.relative(gt_poses[lc.a], gt_poses[lc.b])
        Z = rel.compose(geo.se3_exp(loop_raw[k] * lsig))
        info = np.diag(1.0 / np.maximum(lsig, STD_FLOOR) ** 2)
        edges.append(PoseEdge(lc.a, lc.b, Z, info, EdgeKind.LOOP))

    # landmarks in each anchor frame's neighbourhood
    k = cfg.landmarks_per_frame
    W = OBSERVER_WINDOW
    na = n + pad
    side = np.where(lm_rng.random((na, k)) < 0.5, -1.0, 1.0)
    local = np.stack([
        side * lm_rng.uniform(*cfg.lateral, size=(na, k)),
        lm_rng.uniform(*cfg.height, size=(na, k)),
        lm_rng.uniform(*cfg.ahead, size=(na, k)),
    ], axis=2).reshape(-1, 3)
    px_raw = np.random.default_rng(px_ss).standard_normal((na * k, 2 * W + 1, 2))
    anchor = np.repeat(np.arange(na), k)
    L = np.einsum("nij,nj->ni", Ra[anchor], local) + ta[anchor]

    cam = cfg.camera
    offsets = np.arange(-W, W + 1)
    obs_l, obs_f, obs_uv = [], [], []
    for off_idx, off in enumerate(offsets):
        f = anchor + off
        ok = (f >= 0) & (f < n)
        li = np.nonzero(ok)[0]
        fi = f[ok]
        pc = np.einsum("nji,nj->ni", Rg[fi], L[li] - tg[fi])
        z = pc[:, 2]
        vis = (z > cfg.min_depth) & (np.linalg.norm(pc, axis=1) < cfg.max_range)
        zs = np.where(vis, z, 1.0)
        u = cam.fx * pc[:, 0] / zs + cam.cx
        v = cam.fy * pc[:, 1] / zs + cam.cy
        vis &= (u >= 0) & (u < cam.width) & (v >= 0) & (v < cam.height)
        li, fi, u, v = li[vis], fi[vis], u[vis], v[vis]
        noise = px_raw[li, off_idx] * (cfg.pixel_std * noise_scale[fi])[:, None]
        obs_l.append(li)
        obs_f.append(fi)
        obs_uv.append(np.stack([u, v], axis=1) + noise)
    obs_l = np.concatenate(obs_l)
    obs_f = np.concatenate(obs_f)
    obs_uv = np.concatenate(obs_uv)

    counts = np.bincount(obs_l, minlength=na * k)
    keep_lm = counts >= 2
    keep_obs = keep_lm[obs_l]
    obs_l, obs_f, obs_uv = obs_l[keep_obs], obs_f[keep_obs], obs_uv[keep_obs]
    order = np.lexsort((obs_l, obs_f))
    obs_l, obs_f, obs_uv = obs_l[order], obs_f[order], obs_uv[order]
    per_frame = np.bincount(obs_f, minlength=n)
    if k > 0 and per_frame.min() == 0:
        raise GenerationError(f"frame {int(np.argmin(per_frame))} observes no landmark")

    lm_ids = np.nonzero(keep_lm)[0]
    remap = np.full(na * k, -1, dtype=np.int64)
    remap[lm_ids] = np.arange(len(lm_ids))
    obs_idx = remap[obs_l]
    Lg = L[lm_ids]
    Linit = _triangulate(cam, Rx, tx, obs_f, obs_idx, obs_uv, len(lm_ids), Rg, tg, Lg)
    px_sig = np.maximum(cfg.pixel_std, STD_FLOOR) * noise_scale[obs_f]
    obs_info = np.eye(2)[None] / (px_sig ** 2)[:, None, None]

    ts = np.arange(n) / cfg.rate
    frames = [Frame(i, float(ts[i]), est_poses[i], i == 0) for i in range(n)]
    problem = BaProblem(frames, lm_ids, Linit, obs_f, obs_idx, obs_uv, obs_info, cam, edges, validate=False)
    graph = PoseGraph(frames, edges, validate=False)
    return SyntheticWorld(cfg, gt_poses, Lg, problem, graph)


def _triangulate(cam, R, t, obs_f, obs_l, uv, m, Rg, tg, Lg):
    """Midpoint triangulation of every landmark from the estimated poses.

    Poorly conditioned landmarks fall back to the ground-truth point carried
    into the first observer's estimated frame.
    """
    rays_c = np.stack([(uv[:, 0] - cam.cx) / cam.fx, (uv[:, 1] - cam.cy) / cam.fy, np.ones(len(uv))], axis=1)
    d = np.einsum("nij,nj->ni", R[obs_f], rays_c)
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    P = np.eye(3)[None] - d[:, :, None] * d[:, None, :]
    A = np.zeros((m, 3, 3))
    b = np.zeros((m, 3))
    np.add.at(A, obs_l, P)
    np.add.at(b, obs_l, np.einsum("nij,nj->ni", P, t[obs_f]))
    ev = np.linalg.eigvalsh(A)
    good = ev[:, 0] > 1e-6 * np.maximum(ev[:, 2], 1e-300)
    out = np.empty((m, 3))
    out[good] = np.linalg.solve(A[good], b[good][:, :, None])[:, :, 0]
    if not good.all():
        first = np.full(m, len(R), dtype=np.int64)
        np.minimum.at(first, obs_l, obs_f)
        bad = np.nonzero(~good)[0]
        f = first[bad]
        loc = np.einsum("nji,nj->ni", Rg[f], Lg[bad] - tg[f])
        out[bad] = np.einsum("nij,nj->ni", R[f], loc) + t[f]
    return out


def inject_events(world: SyntheticWorld, events) -> SyntheticWorld:
    """Regenerate the world with extra events; only their windows change."""
    events = [ev if isinstance(ev, Event) else Event(**ev) for ev in events]
    if not events:
        return world
    for ev in events:
        _check_event(ev, world.config.frames)
    cfg = dataclasses.replace(world.config, events=list(world.config.events) + events)
    return generate(cfg)


def default_loops(n: int, count: int = 3, rot_std: float = 0.001, trans_std: float = 0.005) -> list[LoopClosure]:
    """Loop closures between the first and last frames of a closed path."""
    pairs = [(0, n - 1), (1, n - 1), (0, n - 2), (1, n - 2), (2, n - 1), (0, n - 3)]
    return [LoopClosure(a, b, rot_std, trans_std) for a, b in pairs[:count]]


def spread_events(n: int, count: int, kinds=EVENT_KINDS, duration: int = 6, magnitude: float = 5.0,
                  margin: int = 30) -> list[Event]:
    """Evenly spaced events alternating between the given kinds."""
    if count == 0:
        return []
    centers = np.linspace(margin, n - margin, count + 2)[1:-1].round().astype(int)
    return [Event(kinds[i % len(kinds)], int(c), duration, magnitude) for i, c in enumerate(centers)]
