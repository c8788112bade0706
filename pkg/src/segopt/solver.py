"""
Levenberg-Marquardt on SE(3) poses (and landmarks for bundle adjustment).

Poses are updated on the right, ``T <- T exp(delta)``. Normal equations use
Marquardt damping ``H + lambda * diag(H)``. Bundle adjustment eliminates the
landmark blocks with a Schur complement and back-substitutes them after the
reduced camera system is solved.

Sparse systems are factorised with SuperLU in symmetric mode (no pivoting,
minimum-degree ordering on ``A^T + A``), which amounts to an LDL^T
factorisation for these SPD matrices; a non-positive pivot is treated as a
failed Cholesky. Systems below ``dense_threshold`` pose blocks go through
dense Cholesky instead.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import geometry as geo
from .errors import InvalidArgument, NumericalFailure
from .graph import BaProblem, PoseGraph, edge_arrays, pose_edge_residuals, project_batch

log = logging.getLogger(__name__)


@dataclass
class SolverConfig:
    max_iterations: int = 50
    cost_rel_tolerance: float = 1e-6
    step_norm_tolerance: float = 1e-8
    initial_lambda: float = 1e-4
    lambda_up: float = 10.0
    lambda_down: float = 10.0
    robust_kernel: str = "none"
    huber_delta: float = 1.0
    dense_threshold: int = 60
    max_lambda: float = 1e8

    def __post_init__(self):
        if self.max_iterations < 1:
            raise InvalidArgument("max_iterations must be >= 1")
        for name in ("cost_rel_tolerance", "step_norm_tolerance", "initial_lambda", "huber_delta"):
            if not getattr(self, name) > 0:
                raise InvalidArgument(f"{name} must be positive")
        if self.lambda_up <= 1 or self.lambda_down <= 1:
            raise InvalidArgument("lambda factors must exceed 1")
        if self.robust_kernel not in ("none", "huber"):
            raise InvalidArgument(f"unknown robust kernel {self.robust_kernel!r}")


@dataclass
class SolveReport:
    iterations: int = 0
    initial_cost: float = 0.0
    final_cost: float = 0.0
    cost_trace: list[float] = field(default_factory=list)
    wall_time: float = 0.0
    linear_time: float = 0.0
    termination: str = ""
    dropped_observations: int = 0
    frozen_landmarks: int = 0
    accepted_steps: int = 0
    rejected_steps: int = 0

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "initial_cost": self.initial_cost,
            "final_cost": self.final_cost,
            "cost_trace": list(self.cost_trace),
            "wall_time": self.wall_time,
            "linear_time": self.linear_time,
            "termination": self.termination,
            "dropped_observations": self.dropped_observations,
            "frozen_landmarks": self.frozen_landmarks,
            "accepted_steps": self.accepted_steps,
            "rejected_steps": self.rejected_steps,
        }


class _NotPositiveDefinite(Exception):
    pass


def _robust_weights(sq: np.ndarray, config: SolverConfig) -> tuple[np.ndarray, np.ndarray]:
    """Per-residual IRLS weights and robustified costs from squared norms."""
    if config.robust_kernel == "none":
        return np.ones_like(sq), sq
    d = config.huber_delta
    s = np.sqrt(sq)
    inlier = s <= d
    w = np.where(inlier, 1.0, d / np.maximum(s, 1e-300))
    cost = np.where(inlier, sq, 2.0 * d * s - d * d)
    return w, cost


def _block_coo(bi, bj, blocks, rb: int, cb: int):
    """Flattened COO triplets for dense blocks placed at block coordinates."""
    k = len(bi)
    rows = (bi[:, None, None] * rb + np.arange(rb)[None, :, None]) + np.zeros((1, 1, cb), dtype=np.int64)
    cols = (bj[:, None, None] * cb + np.arange(cb)[None, None, :]) + np.zeros((1, rb, 1), dtype=np.int64)
    return rows.reshape(k * rb * cb), cols.reshape(k * rb * cb), blocks.reshape(k * rb * cb)


def _scatter_sum(idx, vals, size: int) -> np.ndarray:
    """Sum rows of ``vals`` into ``size`` bins (a faster ``np.add.at``)."""
    vals = np.asarray(vals)
    flat = vals.reshape(len(vals), -1)
    A = sp.csr_matrix((np.ones(len(idx)), (idx, np.arange(len(idx)))), shape=(size, len(idx)))
    return np.asarray(A @ flat).reshape((size,) + vals.shape[1:])


def _block_bsr(bi, bj, blocks, nrows: int, ncols: int):
    """Block-sparse matrix of 6x3 blocks; repeated coordinates are summed."""
    rb, cb = blocks.shape[1:]
    order = np.lexsort((bj, bi))
    bi, bj, blocks = bi[order], bj[order], blocks[order]
    if len(bi) > 1:
        new = np.ones(len(bi), dtype=bool)
        new[1:] = (bi[1:] != bi[:-1]) | (bj[1:] != bj[:-1])
        if not new.all():
            group = np.cumsum(new) - 1
            summed = np.zeros((int(group[-1]) + 1, rb, cb))
            np.add.at(summed, group, blocks)
            bi, bj, blocks = bi[new], bj[new], summed
    indptr = np.concatenate([[0], np.cumsum(np.bincount(bi, minlength=nrows))])
    return sp.bsr_matrix((blocks, bj, indptr), shape=(nrows * rb, ncols * cb))


def _solve_spd(A, b: np.ndarray, dense: bool) -> np.ndarray:
    if A.shape[0] == 0:
        return np.zeros(0)
    if dense:
        M = A.toarray() if sp.issparse(A) else A
        try:
            c = scipy.linalg.cho_factor(M, lower=True, check_finite=False)
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
            raise _NotPositiveDefinite() from None
        return scipy.linalg.cho_solve(c, b, check_finite=False)
    A = sp.csc_matrix(A)
    try:
        lu = spla.splu(
            A,
            permc_spec="MMD_AT_PLUS_A",
            diag_pivot_thresh=0.0,
            options={"SymmetricMode": True},
        )
    except RuntimeError:
        raise _NotPositiveDefinite() from None
    piv = lu.U.diagonal()
    if not np.all(piv > 0):
        raise _NotPositiveDefinite()
    x = lu.solve(b)
    if not np.all(np.isfinite(x)):
        raise _NotPositiveDefinite()
    return x


def _damp(H, lam: float):
    if sp.issparse(H):
        d = H.diagonal()
        floor = 1e-12 * max(float(d.max(initial=0.0)), 1.0)
        return H + sp.diags(lam * np.maximum(d, floor), format="csc")
    d = np.diag(H)
    floor = 1e-12 * max(float(d.max(initial=0.0)), 1.0)
    return H + np.diag(lam * np.maximum(d, floor))


def _lm(problem, config: SolverConfig) -> tuple[object, SolveReport]:
    """Generic LM loop over an object exposing cost/linearize/solve/retract."""
    t0 = time.perf_counter()
    report = SolveReport()
    state = problem.initial_state()
    cost = problem.cost(state)
    report.initial_cost = cost
    report.cost_trace.append(cost)
    lam = config.initial_lambda
    termination = "max_iterations"
    it = 0
    while it < config.max_iterations:
        if cost <= 0.0:
            termination = "zero_cost"
            break
        lin = problem.linearize(state)
        if lin.gradient_norm <= 1e-15 * max(1.0, cost):
            termination = "gradient"
            break
        it += 1
        done = False
        while True:
            ts = time.perf_counter()
            try:
                step = problem.solve(lin, lam)
            except _NotPositiveDefinite:
                report.linear_time += time.perf_counter() - ts
                lam *= config.lambda_up
                if lam > config.max_lambda:
                    raise NumericalFailure(
                        f"normal matrix not positive definite after damping reached {lam:.3g} "
                        f"(iteration {it}, cost {cost:.6g}, {lin.describe()})"
                    ) from None
                continue
            report.linear_time += time.perf_counter() - ts
            step_norm = float(np.sqrt(sum(float(s @ s) for s in step)))
            if not math.isfinite(step_norm):
                lam *= config.lambda_up
                if lam > config.max_lambda:
                    raise NumericalFailure("non-finite LM step")
                continue
            if step_norm < config.step_norm_tolerance:
                termination = "step_tolerance"
                done = True
                break
            candidate = problem.retract(state, step)
            new_cost = problem.cost(candidate)
            if new_cost < cost:
                rel = (cost - new_cost) / cost
                state, cost = candidate, new_cost
                report.cost_trace.append(cost)
                report.accepted_steps += 1
                log.debug("iter %d cost %.9g lambda %.3g step %.3g", it, cost, lam, step_norm)
                lam = max(lam / config.lambda_down, 1e-12)
                if rel < config.cost_rel_tolerance:
                    termination = "cost_tolerance"
                    done = True
                break
            report.rejected_steps += 1
            lam *= config.lambda_up
            if lam > config.max_lambda:
                termination = "lambda_limit"
                done = True
                break
        if done:
            break
    log.debug("%s after %d iterations, cost %.9g -> %.9g", termination, it, report.initial_cost, cost)
    report.iterations = it
    report.final_cost = cost
    report.termination = termination
    report.wall_time = time.perf_counter() - t0
    return state, report


# ---------------------------------------------------------------------------
# pose graph
# ---------------------------------------------------------------------------


def pose_edge_jacobians(R, t, ea):
    """Residuals and right-perturbation Jacobians w.r.t. both edge endpoints."""
    Ri, ti, Rj, tj = R[ea["i"]], t[ea["i"]], R[ea["j"]], t[ea["j"]]
    Rij = np.einsum("nki,nkj->nij", Ri, Rj)
    tij = np.einsum("nki,nk->ni", Ri, tj - ti)
    RE = np.einsum("nki,nkj->nij", ea["R"], Rij)
    tE = np.einsum("nki,nk->ni", ea["R"], tij - ea["t"])
    e = geo.se3_log_arrays(RE, tE)
    Jr = geo.se3_right_jacobian_inv(e)
    Rji = np.transpose(Rij, (0, 2, 1))
    tji = -np.einsum("nij,nj->ni", Rji, tij)
    Ad = geo.se3_adjoint(Rji, tji)
    Jj = Jr
    Ji = -Jr @ Ad
    return e, Ji, Jj


class _Linearization:
    def __init__(self, **kw):
        self.__dict__.update(kw)

    def describe(self) -> str:
        return ", ".join(f"{k}={v}" for k, v in self.__dict__.items() if isinstance(v, (int, float)))


class _PoseGraphProblem:
    def __init__(self, poses, edges, fixed, config: SolverConfig):
        self.config = config
        self.R0, self.t0 = geo.poses_to_arrays(poses)
        self.n = len(self.R0)
        self.ea = edge_arrays(edges)
        self.fidx = np.full(self.n, -1, dtype=np.int64)
        free = [i for i in range(self.n) if i not in fixed]
        self.fidx[free] = np.arange(len(free))
        self.nfree = len(free)
        self.dense = self.nfree < config.dense_threshold

    def initial_state(self):
        return (self.R0, self.t0)

    def cost(self, state) -> float:
        if len(self.ea["i"]) == 0:
            return 0.0
        e = pose_edge_residuals(state[0], state[1], self.ea)
        sq = np.einsum("ni,nij,nj->n", e, self.ea["info"], e)
        return float(_robust_weights(sq, self.config)[1].sum())

    def linearize(self, state):
        R, t = state
        e, Ji, Jj = pose_edge_jacobians(R, t, self.ea)
        info = self.ea["info"]
        sq = np.einsum("ni,nij,nj->n", e, info, e)
        w = _robust_weights(sq, self.config)[0]
        L = info * w[:, None, None]
        LJi = L @ Ji
        LJj = L @ Jj
        Hii = np.transpose(Ji, (0, 2, 1)) @ LJi
        Hij = np.transpose(Ji, (0, 2, 1)) @ LJj
        Hjj = np.transpose(Jj, (0, 2, 1)) @ LJj
        Le = np.einsum("nij,nj->ni", L, e)
        gi = np.einsum("nji,nj->ni", Ji, Le)
        gj = np.einsum("nji,nj->ni", Jj, Le)

        fi, fj = self.fidx[self.ea["i"]], self.fidx[self.ea["j"]]
        rows, cols, vals = [], [], []
        for a, b, blocks in ((fi, fi, Hii), (fi, fj, Hij), (fj, fi, np.transpose(Hij, (0, 2, 1))), (fj, fj, Hjj)):
            m = (a >= 0) & (b >= 0)
            r, c, v = _block_coo(a[m], b[m], blocks[m], 6, 6)
            rows.append(r)
            cols.append(c)
            vals.append(v)
        size = 6 * self.nfree
        H = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(size, size)
        ).tocsc()
        g = np.zeros(size)
        for f, gg in ((fi, gi), (fj, gj)):
            m = f >= 0
            np.add.at(g.reshape(-1, 6), f[m], gg[m])
        return _Linearization(H=H, g=g, gradient_norm=float(np.abs(g).max(initial=0.0)), size=size)

    def solve(self, lin, lam):
        return [_solve_spd(_damp(lin.H, lam), -lin.g, self.dense)]

    def retract(self, state, step):
        R, t = state
        delta = np.zeros((self.n, 6))
        free = self.fidx >= 0
        delta[free] = step[0].reshape(-1, 6)[self.fidx[free]]
        dR, dt = geo.se3_exp_arrays(delta)
        return (R @ dR, t + np.einsum("nij,nj->ni", R, dt))


def optimize_pose_graph(graph: PoseGraph, config: SolverConfig | None = None, fixed=None, edges=None):
    """LM over all non-fixed frames of a pose graph.

    Returns ``(poses, report)``. ``fixed`` defaults to the graph's fixed frame;
    ``edges`` defaults to the graph's edges.
    """
    config = config or SolverConfig()
    if fixed is None:
        fixed = {f.id for f in graph.frames if f.is_fixed}
    problem = _PoseGraphProblem(graph.poses, graph.edges if edges is None else edges, set(fixed), config)
    if problem.n == 0:
        return [], SolveReport(termination="empty")
    state, report = _lm(problem, config)
    return geo.arrays_to_poses(*state), report


# ---------------------------------------------------------------------------
# bundle adjustment
# ---------------------------------------------------------------------------


def reprojection_jacobians(camera, R, t, points):
    """Residual ``u - pi`` derivatives w.r.t. pose (right perturbation) and point.

    All inputs are per-observation rows. Returns ``(pixels, Jpose, Jpoint, valid)``.
    """
    uv, pc, valid = project_batch(camera, R, t, points)
    z = np.where(valid, pc[:, 2], 1.0)
    x, y = pc[:, 0], pc[:, 1]
    k = len(z)
    Jpi = np.zeros((k, 2, 3))
    Jpi[:, 0, 0] = camera.fx / z
    Jpi[:, 0, 2] = -camera.fx * x / z**2
    Jpi[:, 1, 1] = camera.fy / z
    Jpi[:, 1, 2] = -camera.fy * y / z**2
    dpc = np.zeros((k, 3, 6))
    dpc[:, :, :3] = -np.eye(3)
    dpc[:, :, 3:] = geo.skew(pc)
    Jpose = -Jpi @ dpc
    Jpoint = -Jpi @ np.transpose(R, (0, 2, 1))
    return uv, Jpose, Jpoint, valid


class _BaProblem:
    def __init__(self, problem: BaProblem, fixed, config: SolverConfig, pose_edges=(), schur=True):
        self.config = config
        self.cam = problem.camera
        self.R0, self.t0 = geo.poses_to_arrays(problem.poses)
        self.P0 = np.array(problem.landmark_positions, dtype=float)
        self.n, self.m = len(self.R0), len(self.P0)
        self.fidx = np.full(self.n, -1, dtype=np.int64)
        free = [i for i in range(self.n) if i not in fixed]
        self.fidx[free] = np.arange(len(free))
        self.nfree = len(free)
        self.dense = self.nfree < config.dense_threshold
        self.schur = schur

        # the active observation set is frozen at the initial state
        _, valid = self._residuals((self.R0, self.t0, self.P0), problem.obs_frame, problem.obs_landmark,
                                   problem.obs_pixel)
        self.dropped = int((~valid).sum())
        self.of = problem.obs_frame[valid]
        self.ol = problem.obs_landmark[valid]
        self.ou = problem.obs_pixel[valid]
        self.oinfo = problem.obs_info[valid]
        counts = np.bincount(self.ol, minlength=self.m)
        self.frozen = counts == 0
        self.ea = edge_arrays(pose_edges)

    def _residuals(self, state, f, l, u):
        R, t, P = state
        uv, _, valid = project_batch(self.cam, R[f], t[f], P[l])
        return u - uv, valid

    def initial_state(self):
        return (self.R0, self.t0, self.P0)

    def cost(self, state) -> float:
        r, valid = self._residuals(state, self.of, self.ol, self.ou)
        if not valid.all():
            return math.inf
        sq = np.einsum("ni,nij,nj->n", r, self.oinfo, r)
        total = float(_robust_weights(sq, self.config)[1].sum())
        if len(self.ea["i"]):
            e = pose_edge_residuals(state[0], state[1], self.ea)
            total += float(np.einsum("ni,nij,nj->", e, self.ea["info"], e))
        return total

    def linearize(self, state):
        R, t, P = state
        f, l = self.of, self.ol
        uv, Jp, Jl, valid = reprojection_jacobians(self.cam, R[f], t[f], P[l])
        r = self.ou - uv
        sq = np.einsum("ni,nij,nj->n", r, self.oinfo, r)
        w = _robust_weights(sq, self.config)[0]
        L = self.oinfo * w[:, None, None]
        JpT = np.transpose(Jp, (0, 2, 1))
        JlT = np.transpose(Jl, (0, 2, 1))
        LJp, LJl, Lr = L @ Jp, L @ Jl, np.einsum("nij,nj->ni", L, r)
        Hpp_b = JpT @ LJp
        Hpl_b = JpT @ LJl
        Hll_b = JlT @ LJl
        gp_b = np.einsum("nji,nj->ni", Jp, Lr)
        gl_b = np.einsum("nji,nj->ni", Jl, Lr)

        fi = self.fidx[f]
        mf = fi >= 0
        size_p = 6 * self.nfree
        # reprojection terms only touch the diagonal pose blocks
        diag = _scatter_sum(fi[mf], Hpp_b[mf], self.nfree)
        bf = np.arange(self.nfree)
        rows, cols, vals = [list(x) for x in zip(_block_coo(bf, bf, diag, 6, 6))]
        gp = _scatter_sum(fi[mf], gp_b[mf], self.nfree).reshape(-1)

        if len(self.ea["i"]):
            e, Ji, Jj = pose_edge_jacobians(R, t, self.ea)
            info = self.ea["info"]
            Le = np.einsum("nij,nj->ni", info, e)
            a_, b_ = self.fidx[self.ea["i"]], self.fidx[self.ea["j"]]
            JiT, JjT = np.transpose(Ji, (0, 2, 1)), np.transpose(Jj, (0, 2, 1))
            for A, B, blocks in ((a_, a_, JiT @ info @ Ji), (a_, b_, JiT @ info @ Jj),
                                 (b_, a_, JjT @ info @ Ji), (b_, b_, JjT @ info @ Jj)):
                m = (A >= 0) & (B >= 0)
                rr, cc, vv = _block_coo(A[m], B[m], blocks[m], 6, 6)
                rows.append(rr)
                cols.append(cc)
                vals.append(vv)
            for A, J in ((a_, Ji), (b_, Jj)):
                m = A >= 0
                np.add.at(gp.reshape(-1, 6), A[m], np.einsum("nji,nj->ni", J[m], Le[m]))

        Hpp = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(size_p, size_p)
        ).tocsc()
        Hll = _scatter_sum(l, Hll_b, self.m)
        gl = _scatter_sum(l, gl_b, self.m)
        Hll[self.frozen] = np.eye(3)
        gl[self.frozen] = 0.0
        W = _block_bsr(fi[mf], l[mf], Hpl_b[mf], self.nfree, self.m)
        gnorm = max(float(np.abs(gp).max(initial=0.0)), float(np.abs(gl).max(initial=0.0)))
        return _Linearization(Hpp=Hpp, Hll=Hll, W=W, gp=gp, gl=gl, gradient_norm=gnorm,
                              poses=self.nfree, landmarks=self.m)

    def solve(self, lin, lam):
        Hpp = _damp(lin.Hpp, lam)
        d = np.einsum("nii->ni", lin.Hll)
        floor = 1e-12 * max(float(d.max(initial=0.0)), 1.0)
        Hll = lin.Hll + lam * np.maximum(d, floor)[:, :, None] * np.eye(3)[None]
        try:
            Hll_inv = np.linalg.inv(Hll)
        except np.linalg.LinAlgError:
            raise _NotPositiveDefinite() from None
        if not self.schur:
            return self._solve_dense(lin, Hpp, Hll)
        m = self.m
        Vinv = sp.bsr_matrix((Hll_inv, np.arange(m), np.arange(m + 1)), shape=(3 * m, 3 * m))
        Y = lin.W @ Vinv
        S = (Hpp - (Y @ lin.W.T).tocsc()).tocsc()
        rhs = -lin.gp + Y @ lin.gl.reshape(-1)
        dp = _solve_spd(S, rhs, self.dense)
        tmp = (-lin.gl.reshape(-1) - lin.W.T @ dp).reshape(m, 3)
        dl = np.einsum("nij,nj->ni", Hll_inv, tmp)
        dl[self.frozen] = 0.0
        return [dp, dl.reshape(-1)]

    def _solve_dense(self, lin, Hpp, Hll):
        """Full normal equations without landmark elimination (reference path)."""
        size_p, m = Hpp.shape[0], self.m
        H = np.zeros((size_p + 3 * m, size_p + 3 * m))
        H[:size_p, :size_p] = Hpp.toarray()
        Wd = lin.W.toarray()
        H[:size_p, size_p:] = Wd
        H[size_p:, :size_p] = Wd.T
        for k in range(m):
            H[size_p + 3 * k: size_p + 3 * k + 3, size_p + 3 * k: size_p + 3 * k + 3] = Hll[k]
        g = np.concatenate([lin.gp, lin.gl.reshape(-1)])
        x = _solve_spd(H, -g, True)
        dl = x[size_p:].reshape(m, 3)
        dl[self.frozen] = 0.0
        return [x[:size_p], dl.reshape(-1)]

    def retract(self, state, step):
        R, t, P = state
        delta = np.zeros((self.n, 6))
        free = self.fidx >= 0
        delta[free] = step[0].reshape(-1, 6)[self.fidx[free]]
        dR, dt = geo.se3_exp_arrays(delta)
        return (R @ dR, t + np.einsum("nij,nj->ni", R, dt), P + step[1].reshape(-1, 3))


def optimize_ba(problem: BaProblem, config: SolverConfig | None = None, fixed=None, pose_edges=(),
                schur: bool = True):
    """LM bundle adjustment with Schur elimination of landmarks.

    ``pose_edges`` adds relative-pose terms to the objective (used for the
    synthesized bridges of reduced problems). Returns
    ``(poses, landmark_positions, report)``.
    """
    config = config or SolverConfig()
    if fixed is None:
        fixed = {f.id for f in problem.frames if f.is_fixed}
    inner = _BaProblem(problem, set(fixed), config, pose_edges, schur=schur)
    if inner.n == 0:
        return [], inner.P0.copy(), SolveReport(termination="empty")
    state, report = _lm(inner, config)
    report.dropped_observations = inner.dropped
    report.frozen_landmarks = int(inner.frozen.sum())
    if report.dropped_observations:
        log.info("bundle adjustment dropped %d behind-camera observations", report.dropped_observations)
    R, t, P = state
    return geo.arrays_to_poses(R, t), P, report


def optimize_reduced(reduced, config: SolverConfig | None = None):
    """Solve a reduced problem and map the result back to the original ids.

    Returns ``(poses, report)`` for a reduced pose graph and
    ``(poses, landmark_positions, report)`` for a reduced BA problem. Frames
    and landmarks outside the reduced problem keep their source values.
    """
    from .reduction import ReducedBaProblem, ReducedPoseGraph

    config = config or SolverConfig()
    if isinstance(reduced, ReducedPoseGraph):
        sub, report = optimize_pose_graph(reduced.graph, config)
        poses = list(reduced.source.poses)
        for k, f in enumerate(reduced.frame_ids.tolist()):
            poses[f] = sub[k]
        return poses, report
    if isinstance(reduced, ReducedBaProblem):
        sub, pts, report = optimize_ba(reduced.problem, config, pose_edges=reduced.synthesized)
        src = reduced.source
        poses = list(src.poses)
        for k, f in enumerate(reduced.frame_ids.tolist()):
            poses[f] = sub[k]
        P = np.array(src.landmark_positions, dtype=float)
        P[reduced.landmark_idx] = pts
        return poses, P, report
    raise InvalidArgument(f"not a reduced problem: {type(reduced).__name__}")
