"""
Rigid (SE(3)) and similarity (Sim(3)) transforms.

Rotations are stored as unit quaternions ``(w, x, y, z)`` with ``w >= 0``;
matrices are produced on demand. Twists are ordered ``(rho, phi)``:
translational part first, rotational part second, so that
``se3_exp((0, 0, 0, 0, 0, a))`` is a pure rotation by ``a`` about z.

Perturbations are applied on the right everywhere in the package:
``T <- T * exp(delta)``.

The lower-case array helpers (``so3_exp``, ``so3_log``, ``quat_from_matrix``,
...) broadcast over leading dimensions and are what the solver uses on
batches of poses.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import BranchAmbiguityError, InvalidArgument

SMALL_ANGLE = 1e-6
# Taylor branch for the SE(3) Jacobian coefficients, which cancel badly.
JACOBIAN_SMALL_ANGLE = 1e-2
PI_GUARD = 1e-6

_EPS = np.finfo(float).eps


# ---------------------------------------------------------------------------
# array helpers
# ---------------------------------------------------------------------------


def skew(v: np.ndarray) -> np.ndarray:
    """Hat operator, broadcasting over leading axes: (..., 3) -> (..., 3, 3)."""
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def _theta(phi: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(phi * phi, axis=-1))


def so3_exp(phi: np.ndarray) -> np.ndarray:
    """Rodrigues formula; second-order Taylor coefficients below ``SMALL_ANGLE``."""
    phi = np.asarray(phi, dtype=float)
    th = _theta(phi)
    small = th < SMALL_ANGLE
    ths = np.where(small, 1.0, th)
    a = np.where(small, 1.0 - th**2 / 6.0, np.sin(ths) / ths)
    b = np.where(small, 0.5 - th**2 / 24.0, 2.0 * np.sin(ths / 2.0) ** 2 / ths**2)
    K = skew(phi)
    I = np.broadcast_to(np.eye(3), K.shape)
    return I + a[..., None, None] * K + b[..., None, None] * (K @ K)


def quat_multiply(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    pw, px, py, pz = np.moveaxis(np.asarray(p, dtype=float), -1, 0)
    qw, qx, qy, qz = np.moveaxis(np.asarray(q, dtype=float), -1, 0)
    return np.stack(
        [
            pw * qw - px * qx - py * qy - pz * qz,
            pw * qx + px * qw + py * qz - pz * qy,
            pw * qy - px * qz + py * qw + pz * qx,
            pw * qz + px * qy - py * qx + pz * qw,
        ],
        axis=-1,
    )


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = np.moveaxis(np.asarray(q, dtype=float), -1, 0)
    out = np.empty(np.shape(w) + (3, 3))
    out[..., 0, 0] = 1 - 2 * (y * y + z * z)
    out[..., 0, 1] = 2 * (x * y - w * z)
    out[..., 0, 2] = 2 * (x * z + w * y)
    out[..., 1, 0] = 2 * (x * y + w * z)
    out[..., 1, 1] = 1 - 2 * (x * x + z * z)
    out[..., 1, 2] = 2 * (y * z - w * x)
    out[..., 2, 0] = 2 * (x * z - w * y)
    out[..., 2, 1] = 2 * (y * z + w * x)
    out[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return out


def quat_from_matrix(R: np.ndarray) -> np.ndarray:
    """Shepperd's method; returns canonical (w >= 0) unit quaternions."""
    R = np.asarray(R, dtype=float)
    batch = R.shape[:-2]
    R = R.reshape(-1, 3, 3)
    tr = R[:, 0, 0] + R[:, 1, 1] + R[:, 2, 2]
    diag = np.stack([R[:, 0, 0], R[:, 1, 1], R[:, 2, 2]], axis=1)
    choice = np.argmax(np.concatenate([tr[:, None], diag], axis=1), axis=1)
    q = np.empty((R.shape[0], 4))

    m = choice == 0
    if m.any():
        s = np.sqrt(1.0 + tr[m]) * 2.0
        q[m, 0] = 0.25 * s
        q[m, 1] = (R[m, 2, 1] - R[m, 1, 2]) / s
        q[m, 2] = (R[m, 0, 2] - R[m, 2, 0]) / s
        q[m, 3] = (R[m, 1, 0] - R[m, 0, 1]) / s
    m = choice == 1
    if m.any():
        s = np.sqrt(1.0 + R[m, 0, 0] - R[m, 1, 1] - R[m, 2, 2]) * 2.0
        q[m, 0] = (R[m, 2, 1] - R[m, 1, 2]) / s
        q[m, 1] = 0.25 * s
        q[m, 2] = (R[m, 0, 1] + R[m, 1, 0]) / s
        q[m, 3] = (R[m, 0, 2] + R[m, 2, 0]) / s
    m = choice == 2
    if m.any():
        s = np.sqrt(1.0 + R[m, 1, 1] - R[m, 0, 0] - R[m, 2, 2]) * 2.0
        q[m, 0] = (R[m, 0, 2] - R[m, 2, 0]) / s
        q[m, 1] = (R[m, 0, 1] + R[m, 1, 0]) / s
        q[m, 2] = 0.25 * s
        q[m, 3] = (R[m, 1, 2] + R[m, 2, 1]) / s
    m = choice == 3
    if m.any():
        s = np.sqrt(1.0 + R[m, 2, 2] - R[m, 0, 0] - R[m, 1, 1]) * 2.0
        q[m, 0] = (R[m, 1, 0] - R[m, 0, 1]) / s
        q[m, 1] = (R[m, 0, 2] + R[m, 2, 0]) / s
        q[m, 2] = (R[m, 1, 2] + R[m, 2, 1]) / s
        q[m, 3] = 0.25 * s
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    q[q[:, 0] < 0] *= -1.0
    return q.reshape(batch + (4,))


def quat_log(q: np.ndarray) -> np.ndarray:
    """Rotation vector of unit quaternions; accurate up to angle pi."""
    q = np.asarray(q, dtype=float)
    w = q[..., 0]
    v = q[..., 1:]
    sign = np.where(w < 0, -1.0, 1.0)
    w = w * sign
    v = v * sign[..., None]
    n = np.sqrt(np.sum(v * v, axis=-1))
    small = n < SMALL_ANGLE
    ns = np.where(small, 1.0, n)
    ws = np.where(small, 1.0, w)
    # angle = 2 atan2(n, w); for tiny n, 2/w * (1 - n^2 / (3 w^2)) is the series
    k = np.where(small, 2.0 / ws * (1.0 - n**2 / (3.0 * ws**2)), 2.0 * np.arctan2(n, w) / ns)
    return v * k[..., None]


def quat_exp(phi: np.ndarray) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    th = _theta(phi)
    small = th < SMALL_ANGLE
    ths = np.where(small, 1.0, th)
    k = np.where(small, 0.5 - th**2 / 48.0, np.sin(ths / 2.0) / ths)
    q = np.concatenate([np.cos(th / 2.0)[..., None], phi * k[..., None]], axis=-1)
    return q


def so3_log(R: np.ndarray) -> np.ndarray:
    return quat_log(quat_from_matrix(R))


def so3_left_jacobian(phi: np.ndarray) -> np.ndarray:
    """V matrix: translation part of the SE(3) exponential."""
    phi = np.asarray(phi, dtype=float)
    th = _theta(phi)
    small = th < SMALL_ANGLE
    ths = np.where(small, 1.0, th)
    b = np.where(small, 0.5 - th**2 / 24.0, 2.0 * np.sin(ths / 2.0) ** 2 / ths**2)
    series = th < JACOBIAN_SMALL_ANGLE
    thc = np.where(series, 1.0, th)
    c = np.where(series, 1.0 / 6.0 - th**2 / 120.0 + th**4 / 5040.0, (thc - np.sin(thc)) / thc**3)
    K = skew(phi)
    I = np.broadcast_to(np.eye(3), K.shape)
    return I + b[..., None, None] * K + c[..., None, None] * (K @ K)


def so3_left_jacobian_inv(phi: np.ndarray) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    th = _theta(phi)
    small = th < JACOBIAN_SMALL_ANGLE
    ths = np.where(small, 1.0, th)
    d = _vinv_coeff(th)
    K = skew(phi)
    I = np.broadcast_to(np.eye(3), K.shape)
    return I - 0.5 * K + d[..., None, None] * (K @ K)


def _vinv_coeff(th):
    """``(1 - (th/2) / tan(th/2)) / th^2`` with a series branch near zero."""
    small = th < JACOBIAN_SMALL_ANGLE
    ths = np.where(small, 1.0, th)
    half = ths / 2.0
    return np.where(
        small,
        1.0 / 12.0 + th**2 / 720.0 + th**4 / 30240.0,
        (1.0 - half / np.tan(half)) / ths**2,
    )


def _se3_q(rho: np.ndarray, phi: np.ndarray) -> np.ndarray:
    th = _theta(phi)
    small = th < JACOBIAN_SMALL_ANGLE
    ths = np.where(small, 1.0, th)
    t2 = th**2
    c1 = np.where(small, 1 / 6 - t2 / 120 + t2**2 / 5040, (ths - np.sin(ths)) / ths**3)
    c2 = np.where(
        small,
        1 / 24 - t2 / 720 + t2**2 / 40320,
        (ths**2 / 2 + np.cos(ths) - 1) / ths**4,
    )
    c3 = np.where(
        small,
        1 / 120 - t2 / 2520 + t2**2 / 120960,
        (2 * ths - 3 * np.sin(ths) + ths * np.cos(ths)) / (2 * ths**5),
    )
    P = skew(phi)
    Rh = skew(rho)
    PR = P @ Rh
    RP = Rh @ P
    PRP = PR @ P
    return (
        0.5 * Rh
        + c1[..., None, None] * (PR + RP + PRP)
        + c2[..., None, None] * (P @ PR + RP @ P - 3 * PRP)
        + c3[..., None, None] * (PRP @ P + P @ PRP)
    )


def se3_right_jacobian_inv(xi: np.ndarray) -> np.ndarray:
    """Inverse right Jacobian of SE(3), (..., 6) -> (..., 6, 6).

    ``log(exp(xi) exp(d)) ~= xi + Jr^{-1}(xi) d`` for small ``d``.
    """
    xi = -np.asarray(xi, dtype=float)
    rho, phi = xi[..., :3], xi[..., 3:]
    Jinv = so3_left_jacobian_inv(phi)
    Q = _se3_q(rho, phi)
    out = np.zeros(xi.shape[:-1] + (6, 6))
    out[..., :3, :3] = Jinv
    out[..., 3:, 3:] = Jinv
    out[..., :3, 3:] = -Jinv @ Q @ Jinv
    return out


def se3_adjoint(R: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Adjoint of (R, t) for (rho, phi) ordered twists."""
    R = np.asarray(R, dtype=float)
    out = np.zeros(R.shape[:-2] + (6, 6))
    out[..., :3, :3] = R
    out[..., 3:, 3:] = R
    out[..., :3, 3:] = skew(t) @ R
    return out


def se3_exp_arrays(xi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    xi = np.asarray(xi, dtype=float)
    rho, phi = xi[..., :3], xi[..., 3:]
    R = so3_exp(phi)
    t = np.einsum("...ij,...j->...i", so3_left_jacobian(phi), rho)
    return R, t


def se3_log_arrays(R: np.ndarray, t: np.ndarray) -> np.ndarray:
    phi = so3_log(R)
    d = _vinv_coeff(_theta(phi))
    K = skew(phi)
    I = np.broadcast_to(np.eye(3), K.shape)
    Vinv = I - 0.5 * K + d[..., None, None] * (K @ K)
    rho = np.einsum("...ij,...j->...i", Vinv, t)
    return np.concatenate([rho, phi], axis=-1)


# ---------------------------------------------------------------------------
# value types
# ---------------------------------------------------------------------------


def _as_vec(v, n: int, name: str) -> np.ndarray:
    a = np.array(v, dtype=float).reshape(-1)
    if a.shape != (n,):
        raise InvalidArgument(f"{name} must have {n} components, got {a.shape}")
    return a


class Rotation:
    """Unit quaternion ``(w, x, y, z)`` in canonical sign (w >= 0)."""

    __slots__ = ("_q",)

    def __init__(self, q):
        q = _as_vec(q, 4, "quaternion")
        if not np.all(np.isfinite(q)):
            raise InvalidArgument("quaternion has non-finite components")
        n = math.sqrt(float(q @ q))
        if n < 1e-12:
            raise InvalidArgument("zero quaternion")
        # leave already-normalised input untouched so file round trips stay bit-exact
        if abs(n - 1.0) > 4 * _EPS:
            q = q / n
        if q[0] < 0 or (q[0] == 0 and _first_nonzero_negative(q[1:])):
            q = -q
        q.flags.writeable = False
        self._q = q

    @classmethod
    def identity(cls) -> Rotation:
        return cls((1.0, 0.0, 0.0, 0.0))

    @classmethod
    def from_matrix(cls, R) -> Rotation:
        return cls(quat_from_matrix(np.asarray(R, dtype=float)))

    @classmethod
    def from_rotvec(cls, phi) -> Rotation:
        return cls(quat_exp(_as_vec(phi, 3, "rotation vector")))

    @classmethod
    def from_axis_angle(cls, axis, angle: float) -> Rotation:
        axis = _as_vec(axis, 3, "axis")
        return cls.from_rotvec(axis / np.linalg.norm(axis) * angle)

    @property
    def q(self) -> np.ndarray:
        return self._q

    @property
    def w(self) -> float:
        return float(self._q[0])

    def xyzw(self) -> np.ndarray:
        return np.array([self._q[1], self._q[2], self._q[3], self._q[0]])

    def matrix(self) -> np.ndarray:
        return quat_to_matrix(self._q)

    def rotvec(self) -> np.ndarray:
        return quat_log(self._q)

    def angle(self) -> float:
        return float(np.linalg.norm(self.rotvec()))

    def inverse(self) -> Rotation:
        q = self._q.copy()
        q[1:] *= -1
        return Rotation(q)

    def __mul__(self, other: Rotation) -> Rotation:
        return Rotation(quat_multiply(self._q, other._q))

    def apply(self, v) -> np.ndarray:
        return self.matrix() @ np.asarray(v, dtype=float)

    def angle_to(self, other: Rotation) -> float:
        return (self.inverse() * other).angle()

    def __eq__(self, other) -> bool:
        return isinstance(other, Rotation) and bool(np.array_equal(self._q, other._q))

    def __hash__(self) -> int:
        return hash(self._q.tobytes())

    def __repr__(self) -> str:
        w, x, y, z = self._q
        return f"Rotation(w={w:.6g}, x={x:.6g}, y={y:.6g}, z={z:.6g})"


def _first_nonzero_negative(v: np.ndarray) -> bool:
    for c in v:
        if c != 0:
            return c < 0
    return False


class Pose:
    """Rigid transform mapping body coordinates to world coordinates."""

    __slots__ = ("rotation", "translation")

    def __init__(self, rotation: Rotation | None = None, translation=None):
        self.rotation = rotation if rotation is not None else Rotation.identity()
        t = np.zeros(3) if translation is None else _as_vec(translation, 3, "translation")
        if not np.all(np.isfinite(t)):
            raise InvalidArgument("translation has non-finite components")
        t.flags.writeable = False
        self.translation = t

    @classmethod
    def identity(cls) -> Pose:
        return cls()

    @classmethod
    def from_matrix(cls, T) -> Pose:
        T = np.asarray(T, dtype=float)
        return cls(Rotation.from_matrix(T[:3, :3]), T[:3, 3])

    @classmethod
    def from_rt(cls, R, t) -> Pose:
        return cls(Rotation.from_matrix(R), t)

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation.matrix()
        T[:3, 3] = self.translation
        return T

    def compose(self, other: Pose) -> Pose:
        return Pose(
            self.rotation * other.rotation,
            self.rotation.apply(other.translation) + self.translation,
        )

    __matmul__ = compose

    def inverse(self) -> Pose:
        r_inv = self.rotation.inverse()
        return Pose(r_inv, -r_inv.apply(self.translation))

    def act(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        return p @ self.rotation.matrix().T + self.translation

    def to_sim(self) -> SimPose:
        return SimPose(self.rotation, self.translation, 1.0)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Pose)
            and self.rotation == other.rotation
            and bool(np.array_equal(self.translation, other.translation))
        )

    def __hash__(self) -> int:
        return hash((self.rotation, self.translation.tobytes()))

    def __repr__(self) -> str:
        return f"Pose({self.rotation!r}, t={np.array2string(self.translation, precision=6)})"


class SimPose:
    """Similarity transform ``x -> s * R x + t``."""

    __slots__ = ("rotation", "translation", "scale")

    def __init__(self, rotation: Rotation | None = None, translation=None, scale: float = 1.0):
        if not (np.isfinite(scale) and scale > 0):
            raise InvalidArgument(f"scale must be positive, got {scale}")
        self.rotation = rotation if rotation is not None else Rotation.identity()
        t = np.zeros(3) if translation is None else _as_vec(translation, 3, "translation")
        t.flags.writeable = False
        self.translation = t
        self.scale = float(scale)

    @classmethod
    def identity(cls) -> SimPose:
        return cls()

    def compose(self, other: SimPose) -> SimPose:
        return SimPose(
            self.rotation * other.rotation,
            self.scale * self.rotation.apply(other.translation) + self.translation,
            self.scale * other.scale,
        )

    __matmul__ = compose

    def inverse(self) -> SimPose:
        r_inv = self.rotation.inverse()
        return SimPose(r_inv, -r_inv.apply(self.translation) / self.scale, 1.0 / self.scale)

    def act(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        return self.scale * (p @ self.rotation.matrix().T) + self.translation

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.scale * self.rotation.matrix()
        T[:3, 3] = self.translation
        return T

    def to_pose(self) -> Pose:
        return Pose(self.rotation, self.translation)

    def __repr__(self) -> str:
        return (
            f"SimPose({self.rotation!r}, t={np.array2string(self.translation, precision=6)}, "
            f"s={self.scale:.6g})"
        )


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------


def compose(a, b):
    return a.compose(b)


def inverse(a):
    return a.inverse()


def relative(a: Pose, b: Pose) -> Pose:
    """``a^-1 * b``: pose of ``b`` expressed in the frame of ``a``."""
    return a.inverse().compose(b)


def se3_exp(xi) -> Pose:
    xi = _as_vec(xi, 6, "twist")
    if not np.all(np.isfinite(xi)):
        raise InvalidArgument("twist has non-finite components")
    rho, phi = xi[:3], xi[3:]
    t = so3_left_jacobian(phi) @ rho
    return Pose(Rotation(quat_exp(phi)), t)


def se3_log(pose: Pose) -> np.ndarray:
    w = pose.rotation.w
    vnorm = float(np.linalg.norm(pose.rotation.q[1:]))
    angle = 2.0 * math.atan2(vnorm, w)
    if angle > math.pi - PI_GUARD:
        raise BranchAmbiguityError(f"rotation angle {angle:.9f} too close to pi")
    phi = pose.rotation.rotvec()
    d = float(_vinv_coeff(np.linalg.norm(phi)))
    K = skew(phi)
    rho = (np.eye(3) - 0.5 * K + d * (K @ K)) @ pose.translation
    return np.concatenate([rho, phi])


def slerp(a: Rotation, b: Rotation, t: float) -> Rotation:
    """Shortest-arc spherical interpolation between two rotations."""
    if not (0.0 <= t <= 1.0):
        raise InvalidArgument(f"slerp parameter must lie in [0, 1], got {t}")
    qa, qb = a.q, b.q
    if float(qa @ qb) < 0:
        qb = -qb
    if t == 0.0:
        return a
    if t == 1.0:
        return b
    # q(t) = qa * (qa^-1 qb)^t, done in the tangent space for accuracy near qa == qb
    qa_inv = qa * np.array([1.0, -1.0, -1.0, -1.0])
    d = quat_multiply(qa_inv, qb)
    step = quat_exp(t * quat_log(d))
    return Rotation(quat_multiply(qa, step))


def lerp(a, b, t: float) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return a + t * (b - a)


def poses_to_arrays(poses) -> tuple[np.ndarray, np.ndarray]:
    poses = list(poses)
    if not poses:
        return np.zeros((0, 3, 3)), np.zeros((0, 3))
    q = np.array([p.rotation.q for p in poses])
    t = np.array([p.translation for p in poses])
    return quat_to_matrix(q), t


def arrays_to_poses(R: np.ndarray, t: np.ndarray) -> list[Pose]:
    if len(R) == 0:
        return []
    q = quat_from_matrix(R)
    return [Pose(Rotation(qi), ti) for qi, ti in zip(q, t)]
