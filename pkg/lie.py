"""
lie.py

SE(3) poses, the exponential/logarithm maps, constant-twist interpolation between
an exposure's start and end pose, and the Jacobians of interpolated poses with
respect to both endpoints.

Conventions used everywhere in this repository:

  * A pose stores its rotation as a unit quaternion (qw, qx, qy, qz) plus a
    translation. The rotation matrix is derived on demand and cached.
  * A twist is a 6-vector ordered (omega, v): rotational part first.
  * Perturbations are LEFT-multiplicative: delta (+) T = exp(delta) * T. All
    Jacobians below, in camera.py and in tracker.py follow this, and the
    Levenberg-Marquardt update applies its step the same way.
"""

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from errors import AngleNearPi, FractionOutOfRange, OutOfExposure

# Below this angle exp/log/V use Taylor expansions.
SMALL_ANGLE = 1e-8

# The Q block of the SE(3) left Jacobian loses digits to cancellation much
# earlier than V does, so it switches to its series at a larger angle.
JACOBIAN_SERIES_ANGLE = 1e-2

# se3_log refuses rotations this close to pi (the axis becomes ill-conditioned).
NEAR_PI_MARGIN = 1e-6


def hat(w) -> np.ndarray:
    """Skew-symmetric matrix of a 3-vector, so hat(a) @ b == cross(a, b)."""
    x, y, z = w
    return np.array([[0.0, -z, y],
                     [z, 0.0, -x],
                     [-y, x, 0.0]])


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product of two (w, x, y, z) quaternions."""
    aw, av = a[0], a[1:]
    bw, bv = b[0], b[1:]
    w = aw * bw - av @ bv
    v = aw * bv + bw * av + np.cross(av, bv)
    return np.concatenate(([w], v))


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array([
        [w * w + x * x - y * y - z * z, 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), w * w - x * x + y * y - z * z, 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), w * w - x * x - y * y + z * z],
    ])


def matrix_to_quat(R: np.ndarray) -> np.ndarray:
    """Rotation matrix -> unit quaternion (Shepperd's method, qw >= 0)."""
    R = np.asarray(R, dtype=float)
    trace = np.trace(R)
    if trace > 0:
        s = 2.0 * np.sqrt(trace + 1.0)
        q = np.array([0.25 * s,
                      (R[2, 1] - R[1, 2]) / s,
                      (R[0, 2] - R[2, 0]) / s,
                      (R[1, 0] - R[0, 1]) / s])
    else:
        i = int(np.argmax(np.diag(R)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = 2.0 * np.sqrt(1.0 + R[i, i] - R[j, j] - R[k, k])
        q = np.empty(4)
        q[0] = (R[k, j] - R[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (R[j, i] + R[i, j]) / s
        q[1 + k] = (R[k, i] + R[i, k]) / s
    if q[0] < 0:
        q = -q
    return q / np.linalg.norm(q)


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform x -> R x + t with R held as a unit quaternion."""

    q: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        q = np.array(self.q, dtype=float).reshape(4)
        n = np.linalg.norm(q)
        if not np.isfinite(n) or n == 0.0:
            raise ValueError(f"invalid quaternion {self.q}")
        if n != 1.0:
            q = q / n
        t = np.array(self.t, dtype=float).reshape(3)
        q.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "t", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(3))

    @classmethod
    def from_matrix(cls, R: np.ndarray, t) -> "Pose":
        return cls(matrix_to_quat(R), t)

    @classmethod
    def from_tum(cls, tx, ty, tz, qx, qy, qz, qw) -> "Pose":
        return cls(np.array([qw, qx, qy, qz]), np.array([tx, ty, tz]))

    def tum(self) -> list:
        """[tx, ty, tz, qx, qy, qz, qw], the TUM column order."""
        w, x, y, z = self.q
        return [*self.t, x, y, z, w]

    # Idempotent: racing threads compute the same matrix.
    @cached_property
    def rotation(self) -> np.ndarray:
        R = quat_to_matrix(self.q)
        R.setflags(write=False)
        return R

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.t
        return T

    def __matmul__(self, other: "Pose") -> "Pose":
        return Pose(quat_multiply(self.q, other.q), self.rotation @ other.t + self.t)

    def inverse(self) -> "Pose":
        q_inv = self.q * np.array([1.0, -1.0, -1.0, -1.0])
        return Pose(q_inv, -(self.rotation.T @ self.t))

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform one point (3,) or a stack of points (N, 3)."""
        points = np.asarray(points, dtype=float)
        return points @ self.rotation.T + self.t

    @property
    def angle(self) -> float:
        """Rotation angle in [0, pi]."""
        return 2.0 * np.arctan2(np.linalg.norm(self.q[1:]), abs(self.q[0]))

    def __repr__(self):
        return f"Pose(q={np.round(self.q, 6).tolist()}, t={np.round(self.t, 6).tolist()})"


def pose_error(a: Pose, b: Pose) -> tuple[float, float]:
    """(rotation angle of a^-1 b in radians, translation distance in meters)."""
    return (a.inverse() @ b).angle, float(np.linalg.norm(a.t - b.t))


def adjoint(p: Pose) -> np.ndarray:
    """6x6 adjoint for (omega, v) twists: exp(Ad_T xi) = T exp(xi) T^-1."""
    R = p.rotation
    Ad = np.zeros((6, 6))
    Ad[:3, :3] = R
    Ad[3:, 3:] = R
    Ad[3:, :3] = hat(p.t) @ R
    return Ad


def _v_coefficients(theta: float, series_below: float) -> tuple[float, float]:
    """(1 - cos t) / t^2 and (t - sin t) / t^3."""
    if theta < series_below:
        t2 = theta * theta
        return 0.5 - t2 / 24.0 + t2 * t2 / 720.0, 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0
    half_sin = np.sin(0.5 * theta)
    return 2.0 * half_sin * half_sin / (theta * theta), (theta - np.sin(theta)) / theta ** 3


def so3_left_jacobian(omega: np.ndarray) -> np.ndarray:
    """Also the V matrix of the SE(3) exponential."""
    theta = float(np.linalg.norm(omega))
    B, C = _v_coefficients(theta, SMALL_ANGLE)
    W = hat(omega)
    return np.eye(3) + B * W + C * (W @ W)


def so3_left_jacobian_inv(omega: np.ndarray) -> np.ndarray:
    theta = float(np.linalg.norm(omega))
    W = hat(omega)
    if theta < SMALL_ANGLE:
        D = 1.0 / 12.0 + theta * theta / 720.0
    else:
        half = 0.5 * theta
        D = (1.0 - half * np.cos(half) / np.sin(half)) / (theta * theta)
    return np.eye(3) - 0.5 * W + D * (W @ W)


def se3_exp(xi) -> Pose:
    xi = np.asarray(xi, dtype=float)
    omega, v = xi[:3], xi[3:]
    theta = float(np.linalg.norm(omega))
    if theta < SMALL_ANGLE:
        t2 = theta * theta
        q = np.concatenate(([1.0 - t2 / 8.0], (0.5 - t2 / 48.0) * omega))
    else:
        half = 0.5 * theta
        q = np.concatenate(([np.cos(half)], (np.sin(half) / theta) * omega))
    return Pose(q, so3_left_jacobian(omega) @ v)


def se3_log(p: Pose) -> np.ndarray:
    q = p.q if p.q[0] >= 0 else -p.q
    w, qv = q[0], q[1:]
    s = float(np.linalg.norm(qv))
    theta = 2.0 * np.arctan2(s, w)
    if theta >= np.pi - NEAR_PI_MARGIN:
        raise AngleNearPi(f"rotation angle {theta:.9f} rad is too close to pi for the logarithm")

    if theta < SMALL_ANGLE:
        omega = (2.0 / w) * qv
        D = 1.0 / 12.0 + theta * theta / 720.0
    else:
        omega = (theta / s) * qv
        # (t/2) cot(t/2), taken straight from the quaternion components
        D = (1.0 - 0.5 * theta * w / s) / (theta * theta)
    W = hat(omega)
    V_inv = np.eye(3) - 0.5 * W + D * (W @ W)
    return np.concatenate((omega, V_inv @ p.t))


def _q_block(omega: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Lower-left block of the SE(3) left Jacobian for (omega, v) ordering."""
    theta = float(np.linalg.norm(omega))
    W = hat(omega)
    P = hat(v)
    WP, PW = W @ P, P @ W
    WPW = WP @ W
    if theta < JACOBIAN_SERIES_ANGLE:
        t2 = theta * theta
        c1 = 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0
        c2 = 1.0 / 24.0 - t2 / 720.0 + t2 * t2 / 40320.0
        c3 = 1.0 / 120.0 - t2 / 2520.0 + t2 * t2 / 120960.0
    else:
        s, c = np.sin(theta), np.cos(theta)
        c1 = (theta - s) / theta ** 3
        c2 = (theta * theta + 2.0 * c - 2.0) / (2.0 * theta ** 4)
        c3 = (2.0 * theta - 3.0 * s + theta * c) / (2.0 * theta ** 5)
    return (0.5 * P
            + c1 * (WP + PW + WPW)
            + c2 * (W @ WP + PW @ W - 3.0 * WPW)
            + c3 * (WPW @ W + W @ WPW))


def se3_left_jacobian(xi: np.ndarray) -> np.ndarray:
    """exp(xi + d) ~= exp(J(xi) d) exp(xi)."""
    omega, v = xi[:3], xi[3:]
    J = so3_left_jacobian(omega)
    out = np.zeros((6, 6))
    out[:3, :3] = J
    out[3:, 3:] = J
    out[3:, :3] = _q_block(omega, v)
    return out


def se3_left_jacobian_inv(xi: np.ndarray) -> np.ndarray:
    omega, v = xi[:3], xi[3:]
    J_inv = so3_left_jacobian_inv(omega)
    out = np.zeros((6, 6))
    out[:3, :3] = J_inv
    out[3:, 3:] = J_inv
    out[3:, :3] = -J_inv @ _q_block(omega, v) @ J_inv
    return out


@dataclass(frozen=True, eq=False)
class LocalTrajectory:
    """Camera motion during one exposure: start pose, end pose, exposure time."""

    start: Pose
    end: Pose
    exposure: float = 1.0

    def __post_init__(self):
        if not self.exposure >= 0.0:
            raise OutOfExposure(f"exposure must be >= 0, got {self.exposure}")

    @classmethod
    def static(cls, pose: Pose, exposure: float = 0.0) -> "LocalTrajectory":
        return cls(pose, pose, exposure)

    @cached_property
    def relative_twist(self) -> np.ndarray:
        """log(start^-1 * end), computed once per trajectory."""
        xi = se3_log(self.start.inverse() @ self.end)
        xi.setflags(write=False)
        return xi

    def at_fraction(self, s: float) -> Pose:
        if not 0.0 <= s <= 1.0:
            raise FractionOutOfRange(f"fraction {s} outside [0, 1]")
        if s == 0.0:
            return self.start
        if s == 1.0:
            return self.end
        return self.start @ se3_exp(s * self.relative_twist)

    def pose_at(self, t: float) -> Pose:
        if self.exposure == 0.0:
            if t == 0.0:
                return self.start
            raise OutOfExposure(f"t={t} but the exposure time is zero")
        if not 0.0 <= t <= self.exposure:
            raise OutOfExposure(f"t={t} outside [0, {self.exposure}]")
        return self.at_fraction(t / self.exposure)

    def virtual_poses(self, n: int) -> list[Pose]:
        """The n evenly spaced poses i / (n - 1), i = 0..n-1 (just start for n = 1)."""
        if n == 1:
            return [self.start]
        return [self.at_fraction(i / (n - 1)) for i in range(n)]

    def mid(self) -> Pose:
        return self.at_fraction(0.5)

    def left_multiplied(self, g: Pose) -> "LocalTrajectory":
        return LocalTrajectory(g @ self.start, g @ self.end, self.exposure)


def interpolate(traj: LocalTrajectory, t: float) -> Pose:
    """T_t = T_start * exp(t / tau * log(T_start^-1 * T_end))."""
    return traj.pose_at(t)


def interpolate_fraction(start: Pose, end: Pose, s: float) -> Pose:
    return LocalTrajectory(start, end).at_fraction(s)


def interp_jacobians(traj: LocalTrajectory, s: float) -> tuple[np.ndarray, np.ndarray]:
    """Derivatives of the interpolated pose T_s w.r.t. left twists on T_start and T_end.

    With T_start <- exp(a) T_start and T_end <- exp(b) T_end, the interpolated
    pose moves to exp(J_start a + J_end b) T_s to first order.
    """
    if not 0.0 <= s <= 1.0:
        raise FractionOutOfRange(f"fraction {s} outside [0, 1]")
    if s == 0.0:
        return np.eye(6), np.zeros((6, 6))
    xi = traj.relative_twist
    M = s * se3_left_jacobian(s * xi) @ se3_left_jacobian_inv(xi)
    J_end = adjoint(traj.start) @ M @ adjoint(traj.start.inverse())
    return np.eye(6) - J_end, J_end
