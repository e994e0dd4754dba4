"""Rigid-body geometry: SE(3) poses, quaternions, exp/log maps and slerp.

Quaternions are stored as (x, y, z, w), the TUM trajectory order.
Twists are ordered (v, omega): translational part first.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_EPS = 1e-10


def hat(w: np.ndarray) -> np.ndarray:
    """Skew-symmetric matrix such that hat(w) @ v == cross(w, v)."""
    return np.array([
        [0.0, -w[2], w[1]],
        [w[2], 0.0, -w[0]],
        [-w[1], w[0], 0.0],
    ])


def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q)
    if not np.isfinite(n) or n < _EPS:
        raise ValueError(f"cannot normalize quaternion {q}")
    q = q / n
    # canonical hemisphere keeps serialization stable
    return -q if q[3] < 0 else q


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ax, ay, az, aw = a
    bx, by, bz, bw = b
    return np.array([
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
        aw * bw - ax * bx - ay * by - az * bz,
    ])


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    x, y, z, w = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def matrix_to_quat(R: np.ndarray) -> np.ndarray:
    """Shepperd's method; robust for all rotation angles."""
    R = np.asarray(R, dtype=float)
    tr = np.trace(R)
    if tr > 0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = [(R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s, 0.25 * s]
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = [0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s, (R[2, 1] - R[1, 2]) / s]
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = [(R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s, (R[0, 2] - R[2, 0]) / s]
    else:
        s = 2.0 * np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = [(R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s, (R[1, 0] - R[0, 1]) / s]
    return quat_normalize(np.array(q))


def so3_exp(w: np.ndarray) -> np.ndarray:
    """Axis-angle vector to unit quaternion."""
    w = np.asarray(w, dtype=float)
    theta = np.linalg.norm(w)
    if theta < 1e-8:
        # second-order Taylor keeps the round trip exact near zero
        q = np.array([0.5 * w[0], 0.5 * w[1], 0.5 * w[2], 1.0 - theta * theta / 8.0])
        return q / np.linalg.norm(q)
    axis = w / theta
    return np.concatenate([np.sin(theta / 2) * axis, [np.cos(theta / 2)]])


def so3_log(q: np.ndarray) -> np.ndarray:
    """Unit quaternion to axis-angle vector with angle in [0, pi]."""
    q = np.asarray(q, dtype=float)
    if q[3] < 0:
        q = -q
    v = q[:3]
    s = np.linalg.norm(v)
    if s < 1e-12:
        return 2.0 * v / q[3]
    theta = 2.0 * np.arctan2(s, q[3])
    return theta * v / s


def _jacobian_coeffs(theta: float) -> tuple[float, float, float]:
    """(1-cos t)/t^2, (t-sin t)/t^3 and the inverse-Jacobian W^2 coefficient.

    Series below 1e-2 rad avoid the cancellation of the closed forms.
    """
    t2 = theta * theta
    if theta < 1e-2:
        a = 0.5 - t2 / 24.0 + t2 * t2 / 720.0
        b = 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0
        c = 1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0
        return a, b, c
    half = 0.5 * theta
    a = 2.0 * np.sin(half) ** 2 / t2
    b = (theta - np.sin(theta)) / (t2 * theta)
    c = (1.0 - half * np.cos(half) / np.sin(half)) / t2
    return a, b, c


def _left_jacobian(w: np.ndarray) -> np.ndarray:
    a, b, _ = _jacobian_coeffs(float(np.linalg.norm(w)))
    W = hat(w)
    return np.eye(3) + a * W + b * W @ W


def _left_jacobian_inv(w: np.ndarray) -> np.ndarray:
    _, _, c = _jacobian_coeffs(float(np.linalg.norm(w)))
    W = hat(w)
    return np.eye(3) - 0.5 * W + c * W @ W


@dataclass(frozen=True)
class PoseSE3:
    """Rigid transform x -> R x + t, rotation held as a unit quaternion (x, y, z, w)."""

    rotation: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 0.0, 1.0]))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        q = quat_normalize(np.asarray(self.rotation, dtype=float).reshape(4))
        t = np.asarray(self.translation, dtype=float).reshape(3).copy()
        if not np.all(np.isfinite(t)):
            raise ValueError("translation must be finite")
        q.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", q)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "PoseSE3":
        return cls()

    @classmethod
    def from_matrix(cls, T: np.ndarray) -> "PoseSE3":
        T = np.asarray(T, dtype=float)
        return cls(matrix_to_quat(T[:3, :3]), T[:3, 3])

    @classmethod
    def from_rt(cls, R: np.ndarray, t: np.ndarray) -> "PoseSE3":
        return cls(matrix_to_quat(R), t)

    @property
    def R(self) -> np.ndarray:
        return quat_to_matrix(self.rotation)

    @property
    def t(self) -> np.ndarray:
        return np.array(self.translation)

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.R
        T[:3, 3] = self.translation
        return T

    def inverse(self) -> "PoseSE3":
        q = self.rotation * np.array([-1.0, -1.0, -1.0, 1.0])
        return PoseSE3(q, -quat_to_matrix(q) @ self.translation)

    def compose(self, other: "PoseSE3") -> "PoseSE3":
        """self * other: apply `other` first."""
        q = quat_multiply(self.rotation, other.rotation)
        return PoseSE3(q, self.R @ other.translation + self.translation)

    __matmul__ = compose

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform points of shape (3,) or (N, 3)."""
        points = np.asarray(points, dtype=float)
        return points @ self.R.T + self.translation

    def angle(self) -> float:
        """Rotation angle in radians, in [0, pi]."""
        return float(np.linalg.norm(so3_log(self.rotation)))

    def __eq__(self, other):
        if not isinstance(other, PoseSE3):
            return NotImplemented
        return bool(np.array_equal(self.rotation, other.rotation)
                    and np.array_equal(self.translation, other.translation))

    def __hash__(self):
        return hash((self.rotation.tobytes(), self.translation.tobytes()))

    def __repr__(self):
        q = ", ".join(f"{v:.6g}" for v in self.rotation)
        t = ", ".join(f"{v:.6g}" for v in self.translation)
        return f"PoseSE3(q=[{q}], t=[{t}])"


def se3_exp(xi: np.ndarray) -> PoseSE3:
    xi = np.asarray(xi, dtype=float).reshape(6)
    v, w = xi[:3], xi[3:]
    return PoseSE3(so3_exp(w), _left_jacobian(w) @ v)


def se3_log(pose: PoseSE3) -> np.ndarray:
    w = so3_log(pose.rotation)
    v = _left_jacobian_inv(w) @ pose.translation
    return np.concatenate([v, w])


def slerp(q0: np.ndarray, q1: np.ndarray, frac: float) -> np.ndarray:
    """Spherical interpolation from q0 (frac=0) to q1 (frac=1) along the short arc."""
    q0 = np.asarray(q0, dtype=float)
    q1 = np.asarray(q1, dtype=float)
    if frac == 0.0:
        return q0.copy()
    if frac == 1.0:
        return q1.copy()
    d = float(np.dot(q0, q1))
    if d < 0:
        q1, d = -q1, -d
    if d > 1 - 1e-12:
        q = q0 + frac * (q1 - q0)
        return q / np.linalg.norm(q)
    theta = np.arccos(min(d, 1.0))
    s = np.sin(theta)
    q = (np.sin((1 - frac) * theta) / s) * q0 + (np.sin(frac * theta) / s) * q1
    return q / np.linalg.norm(q)


def interpolate(a: PoseSE3, b: PoseSE3, frac: float) -> PoseSE3:
    """Geodesic-style blend: slerp on rotation, lerp on translation."""
    if frac == 0.0:
        return a
    if frac == 1.0:
        return b
    q = slerp(a.rotation, b.rotation, frac)
    t = (1 - frac) * a.translation + frac * b.translation
    return PoseSE3(q, t)


def rotation_angle_deg(R: np.ndarray) -> float:
    """Angle of a rotation matrix from the trace, acos argument clamped."""
    c = (np.trace(R) - 1.0) / 2.0
    return float(np.degrees(np.arccos(np.clip(c, -1.0, 1.0))))


def rigid_fit(src: np.ndarray, dst: np.ndarray, weights: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Least-squares R, t with dst ~ R @ src + t (Umeyama without scale).

    Returns (R, t, singular_values); det(R) = +1 is enforced.
    """
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    w = np.ones(len(src)) if weights is None else np.asarray(weights, dtype=float)
    w = w / w.sum()
    mu_s = w @ src
    mu_d = w @ dst
    cov = (dst - mu_d).T @ ((src - mu_s) * w[:, None])
    U, S, Vt = np.linalg.svd(cov)
    D = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        D[2, 2] = -1.0
    R = U @ D @ Vt
    t = mu_d - R @ mu_s
    return R, t, S
