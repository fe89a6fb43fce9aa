"""Closed-form SO(d)/SE(d) geometry for d in {2, 3}.

Tangent vectors are ordered ``[angular, linear]``. In 2D the angular part is a
single scalar; in 3D it is a 3-vector.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Below this angle the sin/cos ratios switch to their Taylor series.
_SMALL_ANGLE = 1e-5
NEAR_PI_CUTOFF = 1e-6


class AngleNearPi(ValueError):
    """Rotation angle too close to pi for a well-conditioned logarithm."""


class DegenerateMatrix(ValueError):
    """Matrix is too close to rank deficient to project onto SO(d)."""


def hat2(w: float) -> np.ndarray:
    return np.array([[0.0, -w], [w, 0.0]])


def hat3(w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    return np.array(
        [
            [0.0, -w[2], w[1]],
            [w[2], 0.0, -w[0]],
            [-w[1], w[0], 0.0],
        ]
    )


def vee3(W: np.ndarray) -> np.ndarray:
    return np.array([W[2, 1], W[0, 2], W[1, 0]])


def rot2(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def rotz(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def euler_zyx(yaw: float, pitch: float, roll: float) -> np.ndarray:
    cy, sy = np.cos(yaw), np.sin(yaw)
    cp, sp = np.cos(pitch), np.sin(pitch)
    cr, sr = np.cos(roll), np.sin(roll)
    Rz = np.array([[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]])
    Ry = np.array([[cp, 0.0, sp], [0.0, 1.0, 0.0], [-sp, 0.0, cp]])
    Rx = np.array([[1.0, 0.0, 0.0], [0.0, cr, -sr], [0.0, sr, cr]])
    return Rz @ Ry @ Rx


def _sinc(t: float) -> float:
    """sin(t)/t."""
    if abs(t) < _SMALL_ANGLE:
        return 1.0 - t * t / 6.0
    return np.sin(t) / t


def _cosc(t: float) -> float:
    """(1 - cos t)/t."""
    if abs(t) < _SMALL_ANGLE:
        return t / 2.0 - t**3 / 24.0
    return (1.0 - np.cos(t)) / t


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform ``x -> R x + p``."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.array(self.rotation, dtype=float)
        p = np.array(self.translation, dtype=float).reshape(-1)
        if R.shape != (p.size, p.size) or p.size not in (2, 3):
            raise ValueError(f"incompatible pose shapes {R.shape} and {p.shape}")
        R.setflags(write=False)
        p.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", p)

    @classmethod
    def identity(cls, d: int) -> "Pose":
        return cls(np.eye(d), np.zeros(d))

    @classmethod
    def from_matrix(cls, T: np.ndarray) -> "Pose":
        d = T.shape[0] - 1
        return cls(T[:d, :d], T[:d, d])

    @property
    def dim(self) -> int:
        return self.translation.size

    def matrix(self) -> np.ndarray:
        d = self.dim
        T = np.eye(d + 1)
        T[:d, :d] = self.rotation
        T[:d, d] = self.translation
        return T

    def compose(self, other: "Pose") -> "Pose":
        return Pose(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    __matmul__ = compose

    def inverse(self) -> "Pose":
        Rt = self.rotation.T
        return Pose(Rt, -Rt @ self.translation)

    def apply(self, point) -> np.ndarray:
        """Map a body-frame point into the world frame (``K T p_bar``)."""
        return self.rotation @ np.asarray(point, dtype=float) + self.translation

    def allclose(self, other: "Pose", atol: float = 1e-12) -> bool:
        return bool(
            np.allclose(self.rotation, other.rotation, rtol=0.0, atol=atol)
            and np.allclose(self.translation, other.translation, rtol=0.0, atol=atol)
        )

    def __repr__(self) -> str:
        return f"Pose(rotation={self.rotation.tolist()}, translation={self.translation.tolist()})"


@dataclass(frozen=True, eq=False)
class Twist:
    """Body-centric generalized velocity; ``angular`` has d(d-1)/2 entries."""

    angular: np.ndarray
    linear: np.ndarray

    def __post_init__(self):
        w = np.array(self.angular, dtype=float).reshape(-1)
        v = np.array(self.linear, dtype=float).reshape(-1)
        d = v.size
        if d not in (2, 3) or w.size != d * (d - 1) // 2:
            raise ValueError(f"incompatible twist sizes {w.size} and {v.size}")
        w.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "angular", w)
        object.__setattr__(self, "linear", v)

    @classmethod
    def zero(cls, d: int) -> "Twist":
        return cls(np.zeros(d * (d - 1) // 2), np.zeros(d))

    @classmethod
    def from_vector(cls, xi, d: int) -> "Twist":
        xi = np.asarray(xi, dtype=float)
        k = d * (d - 1) // 2
        return cls(xi[:k], xi[k:])

    @property
    def dim(self) -> int:
        return self.linear.size

    def vector(self) -> np.ndarray:
        return np.concatenate([self.angular, self.linear])

    def scaled(self, a: float) -> "Twist":
        return Twist(a * self.angular, a * self.linear)

    def wedge(self) -> np.ndarray:
        d = self.dim
        M = np.zeros((d + 1, d + 1))
        M[:d, :d] = hat2(self.angular[0]) if d == 2 else hat3(self.angular)
        M[:d, d] = self.linear
        return M

    def __repr__(self) -> str:
        return f"Twist(angular={self.angular.tolist()}, linear={self.linear.tolist()})"


def so2_left_jacobian(theta: float) -> np.ndarray:
    """V(theta) such that the translation of exp is V(theta) v."""
    a, b = _sinc(theta), _cosc(theta)
    return np.array([[a, -b], [b, a]])


def so3_exp(phi) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    theta = float(np.linalg.norm(phi))
    K = hat3(phi)
    if theta < _SMALL_ANGLE:
        A = 1.0 - theta**2 / 6.0
        B = 0.5 - theta**2 / 24.0
    else:
        A = np.sin(theta) / theta
        B = (1.0 - np.cos(theta)) / theta**2
    return np.eye(3) + A * K + B * (K @ K)


def so3_left_jacobian(phi) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    theta = float(np.linalg.norm(phi))
    K = hat3(phi)
    if theta < _SMALL_ANGLE:
        B = 0.5 - theta**2 / 24.0
        C = 1.0 / 6.0 - theta**2 / 120.0
    else:
        B = (1.0 - np.cos(theta)) / theta**2
        C = (theta - np.sin(theta)) / theta**3
    return np.eye(3) + B * K + C * (K @ K)


def exp_se(twist: Twist, dt: float = 1.0) -> Pose:
    """Exact exponential ``exp((dt * twist)^)`` as a Pose."""
    d = twist.dim
    w = dt * twist.angular
    v = dt * twist.linear
    if d == 2:
        theta = float(w[0])
        return Pose(rot2(theta), so2_left_jacobian(theta) @ v)
    return Pose(so3_exp(w), so3_left_jacobian(w) @ v)


def rotation_angle(R: np.ndarray) -> float:
    if R.shape == (2, 2):
        return abs(float(np.arctan2(R[1, 0], R[0, 0])))
    s = np.linalg.norm(vee3(R - R.T)) / 2.0
    return float(np.arctan2(s, (np.trace(R) - 1.0) / 2.0))


def so3_log(R: np.ndarray) -> np.ndarray:
    theta = rotation_angle(R)
    if theta > np.pi - NEAR_PI_CUTOFF:
        raise AngleNearPi(f"rotation angle {theta!r} is within {NEAR_PI_CUTOFF} of pi")
    skew = vee3(R - R.T) / 2.0
    if theta < _SMALL_ANGLE:
        return skew * (1.0 + theta**2 / 6.0)
    return skew * (theta / np.sin(theta))


def log_se(pose: Pose) -> Twist:
    """Inverse of :func:`exp_se` at ``dt = 1``."""
    d = pose.dim
    R, p = pose.rotation, pose.translation
    if d == 2:
        theta = float(np.arctan2(R[1, 0], R[0, 0]))
        v = np.linalg.solve(so2_left_jacobian(theta), p)
        return Twist([theta], v)
    phi = so3_log(R)
    theta = float(np.linalg.norm(phi))
    K = hat3(phi)
    if theta < _SMALL_ANGLE:
        D = 1.0 / 12.0 + theta**2 / 720.0
    else:
        D = (1.0 - theta * np.sin(theta) / (2.0 * (1.0 - np.cos(theta)))) / theta**2
    Vinv = np.eye(3) - 0.5 * K + D * (K @ K)
    return Twist(phi, Vinv @ p)


def first_order_exp(twist: Twist, dt: float = 1.0) -> np.ndarray:
    """``I + (dt * twist)^``, generally not an element of SE(d)."""
    d = twist.dim
    return np.eye(d + 1) + dt * twist.wedge()


def project_to_rotation(M: np.ndarray) -> np.ndarray:
    """Nearest rotation matrix in Frobenius norm."""
    M = np.asarray(M, dtype=float)
    if not np.all(np.isfinite(M)):
        raise DegenerateMatrix("matrix has non-finite entries")
    U, s, Vt = np.linalg.svd(M)
    if s[-1] <= 1e-12:
        raise DegenerateMatrix(f"smallest singular value {s[-1]:.3e} too small")
    D = np.eye(M.shape[0])
    D[-1, -1] = np.sign(np.linalg.det(U @ Vt))
    return U @ D @ Vt


def is_rotation(R: np.ndarray, atol: float = 1e-12) -> bool:
    d = R.shape[0]
    return bool(
        np.allclose(R.T @ R, np.eye(d), rtol=0.0, atol=atol)
        and abs(np.linalg.det(R) - 1.0) <= atol
    )

