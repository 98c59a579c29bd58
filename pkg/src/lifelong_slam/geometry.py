"""SE(2) pose algebra, weighted residuals and their analytic Jacobians.

Poses are (x, y, theta) with theta kept in (-pi, pi]. A relative-pose
measurement z between a pair (a, b) is interpreted as "a expressed in b's
frame", and its error is expressed in the measurement frame:

    e(a, b, z) = vec( z^-1 * (b^-1 * a) )

so e = 0 exactly when between(b, a) equals z. Constraints store an
information matrix (inverse covariance) and the weighted cost of an error
vector e is e^T * info * e.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import InvalidInformationError


def wrap_angle(theta: float) -> float:
    """Normalize an angle to (-pi, pi] via atan2 (no modulo artifacts).

    Angles already in range pass through unchanged, so normalization is
    exactly idempotent.
    """
    if -math.pi < theta <= math.pi:
        return theta
    wrapped = math.atan2(math.sin(theta), math.cos(theta))
    if wrapped <= -math.pi:
        wrapped = math.pi
    return wrapped


@dataclass(frozen=True)
class Pose2:
    """An SE(2) element: translation (x, y) in meters, heading theta in radians.

    theta is normalized to (-pi, pi] on construction, so every operation
    that returns a Pose2 maintains the invariant.
    """

    x: float
    y: float
    theta: float

    def __post_init__(self):
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "theta", wrap_angle(float(self.theta)))

    @staticmethod
    def identity() -> "Pose2":
        return Pose2(0.0, 0.0, 0.0)

    @staticmethod
    def from_array(v) -> "Pose2":
        return Pose2(float(v[0]), float(v[1]), float(v[2]))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta], dtype=np.float64)


def rot2(theta: float) -> np.ndarray:
    """2x2 rotation matrix for angle theta."""
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]], dtype=np.float64)


def compose(a: Pose2, b: Pose2) -> Pose2:
    """Group composition a * b: rotate b's translation by a.theta and chain."""
    c, s = math.cos(a.theta), math.sin(a.theta)
    return Pose2(
        a.x + c * b.x - s * b.y,
        a.y + s * b.x + c * b.y,
        a.theta + b.theta,
    )


def inverse(a: Pose2) -> Pose2:
    """Group inverse: compose(a, inverse(a)) is the identity."""
    c, s = math.cos(a.theta), math.sin(a.theta)
    return Pose2(-(c * a.x + s * a.y), -(-s * a.x + c * a.y), -a.theta)


def between(a: Pose2, b: Pose2) -> Pose2:
    """Relative pose of b in a's frame: inverse(a) * b."""
    return compose(inverse(a), b)


def apply_pose(pose: Pose2, points: np.ndarray) -> np.ndarray:
    """Transform (N, 2) points by a pose (rotation then translation)."""
    pts = np.asarray(points, dtype=np.float64)
    return pts @ rot2(pose.theta).T + np.array([pose.x, pose.y])


def residual(x: Pose2, y: Pose2, z: Pose2) -> np.ndarray:
    """Error 3-vector of the constraint "x relative to y should be z".

    Returns vec(between(z, between(y, x))) with the angular component
    wrapped; zero exactly when between(y, x) equals z.
    """
    e = between(z, between(y, x))
    return e.as_array()


def residual_jacobians(x: Pose2, y: Pose2, z: Pose2) -> tuple[np.ndarray, np.ndarray]:
    """Analytic Jacobians of residual(x, y, z) w.r.t. x and y.

    With b = between(y, x) the error is e_t = R(z)^T (R(y)^T (x_t - y_t) - z_t),
    e_theta = x.theta - y.theta - z.theta, which gives

        de/dx = [[ R(y.theta + z.theta)^T , 0 ], [0, 0, 1]]
        de/dy = [[-R(y.theta + z.theta)^T , R(y+z)^T S (x_t - y_t)], [0, 0, -1]]

    where S = [[0, 1], [-1, 0]] comes from the derivative of R^T.
    """
    rt = rot2(y.theta + z.theta).T
    dt = np.array([x.x - y.x, x.y - y.y])
    s_dt = np.array([dt[1], -dt[0]])

    jx = np.zeros((3, 3))
    jx[:2, :2] = rt
    jx[2, 2] = 1.0

    jy = np.zeros((3, 3))
    jy[:2, :2] = -rt
    jy[:2, 2] = rt @ s_dt
    jy[2, 2] = -1.0
    return jx, jy


def validate_information(info: np.ndarray) -> np.ndarray:
    """Check a 3x3 information matrix (symmetric positive-definite).

    Symmetry is required within 1e-12 relative tolerance; the returned copy
    is exactly symmetrized. Raises InvalidInformationError otherwise.
    """
    m = np.asarray(info, dtype=np.float64)
    if m.shape != (3, 3):
        raise InvalidInformationError(f"expected 3x3 information matrix, got {m.shape}")
    scale = max(np.abs(m).max(), 1.0)
    if np.abs(m - m.T).max() > 1e-12 * scale:
        raise InvalidInformationError("information matrix is not symmetric")
    m = 0.5 * (m + m.T)
    try:
        scipy.linalg.cholesky(m, lower=True)
    except scipy.linalg.LinAlgError as exc:
        raise InvalidInformationError("information matrix is not positive-definite") from exc
    return m


def weighted_cost(e: np.ndarray, info: np.ndarray) -> float:
    """Quadratic form e^T * info * e of an error vector (info validated SPD)."""
    m = validate_information(info)
    e = np.asarray(e, dtype=np.float64)
    return float(e @ m @ e)
