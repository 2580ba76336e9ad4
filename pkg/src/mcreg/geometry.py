"""Rigid transforms and the 6-vector perturbation chart used by the solver.

A perturbation is ``(tx, ty, tz, ax, ay, az)``: a translation followed by
three fixed-axis Euler angles. ``v2t`` turns it into an isometry whose
rotation is ``Rx(ax) @ Ry(ay) @ Rz(az)``; ``boxplus`` left-multiplies it onto
the current estimate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ORTHO_TOL = 1e-9
# anything further from SO(3) than this is a caller error, not rounding drift
REJECT_TOL = 1e-6


@dataclass(frozen=True)
class Isometry:
    """Rotation ``R`` (3x3) and translation ``t`` (3,), mapping ``p -> R p + t``."""

    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        R = np.array(self.R, dtype=np.float64).reshape(3, 3)
        t = np.array(self.t, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise ValueError("isometry must be finite")
        if np.max(np.abs(R @ R.T - np.eye(3))) > REJECT_TOL or np.linalg.det(R) <= 0:
            raise ValueError("R is not a rotation matrix")
        R.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)

    @classmethod
    def identity(cls) -> "Isometry":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, T) -> "Isometry":
        T = np.asarray(T, dtype=np.float64)
        if T.shape == (12,):
            T = T.reshape(3, 4)
        if T.shape not in ((3, 4), (4, 4)):
            raise ValueError(f"expected a 3x4 or 4x4 matrix, got shape {T.shape}")
        return cls(T[:3, :3], T[:3, 3])

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.R
        T[:3, 3] = self.t
        return T

    def inverse(self) -> "Isometry":
        Rt = self.R.T
        return Isometry(Rt, -Rt @ self.t)

    def __matmul__(self, other: "Isometry") -> "Isometry":
        if not isinstance(other, Isometry):
            return NotImplemented
        R = self.R @ other.R
        if np.max(np.abs(R @ R.T - np.eye(3))) > ORTHO_TOL:
            R = orthonormalize(R)
        return Isometry(R, self.R @ other.t + self.t)

    def apply(self, points) -> np.ndarray:
        """Transform a single point (3,) or an array of points (N, 3)."""
        points = np.asarray(points, dtype=np.float64)
        return points @ self.R.T + self.t

    def orthogonality_residual(self) -> float:
        return float(np.max(np.abs(self.R @ self.R.T - np.eye(3))))


def rot_x(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def v2t(dx) -> Isometry:
    """Perturbation vector -> isometry with rotation ``Rx Ry Rz``."""
    dx = np.asarray(dx, dtype=np.float64).reshape(6)
    R = rot_x(dx[3]) @ rot_y(dx[4]) @ rot_z(dx[5])
    return Isometry(R, dx[:3])


def t2v(X: Isometry) -> np.ndarray:
    """Inverse of :func:`v2t` for rotations with ``|ay| < pi/2``."""
    R = X.R
    ay = np.arcsin(np.clip(R[0, 2], -1.0, 1.0))
    ax = np.arctan2(-R[1, 2], R[2, 2])
    az = np.arctan2(-R[0, 1], R[0, 0])
    return np.concatenate([X.t, [ax, ay, az]])


def orthonormalize(R: np.ndarray) -> np.ndarray:
    """Closest rotation matrix in the Frobenius sense (polar decomposition)."""
    U, _, Vt = np.linalg.svd(R)
    Q = U @ Vt
    if np.linalg.det(Q) < 0:
        U[:, -1] = -U[:, -1]
        Q = U @ Vt
    return Q


def boxplus(X: Isometry, dx) -> Isometry:
    """``v2t(dx) * X``, re-orthonormalized if rounding has drifted R."""
    Y = v2t(dx) @ X
    if Y.orthogonality_residual() > ORTHO_TOL:
        Y = Isometry(orthonormalize(Y.R), Y.t)
    return Y


def transform_point(X: Isometry, p) -> np.ndarray:
    return X.apply(p)


def skew(v) -> np.ndarray:
    """Cross-product matrix: ``skew(v) @ w == cross(v, w)``."""
    x, y, z = np.asarray(v, dtype=np.float64).reshape(3)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def transform_jacobian(p_transformed) -> np.ndarray:
    """3x6 derivative of ``v2t(x) p`` at ``x = 0``: ``[I | -skew(p)]``.

    ``p_transformed`` is the point already mapped by the current estimate.
    """
    J = np.empty((3, 6))
    J[:, :3] = np.eye(3)
    J[:, 3:] = -skew(p_transformed)
    return J


def rotation_angle(R: np.ndarray) -> float:
    """Angle (radians) of the rotation matrix ``R``."""
    R = np.asarray(R, dtype=np.float64)
    s = np.linalg.norm([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]]) / 2.0
    c = (np.trace(R) - 1.0) / 2.0
    # atan2 keeps precision near 0 where arccos(c) does not
    return float(np.arctan2(s, c))


def random_rotation(rng: np.random.Generator, angle: float | None = None) -> np.ndarray:
    """Random rotation; a uniformly random axis when ``angle`` is given."""
    from scipy.spatial.transform import Rotation

    if angle is None:
        return Rotation.random(random_state=rng).as_matrix()
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return Rotation.from_rotvec(axis * angle).as_matrix()
