"""Pinhole and spherical projection models.

``project`` and ``unproject`` accept a single point or an ``(N, 3)`` array.
The gate value ``g`` is the depth (z) for the pinhole model and the range
(Euclidean norm) for the spherical model.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum

import numpy as np


class DegeneratePointError(ValueError):
    """A point where the projection (or its derivative) is undefined."""


class ProjectionModel(str, Enum):
    PINHOLE = "pinhole"
    SPHERICAL = "spherical"


@dataclass(frozen=True)
class CameraMatrix:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if self.fx == 0 or self.fy == 0:
            raise ValueError("fx and fy must be non-zero")

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class Projector:
    model: ProjectionModel
    K: CameraMatrix
    width: int
    height: int
    min_gate: float = 0.0
    max_gate: float = np.inf

    def __post_init__(self):
        object.__setattr__(self, "model", ProjectionModel(self.model))
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image size must be positive")
        if not 0 <= self.min_gate < self.max_gate:
            raise ValueError("gates must satisfy 0 <= min_gate < max_gate")

    @property
    def shape(self) -> tuple[int, int]:
        return self.height, self.width

    def downsampled(self) -> "Projector":
        """Projector for an image with half the resolution (pixel-centre convention)."""
        K = self.K
        K2 = CameraMatrix(K.fx / 2, K.fy / 2, (K.cx + 0.5) / 2 - 0.5, (K.cy + 0.5) / 2 - 0.5)
        return replace(self, K=K2, width=self.width // 2, height=self.height // 2)

    def cropped(self, width: int, height: int) -> "Projector":
        """Crop pixels off the right/bottom edges; intrinsics are unchanged."""
        return replace(self, width=width, height=height)


def pinhole(fx=525.0, fy=525.0, cx=319.5, cy=239.5, width=640, height=480,
            min_gate=0.1, max_gate=10.0) -> Projector:
    """Pinhole projector; the defaults are the usual Kinect/TUM freiburg1 values."""
    return Projector(ProjectionModel.PINHOLE, CameraMatrix(fx, fy, cx, cy), width, height,
                     min_gate, max_gate)


def spherical(width=870, height=64, fov_up_deg=2.1, fov_down_deg=-24.9,
              min_gate=0.5, max_gate=120.0) -> Projector:
    """Spherical projector covering a full azimuth turn.

    Defaults fit a Velodyne HDL-64E sweep into an 870x64 range image.
    """
    fx = width / (2 * np.pi)
    fy = height / np.radians(fov_up_deg - fov_down_deg)
    cx = width / 2
    cy = -fy * np.radians(fov_down_deg)
    return Projector(ProjectionModel.SPHERICAL, CameraMatrix(fx, fy, cx, cy), width, height,
                     min_gate, max_gate)


def project(proj: Projector, p):
    """Project sensor-frame point(s).

    Returns ``(u, v, g, valid)``; scalars for a single point, arrays otherwise.
    A point is invalid when ``g`` is outside the gates, the pixel falls outside
    ``[0, width) x [0, height)``, or (pinhole) the point is not in front of
    the camera.
    """
    p = np.asarray(p, dtype=np.float64)
    single = p.ndim == 1
    P = np.atleast_2d(p)
    x, y, z = P[:, 0], P[:, 1], P[:, 2]
    K = proj.K
    with np.errstate(divide="ignore", invalid="ignore"):
        if proj.model is ProjectionModel.PINHOLE:
            u = K.fx * x / z + K.cx
            v = K.fy * y / z + K.cy
            g = z.copy()
            front = z > 0
        else:
            u = K.fx * np.arctan2(y, x) + K.cx
            v = K.fy * np.arctan2(z, np.hypot(x, y)) + K.cy
            g = np.sqrt(x * x + y * y + z * z)
            front = g > 0
        valid = (front & (g >= proj.min_gate) & (g <= proj.max_gate)
                 & (u >= 0) & (u < proj.width) & (v >= 0) & (v < proj.height))
    if single:
        return float(u[0]), float(v[0]), float(g[0]), bool(valid[0])
    return u, v, g, valid


def unproject(proj: Projector, u, v, g) -> np.ndarray:
    """Inverse of :func:`project` for pixel coordinates and gate value(s)."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if np.any(g <= 0):
        raise ValueError("gate value must be positive")
    K = proj.K
    if proj.model is ProjectionModel.PINHOLE:
        x = (u - K.cx) / K.fx * g
        y = (v - K.cy) / K.fy * g
        z = g
    else:
        az = (u - K.cx) / K.fx
        el = (v - K.cy) / K.fy
        ce = np.cos(el)
        x = g * ce * np.cos(az)
        y = g * ce * np.sin(az)
        z = g * np.sin(el)
    return np.stack(np.broadcast_arrays(x, y, z), axis=-1)


def projection_jacobian(proj: Projector, p) -> np.ndarray:
    """2x3 derivative of the pixel coordinates with respect to the point."""
    x, y, z = np.asarray(p, dtype=np.float64).reshape(3)
    K = proj.K
    if proj.model is ProjectionModel.PINHOLE:
        Kp = proj.K.matrix() @ np.array([x, y, z])
        if Kp[2] <= 0:
            raise DegeneratePointError("point behind the camera")
        a, b, c = Kp
        J = np.array([[c, 0.0, -a], [0.0, c, -b]]) / (c * c)
        return J @ proj.K.matrix()
    a2sq = x * x + y * y
    if a2sq <= 0:
        raise DegeneratePointError("point on the spherical pole axis")
    a2 = np.sqrt(a2sq)
    r2 = a2sq + z * z
    return np.array([
        [-y / a2sq * K.fx, x / a2sq * K.fx, 0.0],
        [-x * z / a2 / r2 * K.fy, -y * z / a2 / r2 * K.fy, a2 / r2 * K.fy],
    ])
