"""Cue mapping functions and their Jacobians.

A cue turns a model point and a candidate transform into the value the
measurement image should show where the point lands: its intensity
(unchanged by the transform), its depth or range, or its rotated normal.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .geometry import Isometry, skew, transform_jacobian

RANGE_EPS = 1e-6


class DegenerateRangeError(ValueError):
    pass


class CueKind(str, Enum):
    INTENSITY = "intensity"
    DEPTH = "depth"
    RANGE = "range"
    NORMAL = "normal"

    @property
    def dim(self) -> int:
        return 3 if self is CueKind.NORMAL else 1

    @property
    def geometric(self) -> bool:
        return self in (CueKind.DEPTH, CueKind.RANGE)


DEFAULT_OMEGA = {
    CueKind.INTENSITY: 1.0,
    CueKind.DEPTH: 5.0,
    CueKind.RANGE: 5.0,
    CueKind.NORMAL: 1.0,
}


@dataclass(frozen=True)
class Cue:
    """A registered channel and its information matrix."""

    kind: CueKind
    omega: np.ndarray = field(default=None)

    def __post_init__(self):
        kind = CueKind(self.kind)
        object.__setattr__(self, "kind", kind)
        omega = DEFAULT_OMEGA[kind] if self.omega is None else self.omega
        omega = np.asarray(omega, dtype=np.float64)
        if omega.ndim == 0:
            omega = omega * np.eye(kind.dim)
        omega = omega.reshape(kind.dim, kind.dim)
        if not np.allclose(omega, omega.T):
            raise ValueError(f"{kind.value}: information matrix must be symmetric")
        if np.any(np.linalg.eigvalsh(omega) <= 0):
            raise ValueError(f"{kind.value}: information matrix must be positive definite")
        omega.flags.writeable = False
        object.__setattr__(self, "omega", omega)

    @property
    def dim(self) -> int:
        return self.kind.dim


def default_cues(*kinds) -> list[Cue]:
    return [Cue(CueKind(k)) for k in kinds]


@dataclass(frozen=True)
class PointAttributes:
    """A model point; ``None`` marks a missing intensity or normal."""

    position: np.ndarray
    intensity: float | None = None
    normal: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=np.float64).reshape(3))
        if self.normal is not None:
            n = np.asarray(self.normal, dtype=np.float64).reshape(3)
            if abs(np.linalg.norm(n) - 1.0) > 1e-6:
                raise ValueError("normal must have unit length")
            object.__setattr__(self, "normal", n)


def map_value(cue: Cue, X: Isometry, p: PointAttributes):
    """Predicted channel value of ``p`` under ``X``; ``None`` if the point lacks the attribute."""
    kind = cue.kind
    if kind is CueKind.INTENSITY:
        return None if p.intensity is None else np.array([float(p.intensity)])
    if kind is CueKind.NORMAL:
        return None if p.normal is None else X.R @ p.normal
    q = X.apply(p.position)
    if kind is CueKind.DEPTH:
        return q[2:3].copy()
    return np.array([np.linalg.norm(q)])


def map_jacobian(cue: Cue, X: Isometry, p: PointAttributes):
    """dim x 6 derivative of ``map_value(cue, X (+) x, p)`` at ``x = 0``.

    Returns ``None`` when the point lacks the attribute; raises
    :class:`DegenerateRangeError` for a range cue at the sensor origin.
    """
    kind = cue.kind
    if kind is CueKind.INTENSITY:
        return None if p.intensity is None else np.zeros((1, 6))
    if kind is CueKind.NORMAL:
        if p.normal is None:
            return None
        J = np.zeros((3, 6))
        J[:, 3:] = -skew(X.R @ p.normal)
        return J
    q = X.apply(p.position)
    J_tf = transform_jacobian(q)
    if kind is CueKind.DEPTH:
        return J_tf[2:3].copy()
    r = np.linalg.norm(q)
    if r <= RANGE_EPS:
        raise DegenerateRangeError("point at the sensor origin")
    return (q / r)[None, :] @ J_tf
