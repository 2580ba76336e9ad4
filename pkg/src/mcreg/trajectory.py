"""Timestamped pose sequences, TUM/KITTI text formats and the relative pose error."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from .geometry import Isometry, orthonormalize, rotation_angle

KITTI_PERIOD = 0.1
ASSOCIATION_TOL = 0.02


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Poses in a fixed world frame, each mapping sensor coordinates into the world.

    ``flags`` marks poses whose incoming registration failed (odometry output).
    """

    timestamps: np.ndarray
    poses: tuple
    flags: np.ndarray | None = field(default=None)

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype=np.float64).reshape(-1)
        poses = tuple(self.poses)
        if len(ts) != len(poses):
            raise ValueError("timestamps and poses differ in length")
        if np.any(np.diff(ts) <= 0):
            raise ValueError("timestamps must be strictly increasing")
        flags = (np.zeros(len(ts), dtype=bool) if self.flags is None
                 else np.asarray(self.flags, dtype=bool).reshape(len(ts)))
        ts.flags.writeable = False
        flags.flags.writeable = False
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "poses", poses)
        object.__setattr__(self, "flags", flags)

    def __len__(self) -> int:
        return len(self.poses)

    def transformed(self, G: Isometry) -> "Trajectory":
        """Same motion expressed in another world frame: every pose becomes ``G P``."""
        return Trajectory(self.timestamps, [G @ P for P in self.poses], self.flags)


def _fmt(x: float) -> str:
    # +0.0 turns a rounded -0.0 into 0.0 so no "-0.000000" is written
    return f"{round(float(x), 6) + 0.0:.6f}"


def pose_to_tum(P: Isometry) -> np.ndarray:
    """``tx ty tz qx qy qz qw`` with ``qw >= 0``."""
    q = Rotation.from_matrix(P.R).as_quat()
    if q[3] < 0:
        q = -q
    return np.concatenate([P.t, q])


def tum_to_pose(row) -> Isometry:
    row = np.asarray(row, dtype=np.float64)
    q = row[3:7]
    n = np.linalg.norm(q)
    if not n > 0:
        raise ValueError("zero quaternion")
    return Isometry(orthonormalize(Rotation.from_quat(q / n).as_matrix()), row[:3])


def write_trajectory(traj: Trajectory, path) -> None:
    """TUM format: ``timestamp tx ty tz qx qy qz qw`` per line, 6 decimals."""
    with open(path, "w") as f:
        for ts, P in zip(traj.timestamps, traj.poses):
            f.write(" ".join(_fmt(x) for x in (ts, *pose_to_tum(P))) + "\n")


def read_trajectory(path) -> Trajectory:
    """Read a TUM-format trajectory; ``#`` comment lines are skipped."""
    ts, poses = [], []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        tok = line.replace(",", " ").split()
        if len(tok) != 8:
            raise ValueError(f"{path}:{lineno}: expected 8 values, got {len(tok)}")
        vals = [float(x) for x in tok]
        ts.append(vals[0])
        poses.append(tum_to_pose(vals[1:]))
    return Trajectory(ts, poses)


def read_kitti_poses(path, period: float = KITTI_PERIOD) -> Trajectory:
    """KITTI pose file: 12 row-major floats of a 3x4 matrix per line, one line per scan.

    Timestamps are synthesized as ``i * period``.
    """
    rows = np.loadtxt(path, ndmin=2)
    if rows.shape[1] != 12:
        raise ValueError(f"{path}: expected 12 values per line")
    poses = [Isometry(orthonormalize(r.reshape(3, 4)[:, :3]), r.reshape(3, 4)[:, 3]) for r in rows]
    return Trajectory(np.arange(len(poses)) * period, poses)


def write_kitti_poses(traj: Trajectory, path) -> None:
    with open(path, "w") as f:
        for P in traj.poses:
            f.write(" ".join(f"{x:.9g}" for x in P.matrix()[:3].ravel()) + "\n")


def nearest_index(stamps: np.ndarray, t: float, tol: float):
    """Index of the stamp nearest to ``t`` if within ``tol``, else ``None``."""
    if len(stamps) == 0:
        return None
    k = int(np.searchsorted(stamps, t))
    best = None
    for j in (k - 1, k):
        if 0 <= j < len(stamps) and (best is None or abs(stamps[j] - t) < abs(stamps[best] - t)):
            best = j
    return best if abs(stamps[best] - t) <= tol else None


def rpe_errors(est: Trajectory, gt: Trajectory, delta: float, tol: float = ASSOCIATION_TOL):
    """Per-interval translation (m) and rotation (rad) errors over intervals of ``delta`` s.

    For every estimated pose ``i`` the estimated pose ``j`` nearest to
    ``t_i + delta`` is paired with it (within ``tol``); both are associated
    with ground-truth poses by nearest timestamp (within ``tol``), and
    ``E = (Q_i^-1 Q_j)^-1 (P_i^-1 P_j)``.
    """
    if not delta > 0:
        raise ValueError("delta must be positive")
    ts = est.timestamps
    trans, rot = [], []
    for i, t in enumerate(ts):
        j = nearest_index(ts, t + delta, tol)
        if j is None or j <= i:
            continue
        gi = nearest_index(gt.timestamps, t, tol)
        gj = nearest_index(gt.timestamps, ts[j], tol)
        if gi is None or gj is None:
            continue
        d_est = est.poses[i].inverse() @ est.poses[j]
        d_gt = gt.poses[gi].inverse() @ gt.poses[gj]
        E = d_gt.inverse() @ d_est
        trans.append(np.linalg.norm(E.t))
        rot.append(rotation_angle(E.R))
    return np.asarray(trans), np.asarray(rot)


def relative_pose_error(est: Trajectory, gt: Trajectory, delta: float = 1.0,
                        tol: float = ASSOCIATION_TOL):
    """RMSE of the relative pose error per second: ``(m/s, deg/s)``.

    Errors of each interval are divided by ``delta``; no alignment is applied.
    """
    trans, rot = rpe_errors(est, gt, delta, tol)
    if len(trans) == 0:
        raise ValueError("no overlapping intervals between the trajectories")
    rmse_t = float(np.sqrt(np.mean(trans ** 2))) / delta
    rmse_r = float(np.degrees(np.sqrt(np.mean(rot ** 2)))) / delta
    return rmse_t, rmse_r
