"""Multi-cue photometric registration of RGBD frames and LIDAR sweeps."""

from .cloud import ModelCloud, cloud_from_image, compute_visible, estimate_normals, predict_image
from .config import Config, ConfigError, load_config, parse_config
from .cues import Cue, CueKind, PointAttributes
from .datasets import Frame, load_kitti_velodyne, load_tum_frame
from .geometry import Isometry, boxplus, v2t
from .imaging import ChannelImage, Pyramid, build_pyramid
from .odometry import run_odometry
from .projection import Projector, ProjectionModel, pinhole, spherical
from .solver import (InsufficientInliersError, RegistrationError, SolveStats, SolverConfig,
                     build_system, register, solve_damped)
from .trajectory import Trajectory, read_trajectory, relative_pose_error, write_trajectory

__all__ = [
    "ChannelImage", "Config", "ConfigError", "Cue", "CueKind", "Frame", "InsufficientInliersError",
    "Isometry", "ModelCloud", "MultiCueRegistration", "PointAttributes", "ProjectionModel",
    "Projector", "Pyramid", "RegistrationError", "SolveStats", "SolverConfig", "Trajectory",
    "boxplus", "build_pyramid", "build_system", "cloud_from_image", "compute_visible",
    "estimate_normals", "load_config", "load_kitti_velodyne", "load_tum_frame", "parse_config",
    "pinhole", "predict_image", "read_trajectory", "register", "relative_pose_error",
    "run_odometry", "solve_damped", "spherical", "v2t", "write_trajectory",
]


def __getattr__(name):
    # scikit-learn is heavy to import; load the estimator wrapper on first use
    if name == "MultiCueRegistration":
        from .estimator import MultiCueRegistration

        return MultiCueRegistration
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
