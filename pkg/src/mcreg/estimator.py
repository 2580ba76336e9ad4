"""scikit-learn style wrapper around :func:`mcreg.solver.register`."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .cloud import ModelCloud, cloud_from_image
from .cues import Cue, CueKind
from .geometry import Isometry
from .imaging import ChannelImage, Pyramid, build_pyramid
from .projection import Projector
from .solver import SolverConfig, register


def check_isometry(X) -> Isometry:
    """Accept an Isometry, a 3x4/4x4 matrix or 12 row-major floats."""
    if X is None:
        return Isometry.identity()
    if isinstance(X, Isometry):
        return X
    M = np.asarray(X, dtype=np.float64)
    if not np.all(np.isfinite(M)):
        raise ValueError("transform must be finite")
    return Isometry.from_matrix(M)


def check_points(points) -> np.ndarray:
    P = np.asarray(points, dtype=np.float64)
    if P.ndim == 1 and P.shape[0] == 3:
        return P
    if P.ndim != 2 or P.shape[1] != 3:
        raise ValueError(f"expected (N, 3) points, got shape {P.shape}")
    if not np.all(np.isfinite(P)):
        raise ValueError("points must be finite")
    return P


def check_image(img, proj: Projector) -> ChannelImage:
    if not isinstance(img, ChannelImage):
        raise TypeError(f"expected a ChannelImage, got {type(img).__name__}")
    if not isinstance(proj, Projector):
        raise TypeError(f"expected a Projector, got {type(proj).__name__}")
    if (img.width, img.height) != (proj.width, proj.height):
        raise ValueError("image and projector sizes differ")
    return img


class MultiCueRegistration(BaseEstimator):
    """Register a model (cloud or channel image) against a target channel image.

    ``fit(model, target, projector=..., init=...)`` runs the coarse-to-fine
    solve and sets ``transform_`` (model frame to target sensor frame),
    ``stats_`` and ``converged_``. ``transform(points)`` maps model points
    with the fitted transform.

    When ``model`` is a ChannelImage it is turned into one cloud per
    pyramid level using the same projector.
    """

    def __init__(self, cues=("intensity", "depth", "normal"), omegas=None, damping=1e3,
                 max_iterations_per_level=30, kernel_threshold=1.0, n_levels=3,
                 min_inliers=100, min_relative_improvement=1e-3, n_workers=None):
        self.cues = cues
        self.omegas = omegas
        self.damping = damping
        self.max_iterations_per_level = max_iterations_per_level
        self.kernel_threshold = kernel_threshold
        self.n_levels = n_levels
        self.min_inliers = min_inliers
        self.min_relative_improvement = min_relative_improvement
        self.n_workers = n_workers

    def solver_config(self) -> SolverConfig:
        omegas = self.omegas or {}
        cues = tuple(Cue(CueKind(k), omegas.get(CueKind(k).value)) for k in self.cues)
        return SolverConfig(cues, float(self.damping), int(self.max_iterations_per_level),
                            float(self.kernel_threshold), int(self.n_levels),
                            int(self.min_inliers), float(self.min_relative_improvement))

    def fit(self, model, target, projector: Projector | None = None, init=None):
        cfg = self.solver_config()
        if isinstance(target, Pyramid):
            pyr = target
        else:
            if projector is None:
                raise ValueError("projector is required for a ChannelImage target")
            pyr = build_pyramid(check_image(target, projector), projector, cfg.n_levels)
        if isinstance(model, ChannelImage):
            src_proj = projector if projector is not None else pyr.finest[1]
            mp = build_pyramid(check_image(model, src_proj), src_proj, cfg.n_levels)
            model = [cloud_from_image(img, p) for img, p in mp.levels]
        elif not isinstance(model, ModelCloud):
            model = list(model)
            if not all(isinstance(m, ModelCloud) for m in model):
                raise TypeError("model must be a ModelCloud, a ChannelImage or a list of clouds")
        X, stats = register(model, pyr, check_isometry(init), cfg, self.n_workers)
        self.transform_ = X
        self.stats_ = stats
        self.converged_ = stats.converged
        self.n_iter_ = len(stats.iterations)
        return self

    def _check_fitted(self):
        if not hasattr(self, "transform_"):
            raise NotFittedError("call fit() first")

    def transform(self, points) -> np.ndarray:
        self._check_fitted()
        return self.transform_.apply(check_points(points))

    def inverse_transform(self, points) -> np.ndarray:
        self._check_fitted()
        return self.transform_.inverse().apply(check_points(points))
