"""Damped least-squares registration of a model cloud against a channel image.

Per iteration the visible subset of the model is recomputed with the depth
buffer, every (point, cue) term is linearized, and the 6x6 system

    (H + lambda I) dx = b,   H = sum w J^T O J,   b = -sum w J^T O e

is solved for the perturbation applied with ``boxplus``. ``b`` carries the
descent sign, so ``dx`` reduces the linearized objective directly.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.linalg

from . import _kernels
from .cloud import ModelCloud, _proj_args, visible_indices
from .cues import Cue, CueKind, DegenerateRangeError, PointAttributes, map_jacobian, map_value
from .geometry import Isometry, boxplus, transform_jacobian
from .imaging import ChannelImage, Pyramid, image_gradient, sample_bilinear
from .projection import DegeneratePointError, Projector, project, projection_jacobian

logger = logging.getLogger(__name__)

_KIND_CODE = {
    CueKind.INTENSITY: _kernels.INTENSITY,
    CueKind.DEPTH: _kernels.DEPTH,
    CueKind.RANGE: _kernels.RANGE,
    CueKind.NORMAL: _kernels.NORMAL,
}
_PARALLEL_MIN_POINTS = 20000


class RegistrationError(RuntimeError):
    pass


class InsufficientInliersError(RegistrationError):
    pass


class SingularSystemError(RegistrationError):
    pass


@dataclass
class SolverConfig:
    cues: tuple = field(default_factory=lambda: (Cue(CueKind.INTENSITY), Cue(CueKind.DEPTH),
                                                 Cue(CueKind.NORMAL)))
    damping: float = 1e3
    max_iterations_per_level: int = 30
    kernel_threshold: float = 1.0
    n_levels: int = 3
    min_inliers: int = 100
    min_relative_improvement: float = 1e-3

    def __post_init__(self):
        self.cues = tuple(c if isinstance(c, Cue) else Cue(CueKind(c)) for c in self.cues)
        if not self.cues:
            raise ValueError("at least one cue is required")
        for name in ("damping", "max_iterations_per_level", "kernel_threshold", "n_levels",
                     "min_inliers"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class SystemStats:
    chi2_total: float
    chi2_inliers: float
    inlier_count: int
    point_count: int

    @property
    def normalized_chi2(self) -> float:
        """Total chi2 over all used points divided by the inlier count."""
        return self.chi2_total / self.inlier_count if self.inlier_count else np.inf


@dataclass
class IterationStats:
    level: int
    iteration: int
    chi2_total: float
    inlier_count: int
    normalized_chi2: float
    damping: float
    step_norm: float


@dataclass
class SolveStats:
    iterations: list = field(default_factory=list)
    transform: Isometry | None = None
    converged: bool = False
    failure: str | None = None
    level_exit: list = field(default_factory=list)

    def iterations_at(self, level: int) -> list:
        return [it for it in self.iterations if it.level == level]

    def to_records(self) -> list[dict]:
        return [asdict(it) for it in self.iterations]


def compute_residual(p: PointAttributes, cue: Cue, X: Isometry, meas: ChannelImage, proj: Projector):
    """``map(X, p) - I(proj(X p))`` for one point and cue; returns ``(e, valid)``."""
    dim = cue.dim
    u, v, _, ok = project(proj, X.apply(p.position))
    if not ok:
        return np.zeros(dim), False
    pred = map_value(cue, X, p)
    if pred is None:
        return np.zeros(dim), False
    z = sample_bilinear(meas, cue.kind, u, v)
    if z is None:
        return np.zeros(dim), False
    return pred - z, True


def assemble_jacobian(p: PointAttributes, cue: Cue, X: Isometry, meas: ChannelImage, proj: Projector):
    """``J_map - J_img J_proj J_tf`` for one point and cue; ``None`` when any factor is invalid."""
    q = X.apply(p.position)
    u, v, _, ok = project(proj, q)
    if not ok:
        return None
    G = image_gradient(meas, cue.kind, u, v)
    if G is None:
        return None
    try:
        J_map = map_jacobian(cue, X, p)
        J_proj = projection_jacobian(proj, q)
    except (DegeneratePointError, DegenerateRangeError):
        return None
    if J_map is None:
        return None
    return J_map - G @ J_proj @ transform_jacobian(q)


def robust_weight(chi2_point: float, kernel_threshold: float) -> float:
    """1 inside the kernel, ``threshold / chi2`` outside."""
    if chi2_point <= kernel_threshold:
        return 1.0
    return kernel_threshold / chi2_point


def worker_count() -> int:
    """Worker threads for accumulation; ``MCREG_THREADS`` caps it (0 or unset = auto)."""
    env = os.environ.get("MCREG_THREADS", "0").strip() or "0"
    n = int(env)
    auto = os.cpu_count() or 1
    return auto if n <= 0 else min(n, auto)


def _packed(img: ChannelImage, cues) -> tuple:
    """Channel data laid out for the kernel, cached on the image.

    ``vg`` interleaves value and gradient per channel column; ``cellok``
    flags the 2x2 cells whose four corners all have valid values and
    gradients, per cue plus a final "any cue" entry.
    """
    key = ("packed",) + tuple(c.kind for c in cues)
    with img._lock:
        hit = img._grad_cache.get(key)
    if hit is not None:
        return hit
    for c in cues:
        if c.kind not in img.data:
            raise ValueError(f"measurement image has no {c.kind.value} channel")
    with img._lock:
        had = set(img._grad_cache)
    offsets = np.cumsum([0] + [c.dim for c in cues]).astype(np.int64)
    vg = np.empty((img.height, img.width, int(offsets[-1]), 3))
    ok = np.empty((img.height, img.width, len(cues)), dtype=bool)
    for i, c in enumerate(cues):
        grad, gmask = img.gradients(c.kind)
        vg[:, :, offsets[i]:offsets[i + 1], 0] = img.values(c.kind)
        vg[:, :, offsets[i]:offsets[i + 1], 1:] = grad
        ok[..., i] = img.mask[c.kind] & gmask
    cellok = np.zeros(ok.shape[:2] + (len(cues) + 1,), dtype=bool)
    cellok[:-1, :-1, :-1] = ok[:-1, :-1] & ok[1:, :-1] & ok[:-1, 1:] & ok[1:, 1:]
    cellok[..., -1] = cellok[..., :-1].any(axis=-1)
    kinds = np.array([_KIND_CODE[c.kind] for c in cues], dtype=np.int64)
    packed = (vg, cellok, kinds, offsets[:-1].copy())
    with img._lock:
        # the per-channel grids are duplicated in vg; drop the ones built here
        for k in set(img._grad_cache) - had:
            del img._grad_cache[k]
        img._grad_cache[key] = packed
    return packed


def _sqrt_omegas(cues) -> np.ndarray:
    """Upper-triangular ``S`` per cue with ``S^T S = Omega``."""
    out = np.zeros((len(cues), 3, 3))
    for i, c in enumerate(cues):
        out[i, : c.dim, : c.dim] = np.linalg.cholesky(c.omega).T
    return out


def _linearize(cloud: ModelCloud, idx, X: Isometry, meas: ChannelImage, proj: Projector, cues,
               kernel_threshold: float, n_workers: int | None = None):
    if (meas.width, meas.height) != (proj.width, proj.height):
        raise ValueError("image and projector sizes differ")
    vg, cellok, kinds, offsets = _packed(meas, cues)
    sqrt_omegas = _sqrt_omegas(cues)
    R = np.ascontiguousarray(X.R)
    t = np.ascontiguousarray(X.t)
    pargs = _proj_args(proj)
    idx = np.ascontiguousarray(idx, dtype=np.int64)
    n = len(idx)
    chi2 = np.zeros(n)
    used = np.zeros(n, dtype=np.int64)
    n_workers = worker_count() if n_workers is None else n_workers
    n_chunks = n_workers if n_workers > 1 and n >= _PARALLEL_MIN_POINTS else 1
    bounds = np.linspace(0, n, n_chunks + 1).astype(int)
    partial_H = np.zeros((n_chunks, 6, 6))
    partial_b = np.zeros((n_chunks, 6))

    def run(k):
        lo, hi = bounds[k], bounds[k + 1]
        _kernels.linearize(idx[lo:hi], cloud.positions, cloud.intensity, cloud.normals, R, t,
                           *pargs, vg, cellok, kinds, offsets, sqrt_omegas,
                           float(kernel_threshold), partial_H[k], partial_b[k],
                           chi2[lo:hi], used[lo:hi])

    if n_chunks == 1:
        run(0)
    else:
        with ThreadPoolExecutor(n_chunks) as pool:
            list(pool.map(run, range(n_chunks)))
    H = np.zeros((6, 6))
    b = np.zeros(6)
    for k in range(n_chunks):
        H += partial_H[k]
        b += partial_b[k]
    ok = used > 0
    inl = ok & (chi2 <= kernel_threshold)
    stats = SystemStats(float(chi2[ok].sum()), float(chi2[inl].sum()), int(inl.sum()),
                        int(ok.sum()))
    return H, b, stats


def build_system(M_vis: ModelCloud, cues, X: Isometry, meas: ChannelImage, proj: Projector,
                 kernel_threshold: float = 1.0, min_inliers: int = 100, n_workers=None):
    """Weighted normal equations over the visible cloud.

    Returns ``(H, b, stats)`` with ``b`` descent-signed. Raises
    :class:`InsufficientInliersError` when fewer than ``min_inliers`` points
    fall inside the robust kernel.
    """
    cues = tuple(c if isinstance(c, Cue) else Cue(CueKind(c)) for c in cues)
    H, b, stats = _linearize(M_vis, np.arange(len(M_vis)), X, meas, proj, cues,
                             kernel_threshold, n_workers)
    if stats.inlier_count < min_inliers:
        raise InsufficientInliersError(
            f"{stats.inlier_count} inliers, {min_inliers} required")
    return H, b, stats


def solve_damped(H, b, damping: float) -> np.ndarray:
    """Solve ``(H + damping I) dx = b`` by Cholesky factorization."""
    A = np.asarray(H, dtype=np.float64) + damping * np.eye(len(b))
    try:
        c = scipy.linalg.cho_factor(A)
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(str(exc)) from exc
    dx = scipy.linalg.cho_solve(c, np.asarray(b, dtype=np.float64))
    if not np.all(np.isfinite(dx)):
        raise SingularSystemError("non-finite solution")
    return dx


def _level_models(model, n_levels: int) -> list:
    if isinstance(model, ModelCloud):
        return [model] * n_levels
    models = list(model)
    if len(models) != n_levels:
        raise ValueError(f"got {len(models)} model clouds for {n_levels} pyramid levels")
    return models


def register(model, meas_pyramid: Pyramid, X0: Isometry, cfg: SolverConfig | None = None,
             n_workers: int | None = None):
    """Coarse-to-fine registration; returns ``(X, stats)``.

    ``model`` is one cloud used at every level, or one cloud per pyramid
    level (coarse to fine). A level stops when the inlier-normalized chi2
    fails to decrease (relative improvement below
    ``cfg.min_relative_improvement``) or after
    ``cfg.max_iterations_per_level`` iterations; the best estimate of the
    level seeds the next one. A failure (too few inliers, singular system)
    ends the solve with ``converged=False`` and the best estimate so far.
    """
    cfg = SolverConfig() if cfg is None else cfg
    if len(meas_pyramid) == 0:
        raise ValueError("empty pyramid")
    if not (np.all(np.isfinite(X0.R)) and np.all(np.isfinite(X0.t))):
        raise ValueError("initial guess must be finite")
    models = _level_models(model, len(meas_pyramid))
    stats = SolveStats()
    X = X0
    for level, ((img, proj), cloud) in enumerate(zip(meas_pyramid.levels, models)):
        best_X, prev = X, np.inf
        exit_reason = "max_iterations"
        try:
            for it in range(cfg.max_iterations_per_level):
                idx = visible_indices(cloud, X, proj)
                H, b, s = _linearize(cloud, idx, X, img, proj, cfg.cues, cfg.kernel_threshold,
                                     n_workers)
                nchi = s.normalized_chi2
                if s.inlier_count < cfg.min_inliers:
                    raise InsufficientInliersError(
                        f"level {level}: {s.inlier_count} inliers, {cfg.min_inliers} required")
                if nchi >= prev * (1.0 - cfg.min_relative_improvement):
                    stats.iterations.append(IterationStats(level, it, s.chi2_total, s.inlier_count,
                                                           nchi, cfg.damping, 0.0))
                    exit_reason = "converged"
                    break
                best_X, prev = X, nchi
                dx = solve_damped(H, b, cfg.damping)
                stats.iterations.append(IterationStats(level, it, s.chi2_total, s.inlier_count,
                                                       nchi, cfg.damping, float(np.linalg.norm(dx))))
                X = boxplus(X, dx)
            else:
                best_X = X
        except RegistrationError as exc:
            logger.warning("registration failed: %s", exc)
            stats.failure = str(exc)
            stats.level_exit.append("failed")
            stats.transform = best_X
            stats.converged = False
            return best_X, stats
        X = best_X
        stats.level_exit.append(exit_reason)
    stats.transform = X
    stats.converged = True
    return X, stats
