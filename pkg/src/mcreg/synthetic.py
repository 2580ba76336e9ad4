"""Analytic box scenes rendered by ray casting, for ground-truth experiments.

A scene is an optional enclosing box seen from the inside (walls, floor,
ceiling) plus solid boxes seen from the outside. Intensity is a smooth
texture evaluated at the hit point in world coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cloud import estimate_normals
from .cues import CueKind
from .geometry import Isometry, random_rotation
from .imaging import ChannelImage
from .projection import ProjectionModel, Projector, unproject


@dataclass(frozen=True)
class Box:
    lo: tuple
    hi: tuple
    shade: float = 0.0


@dataclass(frozen=True)
class Scene:
    name: str
    room: Box | None = None
    objects: tuple = field(default_factory=tuple)


def texture(P: np.ndarray, shade) -> np.ndarray:
    x, y, z = P[..., 0], P[..., 1], P[..., 2]
    val = (0.5 + 0.18 * np.sin(2.3 * x + 0.4) * np.cos(1.9 * y + 0.2)
           + 0.14 * np.sin(1.7 * z + 2.1 * y) + 0.1 * np.sin(3.3 * x - 2.9 * z + 1.0))
    return np.clip(val + shade, 0.0, 1.0)


def room_scene() -> Scene:
    return Scene("room", Box((-3.0, -1.5, -2.0), (3.0, 1.5, 4.0)), (
        Box((-2.6, 0.4, 2.0), (-1.2, 1.5, 3.4), 0.1),
        Box((0.7, -0.3, 1.6), (2.1, 1.5, 3.0), -0.12),
        Box((-0.5, 0.9, 0.9), (0.4, 1.5, 1.7), 0.05),
        Box((-1.0, -1.5, 3.0), (0.2, -0.6, 3.6), -0.05),
    ))


def plane_scene() -> Scene:
    return Scene("plane", None, (Box((-6.0, -4.0, 3.0), (6.0, 4.0, 3.2)),))


def corridor_scene() -> Scene:
    return Scene("corridor", Box((-1.0, -1.2, -3.0), (1.0, 1.2, 25.0)), (
        Box((0.6, 0.4, 4.0), (1.0, 1.2, 5.0), 0.1),
        Box((-1.0, -0.2, 7.0), (-0.7, 1.2, 7.6), -0.1),
    ))


SCENES = {"room": room_scene, "plane": plane_scene, "corridor": corridor_scene}


def _slabs(box: Box, o, d):
    lo = np.asarray(box.lo, dtype=np.float64)
    hi = np.asarray(box.hi, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        t1 = (lo - o) * inv
        t2 = (hi - o) * inv
    return np.minimum(t1, t2), np.maximum(t1, t2)


def raycast(scene: Scene, origin, dirs):
    """Nearest hit distance (in units of ``dirs``), face normal and intensity per ray."""
    n = len(dirs)
    best = np.full(n, np.inf)
    normal = np.zeros((n, 3))
    shade = np.zeros(n)
    rows = np.arange(n)
    if scene.room is not None:
        tmin, tmax = _slabs(scene.room, origin, dirs)
        far = np.nan_to_num(tmax, nan=np.inf, posinf=np.inf)
        axis = np.argmin(far, axis=1)
        t = far[rows, axis]
        hit = np.isfinite(t) & (t > 0)
        best[hit] = t[hit]
        normal[rows[hit], axis[hit]] = -np.sign(dirs[rows[hit], axis[hit]])
        shade[hit] = scene.room.shade
    for box in scene.objects:
        tmin, tmax = _slabs(box, origin, dirs)
        near = np.nan_to_num(tmin, nan=-np.inf, neginf=-np.inf)
        axis = np.argmax(near, axis=1)
        t_in = near[rows, axis]
        t_out = np.nan_to_num(tmax, nan=np.inf).min(axis=1)
        hit = (t_in > 1e-9) & (t_in <= t_out) & (t_in < best)
        best[hit] = t_in[hit]
        normal[hit] = 0.0
        normal[rows[hit], axis[hit]] = -np.sign(dirs[rows[hit], axis[hit]])
        shade[hit] = box.shade
    P = origin + best[:, None] * dirs
    inten = np.where(np.isfinite(best), texture(np.nan_to_num(P), shade), np.nan)
    return best, normal, inten


def render(scene: Scene, X: Isometry, proj: Projector, with_intensity=True,
           normals="estimated") -> ChannelImage:
    """Channel image seen by a sensor whose pose maps world points into its frame by ``X``.

    Gives depth (pinhole) or range (spherical), intensity, and normals either
    estimated from the geometry, as real data would be, or taken from the
    analytic face normals (``normals="analytic"``).
    """
    vv, uu = np.mgrid[0:proj.height, 0:proj.width].astype(np.float64)
    d_cam = unproject(proj, uu, vv, np.ones_like(uu)).reshape(-1, 3)
    Xi = X.inverse()
    dirs = d_cam @ Xi.R.T
    origin = Xi.t
    g, n_world, inten = raycast(scene, origin, dirs)
    in_gate = np.isfinite(g) & (g >= proj.min_gate) & (g <= proj.max_gate)
    g = np.where(in_gate, g, np.nan).reshape(proj.height, proj.width)
    inten = np.where(in_gate, inten, np.nan).reshape(proj.height, proj.width)
    geo = "depth" if proj.model is ProjectionModel.PINHOLE else "range"
    kw = {geo: g}
    if with_intensity:
        kw["intensity"] = inten
    img = ChannelImage.from_arrays(**kw)
    if normals == "analytic":
        n_cam = (n_world @ X.R.T).reshape(proj.height, proj.width, 3)
        n_cam[~in_gate.reshape(proj.height, proj.width)] = np.nan
    elif normals == "estimated":
        n_cam, _ = estimate_normals(img, proj)
    else:
        return img
    ok = np.all(np.isfinite(n_cam), axis=-1)
    return img.with_channels({CueKind.NORMAL: np.nan_to_num(n_cam)}, {CueKind.NORMAL: ok})


def perturb(X: Isometry, rng: np.random.Generator, trans: float, rot_deg: float) -> Isometry:
    """``X`` moved by exactly ``trans`` metres and ``rot_deg`` degrees along random axes."""
    d = rng.normal(size=3)
    d *= trans / np.linalg.norm(d)
    D = Isometry(random_rotation(rng, np.radians(rot_deg)), d)
    return D @ X


def pose_error(X_est: Isometry, X_gt: Isometry):
    """Translation (m) and rotation (deg) of ``X_est X_gt^-1``."""
    from .geometry import rotation_angle

    E = X_est @ X_gt.inverse()
    return float(np.linalg.norm(E.t)), float(np.degrees(rotation_angle(E.R)))


BENCH_POSE = (0.03, -0.02, 0.05, 0.02, -0.03, 0.01)


def bench_projector() -> Projector:
    """256x192 pinhole camera: about 50k model points at full resolution."""
    from .projection import pinhole

    return pinhole(fx=210.0, fy=210.0, cx=127.5, cy=95.5, width=256, height=192,
                   min_gate=0.1, max_gate=20.0)


@dataclass(frozen=True, eq=False)
class BenchProblem:
    """Model clouds rendered at the identity and a target pyramid rendered at ``X_gt``."""

    models: list
    pyramid: object
    X_gt: Isometry


def bench_problem(scene: Scene, proj: Projector, n_levels: int = 3, X_gt: Isometry | None = None,
                  normals="estimated") -> BenchProblem:
    from .cloud import cloud_from_image
    from .geometry import v2t
    from .imaging import build_pyramid

    X_gt = v2t(BENCH_POSE) if X_gt is None else X_gt
    mp = build_pyramid(render(scene, Isometry.identity(), proj, normals=normals), proj, n_levels)
    models = [cloud_from_image(img, p) for img, p in mp.levels]
    pyr = build_pyramid(render(scene, X_gt, proj, normals=normals), proj, n_levels)
    return BenchProblem(models, pyr, X_gt)


def run_trials(problem: BenchProblem, cfg, n_trials: int, trans: float, rot_deg: float,
               seed: int = 0, trans_tol: float = 1e-3, rot_tol_deg: float = 0.1):
    """Register from ``n_trials`` random perturbations of the true pose.

    Yields one dict per trial with the pose errors and whether it succeeded.
    """
    import time

    from .solver import register

    rng = np.random.default_rng(seed)
    for k in range(n_trials):
        X0 = perturb(problem.X_gt, rng, trans, rot_deg)
        t0 = time.perf_counter()
        X, stats = register(problem.models, problem.pyramid, X0, cfg)
        dt = time.perf_counter() - t0
        te, re = pose_error(X, problem.X_gt)
        yield {"trial": k, "success": bool(te < trans_tol and re < rot_tol_deg),
               "trans_err": te, "rot_err_deg": re, "iterations": len(stats.iterations),
               "converged": stats.converged, "seconds": dt}
