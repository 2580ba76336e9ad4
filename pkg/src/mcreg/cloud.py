"""Model clouds: construction from images, normal estimation, visibility."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _kernels
from .cues import CueKind, PointAttributes
from .geometry import Isometry
from .imaging import ChannelImage
from .projection import ProjectionModel, Projector, unproject

NORMAL_MIN_CROSS = 1e-8


@dataclass(frozen=True, eq=False)
class ModelCloud:
    """Points with optional per-point intensity and normal.

    Stored column-wise; a NaN intensity or a NaN normal row marks the
    attribute as missing for that point.
    """

    positions: np.ndarray
    intensity: np.ndarray | None = None
    normals: np.ndarray | None = None

    def __post_init__(self):
        P = np.ascontiguousarray(self.positions, dtype=np.float64).reshape(-1, 3)
        n = len(P)
        inten = (np.full(n, np.nan) if self.intensity is None
                 else np.ascontiguousarray(self.intensity, dtype=np.float64).reshape(n))
        normals = (np.full((n, 3), np.nan) if self.normals is None
                   else np.ascontiguousarray(self.normals, dtype=np.float64).reshape(n, 3))
        if not np.all(np.isfinite(P)):
            raise ValueError("point positions must be finite")
        bad = np.any(np.isnan(normals), axis=1)
        normals = normals.copy()
        normals[bad] = np.nan
        for arr in (P, inten, normals):
            arr.flags.writeable = False
        object.__setattr__(self, "positions", P)
        object.__setattr__(self, "intensity", inten)
        object.__setattr__(self, "normals", normals)

    def __len__(self) -> int:
        return len(self.positions)

    def __getitem__(self, i) -> PointAttributes:
        inten = self.intensity[i]
        n = self.normals[i]
        return PointAttributes(self.positions[i],
                               None if np.isnan(inten) else float(inten),
                               None if np.isnan(n[0]) else n)

    def subset(self, idx) -> "ModelCloud":
        return ModelCloud(self.positions[idx], self.intensity[idx], self.normals[idx])

    @classmethod
    def from_points(cls, points) -> "ModelCloud":
        points = list(points)
        P = np.array([p.position for p in points]).reshape(-1, 3)
        inten = np.array([np.nan if p.intensity is None else p.intensity for p in points])
        normals = np.array([np.full(3, np.nan) if p.normal is None else p.normal
                            for p in points]).reshape(-1, 3)
        return cls(P, inten, normals)

    def transformed(self, X: Isometry) -> "ModelCloud":
        return ModelCloud(X.apply(self.positions), self.intensity, self.normals @ X.R.T)


def point_map(img: ChannelImage, proj: Projector):
    """Unprojected pixel centres ``(H, W, 3)`` and their validity."""
    kind = img.geometric_channel
    if kind is None:
        raise ValueError("image has no depth or range channel")
    g = img.data[kind]
    m = img.mask[kind]
    vv, uu = np.mgrid[0:img.height, 0:img.width].astype(np.float64)
    P = unproject(proj, uu, vv, np.where(m, g, 1.0))
    P[~m] = np.nan
    return P, m


def estimate_normals(img: ChannelImage, proj: Projector, P=None):
    """Per-pixel unit normals from the cross product of central-difference tangents.

    Returns ``(normals (H, W, 3), valid (H, W))``. Normals face the sensor.
    A pixel is invalid on the border, next to an invalid pixel, when its
    depth/range neighbourhood spreads beyond the discontinuity threshold, or
    when the tangents are (nearly) parallel.
    """
    if P is None:
        P, m = point_map(img, proj)
    else:
        m = np.all(np.isfinite(P), axis=-1)
    kind = img.geometric_channel
    g = img.data[kind]
    H, W = m.shape
    normals = np.full((H, W, 3), np.nan)
    valid = np.zeros((H, W), dtype=bool)
    if H < 3 or W < 3:
        return normals, valid
    du = P[1:-1, 2:] - P[1:-1, :-2]
    dv = P[2:, 1:-1] - P[:-2, 1:-1]
    n = np.cross(du, dv)
    norm = np.linalg.norm(n, axis=-1)
    stack = np.stack([g[1:-1, 1:-1], g[1:-1, 2:], g[1:-1, :-2], g[2:, 1:-1], g[:-2, 1:-1]])
    ok = (m[1:-1, 1:-1] & m[1:-1, 2:] & m[1:-1, :-2] & m[2:, 1:-1] & m[:-2, 1:-1])
    with np.errstate(invalid="ignore"):
        ok &= (stack.max(axis=0) - stack.min(axis=0)) <= img.discontinuity_threshold
        ok &= norm >= NORMAL_MIN_CROSS
        n = n / np.where(ok, norm, 1.0)[..., None]
        flip = np.sum(n * P[1:-1, 1:-1], axis=-1) > 0
    n[flip] = -n[flip]
    n[~ok] = np.nan
    normals[1:-1, 1:-1] = n
    valid[1:-1, 1:-1] = ok
    return normals, valid


def cloud_from_image(img: ChannelImage, proj: Projector) -> ModelCloud:
    """One model point per valid depth/range pixel, in raster order.

    Intensity is copied when the image has it. Normals come from the
    image's normal channel when present, otherwise from
    :func:`estimate_normals`.
    """
    P, m = point_map(img, proj)
    if CueKind.NORMAL in img.data:
        normals = np.where(img.mask[CueKind.NORMAL][..., None], img.data[CueKind.NORMAL], np.nan)
    else:
        normals, _ = estimate_normals(img, proj, P)
    if CueKind.INTENSITY in img.data:
        inten = np.where(img.mask[CueKind.INTENSITY], img.data[CueKind.INTENSITY], np.nan)
    else:
        inten = None
    sel = m.ravel()
    return ModelCloud(P.reshape(-1, 3)[sel],
                      None if inten is None else inten.ravel()[sel],
                      normals.reshape(-1, 3)[sel])


@dataclass(frozen=True, eq=False)
class DepthBuffer:
    """Nearest gate value per cell (inf when empty) and the winning point's index (-1)."""

    depth: np.ndarray
    index: np.ndarray

    @property
    def width(self) -> int:
        return self.depth.shape[1]

    @property
    def height(self) -> int:
        return self.depth.shape[0]


def _proj_args(proj: Projector):
    K = proj.K
    code = _kernels.PINHOLE if proj.model is ProjectionModel.PINHOLE else _kernels.SPHERICAL
    return (code, float(K.fx), float(K.fy), float(K.cx), float(K.cy), int(proj.width),
            int(proj.height), float(proj.min_gate), float(proj.max_gate))


def depth_buffer(cloud: ModelCloud, X: Isometry, proj: Projector) -> DepthBuffer:
    depth = np.full((proj.height, proj.width), np.inf)
    index = np.full((proj.height, proj.width), -1, dtype=np.int64)
    _kernels.zbuffer(cloud.positions, np.ascontiguousarray(X.R), np.ascontiguousarray(X.t),
                     *_proj_args(proj), depth, index)
    return DepthBuffer(depth, index)


def compute_visible(cloud: ModelCloud, X: Isometry, proj: Projector):
    """Depth buffer at ``X`` and the visible subset of ``cloud``.

    Each cell keeps the point with the strictly smallest depth (pinhole) or
    range (spherical); on equal values the earlier point wins. The visible
    cloud keeps the original (model-frame) points in input order.
    """
    buf = depth_buffer(cloud, X, proj)
    hit = np.zeros(len(cloud), dtype=bool)
    hit[buf.index[buf.index >= 0]] = True
    return buf, cloud.subset(np.flatnonzero(hit))


def visible_indices(cloud: ModelCloud, X: Isometry, proj: Projector) -> np.ndarray:
    """Sorted indices of the points that win a depth-buffer cell."""
    buf = depth_buffer(cloud, X, proj)
    hit = np.zeros(len(cloud), dtype=bool)
    hit[buf.index[buf.index >= 0]] = True
    return np.flatnonzero(hit)


def predict_image(cloud: ModelCloud, X: Isometry, proj: Projector, kinds) -> ChannelImage:
    """Channel image seen by a sensor at ``X``: each cell shows its nearest point."""
    buf = depth_buffer(cloud, X, proj)
    occupied = buf.index >= 0
    idx = buf.index[occupied]
    q = X.apply(cloud.positions[idx])
    data, mask = {}, {}
    for kind in kinds:
        kind = CueKind(kind)
        if kind is CueKind.INTENSITY:
            vals = cloud.intensity[idx]
        elif kind is CueKind.DEPTH:
            vals = q[:, 2]
        elif kind is CueKind.RANGE:
            vals = np.linalg.norm(q, axis=1)
        else:
            vals = cloud.normals[idx] @ X.R.T
        shape = (proj.height, proj.width) + ((3,) if kind.dim == 3 else ())
        grid = np.zeros(shape)
        grid[occupied] = np.nan_to_num(vals)
        m = np.zeros((proj.height, proj.width), dtype=bool)
        m[occupied] = np.all(np.isfinite(vals.reshape(len(idx), -1)), axis=1)
        data[kind], mask[kind] = grid, m
    return ChannelImage(data, mask)


def write_ply(cloud: ModelCloud, path) -> None:
    """ASCII PLY with position, normal and intensity; missing values written as nan."""
    path = Path(path)
    with open(path, "w") as f:
        f.write("ply\nformat ascii 1.0\n")
        f.write(f"element vertex {len(cloud)}\n")
        for name in ("x", "y", "z", "nx", "ny", "nz", "intensity"):
            f.write(f"property float {name}\n")
        f.write("end_header\n")
        rows = np.column_stack([cloud.positions, cloud.normals, cloud.intensity])
        np.savetxt(f, rows, fmt="%.9g")


def read_ply(path) -> ModelCloud:
    """Read an ASCII PLY with at least x, y, z (as written by :func:`write_ply`)."""
    with open(path) as f:
        if f.readline().strip() != "ply":
            raise ValueError(f"{path}: not a PLY file")
        names, n = [], None
        for line in f:
            tok = line.split()
            if not tok:
                continue
            if tok[0] == "format" and tok[1] != "ascii":
                raise ValueError(f"{path}: only ASCII PLY is supported")
            if tok[0] == "element" and tok[1] == "vertex":
                n = int(tok[2])
            elif tok[0] == "property" and n is not None:
                names.append(tok[-1])
            elif tok[0] == "end_header":
                break
        rows = np.loadtxt(f, ndmin=2, max_rows=n) if n else np.zeros((0, len(names)))
    col = {name: i for i, name in enumerate(names)}
    P = rows[:, [col["x"], col["y"], col["z"]]]
    normals = rows[:, [col["nx"], col["ny"], col["nz"]]] if "nx" in col else None
    inten = rows[:, col["intensity"]] if "intensity" in col else None
    return ModelCloud(P, inten, normals)
