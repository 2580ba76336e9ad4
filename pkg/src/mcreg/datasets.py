"""Frame loaders for TUM RGBD sequences and KITTI Velodyne sweeps."""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _kernels
from .cloud import _proj_args, estimate_normals
from .cues import CueKind
from .geometry import Isometry
from .imaging import DEFAULT_DISCONTINUITY, DEFAULT_NORMAL_DISCONTINUITY_DEG, ChannelImage
from .projection import ProjectionModel, Projector, pinhole, spherical
from .trajectory import KITTI_PERIOD, Trajectory, read_kitti_poses, read_trajectory

TUM_DEPTH_SCALE = 5000.0
GRAY_WEIGHTS = np.array([0.299, 0.587, 0.114])
TUM_DATASET_ENV = "MCREG_TUM_FR1_DESK"
KITTI_DATASET_ENV = "MCREG_KITTI_SEQUENCE"


@dataclass(frozen=True, eq=False)
class Frame:
    timestamp: float
    image: ChannelImage
    projector: Projector


def with_normals(img: ChannelImage, proj: Projector) -> ChannelImage:
    """``img`` plus a normal channel from :func:`estimate_normals`."""
    n, ok = estimate_normals(img, proj)
    return img.with_channels({CueKind.NORMAL: np.nan_to_num(n)}, {CueKind.NORMAL: ok})


def _read_image(path) -> np.ndarray:
    from PIL import Image

    try:
        with Image.open(path) as im:
            return np.array(im)
    except (OSError, ValueError) as exc:
        raise ValueError(f"{path}: cannot decode image ({exc})") from exc


def load_tum_frame(rgb_path, depth_path, proj: Projector | None = None, timestamp: float = 0.0,
                   discontinuity: float = DEFAULT_DISCONTINUITY,
                   normal_discontinuity_deg: float = DEFAULT_NORMAL_DISCONTINUITY_DEG) -> Frame:
    """Frame from a TUM RGB image and its registered 16-bit depth image.

    Depth is ``raw / 5000`` metres with raw 0 invalid; intensity is the
    luma of the RGB image scaled to [0, 1]; normals are estimated from depth.
    """
    proj = pinhole() if proj is None else proj
    rgb = _read_image(rgb_path)
    raw = _read_image(depth_path)
    if raw.ndim != 2:
        raise ValueError(f"{depth_path}: depth must be a single-channel image")
    if rgb.shape[:2] != raw.shape:
        raise ValueError(f"size mismatch: rgb {rgb.shape[:2]} vs depth {raw.shape}")
    if (raw.shape[1], raw.shape[0]) != (proj.width, proj.height):
        raise ValueError(f"image size {raw.shape[1]}x{raw.shape[0]} does not match the projector "
                         f"({proj.width}x{proj.height})")
    if rgb.ndim == 3:
        gray = rgb[..., :3].astype(np.float64) @ GRAY_WEIGHTS
    else:
        gray = rgb.astype(np.float64)
    gray = gray / 255.0
    depth = np.where(raw > 0, raw.astype(np.float64) / TUM_DEPTH_SCALE, np.nan)
    img = ChannelImage.from_arrays(intensity=gray, depth=depth,
                                   discontinuity_threshold=discontinuity,
                                   normal_discontinuity_deg=normal_discontinuity_deg)
    return Frame(float(timestamp), with_normals(img, proj), proj)


def associate_tum(rgb_list, depth_list, max_dt: float = 0.02) -> list:
    """Greedy nearest-timestamp matching.

    ``rgb_list`` and ``depth_list`` hold timestamps (or ``(timestamp, ...)``
    tuples). Candidate pairs with ``|dt| <= max_dt`` are taken in order of
    increasing ``|dt|`` (ties by list position); each entry is used at most
    once. Returns index pairs ``(i, j)`` sorted by ``i``.
    """
    def stamps(lst):
        return np.array([x[0] if isinstance(x, (tuple, list)) else x for x in lst], dtype=float)

    a, b = stamps(rgb_list), stamps(depth_list)
    cands = []
    for i, t in enumerate(a):
        lo = np.searchsorted(b, t - max_dt, side="left")
        hi = np.searchsorted(b, t + max_dt, side="right")
        for j in range(lo, hi):
            dt = abs(t - b[j])
            if dt <= max_dt:
                cands.append((dt, i, j))
    cands.sort()
    used_a, used_b, pairs = set(), set(), []
    for _, i, j in cands:
        if i in used_a or j in used_b:
            continue
        used_a.add(i)
        used_b.add(j)
        pairs.append((i, j))
    return sorted(pairs)


def read_tum_list(path) -> list:
    """``timestamp filename`` lines of a TUM ``rgb.txt`` / ``depth.txt``."""
    out = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        tok = line.split()
        out.append((float(tok[0]), tok[1]))
    return out


def tum_sequence(path, proj: Projector | None = None, max_dt: float = 0.02, **kw):
    """Lazily yield frames of a TUM sequence directory, stamped with the RGB time."""
    path = Path(path)
    rgb = read_tum_list(path / "rgb.txt")
    depth = read_tum_list(path / "depth.txt")
    for i, j in associate_tum(rgb, depth, max_dt):
        yield load_tum_frame(path / rgb[i][1], path / depth[j][1], proj, rgb[i][0], **kw)


def tum_groundtruth(path) -> Trajectory | None:
    gt = Path(path) / "groundtruth.txt"
    return read_trajectory(gt) if gt.exists() else None


def read_velodyne(path) -> np.ndarray:
    """``(N, 4)`` float32 array of ``x y z reflectance`` from a KITTI ``.bin`` file."""
    size = os.path.getsize(path)
    if size % 16:
        raise ValueError(f"{path}: truncated file ({size} bytes is not a multiple of 16)")
    return np.fromfile(path, dtype="<f4").reshape(-1, 4)


def range_image(points, reflectance, proj: Projector,
                discontinuity: float = DEFAULT_DISCONTINUITY,
                normal_discontinuity_deg: float = DEFAULT_NORMAL_DISCONTINUITY_DEG) -> ChannelImage:
    """Spherical range/intensity/normal image of sensor-frame points.

    Each pixel keeps the nearest point projecting into it (first one on ties);
    intensity is the reflectance clamped to [0, 1].
    """
    if proj.model is not ProjectionModel.SPHERICAL:
        raise ValueError("LIDAR sweeps need a spherical projector")
    P = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3)
    refl = np.asarray(reflectance, dtype=np.float64).reshape(-1)
    keep = np.all(np.isfinite(P), axis=1) & np.isfinite(refl)
    P, refl = np.ascontiguousarray(P[keep]), refl[keep]
    rng = np.full((proj.height, proj.width), np.inf)
    index = np.full((proj.height, proj.width), -1, dtype=np.int64)
    _kernels.zbuffer(P, np.eye(3), np.zeros(3), *_proj_args(proj), rng, index)
    hit = index >= 0
    inten = np.full(rng.shape, np.nan)
    inten[hit] = np.clip(refl[index[hit]], 0.0, 1.0)
    img = ChannelImage.from_arrays(intensity=inten, range=np.where(hit, rng, np.nan),
                                   discontinuity_threshold=discontinuity,
                                   normal_discontinuity_deg=normal_discontinuity_deg)
    return with_normals(img, proj)


def load_kitti_velodyne(path, proj: Projector | None = None, timestamp: float = 0.0,
                        **kw) -> Frame:
    """Frame from a KITTI Velodyne sweep (little-endian float32 ``x y z reflectance``)."""
    proj = spherical() if proj is None else proj
    pts = read_velodyne(path)
    return Frame(float(timestamp), range_image(pts[:, :3], pts[:, 3], proj, **kw), proj)


def _kitti_scans(path) -> list:
    path = Path(path)
    for sub in ("velodyne", "."):
        scans = sorted((path / sub).glob("*.bin"))
        if scans:
            return scans
    raise FileNotFoundError(f"{path}: no .bin scans found")


def kitti_sequence(path, proj: Projector | None = None, limit: int | None = None, **kw):
    """Lazily yield frames of a KITTI sequence directory.

    Scans come from ``velodyne/*.bin`` (or ``*.bin``); timestamps from
    ``times.txt`` when present, else ``0.1 s`` apart.
    """
    path = Path(path)
    scans = _kitti_scans(path)
    if limit is not None:
        scans = scans[:limit]
    times = path / "times.txt"
    stamps = (np.loadtxt(times, ndmin=1)[: len(scans)] if times.exists()
              else np.arange(len(scans)) * KITTI_PERIOD)
    for scan, t in zip(scans, stamps):
        yield load_kitti_velodyne(scan, proj, float(t), **kw)


def kitti_groundtruth(path) -> Trajectory | None:
    """Ground truth from ``poses.txt`` (or ``<seq>.txt`` next to the sequence directory)."""
    path = Path(path)
    for cand in (path / "poses.txt", path.parent / f"{path.name}.txt"):
        if cand.exists():
            return read_kitti_poses(cand)
    return None


def read_guesses(path) -> list:
    """One 3x4 row-major initial guess per frame pair, 12 floats per line."""
    rows = np.loadtxt(path, ndmin=2)
    if rows.shape[1] != 12:
        raise ValueError(f"{path}: expected 12 values per line")
    return [Isometry.from_matrix(r) for r in rows]


def save_frame(frame: Frame, path) -> None:
    """Store a frame's channels as ``.npz`` (NaN marks invalid pixels)."""
    img = frame.image
    arrays = {"timestamp": np.array(frame.timestamp)}
    for kind in img.channels:
        vals = img.data[kind].copy()
        vals[~img.mask[kind]] = np.nan
        arrays[kind.value] = vals
    np.savez_compressed(path, **arrays)


def load_npz_frame(path, proj: Projector, **kw) -> Frame:
    with np.load(path) as z:
        chans = {k: z[k] for k in ("intensity", "depth", "range", "normal") if k in z}
        ts = float(z["timestamp"]) if "timestamp" in z else 0.0
    if not chans:
        raise ValueError(f"{path}: no channels")
    img = ChannelImage.from_arrays(**chans, discontinuity_threshold=kw.get(
        "discontinuity", DEFAULT_DISCONTINUITY), normal_discontinuity_deg=kw.get(
        "normal_discontinuity_deg", DEFAULT_NORMAL_DISCONTINUITY_DEG))
    if (img.width, img.height) != (proj.width, proj.height):
        raise ValueError(f"{path}: image size does not match the projector")
    if CueKind.NORMAL not in img.data and img.geometric_channel is not None:
        img = with_normals(img, proj)
    return Frame(ts, img, proj)


def load_frame(spec: str, proj: Projector, **kw) -> Frame:
    """Frame from a command-line spec.

    ``rgb.png,depth.png`` is a TUM pair, ``*.bin`` a KITTI sweep and
    ``*.npz`` a stored channel image.
    """
    if "," in spec:
        rgb, depth = spec.split(",", 1)
        return load_tum_frame(rgb, depth, proj, **kw)
    suffix = Path(spec).suffix.lower()
    if suffix == ".bin":
        return load_kitti_velodyne(spec, proj, **kw)
    if suffix == ".npz":
        return load_npz_frame(spec, proj, **kw)
    raise ValueError(f"{spec}: expected 'rgb.png,depth.png', a .bin sweep or a .npz frame")
