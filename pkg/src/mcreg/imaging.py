"""Multi-channel images: bilinear sampling, gradients, pyramids, error images."""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cues import CueKind
from .projection import Projector

DEFAULT_DISCONTINUITY = 0.3
DEFAULT_NORMAL_DISCONTINUITY_DEG = 15.0
MIN_LEVEL_SIZE = 8

ERROR_SATURATION = {
    CueKind.INTENSITY: 0.25,
    CueKind.DEPTH: 0.25,
    CueKind.RANGE: 1.0,
    CueKind.NORMAL: 0.5,
}


@dataclass(eq=False)
class ChannelImage:
    """Per-channel value grids plus validity masks, all ``(height, width)``.

    Scalar channels are stored as ``(H, W)`` arrays, normals as ``(H, W, 3)``.
    Values under an invalid mask entry are zeroed and never read.
    """

    data: dict
    mask: dict
    discontinuity_threshold: float = DEFAULT_DISCONTINUITY
    normal_discontinuity_deg: float = DEFAULT_NORMAL_DISCONTINUITY_DEG
    _grad_cache: dict = field(default_factory=dict, init=False, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, init=False, repr=False)

    def __post_init__(self):
        data, mask = {}, {}
        shape = None
        for key, arr in self.data.items():
            kind = CueKind(key)
            arr, m = _frozen(arr, np.float64), _frozen(self.mask[key], bool)
            if shape is None:
                shape = m.shape
            if m.shape != shape or arr.shape[:2] != shape:
                raise ValueError("all channels must share the image size")
            if arr.shape != (shape + ((3,) if kind.dim == 3 else ())):
                raise ValueError(f"{kind.value}: bad channel shape {arr.shape}")
            if arr.flags.writeable:
                arr[~m] = 0.0
            elif arr[~m].any():
                arr = np.array(arr)
                arr[~m] = 0.0
            arr.flags.writeable = False
            m.flags.writeable = False
            data[kind], mask[kind] = arr, m
        if shape is None:
            raise ValueError("image needs at least one channel")
        self.data, self.mask = data, mask

    @classmethod
    def from_arrays(cls, intensity=None, depth=None, range=None, normal=None,
                    discontinuity_threshold=DEFAULT_DISCONTINUITY,
                    normal_discontinuity_deg=DEFAULT_NORMAL_DISCONTINUITY_DEG) -> "ChannelImage":
        """Build from raw arrays; non-finite values (and depth/range <= 0) are invalid."""
        data, mask = {}, {}
        for kind, arr in ((CueKind.INTENSITY, intensity), (CueKind.DEPTH, depth),
                          (CueKind.RANGE, range), (CueKind.NORMAL, normal)):
            if arr is None:
                continue
            arr = np.asarray(arr, dtype=np.float64)
            if kind is CueKind.NORMAL:
                m = np.all(np.isfinite(arr), axis=-1)
            else:
                m = np.isfinite(arr)
                if kind.geometric:
                    m &= np.where(m, arr, 0.0) > 0
            data[kind], mask[kind] = np.where(m[..., None] if arr.ndim == 3 else m, arr, 0.0), m
        return cls(data, mask, discontinuity_threshold, normal_discontinuity_deg)

    @property
    def height(self) -> int:
        return next(iter(self.mask.values())).shape[0]

    @property
    def width(self) -> int:
        return next(iter(self.mask.values())).shape[1]

    @property
    def channels(self) -> tuple:
        return tuple(self.data)

    @property
    def geometric_channel(self) -> CueKind | None:
        for kind in (CueKind.DEPTH, CueKind.RANGE):
            if kind in self.data:
                return kind
        return None

    def values(self, kind) -> np.ndarray:
        """Channel data as ``(H, W, dim)``."""
        arr = self.data[CueKind(kind)]
        return arr[..., None] if arr.ndim == 2 else arr

    def gradients(self, kind):
        """Central-difference gradient grid ``(H, W, dim, 2)`` and its validity mask.

        The gradient at a pixel is invalid on the image border and when any
        of its four neighbours is invalid. Depth/range gradients are also
        invalid where the depth spread over the pixel and its neighbours
        exceeds ``discontinuity_threshold``; the other channels inherit that
        mask, since image edges at occlusion boundaries move with the
        viewpoint rather than with the surface. Normal gradients are
        additionally dropped across creases, where neighbouring normals
        differ by more than ``normal_discontinuity_deg``.
        """
        kind = CueKind(kind)
        with self._lock:
            if kind in self._grad_cache:
                return self._grad_cache[kind]
        geo = self.geometric_channel
        if kind.geometric:
            result = _central_gradients(self.values(kind), self.mask[kind],
                                        self.discontinuity_threshold)
        else:
            extra = None if geo is None else self.gradients(geo)[1]
            if kind is CueKind.NORMAL:
                smooth = _normal_smoothness(self.data[kind], self.normal_discontinuity_deg)
                extra = smooth if extra is None else extra & smooth
            result = _central_gradients(self.values(kind), self.mask[kind], None, extra)
        with self._lock:
            self._grad_cache.setdefault(kind, result)
            return self._grad_cache[kind]

    def cropped(self, width: int, height: int) -> "ChannelImage":
        data = {k: v[:height, :width] for k, v in self.data.items()}
        mask = {k: m[:height, :width] for k, m in self.mask.items()}
        return ChannelImage(data, mask, self.discontinuity_threshold,
                            self.normal_discontinuity_deg)

    def with_channels(self, data: dict, mask: dict) -> "ChannelImage":
        """Copy with channels added or replaced; thresholds are kept."""
        return ChannelImage({**self.data, **data}, {**self.mask, **mask},
                            self.discontinuity_threshold, self.normal_discontinuity_deg)


def _frozen(arr, dtype):
    # read-only arrays (channels of another image) are shared rather than copied
    if isinstance(arr, np.ndarray) and arr.dtype == dtype and not arr.flags.writeable:
        return arr
    return np.array(arr, dtype=dtype)


def _normal_smoothness(normals, max_deg):
    H, W, _ = normals.shape
    ok = np.zeros((H, W), dtype=bool)
    if H < 3 or W < 3:
        return ok
    norm = np.linalg.norm(normals, axis=-1, keepdims=True)
    unit = normals / np.where(norm > 0, norm, 1.0)
    c = unit[1:-1, 1:-1]
    dots = np.stack([np.sum(c * unit[1:-1, 2:], axis=-1), np.sum(c * unit[1:-1, :-2], axis=-1),
                     np.sum(c * unit[2:, 1:-1], axis=-1), np.sum(c * unit[:-2, 1:-1], axis=-1)])
    ok[1:-1, 1:-1] = dots.min(axis=0) >= np.cos(np.radians(max_deg))
    return ok


def _central_gradients(vals, mask, spread_threshold, extra=None):
    H, W, dim = vals.shape
    grad = np.zeros((H, W, dim, 2))
    gmask = np.zeros((H, W), dtype=bool)
    grad[1:-1, 1:-1, :, 0] = 0.5 * (vals[1:-1, 2:] - vals[1:-1, :-2])
    grad[1:-1, 1:-1, :, 1] = 0.5 * (vals[2:, 1:-1] - vals[:-2, 1:-1])
    inner = mask[1:-1, 2:] & mask[1:-1, :-2] & mask[2:, 1:-1] & mask[:-2, 1:-1]
    if spread_threshold is not None:
        c = vals[..., 0]
        stack = np.stack([c[1:-1, 1:-1], c[1:-1, 2:], c[1:-1, :-2], c[2:, 1:-1], c[:-2, 1:-1]])
        inner &= mask[1:-1, 1:-1]
        inner &= (stack.max(axis=0) - stack.min(axis=0)) <= spread_threshold
    gmask[1:-1, 1:-1] = inner
    if extra is not None:
        gmask &= extra
    grad[~gmask] = 0.0
    grad.flags.writeable = False
    gmask.flags.writeable = False
    return grad, gmask


def _bilinear(vals, mask, u, v):
    """Vectorised bilinear lookup; ``vals`` is ``(H, W, ...)``."""
    H, W = mask.shape
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    inside = (u >= 0) & (u <= W - 1) & (v >= 0) & (v <= H - 1) & np.isfinite(u) & np.isfinite(v)
    us = np.where(inside, u, 0.0)
    vs = np.where(inside, v, 0.0)
    u0 = np.minimum(np.floor(us).astype(np.intp), max(W - 2, 0))
    v0 = np.minimum(np.floor(vs).astype(np.intp), max(H - 2, 0))
    u1 = np.minimum(u0 + 1, W - 1)
    v1 = np.minimum(v0 + 1, H - 1)
    a = us - u0
    b = vs - v0
    valid = inside & mask[v0, u0] & mask[v0, u1] & mask[v1, u0] & mask[v1, u1]
    extra = (slice(None),) + (None,) * (vals.ndim - 2)
    a, b = a[extra], b[extra]
    out = ((1 - a) * (1 - b) * vals[v0, u0] + a * (1 - b) * vals[v0, u1]
           + (1 - a) * b * vals[v1, u0] + a * b * vals[v1, u1])
    return out, valid


def sample_bilinear(img: ChannelImage, kind, u, v):
    """Bilinearly interpolated channel value.

    For scalar ``(u, v)`` returns a ``dim`` vector or ``None``; for arrays
    returns ``(values (N, dim), valid (N,))``. A sample is invalid when any
    of the four surrounding pixels is invalid or outside the image.
    """
    kind = CueKind(kind)
    scalar = np.ndim(u) == 0 and np.ndim(v) == 0
    vals, valid = _bilinear(img.values(kind), img.mask[kind], np.atleast_1d(u), np.atleast_1d(v))
    if scalar:
        return vals[0] if valid[0] else None
    return vals, valid


def image_gradient(img: ChannelImage, kind, u, v):
    """``dim x 2`` image Jacobian at subpixel ``(u, v)``; ``None`` when invalid.

    Columns are the central differences along u and v. Array inputs return
    ``(grads (N, dim, 2), valid (N,))``.
    """
    kind = CueKind(kind)
    grad, gmask = img.gradients(kind)
    scalar = np.ndim(u) == 0 and np.ndim(v) == 0
    vals, valid = _bilinear(grad, gmask, np.atleast_1d(u), np.atleast_1d(v))
    if scalar:
        return vals[0] if valid[0] else None
    return vals, valid


@dataclass(frozen=True)
class Pyramid:
    """Image/projector pairs ordered coarse to fine."""

    levels: tuple

    def __len__(self):
        return len(self.levels)

    def __getitem__(self, i):
        return self.levels[i]

    @property
    def finest(self):
        return self.levels[-1]


def downsample(img: ChannelImage) -> ChannelImage:
    """Half-resolution image by averaging the valid pixels of each 2x2 block."""
    H2, W2 = img.height // 2, img.width // 2
    data, mask = {}, {}
    for kind in img.channels:
        vals = img.values(kind)[: 2 * H2, : 2 * W2]
        m = img.mask[kind][: 2 * H2, : 2 * W2]
        blocks = vals.reshape(H2, 2, W2, 2, -1)
        mb = m.reshape(H2, 2, W2, 2)
        count = mb.sum(axis=(1, 3))
        total = (blocks * mb[..., None]).sum(axis=(1, 3))
        out_mask = count > 0
        mean = total / np.maximum(count, 1)[..., None]
        if kind is CueKind.NORMAL:
            norm = np.linalg.norm(mean, axis=-1)
            out_mask &= norm > 1e-8
            mean = mean / np.where(out_mask, norm, 1.0)[..., None]
        else:
            mean = mean[..., 0]
        data[kind], mask[kind] = mean, out_mask
    return ChannelImage(data, mask, img.discontinuity_threshold, img.normal_discontinuity_deg)


def build_pyramid(img: ChannelImage, proj: Projector, n_levels: int) -> Pyramid:
    """Coarse-to-fine pyramid; the input is cropped so every level halves exactly."""
    if n_levels < 1:
        raise ValueError("n_levels must be >= 1")
    if (img.width, img.height) != (proj.width, proj.height):
        raise ValueError("image and projector sizes differ")
    if n_levels == 1:
        return Pyramid(((img, proj),))
    f = 2 ** (n_levels - 1)
    W, H = (img.width // f) * f, (img.height // f) * f
    if W // f < MIN_LEVEL_SIZE or H // f < MIN_LEVEL_SIZE:
        raise ValueError(f"{n_levels} levels would produce a level smaller than "
                         f"{MIN_LEVEL_SIZE}x{MIN_LEVEL_SIZE}")
    if (W, H) != (img.width, img.height):
        img, proj = img.cropped(W, H), proj.cropped(W, H)
    levels = [(img, proj)]
    for _ in range(n_levels - 1):
        img, proj = downsample(img), proj.downsampled()
        levels.append((img, proj))
    return Pyramid(tuple(reversed(levels)))


def render_error_image(meas: ChannelImage, pred: ChannelImage, kind, saturation=None) -> np.ndarray:
    """8-bit image of ``|pred - meas|``, scaled so ``saturation`` maps to 255.

    Grey levels are ``floor(255 * min(|e| / saturation, 1))``; pixels invalid
    in either image are 0.
    """
    kind = CueKind(kind)
    if (meas.width, meas.height) != (pred.width, pred.height):
        raise ValueError("image sizes differ")
    sat = ERROR_SATURATION[kind] if saturation is None else float(saturation)
    err = np.linalg.norm(pred.values(kind) - meas.values(kind), axis=-1)
    valid = meas.mask[kind] & pred.mask[kind]
    scaled = np.floor(255.0 * np.minimum(err / sat, 1.0) + 1e-9)
    return np.where(valid, scaled, 0).astype(np.uint8)


def write_gray(path, img: np.ndarray) -> None:
    """Write an 8-bit grayscale image as PGM (binary) or PNG, chosen by suffix."""
    path = Path(path)
    img = np.asarray(img, dtype=np.uint8)
    if path.suffix.lower() == ".pgm":
        with open(path, "wb") as f:
            f.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii"))
            f.write(img.tobytes())
        return
    from PIL import Image

    Image.fromarray(img).save(path)
