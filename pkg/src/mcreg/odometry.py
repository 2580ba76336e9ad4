"""Frame-to-frame odometry.

Frame ``i-1`` becomes the model for frame ``i``. ``register`` returns
``X_rel``, mapping points from sensor frame ``i-1`` into sensor frame ``i``.
Poses map sensor coordinates into the world (the first sensor frame), so

    pose_0 = identity,   pose_i = pose_{i-1} X_rel^-1

A failed registration (too few inliers, singular system) contributes
``X_rel = identity`` and sets the frame's flag.
"""

from __future__ import annotations

import logging
import queue
import threading
from dataclasses import dataclass

from .cloud import cloud_from_image
from .geometry import Isometry
from .imaging import Pyramid, build_pyramid
from .solver import SolverConfig, SolveStats, register
from .trajectory import Trajectory

logger = logging.getLogger(__name__)

PREFETCH_DEPTH = 2
_DONE = object()


def prefetch(frames, depth: int = PREFETCH_DEPTH):
    """Iterate ``frames`` while a background thread decodes up to ``depth`` ahead."""
    q: queue.Queue = queue.Queue(maxsize=depth)
    stop = threading.Event()

    def work():
        try:
            for f in frames:
                while not stop.is_set():
                    try:
                        q.put(f, timeout=0.1)
                        break
                    except queue.Full:
                        continue
                if stop.is_set():
                    return
        except BaseException as exc:  # re-raised in the consumer
            q.put(exc)
            return
        q.put(_DONE)

    t = threading.Thread(target=work, daemon=True)
    t.start()
    try:
        while True:
            item = q.get()
            if item is _DONE:
                return
            if isinstance(item, BaseException):
                raise item
            yield item
    finally:
        stop.set()


@dataclass
class PairResult:
    index: int
    timestamp: float
    relative: Isometry
    stats: SolveStats
    failed: bool


def model_pyramid(pyr: Pyramid) -> list:
    """One model cloud per pyramid level, coarse to fine."""
    return [cloud_from_image(img, proj) for img, proj in pyr.levels]


def run_odometry(frames, cfg: SolverConfig | None = None, guesses=None, on_pair=None,
                 prefetch_depth: int = PREFETCH_DEPTH, n_workers: int | None = None) -> Trajectory:
    """Chain frame-to-frame registrations into a trajectory.

    ``frames`` is any iterable of :class:`~mcreg.datasets.Frame`, consumed
    lazily. ``guesses`` optionally gives one initial ``X_rel`` per pair
    (identity otherwise). ``on_pair`` is called with a :class:`PairResult`
    after every pair.
    """
    cfg = SolverConfig() if cfg is None else cfg
    it = prefetch(frames, prefetch_depth) if prefetch_depth > 0 else iter(frames)
    stamps, poses, flags = [], [], []
    prev_models = None
    for i, frame in enumerate(it):
        pyr = build_pyramid(frame.image, frame.projector, cfg.n_levels)
        if prev_models is None:
            pose = Isometry.identity()
            flags.append(False)
        else:
            X0 = Isometry.identity()
            if guesses is not None and i - 1 < len(guesses):
                X0 = guesses[i - 1]
            X_rel, stats = register(prev_models, pyr, X0, cfg, n_workers)
            failed = not stats.converged
            if failed:
                logger.warning("frame %d (t=%.6f): registration failed: %s", i, frame.timestamp,
                               stats.failure)
                X_rel = Isometry.identity()
            pose = poses[-1] @ X_rel.inverse()
            flags.append(failed)
            if on_pair is not None:
                on_pair(PairResult(i, frame.timestamp, X_rel, stats, failed))
        stamps.append(frame.timestamp)
        poses.append(pose)
        prev_models = model_pyramid(pyr)
        # drop this frame's images and caches before the next one is decoded
        pyr = frame = None
    if len(poses) < 2:
        raise ValueError("odometry needs at least two frames")
    return Trajectory(stamps, poses, flags)
