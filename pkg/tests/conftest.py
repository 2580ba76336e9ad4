from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from mcreg.cloud import cloud_from_image
from mcreg.imaging import build_pyramid
from mcreg.synthetic import bench_problem, bench_projector, room_scene

settings.register_profile("mcreg", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("mcreg")


def fd_jacobian(f, x0, h=1e-6):
    """Central differences of a vector function."""
    x0 = np.asarray(x0, dtype=np.float64)
    f0 = np.atleast_1d(f(x0))
    J = np.zeros((f0.size, x0.size))
    for k in range(x0.size):
        d = np.zeros_like(x0)
        d[k] = h
        J[:, k] = (np.atleast_1d(f(x0 + d)) - np.atleast_1d(f(x0 - d))) / (2 * h)
    return J


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_proj():
    from mcreg.projection import pinhole

    return pinhole(fx=80.0, fy=80.0, cx=39.5, cy=29.5, width=80, height=60,
                   min_gate=0.1, max_gate=20.0)


@pytest.fixture(scope="session")
def room_problem():
    """Room scene: ~50k-point model and a target rendered at a known pose."""
    return bench_problem(room_scene(), bench_projector(), 3)


@pytest.fixture(scope="session")
def small_room(small_proj):
    from mcreg.geometry import Isometry
    from mcreg.synthetic import render

    img = render(room_scene(), Isometry.identity(), small_proj)
    return img, small_proj, cloud_from_image(img, small_proj)


@pytest.fixture(scope="session")
def self_problem():
    from mcreg.geometry import Isometry
    from mcreg.synthetic import render

    proj = bench_projector()
    img = render(room_scene(), Isometry.identity(), proj)
    pyr = build_pyramid(img, proj, 3)
    return [cloud_from_image(i, p) for i, p in pyr.levels], pyr


def affine_scene(model: str, n_points: int = 400, seed: int = 7):
    """Measurement image whose channels are affine in (u, v), plus a cloud in view.

    Bilinear sampling and central-difference gradients are exact on affine
    images, so analytic Jacobians can be compared with finite differences
    without interpolation error. Returns ``(meas, proj, cloud, X)``.
    """
    from mcreg.cloud import ModelCloud
    from mcreg.geometry import Isometry, v2t
    from mcreg.imaging import ChannelImage
    from mcreg.projection import pinhole, spherical, unproject

    rng = np.random.default_rng(seed)
    if model == "pinhole":
        proj = pinhole(fx=60.0, fy=60.0, cx=39.5, cy=29.5, width=80, height=60,
                       min_gate=0.1, max_gate=20.0)
    else:
        proj = spherical(width=180, height=32, fov_up_deg=5.0, fov_down_deg=-25.0)
    vv, uu = np.mgrid[0:proj.height, 0:proj.width].astype(np.float64)
    normal = np.stack([0.1 + 1e-3 * uu, -0.2 + 2e-3 * vv, -0.9 + 1e-3 * uu - 1e-3 * vv], axis=-1)
    meas = ChannelImage.from_arrays(intensity=0.5 + 4e-3 * uu - 3e-3 * vv,
                                    depth=2.0 + 1e-2 * uu + 5e-3 * vv,
                                    range=8.0 + 2e-2 * uu + 5e-2 * vv, normal=normal)
    u = rng.uniform(8, proj.width - 8, n_points)
    v = rng.uniform(6, proj.height - 6, n_points)
    g = rng.uniform(1.5, 3.0, n_points) if model == "pinhole" else rng.uniform(6, 12, n_points)
    n = rng.normal(size=(n_points, 3)) + [0, 0, -2.0]
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    X = v2t([0.01, -0.01, 0.02, 0.005, -0.004, 0.003])
    P = X.inverse().apply(unproject(proj, u, v, g))
    cloud = ModelCloud(P, rng.uniform(0, 1, n_points), n)
    return meas, proj, cloud, Isometry(X.R, X.t)


ACCEPTANCE: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
