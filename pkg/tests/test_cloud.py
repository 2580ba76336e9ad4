from __future__ import annotations

import numpy as np
import pytest

from mcreg.cloud import (ModelCloud, cloud_from_image, compute_visible, estimate_normals,
                         predict_image, read_ply, visible_indices, write_ply)
from mcreg.geometry import Isometry, random_rotation, rot_x
from mcreg.imaging import ChannelImage
from mcreg.projection import pinhole, project, spherical


def brute_force_visible(points, X, proj):
    """Per-cell minimum over a plain Python scan, earliest point on ties."""
    best = {}
    for i, p in enumerate(points):
        u, v, g, ok = project(proj, X.apply(p))
        if not ok:
            continue
        cell = (min(int(u + 0.5), proj.width - 1), min(int(v + 0.5), proj.height - 1))
        if cell not in best or g < best[cell][0]:
            best[cell] = (g, i)
    return sorted(i for _, i in best.values())


def small_pinhole(W=64, H=48):
    return pinhole(fx=0.8 * W, fy=0.8 * W, cx=W / 2 - 0.5, cy=H / 2 - 0.5, width=W, height=H)


def random_cloud(rng, n=1000, dup=100):
    P = rng.uniform([-2, -1.5, 0.5], [2, 1.5, 6], size=(n, 3))
    P[rng.choice(n, dup, replace=False)] = P[rng.choice(n, dup, replace=False)]
    return ModelCloud(P)


def test_single_pixel_cloud():
    proj = pinhole(fx=10, fy=10, cx=2, cy=2, width=5, height=5)
    d = np.full((5, 5), np.nan)
    d[2, 2] = 2.0
    cloud = cloud_from_image(ChannelImage.from_arrays(depth=d), proj)
    assert len(cloud) == 1
    np.testing.assert_allclose(cloud.positions[0], [0, 0, 2], atol=0)


def test_all_invalid_cloud_empty():
    proj = pinhole(width=8, height=8)
    cloud = cloud_from_image(ChannelImage.from_arrays(depth=np.zeros((8, 8))), proj)
    assert len(cloud) == 0


def test_cloud_needs_geometry():
    with pytest.raises(ValueError):
        cloud_from_image(ChannelImage.from_arrays(intensity=np.ones((8, 8))),
                         pinhole(width=8, height=8))


def test_cloud_round_trip_vga(rng):
    proj = pinhole()
    d = rng.uniform(0.5, 5.0, size=(480, 640))
    cloud = cloud_from_image(ChannelImage.from_arrays(depth=d), proj)
    assert len(cloud) == 307200
    u, v, g, _ = project(proj, cloud.positions)
    vv, uu = np.mgrid[0:480, 0:640]
    assert np.abs(u - uu.ravel()).max() < 1e-9 and np.abs(v - vv.ravel()).max() < 1e-9
    np.testing.assert_allclose(g, d.ravel(), rtol=1e-12)


def test_cloud_copies_intensity():
    proj = pinhole(width=8, height=8)
    inten = np.linspace(0, 1, 64).reshape(8, 8)
    cloud = cloud_from_image(ChannelImage.from_arrays(intensity=inten, depth=np.ones((8, 8))), proj)
    np.testing.assert_array_equal(cloud.intensity, inten.ravel())
    assert cloud[0].normal is None and cloud[9].normal is not None


def plane_image(proj, n, d0):
    """Depth image of the plane ``n . x = d0`` seen from the origin."""
    vv, uu = np.mgrid[0:proj.height, 0:proj.width].astype(np.float64)
    K = proj.K
    rays = np.stack([(uu - K.cx) / K.fx, (vv - K.cy) / K.fy, np.ones_like(uu)], axis=-1)
    return ChannelImage.from_arrays(depth=d0 / (rays @ n))


def test_normals_fronto_parallel():
    proj = pinhole(fx=50, fy=50, cx=19.5, cy=14.5, width=40, height=30)
    n, ok = estimate_normals(ChannelImage.from_arrays(depth=np.full((30, 40), 2.0)), proj)
    assert ok[1:-1, 1:-1].all() and not ok[0].any() and not ok[:, -1].any()
    np.testing.assert_allclose(n[ok], np.tile([0, 0, -1], (ok.sum(), 1)), atol=1e-6)


def test_normals_tilted_plane():
    proj = pinhole(fx=50, fy=50, cx=19.5, cy=14.5, width=40, height=30)
    normal = rot_x(np.pi / 4) @ np.array([0, 0, -1.0])
    n, ok = estimate_normals(plane_image(proj, -normal, 2.0), proj)
    assert ok[1:-1, 1:-1].all()
    ang = np.degrees(np.arccos(np.clip(n[ok] @ normal, -1, 1)))
    assert ang.max() < 0.5


def test_normals_hole_neighbours_invalid():
    proj = pinhole(fx=50, fy=50, cx=9.5, cy=9.5, width=20, height=20)
    d = np.full((20, 20), 2.0)
    d[10, 10] = 0.0
    n, ok = estimate_normals(ChannelImage.from_arrays(depth=d), proj)
    for v, u in ((10, 10), (10, 9), (10, 11), (9, 10), (11, 10)):
        assert not ok[v, u]
    assert ok[9, 9] and ok[8, 10]


def test_normals_discontinuity_invalid():
    proj = pinhole(fx=50, fy=50, cx=9.5, cy=9.5, width=20, height=20)
    d = np.full((20, 20), 2.0)
    d[:, 10:] = 4.0
    _, ok = estimate_normals(ChannelImage.from_arrays(depth=d), proj)
    assert not ok[5, 9] and not ok[5, 10] and ok[5, 8] and ok[5, 11]


def test_normals_spherical_face_sensor(rng):
    proj = spherical(width=360, height=32)
    r = np.full((32, 360), 10.0)
    n, ok = estimate_normals(ChannelImage.from_arrays(range=r), proj)
    cloud = cloud_from_image(ChannelImage.from_arrays(range=r), proj)
    assert ok.sum() > 0.9 * ok.size * (30 / 32) * (358 / 360)
    P = cloud.positions.reshape(32, 360, 3)
    assert np.all(np.sum(n[ok] * P[ok], axis=-1) < 0)


def test_visible_two_points_on_ray():
    proj = small_pinhole()
    cloud = ModelCloud(np.array([[0.3, 0.2, 3.0], [0.2, 0.2 * 2 / 3, 2.0]]))
    buf, vis = compute_visible(cloud, Isometry.identity(), proj)
    assert len(vis) == 1
    np.testing.assert_array_equal(vis.positions[0], [0.2, 0.2 * 2 / 3, 2.0])
    assert buf.depth.min() == 2.0 and np.isfinite(buf.depth).sum() == 1


def test_visible_distinct_cells():
    proj = pinhole(fx=10, fy=10, cx=4.5, cy=4.5, width=10, height=10)
    vv, uu = np.mgrid[0:10, 0:10].astype(float)
    P = np.stack([(uu - 4.5) / 10 * 2, (vv - 4.5) / 10 * 2, np.full_like(uu, 2.0)], -1).reshape(-1, 3)
    P = np.vstack([P, [[0, 0, -1.0], [0, 0, 50.0]]])
    _, vis = compute_visible(ModelCloud(P), Isometry.identity(), proj)
    assert len(vis) == 100


@pytest.mark.parametrize("model", ["pinhole", "spherical"])
def test_visible_matches_brute_force(model, rng):
    proj = small_pinhole() if model == "pinhole" else spherical(width=90, height=16)
    for _ in range(5):
        cloud = random_cloud(rng)
        if model == "spherical":
            cloud = ModelCloud(cloud.positions[:, [2, 0, 1]] * [1, 1, 0.2])
        X = Isometry(random_rotation(rng, 0.1), rng.normal(0, 0.1, 3))
        idx = visible_indices(cloud, X, proj)
        assert idx.tolist() == brute_force_visible(cloud.positions, X, proj)


def test_visible_tie_first_wins():
    proj = small_pinhole()
    P = np.array([[0.1, 0.1, 2.0], [0.1, 0.1, 2.0], [0.1, 0.1, 2.0]])
    buf, _ = compute_visible(ModelCloud(P), Isometry.identity(), proj)
    assert buf.index.max() == 0


def test_visible_invariants(rng):
    proj = small_pinhole(32, 24)
    for _ in range(10):
        cloud = random_cloud(rng, 2000)
        X = Isometry(random_rotation(rng, 0.2), rng.normal(0, 0.2, 3))
        buf, vis = compute_visible(cloud, X, proj)
        assert len(vis) <= min(len(cloud), proj.width * proj.height)
        assert np.all(project(proj, X.apply(vis.positions))[3])
        _, again = compute_visible(vis, X, proj)
        np.testing.assert_array_equal(again.positions, vis.positions)
        occupied = buf.index >= 0
        assert occupied.sum() == len(vis) > 100
        np.testing.assert_allclose(buf.depth[occupied],
                                   X.apply(cloud.positions[buf.index[occupied]])[:, 2], rtol=1e-14)


def test_predict_image_self_consistent(small_room):
    img, proj, cloud = small_room
    pred = predict_image(cloud, Isometry.identity(), proj, ["depth", "intensity"])
    m = img.mask["depth"] & pred.mask["depth"]
    assert m.sum() > 0.9 * img.mask["depth"].sum()
    np.testing.assert_allclose(pred.data["depth"][m], img.data["depth"][m], rtol=1e-12)


def test_ply_round_trip(tmp_path, rng):
    n = rng.normal(size=(50, 3))
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    n[3] = np.nan
    inten = rng.uniform(size=50)
    inten[7] = np.nan
    cloud = ModelCloud(rng.normal(size=(50, 3)), inten, n)
    write_ply(cloud, tmp_path / "c.ply")
    back = read_ply(tmp_path / "c.ply")
    np.testing.assert_allclose(back.positions, cloud.positions, rtol=1e-8)
    np.testing.assert_allclose(back.normals, cloud.normals, rtol=1e-8)
    np.testing.assert_allclose(back.intensity, cloud.intensity, rtol=1e-8)
    assert back[3].normal is None and back[7].intensity is None


def test_cloud_rejects_non_finite():
    with pytest.raises(ValueError):
        ModelCloud(np.array([[0, 0, np.inf]]))
