from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from PIL import Image

from mcreg.imaging import (ChannelImage, build_pyramid, downsample, image_gradient,
                           render_error_image, sample_bilinear, write_gray)
from mcreg.projection import pinhole


def grid(W=12, H=10):
    vv, uu = np.mgrid[0:H, 0:W].astype(np.float64)
    return uu, vv


def test_sample_integer_exact(rng):
    vals = rng.uniform(size=(10, 12))
    img = ChannelImage.from_arrays(intensity=vals)
    for v in range(10):
        for u in range(12):
            assert sample_bilinear(img, "intensity", float(u), float(v))[0] == vals[v, u]


def test_sample_masked_neighbour_invalid():
    vals = np.zeros((4, 4))
    vals[1, 2] = 1.0
    vals[2, 1] = np.nan
    img = ChannelImage.from_arrays(intensity=vals)
    # the cell of (1.5, 1.0) spans rows 1 and 2; row 2 holds the masked pixel
    assert sample_bilinear(img, "intensity", 1.5, 1.0) is None
    assert sample_bilinear(img, "intensity", 1.5, 1.5) is None
    assert sample_bilinear(img, "intensity", 1.5, 0.5)[0] == 0.25


def test_sample_midpoint(rng):
    vals = rng.uniform(size=(5, 6))
    img = ChannelImage.from_arrays(intensity=vals)
    got = sample_bilinear(img, "intensity", 2.5, 3.0)[0]
    assert abs(got - 0.5 * (vals[3, 2] + vals[3, 3])) < 1e-12


def test_sample_out_of_bounds():
    img = ChannelImage.from_arrays(intensity=np.ones((4, 4)))
    for u, v in ((-0.1, 1), (3.1, 1), (1, -0.5), (1, 3.5), (np.nan, 1)):
        assert sample_bilinear(img, "intensity", u, v) is None
    assert sample_bilinear(img, "intensity", 3.0, 3.0)[0] == 1.0


def test_sample_vectorised_matches_scalar(rng):
    vals = rng.uniform(size=(8, 9))
    vals[3, 4] = np.nan
    img = ChannelImage.from_arrays(intensity=vals)
    u = rng.uniform(-1, 9, 200)
    v = rng.uniform(-1, 8, 200)
    out, ok = sample_bilinear(img, "intensity", u, v)
    for k in range(200):
        s = sample_bilinear(img, "intensity", u[k], v[k])
        assert (s is not None) == ok[k]
        if ok[k]:
            assert s[0] == out[k, 0]


def test_gradient_constant():
    img = ChannelImage.from_arrays(intensity=np.full((6, 6), 0.7))
    np.testing.assert_array_equal(image_gradient(img, "intensity", 2.3, 3.1), np.zeros((1, 2)))


def test_gradient_ramp():
    uu, _ = grid()
    img = ChannelImage.from_arrays(intensity=uu)
    # an integer coordinate uses the cell to its right, so the last interior
    # column and row would touch the (invalid) border gradient
    for u in range(1, 10):
        for v in range(1, 8):
            np.testing.assert_array_equal(image_gradient(img, "intensity", float(u), float(v)),
                                          [[1.0, 0.0]])


def test_gradient_square():
    uu, _ = grid()
    img = ChannelImage.from_arrays(intensity=uu ** 2)
    assert image_gradient(img, "intensity", 5.0, 4.0)[0, 0] == 10.0


def test_gradient_border_invalid():
    uu, _ = grid()
    img = ChannelImage.from_arrays(intensity=uu)
    assert image_gradient(img, "intensity", 0.0, 4.0) is None
    assert image_gradient(img, "intensity", 0.5, 4.0) is None
    assert image_gradient(img, "intensity", 1.0, 4.0) is not None


def test_gradient_subpixel_is_bilinear_of_offset_samples(rng):
    vals = rng.uniform(size=(10, 12))
    img = ChannelImage.from_arrays(intensity=vals)
    for _ in range(100):
        u, v = rng.uniform(2, 9), rng.uniform(2, 7)
        s = lambda a, b: sample_bilinear(img, "intensity", a, b)[0]
        expected = [0.5 * (s(u + 1, v) - s(u - 1, v)), 0.5 * (s(u, v + 1) - s(u, v - 1))]
        np.testing.assert_allclose(image_gradient(img, "intensity", u, v)[0], expected, atol=1e-12)


@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5))
def test_gradient_affine_exact(a, b, c):
    uu, vv = grid()
    img = ChannelImage.from_arrays(intensity=a * uu + b * vv + c)
    G = image_gradient(img, "intensity", 4.0, 5.0)
    np.testing.assert_allclose(G[0], [a, b], rtol=1e-12, atol=1e-12)


def test_depth_discontinuity_masks_gradients():
    d = np.full((8, 8), 2.0)
    d[:, 4:] = 5.0
    img = ChannelImage.from_arrays(intensity=np.ones((8, 8)), depth=d)
    assert image_gradient(img, "depth", 3.0, 4.0) is None
    assert image_gradient(img, "intensity", 3.0, 4.0) is None
    assert image_gradient(img, "depth", 1.5, 4.0) is not None


def test_pyramid_single_level():
    img = ChannelImage.from_arrays(intensity=np.ones((10, 10)))
    proj = pinhole(width=10, height=10)
    pyr = build_pyramid(img, proj, 1)
    assert pyr.levels == ((img, proj),)


def test_pyramid_constant():
    img = ChannelImage.from_arrays(intensity=np.full((16, 16), 0.4), depth=np.full((16, 16), 3.0))
    pyr = build_pyramid(img, pinhole(width=16, height=16), 2)
    coarse = pyr[0][0]
    assert (coarse.width, coarse.height) == (8, 8)
    np.testing.assert_array_equal(coarse.data["intensity"], 0.4)
    np.testing.assert_array_equal(coarse.data["depth"], 3.0)


def test_downsample_4x4_constant():
    img = ChannelImage.from_arrays(intensity=np.full((4, 4), 0.25))
    out = downsample(img)
    assert (out.width, out.height) == (2, 2)
    np.testing.assert_array_equal(out.data["intensity"], 0.25)


def test_downsample_valid_mean():
    d = np.array([[2.0, 2.0], [2.0, 0.0]])
    out = downsample(ChannelImage.from_arrays(depth=d))
    assert out.mask["depth"][0, 0] and out.data["depth"][0, 0] == 2.0
    out = downsample(ChannelImage.from_arrays(depth=np.zeros((2, 2))))
    assert not out.mask["depth"][0, 0]


def test_pyramid_conserves_mean(rng):
    vals = rng.uniform(size=(32, 48))
    pyr = build_pyramid(ChannelImage.from_arrays(intensity=vals), pinhole(width=48, height=32), 3)
    for img, _ in pyr.levels:
        assert abs(img.data["intensity"].mean() - vals.mean()) < 1e-12


def test_pyramid_normals_unit(rng):
    n = rng.normal(size=(16, 16, 3)) + [0, 0, -3]
    n /= np.linalg.norm(n, axis=-1, keepdims=True)
    pyr = build_pyramid(ChannelImage.from_arrays(normal=n), pinhole(width=16, height=16), 2)
    coarse = pyr[0][0]
    norms = np.linalg.norm(coarse.data["normal"][coarse.mask["normal"]], axis=-1)
    assert np.all(np.abs(norms - 1) < 1e-6)


def test_pyramid_projector_scaling():
    proj = pinhole()
    pyr = build_pyramid(ChannelImage.from_arrays(intensity=np.ones((480, 640))), proj, 3)
    _, p = pyr[0]
    assert (p.width, p.height) == (160, 120)
    assert p.K.fx == proj.K.fx / 4
    assert p.K.cx == pytest.approx(((proj.K.cx + 0.5) / 2 - 0.5 + 0.5) / 2 - 0.5)


def test_pyramid_crops_to_multiple():
    pyr = build_pyramid(ChannelImage.from_arrays(intensity=np.ones((35, 37))),
                        pinhole(width=37, height=35), 3)
    assert (pyr.finest[0].width, pyr.finest[0].height) == (36, 32)
    assert (pyr[0][0].width, pyr[0][0].height) == (9, 8)


def test_pyramid_rejects_tiny_levels():
    with pytest.raises(ValueError):
        build_pyramid(ChannelImage.from_arrays(intensity=np.ones((30, 30))),
                      pinhole(width=30, height=30), 3)
    with pytest.raises(ValueError):
        build_pyramid(ChannelImage.from_arrays(intensity=np.ones((30, 30))),
                      pinhole(width=30, height=30), 0)


def test_error_image_values():
    meas = ChannelImage.from_arrays(intensity=np.zeros((3, 3)))
    assert not render_error_image(meas, meas, "intensity").any()
    p = np.zeros((3, 3))
    p[0, 0] = 0.25
    p[1, 1] = 0.125
    p[2, 2] = 1.0
    out = render_error_image(meas, ChannelImage.from_arrays(intensity=p), "intensity", 0.25)
    assert out.dtype == np.uint8
    assert out[0, 0] == 255 and out[1, 1] == 127 and out[2, 2] == 255 and out[0, 1] == 0


def test_error_image_invalid_and_mismatch():
    meas = ChannelImage.from_arrays(intensity=np.array([[np.nan, 0.0]]))
    pred = ChannelImage.from_arrays(intensity=np.array([[1.0, 1.0]]))
    np.testing.assert_array_equal(render_error_image(meas, pred, "intensity", 1.0), [[0, 255]])
    with pytest.raises(ValueError):
        render_error_image(meas, ChannelImage.from_arrays(intensity=np.ones((2, 2))), "intensity")


@pytest.mark.parametrize("suffix", [".png", ".pgm"])
def test_write_gray(tmp_path, suffix, rng):
    img = rng.integers(0, 256, size=(7, 9)).astype(np.uint8)
    path = tmp_path / f"e{suffix}"
    write_gray(path, img)
    with Image.open(path) as im:
        np.testing.assert_array_equal(np.array(im), img)


def test_channel_image_rejects_mixed_sizes():
    with pytest.raises(ValueError):
        ChannelImage.from_arrays(intensity=np.ones((3, 3)), depth=np.ones((3, 4)))


def test_invalid_values_never_read():
    d = np.array([[1.0, np.nan], [0.0, -1.0]])
    img = ChannelImage.from_arrays(depth=d)
    np.testing.assert_array_equal(img.mask["depth"], [[True, False], [False, False]])
    np.testing.assert_array_equal(img.data["depth"], [[1.0, 0.0], [0.0, 0.0]])


def test_read_only_channels_shared_not_mutated():
    img = ChannelImage.from_arrays(depth=np.array([[1.0, np.nan], [2.0, 3.0]]))
    again = img.with_channels({}, {})
    assert again.data["depth"] is img.data["depth"]
    raw = np.array([[1.0, 5.0]])
    raw.flags.writeable = False
    other = ChannelImage({"depth": raw}, {"depth": np.array([[True, False]])})
    np.testing.assert_array_equal(other.data["depth"], [[1.0, 0.0]])
    assert raw[0, 1] == 5.0
