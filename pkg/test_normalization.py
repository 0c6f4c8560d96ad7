import os
import sys

sys.path.append(os.path.join(os.path.dirname(__file__), 'src'))

import numpy as np
import pytest

from data.models import CircleParams, ExtendedBoundaries, GrayImage, NormalizedTexture, SynthParams
from harness.synth import render_eye
from stages.normalization import clahe, clahe_mappings, resample_rows, rubber_sheet
from stages.segmentation import extend_boundaries
from tools.imaging import quantize


def _boundaries(inner=60.0, outer=100.0, cx=160.0, cy=120.0):
    return ExtendedBoundaries(
        inner=CircleParams(cx=cx, cy=cy, r=inner),
        outer=CircleParams(cx=cx, cy=cy, r=outer),
        s1=0.4,
        s2=0.4,
    )


def test_rubber_sheet_of_constant_image():
    img = GrayImage(pixels=np.full((240, 320), 80, dtype=np.uint8))
    tex = rubber_sheet(img, _boundaries(), 512, 64)
    assert (tex.width, tex.height) == (512, 64)
    assert np.allclose(tex.values, 80.0)


def test_rubber_sheet_rows_follow_radius():
    ys, xs = np.mgrid[0:240, 0:320]
    rho = np.hypot(xs - 160.0, ys - 120.0)
    img = GrayImage(pixels=quantize(255.0 * np.clip(rho - 79.5, 0.0, 1.0)))

    tex = rubber_sheet(img, _boundaries(), 512, 64)

    # radius 80 sits between rows 31 and 32
    first_bright = np.argmax(tex.values >= 127.5, axis=0)
    assert set(first_bright.tolist()) <= {30, 31, 32, 33, 34}
    assert np.all(tex.values[:30] < 127.5)
    assert np.all(tex.values[34:] >= 127.5)


def test_hard_radial_step_jumps_at_row_32():
    # same annulus scaled by 10: rows 31 and 32 sample radii 796.8 and 803.2,
    # both more than a bilinear footprint away from the step at 800
    ys, xs = np.mgrid[0:2100, 0:2100]
    rho = np.hypot(xs - 1050.0, ys - 1050.0)
    img = GrayImage(pixels=np.where(rho >= 800.0, 255, 0).astype(np.uint8))

    tex = rubber_sheet(img, _boundaries(600.0, 1000.0, 1050.0, 1050.0), 512, 64).values

    steepest = np.argmax(np.diff(tex, axis=0), axis=0) + 1
    assert np.all(steepest == 32)
    assert np.allclose(tex[:32], 0.0)
    assert np.allclose(tex[32:], 255.0)


@pytest.mark.parametrize("seed", range(20))
def test_rotation_becomes_a_column_shift(seed):
    params = SynthParams(image_size=256, noise_std=0.0, bona_fide_count=1, attack_count=1)
    k = 7 + 11 * seed
    base = render_eye(params, np.random.default_rng(seed))
    turned = render_eye(params, np.random.default_rng(seed), rotation=2.0 * np.pi * k / 512)
    b = extend_boundaries(base.segmentation)

    tex0 = rubber_sheet(base.image, b, 512, 64).values
    tex1 = rubber_sheet(turned.image, b, 512, 64).values

    assert np.mean(np.abs(np.roll(tex0, k, axis=1) - tex1)) <= 2.0


@pytest.mark.parametrize("level", [0.0, 37.0, 128.0, 255.0])
def test_clahe_keeps_constant_texture_constant(level):
    out = clahe(NormalizedTexture(values=np.full((64, 512), level)))
    assert np.allclose(out.values, out.values[0, 0])


def test_clahe_single_tile_without_clipping_is_global_equalization():
    values = np.zeros((64, 512))
    values[:, 256:] = 255.0
    out = clahe(NormalizedTexture(values=values), clip_limit=1000.0, tiles_x=1, tiles_y=1)
    assert np.allclose(out.values[:, :256], 127.5)
    assert np.allclose(out.values[:, 256:], 255.0)


def test_clahe_mappings_are_monotone_and_bounded():
    rng = np.random.default_rng(2)
    tex = NormalizedTexture(values=rng.uniform(0, 255, size=(64, 512)))
    maps = clahe_mappings(tex, 2.0, 8, 8)
    assert maps.shape == (8, 8, 256)
    assert np.all(np.diff(maps, axis=-1) >= 0)
    assert maps.min() >= 0.0 and maps.max() <= 255.0


def test_clahe_output_stays_in_range():
    rng = np.random.default_rng(4)
    out = clahe(NormalizedTexture(values=rng.uniform(0, 255, size=(64, 512))), 2.0, 8, 8)
    assert out.values.shape == (64, 512)
    assert out.values.min() >= 0.0 and out.values.max() <= 255.0


def test_resample_rows_matches_linear_interpolation():
    rng = np.random.default_rng(9)
    values = rng.uniform(0, 255, size=(64, 40))
    out = resample_rows(values, 32)

    src = np.arange(32) * 63 / 31
    expected = np.stack([np.interp(src, np.arange(64), values[:, c]) for c in range(40)], axis=1)
    assert out.shape == (32, 40)
    assert np.allclose(out, expected)
    assert np.array_equal(out[0], values[0]) and np.allclose(out[-1], values[-1])


def test_resample_rows_same_height_is_a_copy():
    values = np.arange(64 * 8, dtype=np.float64).reshape(64, 8)
    out = resample_rows(values, 64)
    assert np.array_equal(out, values)
    assert out is not values
