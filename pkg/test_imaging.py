import os
import sys

sys.path.append(os.path.join(os.path.dirname(__file__), 'src'))

import numpy as np
import pytest
from PIL import Image

from data.models import GrayImage, NormalizedTexture, SubpixelSample
from tools.imaging import bilinear_sample, load_image, read_texture_dump, save_image, to_gray_image, write_texture_dump
from utils.errors import EmptyImageError, ImageFormatError, ImageReadError


def test_load_constant_pgm(tmp_path):
    path = tmp_path / "flat.pgm"
    Image.fromarray(np.full((4, 4), 128, dtype=np.uint8)).save(path, format="PPM")

    img = load_image(str(path))

    assert (img.width, img.height) == (4, 4)
    assert np.all(img.pixels == 128)


def test_rgb_png_is_converted_to_bt601_luma(tmp_path):
    path = tmp_path / "color.png"
    rgb = np.zeros((2, 3, 3), dtype=np.uint8)
    rgb[0, 0] = (200, 100, 0)
    Image.fromarray(rgb).save(path)

    img = load_image(str(path))

    assert img.pixels[0, 0] == 119
    assert img.pixels.dtype == np.uint8


def test_truncated_png_is_a_format_error(tmp_path):
    good = tmp_path / "good.png"
    Image.fromarray(np.random.default_rng(0).integers(0, 256, (64, 64), dtype=np.uint8)).save(good)
    blob = good.read_bytes()
    bad = tmp_path / "bad.png"
    bad.write_bytes(blob[: len(blob) // 2])

    with pytest.raises(ImageFormatError):
        load_image(str(bad))


def test_missing_and_garbage_files(tmp_path):
    with pytest.raises(ImageReadError):
        load_image(str(tmp_path / "nope.png"))
    junk = tmp_path / "junk.png"
    junk.write_bytes(b"not an image at all")
    with pytest.raises(ImageFormatError):
        load_image(str(junk))


def test_empty_array_is_rejected():
    with pytest.raises(EmptyImageError):
        to_gray_image(np.zeros((0, 5), dtype=np.uint8))


def test_png_save_then_load_is_pixel_identical(tmp_path):
    pixels = np.random.default_rng(3).integers(0, 256, (17, 23), dtype=np.uint8)
    path = tmp_path / "rt.png"
    save_image(GrayImage(pixels=pixels), str(path))
    assert np.array_equal(load_image(str(path)).pixels, pixels)


@pytest.mark.parametrize(
    "pixels, point, expected",
    [
        (np.full((3, 3), 50), (1.7, 0.2), 50.0),
        (np.array([[0, 100], [0, 100]]), (0.5, 0.0), 50.0),
        # x(1-y)*100 + (1-x)y*200 + xy*255
        (np.array([[0, 100], [200, 255]]), (0.25, 0.75), 166.5625),
        (np.array([[10, 20], [30, 40]]), (1.0, 1.0), 40.0),
        # clamped to the border
        (np.array([[10, 20], [30, 40]]), (-3.0, 7.5), 30.0),
    ],
)
def test_bilinear_sample(pixels, point, expected):
    img = GrayImage(pixels=pixels.astype(np.uint8))
    assert bilinear_sample(img, SubpixelSample(x=point[0], y=point[1])) == pytest.approx(expected, abs=1e-9)


def test_bilinear_sample_stays_within_neighbours():
    rng = np.random.default_rng(11)
    img = GrayImage(pixels=rng.integers(0, 256, (8, 8), dtype=np.uint8))
    for _ in range(200):
        x, y = rng.uniform(0, 7, size=2)
        value = bilinear_sample(img, SubpixelSample(x=x, y=y))
        block = img.pixels[int(y) : int(y) + 2, int(x) : int(x) + 2]
        assert block.min() - 1e-9 <= value <= block.max() + 1e-9


def test_texture_dump_keeps_float32_values(tmp_path):
    values = np.arange(512 * 64, dtype=np.float64).reshape(64, 512) % 255 + 0.25
    path = tmp_path / "tex.msat"
    write_texture_dump(NormalizedTexture(values=values), str(path))

    assert path.read_bytes()[:4] == b"MSAT"
    assert os.path.getsize(path) == 12 + 4 * 512 * 64
    back = read_texture_dump(str(path))
    assert (back.width, back.height) == (512, 64)
    assert np.array_equal(back.values, values)


def test_texture_dump_with_wrong_magic(tmp_path):
    path = tmp_path / "bad.msat"
    path.write_bytes(b"NOPE" + b"\x00" * 8)
    with pytest.raises(ImageFormatError):
        read_texture_dump(str(path))
