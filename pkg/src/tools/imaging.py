"""Raster I/O, subpixel sampling and texture dumps."""

import os
import struct
from typing import Union

import numpy as np
from PIL import Image, UnidentifiedImageError
from scipy import ndimage

from data.models import GrayImage, NormalizedTexture, SubpixelSample
from utils.errors import EmptyImageError, ImageFormatError, ImageReadError

SUPPORTED_FORMATS = {"PNG", "PPM", "BMP", "TIFF"}
WRITE_FORMATS = {".png": "PNG", ".pgm": "PPM"}

TEXTURE_MAGIC = b"MSAT"
_TEXTURE_HEADER = struct.Struct("<4sII")


def to_gray_image(array) -> GrayImage:
    arr = np.asarray(array)
    if arr.ndim != 2 or arr.shape[0] == 0 or arr.shape[1] == 0:
        raise EmptyImageError(f"image has no pixels (shape {arr.shape})")
    return GrayImage(pixels=arr)


def _luma(rgb: np.ndarray) -> np.ndarray:
    """BT.601 luma with half-up rounding, in integer arithmetic."""
    rgb = rgb.astype(np.int64)
    weighted = 299 * rgb[..., 0] + 587 * rgb[..., 1] + 114 * rgb[..., 2]
    return ((weighted + 500) // 1000).astype(np.uint8)


def load_image(path: str) -> GrayImage:
    if not os.path.isfile(path):
        raise ImageReadError(f"cannot read image {path}: no such file")
    try:
        with Image.open(path) as im:
            if im.format not in SUPPORTED_FORMATS:
                raise ImageFormatError(f"unsupported image format {im.format} for {path}")
            width, height = im.size
            if width == 0 or height == 0:
                raise EmptyImageError(f"image {path} has a zero dimension")
            im.load()
            if im.mode in ("1", "P", "PA", "RGBA", "CMYK", "YCbCr"):
                im = im.convert("RGB")
            elif im.mode == "LA":
                im = im.getchannel("L")
            if im.mode == "RGB":
                pixels = _luma(np.asarray(im))
            elif im.mode == "L":
                pixels = np.asarray(im, dtype=np.uint8)
            else:
                raise ImageFormatError(f"unsupported pixel mode {im.mode} in {path}")
    except UnidentifiedImageError as e:
        raise ImageFormatError(f"unrecognized image data in {path}: {e}")
    except (EmptyImageError, ImageFormatError):
        raise
    except (OSError, SyntaxError, ValueError) as e:
        # PIL reports truncated or corrupt data through these
        if isinstance(e, PermissionError):
            raise ImageReadError(f"cannot read image {path}: {e}")
        raise ImageFormatError(f"corrupt or truncated image {path}: {e}")
    return to_gray_image(pixels)


def save_image(img: GrayImage, path: str) -> None:
    fmt = WRITE_FORMATS.get(os.path.splitext(path)[1].lower())
    if fmt is None:
        raise ImageFormatError(f"cannot write {path}: only .png and .pgm are supported")
    Image.fromarray(np.ascontiguousarray(img.pixels, dtype=np.uint8)).save(path, format=fmt)


def bilinear_sample_grid(pixels: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Bilinear interpolation at (xs, ys); coordinates past the border clamp to it."""
    field = np.asarray(pixels, dtype=np.float64)
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    coords = np.stack([ys.ravel(), xs.ravel()])
    values = ndimage.map_coordinates(field, coords, order=1, mode="nearest")
    return values.reshape(xs.shape)


def bilinear_sample(img: GrayImage, p: SubpixelSample) -> float:
    value = bilinear_sample_grid(img.pixels, np.array([p.x]), np.array([p.y]))[0]
    return float(np.clip(value, 0.0, 255.0))


def quantize(values: np.ndarray) -> np.ndarray:
    return np.clip(np.floor(np.asarray(values, dtype=np.float64) + 0.5), 0, 255).astype(np.uint8)


def export_texture_pgm(tex: NormalizedTexture, path: str) -> None:
    save_image(GrayImage(pixels=quantize(tex.values)), path)


def write_texture_dump(grid: Union[NormalizedTexture, np.ndarray], path: str) -> None:
    """Dimensions header followed by little-endian float32 values, row-major."""
    values = grid.values if isinstance(grid, NormalizedTexture) else np.asarray(grid)
    height, width = values.shape
    with open(path, "wb") as handle:
        handle.write(_TEXTURE_HEADER.pack(TEXTURE_MAGIC, width, height))
        handle.write(np.ascontiguousarray(values, dtype="<f4").tobytes())


def read_texture_dump(path: str) -> NormalizedTexture:
    try:
        with open(path, "rb") as handle:
            blob = handle.read()
    except OSError as e:
        raise ImageReadError(f"cannot read texture dump {path}: {e}")
    if len(blob) < _TEXTURE_HEADER.size:
        raise ImageFormatError(f"texture dump {path} is truncated")
    magic, width, height = _TEXTURE_HEADER.unpack_from(blob)
    if magic != TEXTURE_MAGIC:
        raise ImageFormatError(f"{path} is not a texture dump")
    expected = _TEXTURE_HEADER.size + 4 * width * height
    if width == 0 or height == 0:
        raise EmptyImageError(f"texture dump {path} has a zero dimension")
    if len(blob) != expected:
        raise ImageFormatError(f"texture dump {path} holds {len(blob)} bytes, expected {expected}")
    values = np.frombuffer(blob, dtype="<f4", offset=_TEXTURE_HEADER.size).reshape(height, width)
    return NormalizedTexture(values=values.astype(np.float64))
