"""Rubber-sheet unwrapping of the extended annulus and CLAHE enhancement."""

from typing import Union

import numpy as np

from data.models import ExtendedBoundaries, GrayImage, NormalizedTexture, RingSpec
from tools.imaging import bilinear_sample_grid

N_BINS = 256


def polar_grid(b: Union[ExtendedBoundaries, RingSpec], width: int, height: int) -> tuple[np.ndarray, np.ndarray]:
    """Sampling coordinates: angle 0 along +x, counter-clockwise on screen (y grows down)."""
    theta = 2.0 * np.pi * np.arange(width) / width
    t = np.arange(height) / (height - 1)
    radii = b.inner.r + t * (b.outer.r - b.inner.r)
    xs = b.inner.cx + radii[:, None] * np.cos(theta)[None, :]
    ys = b.inner.cy - radii[:, None] * np.sin(theta)[None, :]
    return xs, ys


def rubber_sheet(
    img: GrayImage,
    b: Union[ExtendedBoundaries, RingSpec],
    width: int = 512,
    height: int = 64,
) -> NormalizedTexture:
    """Unwrap the annulus between ``b.inner`` and ``b.outer`` into a width x height grid.

    Row r samples the circle at t = r/(height-1) between the inner and outer
    boundary points, column c the angle 2*pi*c/width.
    """
    if width < 2 or height < 2:
        raise ValueError(f"texture must be at least 2x2, got {width}x{height}")
    xs, ys = polar_grid(b, width, height)
    values = bilinear_sample_grid(img.pixels, xs, ys)
    return NormalizedTexture(values=np.clip(values, 0.0, 255.0))


def _tile_bounds(length: int, tiles: int) -> list[np.ndarray]:
    return np.array_split(np.arange(length), min(tiles, length))


def clahe_mappings(tex: NormalizedTexture, clip_limit: float, tiles_x: int, tiles_y: int) -> np.ndarray:
    """Per-tile gray-level mappings, shape (tiles_y, tiles_x, 256)."""
    if clip_limit <= 0:
        raise ValueError(f"clip_limit must be positive, got {clip_limit}")
    bins = np.clip(np.floor(tex.values + 0.5), 0, N_BINS - 1).astype(np.int64)
    row_tiles = _tile_bounds(tex.height, tiles_y)
    col_tiles = _tile_bounds(tex.width, tiles_x)
    maps = np.empty((len(row_tiles), len(col_tiles), N_BINS), dtype=np.float64)
    for j, rows in enumerate(row_tiles):
        for i, cols in enumerate(col_tiles):
            tile = bins[rows[0] : rows[-1] + 1, cols[0] : cols[-1] + 1]
            n = tile.size
            hist = np.bincount(tile.ravel(), minlength=N_BINS).astype(np.float64)
            limit = clip_limit * n / N_BINS
            excess = np.maximum(hist - limit, 0.0).sum()
            hist = np.minimum(hist, limit) + excess / N_BINS
            maps[j, i] = np.clip(np.cumsum(hist) * 255.0 / n, 0.0, 255.0)
    return maps


def _blend_axis(length: int, tiles: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Neighbouring tile indices and the weight of the second one, per coordinate."""
    centers = np.array([(t[0] + t[-1]) / 2.0 for t in tiles])
    pos = np.arange(length, dtype=np.float64)
    upper = np.clip(np.searchsorted(centers, pos, side="right"), 1, max(len(centers) - 1, 1))
    lower = upper - 1
    if len(centers) == 1:
        zeros = np.zeros(length, dtype=np.int64)
        return zeros, zeros, np.zeros(length)
    span = centers[upper] - centers[lower]
    weight = np.clip((pos - centers[lower]) / span, 0.0, 1.0)
    return lower, upper, weight


def clahe(tex: NormalizedTexture, clip_limit: float = 2.0, tiles_x: int = 8, tiles_y: int = 8) -> NormalizedTexture:
    """Contrast-limited adaptive histogram equalization.

    Histograms use 256 integer bins, are clipped at clip_limit * tile_pixels / 256
    with the excess spread evenly over all bins, and each pixel blends the
    mappings of its four nearest tile centers bilinearly.
    """
    maps = clahe_mappings(tex, clip_limit, tiles_x, tiles_y)
    bins = np.clip(np.floor(tex.values + 0.5), 0, N_BINS - 1).astype(np.int64)
    j0, j1, wy = _blend_axis(tex.height, _tile_bounds(tex.height, tiles_y))
    i0, i1, wx = _blend_axis(tex.width, _tile_bounds(tex.width, tiles_x))

    J0, J1 = j0[:, None], j1[:, None]
    I0, I1 = i0[None, :], i1[None, :]
    WY, WX = wy[:, None], wx[None, :]
    top = (1.0 - WX) * maps[J0, I0, bins] + WX * maps[J0, I1, bins]
    bottom = (1.0 - WX) * maps[J1, I0, bins] + WX * maps[J1, I1, bins]
    out = (1.0 - WY) * top + WY * bottom
    return NormalizedTexture(values=np.clip(out, 0.0, 255.0))


def resample_rows(values: np.ndarray, new_height: int) -> np.ndarray:
    """Linear vertical resampling with the first and last rows pinned."""
    values = np.asarray(values, dtype=np.float64)
    height = values.shape[0]
    if new_height < 1:
        raise ValueError(f"new_height must be positive, got {new_height}")
    if new_height == height:
        return values.copy()
    if new_height == 1:
        src = np.array([(height - 1) / 2.0])
    else:
        src = np.arange(new_height) * (height - 1) / (new_height - 1)
    lo = np.clip(np.floor(src).astype(np.int64), 0, height - 1)
    hi = np.minimum(lo + 1, height - 1)
    frac = (src - lo)[:, None]
    return (1.0 - frac) * values[lo] + frac * values[hi]
