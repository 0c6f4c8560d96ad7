"""Pupil/iris circle localization and the extended annulus used for normalization."""

import math
import os
from typing import Optional

import numpy as np
from pydantic import ValidationError
from skimage import feature, filters
from skimage.transform import hough_circle

from data.models import CircleParams, DetectorConfig, ExtendedBoundaries, GrayImage, Segmentation
from utils.errors import (
    DegenerateBoundariesError,
    MalformedSegmentationError,
    SegmentationFailedError,
    SegmentationParseError,
)
from utils.progress import progress


def _edge_map(img: GrayImage, config: DetectorConfig) -> tuple[np.ndarray, np.ndarray]:
    field = img.pixels.astype(np.float64) / 255.0
    smoothed = filters.gaussian(field, sigma=config.sigma, preserve_range=True)
    strength = filters.sobel(smoothed) * 255.0
    if float(strength.max()) < config.min_edge_strength:
        raise SegmentationFailedError("no edges in image")
    edges = feature.canny(
        field,
        sigma=config.sigma,
        low_threshold=config.low_quantile,
        high_threshold=config.high_quantile,
        use_quantiles=True,
    )
    if not edges.any():
        raise SegmentationFailedError("edge map is empty")
    return edges, smoothed * 255.0


def _windowed(acc: np.ndarray) -> np.ndarray:
    """Sum each radius slice with its two neighbours (edges straddle integer radii)."""
    padded = np.pad(acc, ((1, 1), (0, 0), (0, 0)))
    return padded[:-2] + padded[1:-1] + padded[2:]


def _best_circle(acc: np.ndarray, radii: np.ndarray, allowed: np.ndarray) -> tuple[Optional[CircleParams], float]:
    score = _windowed(acc)
    score[:, ~allowed] = -np.inf
    flat = int(np.argmax(score))
    ri, y, x = np.unravel_index(flat, score.shape)
    best = float(score[ri, y, x])
    if not np.isfinite(best):
        return None, 0.0

    lo, hi = max(ri - 1, 0), min(ri + 2, len(radii))
    weights = acc[lo:hi, y, x]
    r = float(np.average(radii[lo:hi], weights=weights)) if weights.sum() > 0 else float(radii[ri])

    # subpixel center from the 3x3 neighbourhood of the winning radius
    y0, y1 = max(y - 1, 0), min(y + 2, score.shape[1])
    x0, x1 = max(x - 1, 0), min(x + 2, score.shape[2])
    patch = np.where(np.isfinite(score[ri, y0:y1, x0:x1]), score[ri, y0:y1, x0:x1], 0.0)
    patch = np.clip(patch, 0.0, None)
    if patch.sum() > 0:
        ys, xs = np.mgrid[y0:y1, x0:x1]
        cy = float((ys * patch).sum() / patch.sum())
        cx = float((xs * patch).sum() / patch.sum())
    else:
        cy, cx = float(y), float(x)
    return CircleParams(cx=cx, cy=cy, r=r), best


def detect_circles(img: GrayImage, config: DetectorConfig, image_id: Optional[str] = None) -> Segmentation:
    """Locate pupil and iris with a Hough accumulator over a Canny edge map.

    The pupil is searched first among dark pixels; the iris is then searched
    around the pupil center within ``config.center_tolerance``. Raises
    SegmentationFailedError with the best partial result when either circle
    scores below ``config.accumulator_threshold``.
    """
    progress.update_status("segmentation", image_id, "Detecting circles")
    edges, smoothed = _edge_map(img, config)

    dark = smoothed < np.quantile(smoothed, config.dark_quantile) + config.dark_margin
    pupil_radii = np.arange(config.pupil_radius_min, config.pupil_radius_max + 1)
    pupil_acc = hough_circle(edges, pupil_radii, normalize=True)
    pupil, pupil_score = _best_circle(pupil_acc, pupil_radii, dark)
    if pupil is None or pupil_score < config.accumulator_threshold:
        raise SegmentationFailedError(
            f"no pupil circle above threshold (best score {pupil_score:.3f})", best_pupil=pupil
        )

    r_min = max(config.iris_radius_min, int(math.ceil(pupil.r)) + config.min_ring_gap)
    if r_min > config.iris_radius_max:
        raise SegmentationFailedError("iris radius range lies inside the pupil", best_pupil=pupil)
    iris_radii = np.arange(r_min, config.iris_radius_max + 1)
    ys, xs = np.mgrid[0 : img.height, 0 : img.width]
    near = np.hypot(xs - pupil.cx, ys - pupil.cy) <= config.center_tolerance
    iris_acc = hough_circle(edges, iris_radii, normalize=True)
    iris, iris_score = _best_circle(iris_acc, iris_radii, near)
    if iris is None or iris_score < config.accumulator_threshold:
        raise SegmentationFailedError(
            f"no iris circle above threshold (best score {iris_score:.3f})", best_pupil=pupil, best_iris=iris
        )

    try:
        seg = Segmentation(pupil=pupil, iris=iris)
    except ValidationError as e:
        raise SegmentationFailedError(
            f"detected circles are inconsistent: {e.errors()[0]['msg']}", best_pupil=pupil, best_iris=iris
        )
    progress.update_status("segmentation", image_id, "Done")
    return seg


# ---------------------------------------------------------------------------
# Segmentation files: "pupil_cx pupil_cy pupil_r iris_cx iris_cy iris_r" per line
# ---------------------------------------------------------------------------


def parse_segmentation_line(line: str, lineno: Optional[int] = None) -> Segmentation:
    fields = line.split()
    if len(fields) != 6:
        raise SegmentationParseError(f"expected 6 fields, got {len(fields)}", line=lineno)
    try:
        values = [float(f) for f in fields]
    except ValueError:
        raise SegmentationParseError(f"non-numeric field in {line.strip()!r}", line=lineno)
    if not all(math.isfinite(v) for v in values):
        raise SegmentationParseError("non-finite field", line=lineno)
    pcx, pcy, pr, icx, icy, ir = values
    try:
        return Segmentation(
            pupil=CircleParams(cx=pcx, cy=pcy, r=pr),
            iris=CircleParams(cx=icx, cy=icy, r=ir),
        )
    except ValidationError as e:
        raise MalformedSegmentationError(e.errors()[0]["msg"], line=lineno)


def load_segmentations(path: str) -> list[Segmentation]:
    """Every data line of a segmentation file, in order; '#' lines are skipped."""
    try:
        with open(path, encoding="utf-8") as handle:
            lines = handle.readlines()
    except OSError as e:
        raise SegmentationParseError(f"cannot read segmentation file {path}: {e}")
    segs = []
    for lineno, line in enumerate(lines, start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        segs.append(parse_segmentation_line(stripped, lineno))
    return segs


def load_segmentation(path: str) -> Segmentation:
    segs = load_segmentations(path)
    if not segs:
        raise SegmentationParseError(f"no segmentation line in {path}")
    return segs[0]


def resolve_segmentation_ref(ref: str, base_dir: str = ".") -> Segmentation:
    """``file`` selects the first data line, ``file#k`` the k-th (0-based)."""
    path, _, index = ref.partition("#")
    if not os.path.isabs(path):
        path = os.path.join(base_dir, path)
    if not index:
        return load_segmentation(path)
    try:
        k = int(index)
    except ValueError:
        raise SegmentationParseError(f"bad line selector in segmentation reference {ref!r}")
    segs = load_segmentations(path)
    if not 0 <= k < len(segs):
        raise SegmentationParseError(f"segmentation reference {ref!r} is out of range ({len(segs)} lines)")
    return segs[k]


def format_segmentation(seg: Segmentation) -> str:
    values = (seg.pupil.cx, seg.pupil.cy, seg.pupil.r, seg.iris.cx, seg.iris.cy, seg.iris.r)
    return " ".join(format(v, ".10g") for v in values)


def write_segmentations(path: str, segs: list[Segmentation], header: Optional[str] = None) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        if header:
            handle.write(f"# {header}\n")
        for seg in segs:
            handle.write(format_segmentation(seg) + "\n")


# ---------------------------------------------------------------------------
# Boundary extension
# ---------------------------------------------------------------------------


def extend_boundaries(seg: Segmentation, s1: float = 0.4, s2: float = 0.4) -> ExtendedBoundaries:
    """Contract/expand the iris circle by fractions of the iris-pupil radius gap.

    inner.r = r_iris - (r_iris - r_pupil) * s1
    outer.r = r_iris + (r_iris - r_pupil) * s2

    Both circles share the iris center.
    """
    for name, s in (("s1", s1), ("s2", s2)):
        if not 0.0 < s < 1.0:
            raise DegenerateBoundariesError(f"{name}={s} must lie in (0, 1)")
    gap = seg.iris.r - seg.pupil.r
    inner_r = seg.iris.r - gap * s1
    outer_r = seg.iris.r + gap * s2
    if inner_r <= 0.0:
        raise DegenerateBoundariesError(f"inner radius {inner_r} is not positive")
    if not inner_r < outer_r:
        raise DegenerateBoundariesError(f"annulus is empty (inner {inner_r}, outer {outer_r})")
    cx, cy = seg.iris.cx, seg.iris.cy
    return ExtendedBoundaries(
        inner=CircleParams(cx=cx, cy=cy, r=inner_r),
        outer=CircleParams(cx=cx, cy=cy, r=outer_r),
        s1=s1,
        s2=s2,
    )
