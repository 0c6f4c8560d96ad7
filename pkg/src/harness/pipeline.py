"""Per-record preprocessing and stripe featurization.

segment -> extend -> rubber sheet -> CLAHE, then micro-stripes and their LBP
feature rows. Results are cached per resolved image path and configuration.
"""

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Optional, Sequence, TypeVar

import numpy as np

from data.cache import Cache, get_cache
from data.models import ExtendedBoundaries, GrayImage, ManifestRecord, NormalizedTexture, Segmentation, StripeSet
from harness.manifest import resolve_path
from stages.classifier import stripe_feature_matrix
from stages.normalization import clahe, rubber_sheet
from stages.segmentation import detect_circles, extend_boundaries, resolve_segmentation_ref
from stages.stripes import extract_stripes, sample_odd_stripes
from tools.imaging import load_image
from utils.config import Settings, derive_seed
from utils.progress import progress

T = TypeVar("T")


class Preprocessor:
    def __init__(self, settings: Settings, manifest_dir: str = ".", cache: Optional[Cache] = None):
        self.settings = settings
        self.manifest_dir = manifest_dir
        self.cache = cache if cache is not None else get_cache()

    # -- single record ----------------------------------------------------

    def image(self, record: ManifestRecord) -> GrayImage:
        return load_image(resolve_path(record, self.manifest_dir))

    def _segmentation_key(self, record: ManifestRecord) -> tuple:
        source = record.segmentation_ref or f"detect:{self.settings.detector.model_dump_json()}"
        return (resolve_path(record, self.manifest_dir), source)

    def segmentation(self, record: ManifestRecord, img: Optional[GrayImage] = None) -> Segmentation:
        key = self._segmentation_key(record)
        seg = self.cache.get_segmentation(key)
        if seg is None:
            if record.segmentation_ref:
                seg = resolve_segmentation_ref(record.segmentation_ref, self.manifest_dir)
            else:
                seg = detect_circles(img if img is not None else self.image(record), self.settings.detector, record.image_id)
            self.cache.set_segmentation(key, seg)
        return seg

    def boundaries(self, record: ManifestRecord, img: Optional[GrayImage] = None) -> ExtendedBoundaries:
        norm = self.settings.normalization
        return extend_boundaries(self.segmentation(record, img), norm.s1, norm.s2)

    def texture(self, record: ManifestRecord) -> NormalizedTexture:
        norm = self.settings.normalization
        key = self._segmentation_key(record) + (norm.signature(),)
        tex = self.cache.get_texture(key)
        if tex is not None:
            return tex
        progress.update_status("preprocess", record.image_id, "Normalizing")
        img = self.image(record)
        sheet = rubber_sheet(img, self.boundaries(record, img), norm.width, norm.height)
        tex = clahe(sheet, norm.clip_limit, norm.tiles_x, norm.tiles_y)
        self.cache.set_texture(key, tex)
        return tex

    def stripe_set(self, record: ManifestRecord, height: int, stride: int) -> StripeSet:
        return extract_stripes(self.texture(record), height, stride, source_id=record.image_id)

    def features(self, record: ManifestRecord, height: int, stride: int) -> np.ndarray:
        """Feature rows of every stripe, ordered by row offset."""
        feature_config = self.settings.feature_config_for(height)
        key = self._segmentation_key(record) + (
            self.settings.normalization.signature(),
            height,
            stride,
            feature_config.config_hash,
        )
        matrix = self.cache.get_features(key)
        if matrix is None:
            matrix = stripe_feature_matrix(self.stripe_set(record, height, stride), feature_config)
            self.cache.set_features(key, matrix)
        return matrix

    def sampled_indices(self, record: ManifestRecord, height: int, stride: int, k: Optional[int], seed: int) -> np.ndarray:
        """Row indices into :meth:`features` for the stripes used at decision time."""
        stripe_set = self.stripe_set(record, height, stride)
        if k is None:
            return np.arange(len(stripe_set))
        sampled = sample_odd_stripes(stripe_set, k, derive_seed(seed, "sample", record.image_id))
        return np.array([s.row_offset // stride for s in sampled.stripes])

    # -- many records -----------------------------------------------------

    def map(self, fn: Callable[[ManifestRecord], T], records: Sequence[ManifestRecord]) -> list[T]:
        """Apply ``fn`` over records on the worker pool, results in input order."""
        if self.settings.workers <= 1 or len(records) <= 1:
            return [fn(r) for r in records]
        with ThreadPoolExecutor(max_workers=self.settings.workers) as pool:
            return list(pool.map(fn, records))

    def feature_rows(self, records: Sequence[ManifestRecord], height: int, stride: int) -> list[np.ndarray]:
        progress.update_status("features", f"h={height}", "Extracting stripe features")
        rows = self.map(lambda r: self.features(r, height, stride), records)
        progress.update_status("preprocess", None, "Done")
        progress.update_status("features", f"h={height}", "Done")
        return rows


def manifest_dir_of(manifest_path: str) -> str:
    return os.path.dirname(os.path.abspath(manifest_path))
