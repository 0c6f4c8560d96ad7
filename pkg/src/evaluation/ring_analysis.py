"""Per-ring PAD informativeness.

The extended annulus is cut into equal-width concentric rings; each ring is
unwrapped on its own, fed to an independently trained classifier and scored
by its test-set EER.
"""

from concurrent.futures import ThreadPoolExecutor
from typing import Sequence

import numpy as np

from data.models import (
    CircleParams,
    ExtendedBoundaries,
    GrayImage,
    ManifestRecord,
    RingProfile,
    RingSpec,
    ScoredSample,
    Split,
    TrainConfig,
)
from evaluation.metrics import eer
from stages.classifier import lbp_histograms, predict_proba, train
from stages.normalization import clahe, rubber_sheet
from utils.config import derive_seed
from utils.errors import RingConfigError
from utils.progress import progress


def ring_boundaries(b: ExtendedBoundaries, n: int) -> list[RingSpec]:
    """``n`` contiguous rings of equal width between ``b.inner`` and ``b.outer``."""
    if n < 2:
        raise RingConfigError(f"ring count must be at least 2, got {n}")
    cx, cy = b.inner.cx, b.inner.cy
    width = (b.outer.r - b.inner.r) / n
    edges = [b.inner.r + i * width for i in range(n)] + [b.outer.r]
    return [
        RingSpec(
            index=i,
            inner=CircleParams(cx=cx, cy=cy, r=edges[i]),
            outer=CircleParams(cx=cx, cy=cy, r=edges[i + 1]),
        )
        for i in range(n)
    ]


def ring_features(
    img: GrayImage,
    ring: RingSpec,
    texture_width: int,
    ring_texture_height: int,
    clip_limit: float,
    tiles_x: int,
    tiles_y: int,
    cells_x: int,
    cells_y: int,
) -> np.ndarray:
    """LBP histogram of one ring, unwrapped and enhanced like a full texture."""
    sheet = rubber_sheet(img, ring, texture_width, ring_texture_height)
    tex = clahe(sheet, clip_limit, tiles_x, tiles_y)
    return lbp_histograms(tex.values, cells_x, cells_y)


def per_ring_eer(
    records: Sequence[ManifestRecord],
    n: int,
    ring_texture_height: int,
    cfg: TrainConfig,
    preprocessor,
) -> RingProfile:
    """Train one classifier per ring and collect the test EERs.

    ``preprocessor`` supplies images and extended boundaries (see
    ``harness.pipeline.Preprocessor``); its settings give the texture width,
    CLAHE and LBP cell parameters. Ring ``i`` trains with a seed derived from
    ``(cfg.seed, i)``; the dev split, when present, drives early stopping.
    """
    if n < 2:
        raise RingConfigError(f"ring count must be at least 2, got {n}")
    settings = preprocessor.settings
    norm = settings.normalization
    feature_config = settings.feature_config_for(ring_texture_height)

    splits = {s: [r for r in records if r.split == s] for s in Split}
    used = splits[Split.TRAIN] + splits[Split.DEV] + splits[Split.TEST]

    def load(record: ManifestRecord) -> tuple[GrayImage, list[RingSpec]]:
        img = preprocessor.image(record)
        return img, ring_boundaries(preprocessor.boundaries(record, img), n)

    progress.update_status("rings", None, "Loading images")
    loaded = dict(zip((r.image_id for r in used), preprocessor.map(load, used)))

    def features_of(split: Split, i: int) -> np.ndarray:
        rows = [
            ring_features(
                loaded[r.image_id][0],
                loaded[r.image_id][1][i],
                norm.width,
                ring_texture_height,
                norm.clip_limit,
                norm.tiles_x,
                norm.tiles_y,
                feature_config.cells_x,
                feature_config.cells_y,
            )
            for r in splits[split]
        ]
        return np.vstack(rows) if rows else np.empty((0, feature_config.feature_length))

    def run_ring(i: int) -> float:
        progress.update_status(f"rings:{i}", None, "Training")
        X_train, X_dev, X_test = (features_of(s, i) for s in (Split.TRAIN, Split.DEV, Split.TEST))
        dev = (X_dev, [r.truth for r in splits[Split.DEV]]) if len(X_dev) else (None, None)
        model = train(
            X_train,
            [r.truth for r in splits[Split.TRAIN]],
            dev[0],
            dev[1],
            cfg=cfg.model_copy(update={"seed": derive_seed(cfg.seed, "ring", i)}),
            feature_config=feature_config,
            name=f"rings:{i}",
        )
        probs = predict_proba(model, X_test)
        samples = [
            ScoredSample(image_id=r.image_id, truth=r.truth, score=float(p))
            for r, p in zip(splits[Split.TEST], probs)
        ]
        ring_eer, _ = eer(samples)
        progress.update_status(f"rings:{i}", None, "Done")
        return ring_eer

    workers = max(1, min(settings.workers, n))
    if workers == 1:
        eers = [run_ring(i) for i in range(n)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            eers = list(pool.map(run_ring, range(n)))
    progress.update_status("rings", None, "Done")
    return RingProfile.from_eers(eers)


def mean_profile(profiles: Sequence[RingProfile]) -> RingProfile:
    """Element-wise mean EER over repeats, renormalized."""
    return RingProfile.from_eers(np.mean([p.eers for p in profiles], axis=0).tolist())

