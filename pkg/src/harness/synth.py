"""Synthetic eye images with controllable presentation-attack artifacts.

An eye is a dark pupil disk, an iris annulus carrying a sum of polar
sinusoids and a bright sclera. Attack images add either a high-frequency
ring straddling the iris/sclera border (a textured lens edge) or a regular
dot grid over the iris (a printout). Soft lenses add a smooth, untextured
ring at a fraction of the attack contrast and stay bona fide.
"""

import os
from typing import Optional

import numpy as np
from pydantic import BaseModel

from data.models import (
    ArtifactType,
    CircleParams,
    GrayImage,
    LensType,
    ManifestRecord,
    PadLabel,
    Segmentation,
    Split,
    SynthParams,
)
from harness.manifest import split_counts, write_manifest
from stages.segmentation import write_segmentations
from tools.imaging import quantize, save_image
from utils.config import derive_seed, ensure_dir
from utils.errors import OutputError
from utils.progress import progress

MANIFEST_NAME = "manifest.csv"
SEGMENTATION_NAME = "segmentation.txt"
IMAGE_DIR = "images"

EYE_KINDS = ("bona_fide", "soft", "attack")


class RenderedEye(BaseModel):
    image: GrayImage
    segmentation: Segmentation


class SynthDataset(BaseModel):
    manifest_path: str
    segmentation_path: str
    records: list[ManifestRecord]


def _disk(rho: np.ndarray, radius: float) -> np.ndarray:
    """Anti-aliased disk coverage, 1 inside and 0 outside with a one-pixel ramp."""
    return np.clip(radius + 0.5 - rho, 0.0, 1.0)


def _band(rho: np.ndarray, center: float, half_width: float) -> np.ndarray:
    """Raised-cosine radial band, 1 at ``center`` falling to 0 at ``half_width``."""
    d = np.abs(rho - center)
    return np.where(d < half_width, 0.5 * (1.0 + np.cos(np.pi * d / half_width)), 0.0)


def render_eye(params: SynthParams, rng: np.random.Generator, kind: str = "bona_fide", rotation: float = 0.0) -> RenderedEye:
    """Render one eye.

    ``kind`` is ``bona_fide``, ``soft`` or ``attack``. ``rotation`` turns the
    iris texture and artifacts counter-clockwise (radians) while the circles
    stay put; with equal ``rng`` state two renderings differ only by it.
    """
    if kind not in EYE_KINDS:
        raise ValueError(f"unknown eye kind {kind!r}")
    n = params.image_size
    cx = n / 2.0 + rng.uniform(-params.center_jitter, params.center_jitter)
    cy = n / 2.0 + rng.uniform(-params.center_jitter, params.center_jitter)
    r_pupil = rng.uniform(params.pupil_radius_min, params.pupil_radius_max)
    r_iris = rng.uniform(params.iris_radius_min, params.iris_radius_max)
    gap = r_iris - r_pupil

    ys, xs = np.mgrid[0:n, 0:n].astype(np.float64)
    dx, dy = xs - cx, ys - cy
    rho = np.hypot(dx, dy)
    phi = np.arctan2(-dy, dx) - rotation

    # iris texture: polar sinusoids, integer angular frequency so it wraps cleanly
    t = (rho - r_pupil) / gap
    texture = np.zeros_like(rho)
    if params.texture_components:
        amp = params.texture_amplitude / np.sqrt(params.texture_components)
        for _ in range(params.texture_components):
            m = rng.integers(1, params.max_angular_freq + 1)
            k = rng.uniform(0.0, params.max_radial_freq)
            phase = rng.uniform(0.0, 2.0 * np.pi)
            weight = rng.uniform(0.5, 1.0)
            texture += amp * weight * np.cos(m * phi + 2.0 * np.pi * k * t + phase)
    artifact_phase = rng.uniform(0.0, 2.0 * np.pi)

    iris_cover = _disk(rho, r_iris)
    pupil_cover = _disk(rho, r_pupil)
    values = params.sclera_level * (1.0 - iris_cover) + (params.iris_level + texture) * iris_cover
    values = values * (1.0 - pupil_cover) + params.pupil_level * pupil_cover

    if kind != "bona_fide":
        band = _band(rho, r_iris + params.artifact_offset * gap, params.artifact_width * gap / 2.0)
        if kind == "soft":
            values += params.soft_lens_ratio * params.artifact_contrast * band
        elif params.artifact == ArtifactType.BORDER_RING:
            values += params.artifact_contrast * band * np.cos(params.artifact_frequency * phi + artifact_phase)
        else:
            s = params.dot_spacing
            # dot grid in the rotated frame so rotation moves the print with the eye
            u = rho * np.cos(phi)
            v = rho * np.sin(phi)
            du = np.mod(u, s) - s / 2.0
            dv = np.mod(v, s) - s / 2.0
            dots = np.clip(s / 4.0 + 0.5 - np.hypot(du, dv), 0.0, 1.0)
            values -= params.artifact_contrast * dots * iris_cover * (1.0 - pupil_cover)

    if params.noise_std > 0:
        values = values + rng.normal(0.0, params.noise_std, size=values.shape)

    seg = Segmentation(
        pupil=CircleParams(cx=cx, cy=cy, r=r_pupil),
        iris=CircleParams(cx=cx, cy=cy, r=r_iris),
    )
    return RenderedEye(image=GrayImage(pixels=quantize(values)), segmentation=seg)


def _plan(params: SynthParams) -> list[tuple[str, str]]:
    """(image_id, kind) in generation order."""
    plan = [(f"bf_{i:04d}", "bona_fide") for i in range(params.bona_fide_count)]
    plan += [(f"soft_{i:04d}", "soft") for i in range(params.soft_lens_count)]
    plan += [(f"atk_{i:04d}", "attack") for i in range(params.attack_count)]
    return plan


def _assign_splits(params: SynthParams, plan: list[tuple[str, str]]) -> dict[str, Split]:
    splits: dict[str, Split] = {}
    for kind in EYE_KINDS:
        ids = [image_id for image_id, k in plan if k == kind]
        if not ids:
            continue
        n_train, n_dev, _ = split_counts(len(ids), params.split_fractions)
        order = np.random.default_rng(derive_seed(params.seed, "split", kind)).permutation(len(ids))
        for rank, idx in enumerate(order):
            splits[ids[idx]] = Split.TRAIN if rank < n_train else Split.DEV if rank < n_train + n_dev else Split.TEST
    return splits


def synth_generate(params: SynthParams, out_dir: str, header: Optional[str] = None) -> SynthDataset:
    """Write images, a ground-truth segmentation file and a manifest under ``out_dir``.

    Every image draws from its own generator seeded by ``(params.seed,
    image_id)``, so a rerun with the same parameters is byte-identical.
    """
    root = ensure_dir(out_dir)
    ensure_dir(os.path.join(out_dir, IMAGE_DIR))
    attack_lens = LensType.TEXTURED if params.artifact == ArtifactType.BORDER_RING else LensType.PRINTOUT

    plan = _plan(params)
    splits = _assign_splits(params, plan)
    records: list[ManifestRecord] = []
    segs: list[Segmentation] = []
    for k, (image_id, kind) in enumerate(plan):
        progress.update_status("synth", image_id, f"Rendering {k + 1}/{len(plan)}")
        eye = render_eye(params, np.random.default_rng(derive_seed(params.seed, image_id)), kind)
        rel_path = f"{IMAGE_DIR}/{image_id}.png"
        try:
            save_image(eye.image, os.path.join(out_dir, rel_path))
        except OSError as e:
            raise OutputError(f"cannot write {rel_path}: {e}")
        segs.append(eye.segmentation)
        records.append(
            ManifestRecord(
                image_id=image_id,
                path=rel_path,
                split=splits[image_id],
                truth=PadLabel.ATTACK if kind == "attack" else PadLabel.BONA_FIDE,
                lens_type={"bona_fide": LensType.NONE, "soft": LensType.SOFT, "attack": attack_lens}[kind],
                segmentation_ref=f"{SEGMENTATION_NAME}#{k}",
            )
        )

    manifest_path = str(root / MANIFEST_NAME)
    segmentation_path = str(root / SEGMENTATION_NAME)
    try:
        write_segmentations(segmentation_path, segs, header or "pupil_cx pupil_cy pupil_r iris_cx iris_cy iris_r")
        write_manifest(manifest_path, records)
    except OSError as e:
        raise OutputError(f"cannot write dataset files in {out_dir}: {e}")
    progress.update_status("synth", None, "Done")
    return SynthDataset(manifest_path=manifest_path, segmentation_path=segmentation_path, records=records)
