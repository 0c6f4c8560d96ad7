import hashlib
import math
from enum import Enum
from typing import Optional

import numpy as np
from pydantic import BaseModel, Field, FiniteFloat, field_validator, model_validator

FEATURE_BINS = 59
FORMAT_VERSION = 1

# Arrays are copied on the way in and frozen; models are shared across threads.
_ARRAY_MODEL = {"arbitrary_types_allowed": True, "frozen": True}


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


class PadLabel(str, Enum):
    BONA_FIDE = "bona_fide"
    ATTACK = "attack"


class LensType(str, Enum):
    NONE = "none"
    SOFT = "soft"
    TEXTURED = "textured"
    PRINTOUT = "printout"
    TEXTURED_PRINTOUT = "textured_printout"


class Split(str, Enum):
    TRAIN = "train"
    DEV = "dev"
    TEST = "test"


class FusionStrategy(str, Enum):
    MAJORITY_VOTE = "majority_vote"
    MEAN_SCORE = "mean_score"
    RESIZE_BASELINE = "resize_baseline"


class Protocol(str, Enum):
    STANDARD = "standard"
    SOFT_LENS_1 = "soft_lens_1"
    SOFT_LENS_2 = "soft_lens_2"
    SOFT_LENS_3 = "soft_lens_3"
    STRIPE_ABLATION = "stripe_ablation"
    FUSION_COMPARE = "fusion_compare"
    RING_ANALYSIS = "ring_analysis"


class ArtifactType(str, Enum):
    BORDER_RING = "border_ring"
    DOT_PRINT = "dot_print"


# ---------------------------------------------------------------------------
# Rasters
# ---------------------------------------------------------------------------


class GrayImage(BaseModel):
    """8-bit grayscale raster, row-major ``pixels[y, x]``."""

    model_config = _ARRAY_MODEL

    pixels: np.ndarray

    @field_validator("pixels", mode="before")
    @classmethod
    def _as_raster(cls, value):
        arr = np.array(value, copy=True)
        if arr.ndim != 2:
            raise ValueError(f"raster must be 2-D, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError("raster has a zero dimension")
        if arr.dtype != np.uint8:
            if not np.all(np.isfinite(arr)) or arr.min() < 0 or arr.max() > 255:
                raise ValueError("pixel values must lie in [0, 255]")
            if np.any(arr != np.round(arr)):
                raise ValueError("pixel values must be integers")
            arr = arr.astype(np.uint8)
        return _frozen(arr)

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])


class SubpixelSample(BaseModel):
    model_config = {"frozen": True}

    x: FiniteFloat
    y: FiniteFloat


class NormalizedTexture(BaseModel):
    """Polar texture: row 0 is the inner boundary, column c is angle 2*pi*c/width."""

    model_config = _ARRAY_MODEL

    values: np.ndarray

    @field_validator("values", mode="before")
    @classmethod
    def _as_texture(cls, value):
        arr = np.array(value, dtype=np.float64, copy=True)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"texture must be a non-empty 2-D grid, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 255.0:
            raise ValueError("texture values must lie in [0, 255]")
        return _frozen(arr)

    @property
    def width(self) -> int:
        return int(self.values.shape[1])

    @property
    def height(self) -> int:
        return int(self.values.shape[0])


class MicroStripe(BaseModel):
    model_config = _ARRAY_MODEL

    row_offset: int = Field(ge=0)
    values: np.ndarray

    @field_validator("values", mode="before")
    @classmethod
    def _as_grid(cls, value):
        arr = np.array(value, dtype=np.float64, copy=True)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"stripe must be a non-empty 2-D grid, got shape {arr.shape}")
        return _frozen(arr)

    @property
    def height(self) -> int:
        return int(self.values.shape[0])

    @property
    def width(self) -> int:
        return int(self.values.shape[1])


class StripeSet(BaseModel):
    """Stripes of one texture, ordered by row offset.

    Extracted sets are spaced exactly ``stride`` apart and complete; ``sampled``
    sets are an ordered subset of such a set.
    """

    model_config = {"frozen": True}

    stripes: tuple[MicroStripe, ...]
    source_id: str
    stride: int = Field(ge=1)
    texture_height: int = Field(ge=1)
    texture_width: int = Field(ge=1)
    sampled: bool = False

    @model_validator(mode="after")
    def _check_layout(self):
        if not self.stripes:
            raise ValueError("stripe set is empty")
        heights = {s.height for s in self.stripes}
        if len(heights) != 1:
            raise ValueError("stripes of one set must share a height")
        height = heights.pop()
        offsets = [s.row_offset for s in self.stripes]
        for stripe in self.stripes:
            if stripe.row_offset + stripe.height > self.texture_height:
                raise ValueError(f"stripe at offset {stripe.row_offset} overruns the texture")
            if stripe.width != self.texture_width:
                raise ValueError("stripe width differs from the texture width")
            if stripe.row_offset % self.stride:
                raise ValueError(f"offset {stripe.row_offset} is not on the stride grid")
        if any(b <= a for a, b in zip(offsets, offsets[1:])):
            raise ValueError("stripes must be ordered by increasing row offset")
        if not self.sampled:
            expected = (self.texture_height - height) // self.stride + 1
            if offsets != [i * self.stride for i in range(expected)]:
                raise ValueError("extracted stripes must cover every stride offset")
        return self

    @property
    def stripe_height(self) -> int:
        return self.stripes[0].height

    def __len__(self) -> int:
        return len(self.stripes)


# ---------------------------------------------------------------------------
# Geometry
# ---------------------------------------------------------------------------


class CircleParams(BaseModel):
    model_config = {"frozen": True}

    cx: FiniteFloat
    cy: FiniteFloat
    r: FiniteFloat = Field(gt=0)

    def scaled(self, k: float) -> "CircleParams":
        return CircleParams(cx=self.cx * k, cy=self.cy * k, r=self.r * k)


class Segmentation(BaseModel):
    model_config = {"frozen": True}

    pupil: CircleParams
    iris: CircleParams

    @model_validator(mode="after")
    def _check_nesting(self):
        if self.pupil.r >= self.iris.r:
            raise ValueError(f"pupil radius {self.pupil.r} is not smaller than iris radius {self.iris.r}")
        offset = math.hypot(self.pupil.cx - self.iris.cx, self.pupil.cy - self.iris.cy)
        if offset >= self.iris.r:
            raise ValueError("pupil center lies outside the iris circle")
        return self


class ExtendedBoundaries(BaseModel):
    model_config = {"frozen": True}

    inner: CircleParams
    outer: CircleParams
    s1: float
    s2: float

    @model_validator(mode="after")
    def _check_annulus(self):
        for name, s in (("s1", self.s1), ("s2", self.s2)):
            if not 0.0 < s < 1.0:
                raise ValueError(f"{name}={s} must lie in (0, 1)")
        if not self.inner.r < self.outer.r:
            raise ValueError(f"inner radius {self.inner.r} is not below outer radius {self.outer.r}")
        if (self.inner.cx, self.inner.cy) != (self.outer.cx, self.outer.cy):
            raise ValueError("inner and outer circles must share a center")
        return self


# ---------------------------------------------------------------------------
# Pipeline settings
# ---------------------------------------------------------------------------


class DetectorConfig(BaseModel):
    """Hough circle detector settings. Radii are in pixels."""

    model_config = {"frozen": True}

    pupil_radius_min: int = Field(default=20, ge=1)
    pupil_radius_max: int = Field(default=60, ge=1)
    iris_radius_min: int = Field(default=60, ge=1)
    iris_radius_max: int = Field(default=140, ge=1)
    sigma: float = Field(default=2.0, gt=0)
    low_quantile: float = Field(default=0.90, gt=0, lt=1)
    high_quantile: float = Field(default=0.97, gt=0, lt=1)
    min_edge_strength: float = Field(default=1.0, ge=0)
    accumulator_threshold: float = Field(default=0.5, gt=0)
    center_tolerance: float = Field(default=10.0, ge=0)
    dark_quantile: float = Field(default=0.01, gt=0, lt=1)
    dark_margin: float = Field(default=25.0, ge=0)
    min_ring_gap: int = Field(default=10, ge=1)

    @model_validator(mode="after")
    def _check_ranges(self):
        if self.pupil_radius_min > self.pupil_radius_max:
            raise ValueError("pupil radius range is empty")
        if self.iris_radius_min > self.iris_radius_max:
            raise ValueError("iris radius range is empty")
        if self.low_quantile >= self.high_quantile:
            raise ValueError("low_quantile must be below high_quantile")
        return self


class NormalizationConfig(BaseModel):
    model_config = {"frozen": True}

    s1: float = Field(default=0.4, gt=0, lt=1)
    s2: float = Field(default=0.4, gt=0, lt=1)
    width: int = Field(default=512, ge=2)
    height: int = Field(default=64, ge=2)
    clip_limit: float = Field(default=2.0, gt=0)
    tiles_x: int = Field(default=8, ge=1)
    tiles_y: int = Field(default=8, ge=1)

    def signature(self) -> str:
        return hashlib.sha1(self.model_dump_json().encode()).hexdigest()[:12]


class StripeConfig(BaseModel):
    model_config = {"frozen": True}

    height: int = Field(default=32, ge=1)
    stride: int = Field(default=4, ge=1)
    sample_k: Optional[int] = Field(default=None, ge=1)

    @field_validator("sample_k")
    @classmethod
    def _odd(cls, value):
        if value is not None and value % 2 == 0:
            raise ValueError(f"sample_k must be odd, got {value}")
        return value


class FeatureConfig(BaseModel):
    """Uniform-LBP cell grid for stripes of ``stripe_height`` rows."""

    model_config = {"frozen": True}

    cells_x: int = Field(default=16, ge=1)
    cells_y: int = Field(default=2, ge=1)
    stripe_height: int = Field(default=32, ge=1)

    @property
    def feature_length(self) -> int:
        return self.cells_x * self.cells_y * FEATURE_BINS

    @property
    def config_hash(self) -> str:
        payload = self.model_dump_json()
        return hashlib.sha1(payload.encode()).hexdigest()[:16]


class TrainConfig(BaseModel):
    model_config = {"frozen": True}

    max_epochs: int = Field(default=25, ge=1)
    early_stop_patience: int = Field(default=5, ge=1)
    learning_rate: float = Field(default=0.001, gt=0)
    batch_size: int = Field(default=16, ge=1)
    optimizer: str = "rmsprop"
    rho: float = Field(default=0.9, gt=0, lt=1)
    epsilon: float = Field(default=1e-8, gt=0)
    seed: int = 0

    @field_validator("optimizer")
    @classmethod
    def _rmsprop_only(cls, value):
        if value != "rmsprop":
            raise ValueError(f"unsupported optimizer {value!r}")
        return value


# ---------------------------------------------------------------------------
# Classifier
# ---------------------------------------------------------------------------


class FeatureVector(BaseModel):
    model_config = _ARRAY_MODEL

    values: np.ndarray
    config_hash: str

    @field_validator("values", mode="before")
    @classmethod
    def _as_vector(cls, value):
        arr = np.array(value, dtype=np.float64, copy=True)
        if arr.ndim != 1 or arr.size == 0:
            raise ValueError("feature vector must be a non-empty 1-D array")
        return _frozen(arr)

    def __len__(self) -> int:
        return int(self.values.size)


class Checkpoint(BaseModel):
    epoch: int
    train_loss: float
    dev_loss: float


class TrainingMeta(BaseModel):
    seed: int
    epochs_run: int
    final_loss: float
    best_epoch: int
    best_dev_loss: float
    checkpoints: list[Checkpoint] = []


class ClassifierModel(BaseModel):
    model_config = {"frozen": True}

    weights: tuple[float, ...]
    bias: float
    feature_config: FeatureConfig
    training_meta: Optional[TrainingMeta] = None
    format_version: int = FORMAT_VERSION

    @model_validator(mode="after")
    def _check_length(self):
        if len(self.weights) != self.feature_config.feature_length:
            raise ValueError(
                f"model has {len(self.weights)} weights, feature config expects "
                f"{self.feature_config.feature_length}"
            )
        return self

    @property
    def weight_array(self) -> np.ndarray:
        return np.asarray(self.weights, dtype=np.float64)

    @classmethod
    def zero(cls, feature_config: FeatureConfig, bias: float = 0.0) -> "ClassifierModel":
        return cls(weights=(0.0,) * feature_config.feature_length, bias=bias, feature_config=feature_config)


class StripeScore(BaseModel):
    model_config = {"frozen": True}

    p_attack: float = Field(ge=0.0, le=1.0)
    stripe_offset: int = Field(ge=0)


class PadDecision(BaseModel):
    model_config = {"frozen": True}

    label: PadLabel
    fused_score: float = Field(ge=0.0, le=1.0)
    strategy: FusionStrategy
    votes_attack: int = Field(ge=0)
    votes_total: int = Field(ge=1)

    @model_validator(mode="after")
    def _check_votes(self):
        if self.votes_attack > self.votes_total:
            raise ValueError("more attack votes than votes cast")
        if self.strategy == FusionStrategy.MAJORITY_VOTE and self.votes_total % 2 == 0:
            raise ValueError("majority vote needs an odd number of votes")
        return self


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


class ScoredSample(BaseModel):
    model_config = {"frozen": True}

    image_id: str
    truth: PadLabel
    score: float = Field(ge=0.0, le=1.0)
    decision: Optional[PadLabel] = None


class EvalReport(BaseModel):
    """All rates are percentages."""

    ccr: float = Field(ge=0.0, le=100.0)
    apcer: float = Field(ge=0.0, le=100.0)
    bpcer: float = Field(ge=0.0, le=100.0)
    hter: float = Field(ge=0.0, le=100.0)
    eer: float = Field(ge=0.0, le=100.0)
    eer_threshold: Optional[float] = None
    bpcer_at_apcer: dict[str, float]
    bona_fide_count: int = Field(ge=0)
    attack_count: int = Field(ge=0)
    format_version: int = FORMAT_VERSION

    @model_validator(mode="after")
    def _check_hter(self):
        if abs(self.hter - (self.apcer + self.bpcer) / 2.0) > 1e-9:
            raise ValueError("hter must equal (apcer + bpcer) / 2")
        for key, value in self.bpcer_at_apcer.items():
            if not 0.0 <= value <= 100.0:
                raise ValueError(f"bpcer at apcer {key} out of range")
        return self


# ---------------------------------------------------------------------------
# Rings
# ---------------------------------------------------------------------------


class RingSpec(BaseModel):
    model_config = {"frozen": True}

    index: int = Field(ge=0)
    inner: CircleParams
    outer: CircleParams

    @model_validator(mode="after")
    def _check_ring(self):
        if not self.inner.r < self.outer.r:
            raise ValueError("ring inner radius must be below its outer radius")
        if (self.inner.cx, self.inner.cy) != (self.outer.cx, self.outer.cy):
            raise ValueError("ring circles must share a center")
        return self

    @property
    def width(self) -> float:
        return self.outer.r - self.inner.r


class RingProfile(BaseModel):
    eers: list[float]
    normalized: list[float]

    @model_validator(mode="after")
    def _check_shape(self):
        if len(self.eers) != len(self.normalized):
            raise ValueError("eers and normalized differ in length")
        return self

    @classmethod
    def from_eers(cls, eers: list[float]) -> "RingProfile":
        arr = np.asarray(eers, dtype=np.float64)
        lo, hi = float(arr.min()), float(arr.max())
        if hi > lo:
            normalized = ((arr - lo) / (hi - lo)).tolist()
        else:
            normalized = [0.0] * len(eers)
        return cls(eers=[float(e) for e in eers], normalized=normalized)

    @property
    def min_ring(self) -> int:
        return int(np.argmin(self.eers))


# ---------------------------------------------------------------------------
# Harness
# ---------------------------------------------------------------------------

ATTACK_LENSES = {LensType.TEXTURED, LensType.PRINTOUT, LensType.TEXTURED_PRINTOUT}


class ManifestRecord(BaseModel):
    model_config = {"frozen": True}

    image_id: str = Field(min_length=1)
    path: str = Field(min_length=1)
    split: Optional[Split] = None
    truth: PadLabel
    lens_type: LensType
    segmentation_ref: Optional[str] = None

    @model_validator(mode="after")
    def _check_consistency(self):
        if self.lens_type in ATTACK_LENSES and self.truth != PadLabel.ATTACK:
            raise ValueError(f"lens type {self.lens_type.value} must be labeled attack")
        if self.lens_type in (LensType.NONE, LensType.SOFT) and self.truth != PadLabel.BONA_FIDE:
            raise ValueError(f"lens type {self.lens_type.value} must be labeled bona_fide")
        return self


class ExperimentConfig(BaseModel):
    protocol: Protocol = Protocol.STANDARD
    stripe_height: int = Field(default=32, ge=1)
    stride: int = Field(default=4, ge=1)
    fusion: FusionStrategy = FusionStrategy.MAJORITY_VOTE
    seed: int = 0
    repeat_count: int = Field(default=5, ge=1)
    sample_k: Optional[int] = Field(default=None, ge=1)
    ablation_heights: list[int] = [24, 32, 48, 64]
    ring_count: int = Field(default=10, ge=2)
    ring_texture_height: int = Field(default=16, ge=2)
    include_baseline: bool = False

    @model_validator(mode="after")
    def _check_protocol_fields(self):
        if self.sample_k is not None and self.sample_k % 2 == 0:
            raise ValueError(f"sample_k must be odd, got {self.sample_k}")
        if self.protocol == Protocol.STRIPE_ABLATION and not self.ablation_heights:
            raise ValueError("stripe_ablation needs at least one stripe height")
        if any(h < 1 for h in self.ablation_heights):
            raise ValueError("ablation heights must be positive")
        return self

    @property
    def repeat_seeds(self) -> list[int]:
        return [self.seed + i for i in range(self.repeat_count)]


class SynthParams(BaseModel):
    image_size: int = Field(default=320, ge=32)
    pupil_radius_min: float = Field(default=30.0, gt=0)
    pupil_radius_max: float = Field(default=45.0, gt=0)
    iris_radius_min: float = Field(default=90.0, gt=0)
    iris_radius_max: float = Field(default=110.0, gt=0)
    center_jitter: float = Field(default=4.0, ge=0)
    pupil_level: float = 20.0
    iris_level: float = 110.0
    sclera_level: float = 200.0
    noise_std: float = Field(default=2.0, ge=0)
    texture_components: int = Field(default=12, ge=0)
    max_angular_freq: int = Field(default=20, ge=1)
    max_radial_freq: float = Field(default=4.0, gt=0)
    texture_amplitude: float = Field(default=12.0, ge=0)
    artifact: ArtifactType = ArtifactType.BORDER_RING
    artifact_offset: float = 0.15
    artifact_width: float = Field(default=0.2, gt=0)
    artifact_frequency: int = Field(default=128, ge=1)
    artifact_contrast: float = Field(default=40.0, ge=0)
    dot_spacing: float = Field(default=6.0, gt=1)
    soft_lens_ratio: float = Field(default=0.25, ge=0)
    bona_fide_count: int = Field(default=200, ge=1)
    attack_count: int = Field(default=200, ge=1)
    soft_lens_count: int = Field(default=0, ge=0)
    split_fractions: tuple[float, float, float] = (0.6, 0.2, 0.2)
    seed: int = 1

    @model_validator(mode="after")
    def _check_ranges(self):
        if self.pupil_radius_min > self.pupil_radius_max:
            raise ValueError("pupil radius range is empty")
        if self.iris_radius_min > self.iris_radius_max:
            raise ValueError("iris radius range is empty")
        if self.pupil_radius_max >= self.iris_radius_min:
            raise ValueError("pupil radii must stay below iris radii")
        if self.iris_radius_max + self.center_jitter >= self.image_size / 2:
            raise ValueError("iris does not fit inside the image")
        if any(f < 0 for f in self.split_fractions) or abs(sum(self.split_fractions) - 1.0) > 1e-9:
            raise ValueError("split fractions must be non-negative and sum to 1")
        return self
