"""Exception hierarchy for the PAD toolkit.

Every error carries a short machine-readable ``code`` that the CLI prints on
failure. Library code raises these, only ``main`` catches them.
"""

from typing import Optional


class MsaError(ValueError):
    code = "msa_error"

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


# Imaging
class ImageReadError(MsaError):
    code = "image_unreadable"


class ImageFormatError(MsaError):
    code = "image_format"


class EmptyImageError(MsaError):
    code = "image_empty"


# Segmentation
class SegmentationFailedError(MsaError):
    """No circle cleared the accumulator threshold.

    ``best_pupil`` / ``best_iris`` hold the strongest candidates found so far
    (``None`` when the search never got that far).
    """

    code = "segmentation_failed"

    def __init__(self, message: str, best_pupil=None, best_iris=None):
        super().__init__(message)
        self.best_pupil = best_pupil
        self.best_iris = best_iris


class SegmentationParseError(MsaError):
    code = "segmentation_parse"


class MalformedSegmentationError(MsaError):
    code = "segmentation_malformed"


class DegenerateBoundariesError(MsaError):
    code = "degenerate_boundaries"


# Stripes / classifier
class StripeConfigError(MsaError):
    code = "stripe_config"


class FeatureConfigError(MsaError):
    code = "feature_config"


class FeatureMismatchError(MsaError):
    code = "feature_mismatch"


class SingleClassError(MsaError):
    code = "single_class"


class TrainingDivergedError(MsaError):
    code = "training_diverged"


class ModelFileError(MsaError):
    code = "model_file"


class ScoreParseError(MsaError):
    code = "score_parse"


class ScoreRangeError(MsaError):
    code = "score_range"


class DuplicateScoreError(MsaError):
    code = "score_duplicate"


# Fusion / metrics
class FusionInputError(MsaError):
    code = "fusion_input"


class MissingClassError(MsaError):
    code = "missing_class"


class MetricInputError(MsaError):
    code = "metric_input"


class RingConfigError(MsaError):
    code = "ring_config"


# Harness
class ManifestParseError(MsaError):
    code = "manifest_parse"


class ManifestConsistencyError(MsaError):
    code = "manifest_consistency"


class DuplicateRecordError(MsaError):
    code = "manifest_duplicate"


class ProtocolMismatchError(MsaError):
    code = "protocol_mismatch"


class ConfigError(MsaError):
    code = "config"


class OutputError(MsaError):
    code = "output_unwritable"
