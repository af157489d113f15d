"""Exception classes for tinygrnn-py."""

from typing import Any, Optional


class TinyGrnnError(Exception):
    """Base exception for all tinygrnn errors."""

    exit_code = 1
    default_code: Optional[str] = None

    def __init__(
        self,
        message: str,
        details: Optional[dict[str, Any]] = None,
        error_code: Optional[str] = None,
    ) -> None:
        super().__init__(message)
        self.message = message
        self.details = details or {}
        self.error_code = error_code or self.default_code

    def __str__(self) -> str:
        if self.error_code:
            return f"[{self.error_code}] {self.message}"
        return self.message


class InputFormatError(TinyGrnnError):
    """Raised when an input file or document cannot be decoded."""

    exit_code = 2


class PreconditionError(TinyGrnnError):
    """Raised when an operation is called with inputs outside its contract."""

    exit_code = 3


class ModelIoError(InputFormatError):
    """Raised when a model file cannot be read or written."""

    default_code = "MODEL_IO"


# Input format errors


class MalformedWavError(InputFormatError):
    """Raised on bad RIFF/WAVE magic or truncated chunks."""

    default_code = "WAV_MALFORMED"


class UnsupportedEncodingError(InputFormatError):
    """Raised for WAVE encodings other than PCM16 and float32."""

    default_code = "WAV_ENCODING"


class BadMagicError(InputFormatError):
    """Raised when a model file does not start with the expected magic."""

    default_code = "MODEL_MAGIC"


class VersionMismatchError(InputFormatError):
    """Raised when a model file has an unknown format version."""

    default_code = "MODEL_VERSION"


class ShapeCorruptionError(InputFormatError):
    """Raised when a model file is truncated or its tensors are inconsistent."""

    default_code = "MODEL_SHAPE"


class FeatureFileError(InputFormatError):
    """Raised when a feature JSON document does not match the schema."""

    default_code = "FEATURES_FORMAT"


# Precondition errors


class EmptyClipError(PreconditionError):
    """Raised when a clip has no samples."""

    default_code = "CLIP_EMPTY"


class TooShortError(PreconditionError):
    """Raised when a clip is shorter than the segmented window."""

    default_code = "CLIP_TOO_SHORT"


class WrongRateError(PreconditionError):
    """Raised when a clip is not at the canonical sample rate."""

    default_code = "CLIP_RATE"


class RateMismatchError(PreconditionError):
    """Raised when a clip and its noise profile differ in sample rate."""

    default_code = "RATE_MISMATCH"


class EmptySignalError(PreconditionError):
    """Raised when a transform receives an empty signal."""

    default_code = "SIGNAL_EMPTY"


class BadFftSizeError(PreconditionError):
    """Raised when the FFT size or hop length is invalid."""

    default_code = "FFT_SIZE"


class InconsistentGeometryError(PreconditionError):
    """Raised when a spectrogram's shape disagrees with its FFT geometry."""

    default_code = "SPEC_GEOMETRY"


class BadConfigError(PreconditionError):
    """Raised for invalid filterbank or feature configuration."""

    default_code = "BAD_CONFIG"


class DimensionMismatchError(PreconditionError):
    """Raised when array shapes do not match the model configuration."""

    default_code = "DIMENSION"


class NonFiniteInputError(PreconditionError):
    """Raised when logits contain NaN or infinity."""

    default_code = "NON_FINITE"


class EmptyDatasetError(PreconditionError):
    """Raised when a dataset or feature collection is empty."""

    default_code = "DATASET_EMPTY"


class SingleClassError(PreconditionError):
    """Raised when a training set contains fewer than two classes."""

    default_code = "DATASET_SINGLE_CLASS"


class MissingClassError(PreconditionError):
    """Raised when threshold calibration finds a class with no clips."""

    default_code = "CLASS_MISSING"


class BadLabelError(PreconditionError):
    """Raised when a class label is out of range or unknown."""

    default_code = "BAD_LABEL"


class LengthMismatchError(PreconditionError):
    """Raised when paired sequences differ in length."""

    default_code = "LENGTH_MISMATCH"


class BadIndexError(PreconditionError):
    """Raised when a class index falls outside the confusion matrix."""

    default_code = "BAD_INDEX"


class EmptyMatrixError(PreconditionError):
    """Raised when metrics are requested for an empty confusion matrix."""

    default_code = "MATRIX_EMPTY"
