"""Pydantic models for tinygrnn data structures."""

from enum import Enum
from typing import Annotated, Any, Literal, Optional

import numpy as np
from numpy.typing import NDArray
from pydantic import (
    BaseModel,
    BeforeValidator,
    ConfigDict,
    Field,
    NonNegativeInt,
    PositiveInt,
    field_validator,
    model_validator,
)
from pydantic_settings import BaseSettings, SettingsConfigDict

STD_FLOOR = 1e-8
# the floor as it survives a round trip through the 32-bit model file
_STD_FLOOR_F32 = float(np.float32(STD_FLOOR))


def _readonly(array: NDArray[Any]) -> NDArray[Any]:
    array.setflags(write=False)
    return array


def _as_float_array(value: Any) -> NDArray[np.float64]:
    return _readonly(np.array(value, dtype=np.float64))


def _as_complex_array(value: Any) -> NDArray[np.complex128]:
    return _readonly(np.array(value, dtype=np.complex128))


def _as_int8_array(value: Any) -> NDArray[np.int8]:
    return _readonly(np.array(value, dtype=np.int8))


def _as_count_array(value: Any) -> NDArray[np.int64]:
    return _readonly(np.array(value, dtype=np.int64))


FloatArray = Annotated[NDArray[np.float64], BeforeValidator(_as_float_array)]
ComplexArray = Annotated[NDArray[np.complex128], BeforeValidator(_as_complex_array)]
Int8Array = Annotated[NDArray[np.int8], BeforeValidator(_as_int8_array)]
CountArray = Annotated[NDArray[np.int64], BeforeValidator(_as_count_array)]

_ARRAY_CONFIG = ConfigDict(arbitrary_types_allowed=True, frozen=True)


class SoundClass(str, Enum):
    """Acoustic event classes of the curated street-sound vocabulary."""

    CAR_HORN = "car_horn"
    CHILDREN_PLAYING = "children_playing"
    DOG_BARK = "dog_bark"
    DRILLING = "drilling"
    ENGINE_IDLING = "engine_idling"
    SIREN = "siren"


DEFAULT_LABELS: tuple[str, ...] = tuple(c.value for c in SoundClass)


class WavEncoding(str, Enum):
    """Sample encodings accepted by the WAV reader and writer."""

    PCM16 = "pcm16"
    FLOAT32 = "float32"


# Configuration


class FeatureConfig(BaseModel):
    """Front-end geometry: sample rate, segmentation, STFT and MFCC sizes."""

    model_config = ConfigDict(frozen=True)

    sample_rate: PositiveInt = 22050
    segment_seconds: float = Field(default=0.6, gt=0)
    segments_per_clip: PositiveInt = 5
    n_fft: PositiveInt = 2048
    hop_length: PositiveInt = 512
    n_mels: int = Field(default=40, ge=2)
    n_mfcc: PositiveInt = 13
    log_floor: float = Field(default=1e-10, gt=0)

    @field_validator("n_fft")
    @classmethod
    def validate_n_fft(cls, v: int) -> int:
        """Require a power-of-two FFT size."""
        if v & (v - 1):
            raise ValueError("n_fft must be a power of two")
        return v

    @model_validator(mode="after")
    def validate_geometry(self) -> "FeatureConfig":
        if self.hop_length > self.n_fft:
            raise ValueError("hop_length must not exceed n_fft")
        if self.n_mfcc > self.n_mels:
            raise ValueError("n_mfcc must not exceed n_mels")
        return self

    @property
    def segment_samples(self) -> int:
        return int(round(self.segment_seconds * self.sample_rate))

    @property
    def clip_samples(self) -> int:
        return self.segment_samples * self.segments_per_clip

    @property
    def clip_seconds(self) -> float:
        return self.clip_samples / self.sample_rate

    @property
    def frames_per_segment(self) -> int:
        return 1 + self.segment_samples // self.hop_length

    @property
    def n_bins(self) -> int:
        return self.n_fft // 2 + 1


class SpectralGateConfig(BaseModel):
    """Noise-floor estimation and mask shaping for spectral gating."""

    model_config = ConfigDict(frozen=True)

    threshold_std: float = Field(default=1.5, ge=0)
    noise_percentile: float = Field(default=10.0, ge=0, le=100)
    floor_db: float = Field(default=-30.0, le=0)
    smooth_frames: NonNegativeInt = 2
    smooth_bins: NonNegativeInt = 2


class ModelConfig(BaseModel):
    """FastGRNN classifier dimensions."""

    model_config = ConfigDict(frozen=True)

    input_dim: PositiveInt = 13
    hidden_dim: PositiveInt = 26
    num_classes: PositiveInt = 6
    seq_len: PositiveInt = 26


class TrainConfig(BaseSettings):
    """Optimizer and schedule settings; overridable via TINYGRNN_* variables."""

    model_config = SettingsConfigDict(env_prefix="TINYGRNN_", frozen=True)

    learning_rate: float = Field(default=1e-3, gt=0)
    beta1: float = Field(default=0.9, ge=0, lt=1)
    beta2: float = Field(default=0.999, ge=0, lt=1)
    adam_eps: float = Field(default=1e-8, gt=0)
    batch_size: PositiveInt = 32
    max_epochs: PositiveInt = 200
    patience: PositiveInt = 10
    rng_seed: NonNegativeInt = 42
    train_fraction: float = Field(default=0.8, gt=0, lt=1)
    clip_norm: float = Field(default=5.0, gt=0)


DEFAULT_FEATURE_CONFIG = FeatureConfig()
DEFAULT_MODEL_CONFIG = ModelConfig()


# Audio


class AudioClip(BaseModel):
    """Mono signal with amplitudes clamped to [-1, 1]."""

    model_config = _ARRAY_CONFIG

    samples: FloatArray
    sample_rate: PositiveInt

    @field_validator("samples")
    @classmethod
    def clamp_samples(cls, v: NDArray[np.float64]) -> NDArray[np.float64]:
        """Clamp every sample into [-1, 1]."""
        if v.ndim != 1:
            raise ValueError("samples must be one-dimensional")
        if v.size and (v.max() > 1.0 or v.min() < -1.0):
            return _readonly(np.clip(v, -1.0, 1.0))
        return v

    @property
    def num_samples(self) -> int:
        return int(self.samples.shape[0])

    @property
    def duration(self) -> float:
        return self.num_samples / self.sample_rate


class Segment(BaseModel):
    """Fixed-length window cut from a clip."""

    model_config = _ARRAY_CONFIG

    samples: FloatArray
    origin_offset: NonNegativeInt

    @field_validator("samples")
    @classmethod
    def validate_samples(cls, v: NDArray[np.float64]) -> NDArray[np.float64]:
        if v.ndim != 1:
            raise ValueError("segment samples must be one-dimensional")
        return v


# Spectral


class Spectrogram(BaseModel):
    """Half-spectrum STFT frames, shape (frames, n_fft // 2 + 1)."""

    model_config = _ARRAY_CONFIG

    frames: ComplexArray
    n_fft: PositiveInt
    hop_length: PositiveInt
    sample_rate: PositiveInt
    signal_length: Optional[NonNegativeInt] = None

    @field_validator("frames")
    @classmethod
    def validate_frames(cls, v: NDArray[np.complex128]) -> NDArray[np.complex128]:
        if v.ndim != 2:
            raise ValueError("spectrogram frames must be two-dimensional")
        return v

    @property
    def num_frames(self) -> int:
        return int(self.frames.shape[0])

    @property
    def num_bins(self) -> int:
        return int(self.frames.shape[1])


class MelFilterbank(BaseModel):
    """Triangular mel filters over the half-spectrum bins."""

    model_config = _ARRAY_CONFIG

    weights: FloatArray
    sample_rate: PositiveInt
    n_fft: PositiveInt

    @field_validator("weights")
    @classmethod
    def validate_weights(cls, v: NDArray[np.float64]) -> NDArray[np.float64]:
        if v.ndim != 2:
            raise ValueError("filterbank weights must be two-dimensional")
        if (v < 0).any():
            raise ValueError("filterbank weights must be non-negative")
        return v

    @property
    def n_mels(self) -> int:
        return int(self.weights.shape[0])


class MfccSequence(BaseModel):
    """Cepstral coefficients, one row per frame."""

    model_config = _ARRAY_CONFIG

    coeffs: FloatArray

    @field_validator("coeffs")
    @classmethod
    def validate_coeffs(cls, v: NDArray[np.float64]) -> NDArray[np.float64]:
        if v.ndim != 2:
            raise ValueError("MFCC sequence must be a (frames, coefficients) matrix")
        return v

    @property
    def num_frames(self) -> int:
        return int(self.coeffs.shape[0])

    @property
    def width(self) -> int:
        return int(self.coeffs.shape[1])


# Network parameters


class FastGrnnParams(BaseModel):
    """Recurrent cell parameters; zeta and nu are stored pre-sigmoid."""

    model_config = _ARRAY_CONFIG

    W: FloatArray
    U: FloatArray
    b_z: FloatArray
    b_h: FloatArray
    zeta_raw: float
    nu_raw: float

    @model_validator(mode="after")
    def validate_shapes(self) -> "FastGrnnParams":
        if self.W.ndim != 2:
            raise ValueError("W must be a (hidden, input) matrix")
        hidden = self.W.shape[0]
        if self.U.shape != (hidden, hidden):
            raise ValueError(f"U must be {hidden}x{hidden}, got {self.U.shape}")
        for name in ("b_z", "b_h"):
            if getattr(self, name).shape != (hidden,):
                raise ValueError(f"{name} must have length {hidden}")
        return self

    @property
    def hidden_dim(self) -> int:
        return int(self.W.shape[0])

    @property
    def input_dim(self) -> int:
        return int(self.W.shape[1])

    @property
    def zeta(self) -> float:
        return float(1.0 / (1.0 + np.exp(-self.zeta_raw)))

    @property
    def nu(self) -> float:
        return float(1.0 / (1.0 + np.exp(-self.nu_raw)))


class FcParams(BaseModel):
    """Fully connected output layer."""

    model_config = _ARRAY_CONFIG

    W_fc: FloatArray
    b_fc: FloatArray

    @model_validator(mode="after")
    def validate_shapes(self) -> "FcParams":
        if self.W_fc.ndim != 2:
            raise ValueError("W_fc must be a (classes, hidden) matrix")
        if self.b_fc.shape != (self.W_fc.shape[0],):
            raise ValueError("b_fc length must match the number of classes")
        return self

    @property
    def num_classes(self) -> int:
        return int(self.W_fc.shape[0])


class NormStats(BaseModel):
    """Per-coefficient Z-score statistics fitted on training frames."""

    model_config = _ARRAY_CONFIG

    mean: FloatArray
    std: FloatArray

    @model_validator(mode="after")
    def validate_stats(self) -> "NormStats":
        if self.mean.ndim != 1 or self.mean.shape != self.std.shape:
            raise ValueError("mean and std must be vectors of equal length")
        if (self.std < _STD_FLOOR_F32).any():
            raise ValueError(f"std entries must be >= {STD_FLOOR}")
        return self


class ClassThresholds(BaseModel):
    """Per-class presence thresholds for multi-tone detection."""

    model_config = _ARRAY_CONFIG

    tau: FloatArray
    calibrated: bool = False

    @field_validator("tau")
    @classmethod
    def validate_tau(cls, v: NDArray[np.float64]) -> NDArray[np.float64]:
        if v.ndim != 1:
            raise ValueError("thresholds must be a vector")
        if ((v < 0.0) | (v > 1.0)).any():
            raise ValueError("thresholds must lie in [0, 1]")
        return v


class ModelBundle(BaseModel):
    """Everything needed to run inference on a clip."""

    model_config = _ARRAY_CONFIG

    config: ModelConfig
    cell: FastGrnnParams
    fc: FcParams
    norm: NormStats
    thresholds: ClassThresholds
    labels: tuple[str, ...]

    @model_validator(mode="after")
    def validate_bundle(self) -> "ModelBundle":
        cfg = self.config
        if self.cell.W.shape != (cfg.hidden_dim, cfg.input_dim):
            raise ValueError("cell W shape disagrees with config")
        if self.fc.W_fc.shape != (cfg.num_classes, cfg.hidden_dim):
            raise ValueError("W_fc shape disagrees with config")
        if self.norm.mean.shape != (cfg.input_dim,):
            raise ValueError("norm stats length disagrees with input_dim")
        if self.thresholds.tau.shape != (cfg.num_classes,):
            raise ValueError("threshold count disagrees with num_classes")
        if len(self.labels) != cfg.num_classes:
            raise ValueError("label count disagrees with num_classes")
        if len(set(self.labels)) != len(self.labels):
            raise ValueError("labels must be distinct")
        return self


class QuantizedTensor(BaseModel):
    """Symmetric per-tensor int8 quantization: value = scale * q."""

    model_config = _ARRAY_CONFIG

    values: Int8Array
    scale: float = Field(gt=0)

    def dequantize(self) -> NDArray[np.float64]:
        return self.values.astype(np.float64) * self.scale


class QuantizedBundle(BaseModel):
    """Model bundle whose core tensors are stored as int8 plus a scale."""

    model_config = _ARRAY_CONFIG

    config: ModelConfig
    tensors: dict[str, QuantizedTensor]
    norm: NormStats
    thresholds: ClassThresholds
    labels: tuple[str, ...]


# Evaluation


class ClipPrediction(BaseModel):
    """Segment-level and aggregated class distributions for one clip."""

    model_config = _ARRAY_CONFIG

    per_segment: FloatArray
    aggregate: FloatArray
    predicted_class: NonNegativeInt
    present_classes: frozenset[int] = frozenset()

    @model_validator(mode="after")
    def validate_prediction(self) -> "ClipPrediction":
        if abs(float(self.aggregate.sum()) - 1.0) > 1e-9:
            raise ValueError("aggregate distribution must sum to 1")
        if self.predicted_class != int(np.argmax(self.aggregate)):
            raise ValueError("predicted_class must be the aggregate argmax")
        return self


class ConfusionMatrix(BaseModel):
    """Counts indexed [ground truth, prediction]."""

    model_config = _ARRAY_CONFIG

    counts: CountArray

    @field_validator("counts")
    @classmethod
    def validate_counts(cls, v: NDArray[np.int64]) -> NDArray[np.int64]:
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise ValueError("confusion matrix must be square")
        if (v < 0).any():
            raise ValueError("confusion counts must be non-negative")
        return v

    @property
    def num_classes(self) -> int:
        return int(self.counts.shape[0])

    @property
    def total(self) -> int:
        return int(self.counts.sum())


class ClassReport(BaseModel):
    """Precision/recall summary for one class."""

    label: str
    precision: float
    recall: float
    f1: float
    support: int


class EvaluationReport(BaseModel):
    """Accuracy and per-class metrics derived from a confusion matrix."""

    accuracy: float
    total: int
    per_class: list[ClassReport]


# Feature files


class FeatureRecord(BaseModel):
    """
    MFCC matrix of one segment of one labeled clip.

    `label` is the training target. `present` lists every class audible in
    the clip; it defaults to [label] and holds more than one entry only for
    mixed-source clips, which are used for calibration and not for training.
    """

    clip: str
    segment: NonNegativeInt
    label: NonNegativeInt
    mfcc: list[list[float]]
    present: list[NonNegativeInt] = Field(default_factory=list)

    @field_validator("mfcc")
    @classmethod
    def validate_mfcc(cls, v: list[list[float]]) -> list[list[float]]:
        if not v or len({len(row) for row in v}) != 1:
            raise ValueError("mfcc must be a non-empty rectangular matrix")
        return v

    @model_validator(mode="after")
    def validate_present(self) -> "FeatureRecord":
        if not self.present:
            self.present = [self.label]
        elif self.label not in self.present:
            raise ValueError(f"label {self.label} missing from present classes {self.present}")
        self.present = sorted(set(self.present))
        return self

    @property
    def is_mixed(self) -> bool:
        return len(self.present) > 1


class FeatureFile(BaseModel):
    """JSON feature document: label vocabulary plus per-segment records."""

    labels: list[str]
    records: list[FeatureRecord] = Field(default_factory=list)

    @model_validator(mode="after")
    def validate_labels(self) -> "FeatureFile":
        if len(set(self.labels)) != len(self.labels):
            raise ValueError("labels must be distinct")
        for record in self.records:
            if max(record.present) >= len(self.labels):
                raise ValueError(
                    f"record {record.clip}#{record.segment} has label "
                    f"{max(record.present)} outside the vocabulary"
                )
        return self


class LabeledClip(BaseModel):
    """MFCC segments of one clip together with the classes it contains."""

    model_config = _ARRAY_CONFIG

    clip_id: str
    sequences: list[MfccSequence]
    labels: frozenset[int]


# Size accounting


class SectionSize(BaseModel):
    """Serialized footprint of one section of a model file."""

    name: str
    kind: Literal["header", "core", "auxiliary"]
    shape: tuple[int, ...] = ()
    nbytes: NonNegativeInt


class SizeReport(BaseModel):
    """Byte-exact breakdown of a serialized model file."""

    quantized: bool
    sections: list[SectionSize]
    parameter_count: NonNegativeInt

    @property
    def core_bytes(self) -> int:
        return sum(s.nbytes for s in self.sections if s.kind == "core")

    @property
    def auxiliary_bytes(self) -> int:
        return sum(s.nbytes for s in self.sections if s.kind != "core")

    @property
    def total_bytes(self) -> int:
        return sum(s.nbytes for s in self.sections)
