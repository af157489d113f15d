"""
tinygrnn-py: kilobyte-scale FastGRNN acoustic event classifier

MFCC front-end, FastGRNN training with backpropagation through time,
segmented clip inference with per-class presence thresholds, and a compact
binary model format with optional int8 quantization.

Basic usage:
    >>> from tinygrnn import load_model, load_wav, infer_clip
    >>> model = load_model("model.grnn")
    >>> prediction = infer_clip(model, load_wav("street.wav"))
    >>> model.labels[prediction.predicted_class]
"""

from tinygrnn.audio_io import load_wav, resample_linear, segment_clip
from tinygrnn.eval import detect_present_classes, infer_clip
from tinygrnn.exceptions import InputFormatError, PreconditionError, TinyGrnnError
from tinygrnn.model_store import load_model, quantize_int8, save_model, size_report
from tinygrnn.models import (
    AudioClip,
    FeatureConfig,
    ModelBundle,
    ModelConfig,
    SoundClass,
    TrainConfig,
)
from tinygrnn.train import calibrate_thresholds, train_model

__version__ = "0.1.0a1"
__all__ = [
    "AudioClip",
    "FeatureConfig",
    "ModelBundle",
    "ModelConfig",
    "SoundClass",
    "TrainConfig",
    "load_wav",
    "resample_linear",
    "segment_clip",
    "infer_clip",
    "detect_present_classes",
    "train_model",
    "calibrate_thresholds",
    "save_model",
    "load_model",
    "quantize_int8",
    "size_report",
    "TinyGrnnError",
    "InputFormatError",
    "PreconditionError",
]
