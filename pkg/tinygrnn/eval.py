"""Clip inference, multi-tone detection and classification metrics."""

import logging
from collections.abc import Sequence
from typing import Optional

import numpy as np
from numpy.typing import ArrayLike, NDArray
from pydantic import BaseModel, ConfigDict

from tinygrnn.audio_io import prepare_clip, segment_clip
from tinygrnn.dsp import mfcc_sequence, spectral_gate
from tinygrnn.exceptions import (
    BadIndexError,
    DimensionMismatchError,
    EmptyDatasetError,
    EmptyMatrixError,
    LengthMismatchError,
)
from tinygrnn.models import (
    DEFAULT_FEATURE_CONFIG,
    AudioClip,
    ClassReport,
    ClassThresholds,
    ClipPrediction,
    ConfusionMatrix,
    EvaluationReport,
    FeatureConfig,
    FeatureFile,
    MfccSequence,
    ModelBundle,
)
from tinygrnn.train import group_clips, segment_probabilities

logger = logging.getLogger(__name__)


def aggregate_probs(per_segment: ArrayLike) -> NDArray[np.float64]:
    """Arithmetic mean of the segment distributions."""
    probs = np.asarray(per_segment, dtype=np.float64)
    if probs.ndim != 2 or probs.shape[0] == 0:
        raise DimensionMismatchError(
            f"Expected a non-empty (segments, classes) array, got {probs.shape}"
        )
    result: NDArray[np.float64] = probs.mean(axis=0)
    return result


def detect_present_classes(aggregate: ArrayLike, thresholds: ClassThresholds) -> set[int]:
    """Every class whose aggregate probability is at least its threshold."""
    probs = np.asarray(aggregate, dtype=np.float64)
    if probs.shape != thresholds.tau.shape:
        raise DimensionMismatchError(
            f"{probs.shape[0] if probs.ndim else 0} probabilities for "
            f"{thresholds.tau.shape[0]} thresholds"
        )
    return {int(c) for c in np.flatnonzero(probs >= thresholds.tau)}


def infer_sequences(
    model: ModelBundle, sequences: Sequence[MfccSequence]
) -> ClipPrediction:
    """Classify a clip from its precomputed (unnormalized) MFCC segments."""
    if not sequences:
        raise EmptyDatasetError("A clip needs at least one segment")
    per_segment = segment_probabilities(model, sequences)
    aggregate = aggregate_probs(per_segment)
    return ClipPrediction(
        per_segment=per_segment,
        aggregate=aggregate,
        predicted_class=int(np.argmax(aggregate)),
        present_classes=frozenset(detect_present_classes(aggregate, model.thresholds)),
    )


def infer_clip(
    model: ModelBundle,
    clip: AudioClip,
    denoise: bool = False,
    noise_profile: Optional[AudioClip] = None,
    config: FeatureConfig = DEFAULT_FEATURE_CONFIG,
) -> ClipPrediction:
    """
    Classify a clip of at least three seconds.

    The clip is resampled to the front-end rate, optionally spectrally gated,
    split into segments and run segment by segment through the model; the
    clip-level distribution is the mean of the segment distributions.

    Raises:
        TooShortError: Fewer samples than the segmented window needs
    """
    prepared = prepare_clip(clip, config)
    if denoise:
        profile = prepare_clip(noise_profile, config) if noise_profile is not None else None
        prepared = spectral_gate(prepared, profile, config)
    sequences = [mfcc_sequence(seg, config) for seg in segment_clip(prepared, config)]
    prediction = infer_sequences(model, sequences)
    logger.debug(
        f"Predicted {model.labels[prediction.predicted_class]} "
        f"(p={prediction.aggregate[prediction.predicted_class]:.3f})"
    )
    return prediction


def confusion_matrix(
    predictions: Sequence[int], labels: Sequence[int], num_classes: int
) -> ConfusionMatrix:
    """Counts indexed [truth, prediction]."""
    if len(predictions) != len(labels):
        raise LengthMismatchError(
            f"{len(predictions)} predictions for {len(labels)} labels"
        )
    counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    for pred, truth in zip(predictions, labels):
        if not (0 <= pred < num_classes and 0 <= truth < num_classes):
            raise BadIndexError(
                f"Class index out of range 0..{num_classes - 1}: truth {truth}, prediction {pred}"
            )
        counts[truth, pred] += 1
    return ConfusionMatrix(counts=counts)


def _safe_ratio(num: float, den: float) -> float:
    return num / den if den else 0.0


def metrics(cm: ConfusionMatrix, labels: Optional[Sequence[str]] = None) -> EvaluationReport:
    """Accuracy plus per-class precision, recall and F1; 0/0 counts as 0."""
    if cm.total == 0:
        raise EmptyMatrixError("Confusion matrix holds no samples")
    names = list(labels) if labels is not None else [str(c) for c in range(cm.num_classes)]
    if len(names) != cm.num_classes:
        raise LengthMismatchError(f"{len(names)} labels for {cm.num_classes} classes")

    counts = cm.counts
    diagonal = np.diag(counts)
    per_class = []
    for c, name in enumerate(names):
        precision = _safe_ratio(diagonal[c], counts[:, c].sum())
        recall = _safe_ratio(diagonal[c], counts[c, :].sum())
        per_class.append(
            ClassReport(
                label=name,
                precision=precision,
                recall=recall,
                f1=_safe_ratio(2 * precision * recall, precision + recall),
                support=int(counts[c, :].sum()),
            )
        )
    return EvaluationReport(
        accuracy=float(diagonal.sum()) / cm.total, total=cm.total, per_class=per_class
    )


class FeatureEvaluation(BaseModel):
    """Clip-level predictions on a feature file with their summary."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    clip_ids: list[str]
    predictions: list[ClipPrediction]
    truths: list[int]
    confusion: ConfusionMatrix
    report: EvaluationReport


def evaluate_features(model: ModelBundle, features: FeatureFile) -> FeatureEvaluation:
    """
    Classify every clip of a feature file and score the predictions.

    Clips whose records carry more than one label are scored against their
    lowest label index.
    """
    clips = group_clips(features)
    if not clips:
        raise EmptyDatasetError("Feature file has no records")
    predictions = [infer_sequences(model, clip.sequences) for clip in clips]
    truths = [min(clip.labels) for clip in clips]
    cm = confusion_matrix(
        [p.predicted_class for p in predictions], truths, model.config.num_classes
    )
    report = metrics(cm, model.labels)
    logger.info(f"Evaluated {cm.total} clips: accuracy {report.accuracy:.4f}")
    return FeatureEvaluation(
        clip_ids=[clip.clip_id for clip in clips],
        predictions=predictions,
        truths=truths,
        confusion=cm,
        report=report,
    )
