"""Tests for clip inference, detection and metrics."""

import numpy as np
import pytest

from tests.conftest import make_bundle
from tinygrnn.eval import (
    aggregate_probs,
    confusion_matrix,
    detect_present_classes,
    evaluate_features,
    infer_clip,
    infer_sequences,
    metrics,
)
from tinygrnn.exceptions import (
    BadIndexError,
    EmptyMatrixError,
    LengthMismatchError,
    TooShortError,
)
from tinygrnn.models import (
    AudioClip,
    ClassThresholds,
    ConfusionMatrix,
    FcParams,
    FeatureFile,
    FeatureRecord,
    MfccSequence,
)


def zero_head(bundle):
    fc = FcParams(
        W_fc=np.zeros_like(bundle.fc.W_fc), b_fc=np.zeros_like(bundle.fc.b_fc)
    )
    return bundle.model_copy(update={"fc": fc})


class TestInferClip:
    """Test cases for end-to-end clip inference."""

    def test_five_valid_distributions(self, default_bundle, sine_clip):
        """Test five segment distributions that each sum to one."""
        prediction = infer_clip(default_bundle, sine_clip)
        assert prediction.per_segment.shape == (5, 6)
        np.testing.assert_allclose(prediction.per_segment.sum(axis=1), 1.0, atol=1e-9)
        assert prediction.predicted_class == int(np.argmax(prediction.aggregate))

    def test_zero_head_is_uniform(self, default_bundle, sine_clip):
        """Test a zero output layer gives 1/6 everywhere."""
        prediction = infer_clip(zero_head(default_bundle), sine_clip)
        np.testing.assert_allclose(prediction.per_segment, 1 / 6, atol=1e-15)
        np.testing.assert_allclose(prediction.aggregate, 1 / 6, atol=1e-15)

    def test_repeatable(self, default_bundle, sine_clip):
        """Test repeated calls are bit-identical."""
        first = infer_clip(default_bundle, sine_clip, denoise=True)
        second = infer_clip(default_bundle, sine_clip, denoise=True)
        np.testing.assert_array_equal(first.per_segment, second.per_segment)

    def test_resamples_input(self, default_bundle):
        """Test 44.1 kHz input is brought to the front-end rate."""
        t = np.arange(44100 * 3) / 44100
        clip = AudioClip(samples=0.3 * np.sin(2 * np.pi * 300 * t), sample_rate=44100)
        assert infer_clip(default_bundle, clip).per_segment.shape == (5, 6)

    def test_too_short(self, default_bundle):
        """Test clips under three seconds."""
        clip = AudioClip(samples=np.zeros(22050), sample_rate=22050)
        with pytest.raises(TooShortError):
            infer_clip(default_bundle, clip)

    def test_matches_sequence_path(self, rng, tiny_config):
        """Test infer_sequences aggregates its segment outputs."""
        model = make_bundle(tiny_config)
        seqs = [rng.normal(size=(5, 3)) for _ in range(5)]
        prediction = infer_sequences(model, [MfccSequence(coeffs=s) for s in seqs])
        np.testing.assert_allclose(
            prediction.aggregate, prediction.per_segment.mean(axis=0), atol=1e-15
        )


class TestAggregation:
    """Test cases for segment pooling and detection."""

    def test_mean_by_hand(self):
        """Test the aggregate is the arithmetic mean of five rows."""
        rows = np.array(
            [
                [0.5, 0.3, 0.2],
                [0.1, 0.8, 0.1],
                [0.2, 0.2, 0.6],
                [0.4, 0.4, 0.2],
                [0.3, 0.3, 0.4],
            ]
        )
        np.testing.assert_allclose(aggregate_probs(rows), [0.3, 0.4, 0.3], atol=1e-12)

    def test_detect_by_rule(self):
        """Test classes at or above their thresholds are present."""
        probs = [0.5, 0.3, 0.1, 0.05, 0.03, 0.02]
        thresholds = ClassThresholds(tau=np.full(6, 0.25))
        assert detect_present_classes(probs, thresholds) == {0, 1}

    def test_nothing_detected(self):
        """Test every probability below every threshold."""
        thresholds = ClassThresholds(tau=np.full(6, 0.9))
        assert detect_present_classes(np.full(6, 1 / 6), thresholds) == set()

    def test_tie_is_included(self):
        """Test probability equal to threshold counts as present."""
        thresholds = ClassThresholds(tau=np.array([0.25, 0.5, 0.25]))
        assert detect_present_classes([0.25, 0.5, 0.25], thresholds) == {0, 1, 2}

    def test_monotone_in_thresholds(self, rng):
        """Test raising thresholds never adds classes."""
        probs = rng.dirichlet(np.ones(6))
        low = ClassThresholds(tau=rng.uniform(0, 0.3, 6))
        high = ClassThresholds(tau=np.minimum(low.tau + 0.1, 1.0))
        assert detect_present_classes(probs, high) <= detect_present_classes(probs, low)


class TestConfusionMatrix:
    """Test cases for confusion matrices."""

    def test_perfect_predictor(self):
        """Test a perfect predictor is diagonal."""
        labels = [0, 1, 2, 1, 0]
        cm = confusion_matrix(labels, labels, 3)
        np.testing.assert_array_equal(cm.counts, np.diag([2, 2, 1]))

    def test_uniform_rows(self, rng):
        """Test 1200 uniform labels give 200 per row."""
        labels = np.repeat(np.arange(6), 200).tolist()
        cm = confusion_matrix(rng.integers(0, 6, 1200).tolist(), labels, 6)
        np.testing.assert_array_equal(cm.counts.sum(axis=1), 200)
        assert cm.total == 1200

    def test_constant_predictor(self):
        """Test all counts land in column 0."""
        cm = confusion_matrix([0] * 4, [0, 1, 2, 2], 3)
        assert cm.counts[:, 0].sum() == 4
        assert cm.counts[:, 1:].sum() == 0

    def test_errors(self):
        """Test length mismatches and out-of-range indices."""
        with pytest.raises(LengthMismatchError):
            confusion_matrix([0, 1], [0], 2)
        with pytest.raises(BadIndexError):
            confusion_matrix([0, 5], [0, 1], 2)


class TestMetrics:
    """Test cases for accuracy, precision and recall."""

    def test_diagonal(self):
        """Test a diagonal matrix scores 1 everywhere."""
        report = metrics(ConfusionMatrix(counts=np.diag([3, 4, 5])))
        assert report.accuracy == 1.0
        assert all(r.precision == 1.0 and r.recall == 1.0 for r in report.per_class)

    def test_hand_arithmetic(self):
        """Test [[1, 1], [0, 2]]."""
        report = metrics(ConfusionMatrix(counts=[[1, 1], [0, 2]]), ["a", "b"])
        assert report.accuracy == 0.75
        assert report.per_class[0].recall == 0.5
        assert report.per_class[0].precision == 1.0
        assert report.per_class[1].precision == pytest.approx(2 / 3)
        assert report.per_class[1].support == 2

    def test_zero_predictions(self):
        """Test a never-predicted class has precision 0."""
        report = metrics(ConfusionMatrix(counts=[[0, 2], [0, 2]]))
        assert report.per_class[0].precision == 0.0
        assert report.per_class[0].f1 == 0.0

    def test_empty_matrix(self):
        """Test an all-zero matrix."""
        with pytest.raises(EmptyMatrixError):
            metrics(ConfusionMatrix(counts=np.zeros((3, 3))))


class TestEvaluateFeatures:
    """Test cases for feature-file evaluation."""

    def test_counts_clips(self, rng, tiny_config):
        """Test one confusion entry per clip."""
        model = make_bundle(tiny_config)
        records = [
            FeatureRecord(
                clip=f"clip{i}", segment=s, label=i % 3, mfcc=rng.normal(size=(5, 3)).tolist()
            )
            for i in range(7)
            for s in range(5)
        ]
        result = evaluate_features(model, FeatureFile(labels=list(model.labels), records=records))
        assert result.confusion.total == 7
        np.testing.assert_array_equal(result.confusion.counts.sum(axis=1), [3, 2, 2])
        assert result.clip_ids[0] == "clip0"
        assert len(result.report.per_class) == 3
