"""Tests for normalization, gradients, the optimizer, training and calibration."""

import numpy as np
import pytest

from tests.conftest import make_bundle
from tinygrnn.eval import infer_sequences
from tinygrnn.exceptions import (
    BadLabelError,
    DimensionMismatchError,
    EmptyDatasetError,
    LengthMismatchError,
    MissingClassError,
    SingleClassError,
)
from tinygrnn.grnn_core import PARAM_NAMES, fc_logits, forward_sequence, softmax, to_tensors
from tinygrnn.model_store import encode_model
from tinygrnn.models import (
    FeatureFile,
    FeatureRecord,
    LabeledClip,
    MfccSequence,
    TrainConfig,
)
from tinygrnn.train import (
    AdamState,
    adam_step,
    apply_norm,
    backprop_batch,
    calibrate_from_features,
    calibrate_thresholds,
    clip_gradients,
    cross_entropy,
    fit,
    fit_norm_stats,
    group_clips,
    init_adam_state,
    invert_norm,
    loss_and_gradients,
    split_by_clip,
    thresholds_from_aggregates,
    train_model,
)


def toy_features(rng, clips_per_class=6, num_classes=3, frames=5, width=3):
    """Clips whose class shifts the mean of every coefficient."""
    records = []
    for c in range(num_classes):
        for i in range(clips_per_class):
            for s in range(2):
                mfcc = rng.normal(2.0 * c, 0.5, (frames, width))
                records.append(
                    FeatureRecord(clip=f"c{c}_{i}", segment=s, label=c, mfcc=mfcc.tolist())
                )
    return FeatureFile(labels=[f"class_{c}" for c in range(num_classes)], records=records)


class TestNormalization:
    """Test cases for Z-score statistics."""

    def test_fit_statistics(self, rng):
        """Test mean and population std over all frames of all sequences."""
        seqs = [rng.normal(3.0, 2.0, (26, 13)) for _ in range(4)]
        stats = fit_norm_stats(seqs)
        frames = np.concatenate(seqs)
        np.testing.assert_allclose(stats.mean, frames.mean(axis=0))
        np.testing.assert_allclose(stats.std, frames.std(axis=0))

    def test_normalized_training_frames(self, rng):
        """Test normalized frames have zero mean and unit variance."""
        seqs = [rng.normal(-1.0, 4.0, (26, 13)) for _ in range(3)]
        stats = fit_norm_stats(seqs)
        normed = np.concatenate([apply_norm(stats, s).coeffs for s in seqs])
        np.testing.assert_allclose(normed.mean(axis=0), 0.0, atol=1e-12)
        np.testing.assert_allclose(normed.std(axis=0), 1.0, atol=1e-12)

    def test_constant_column_floors_std(self):
        """Test a constant coefficient gets std 1e-8 instead of zero."""
        seq = np.ones((5, 2))
        seq[:, 1] = np.arange(5)
        stats = fit_norm_stats([seq])
        assert stats.std[0] == 1e-8
        assert np.isfinite(apply_norm(stats, seq).coeffs).all()

    def test_invert_round_trip(self, rng):
        """Test invert_norm undoes apply_norm."""
        seq = MfccSequence(coeffs=rng.normal(0.0, 3.0, (26, 13)))
        stats = fit_norm_stats([seq])
        np.testing.assert_allclose(invert_norm(stats, apply_norm(stats, seq)).coeffs, seq.coeffs)

    def test_errors(self, rng):
        """Test empty input and width mismatches."""
        with pytest.raises(EmptyDatasetError):
            fit_norm_stats([])
        stats = fit_norm_stats([rng.normal(size=(4, 3))])
        with pytest.raises(DimensionMismatchError):
            apply_norm(stats, np.zeros((4, 5)))


class TestLoss:
    """Test cases for cross-entropy and backpropagation."""

    def test_cross_entropy(self):
        """Test -log p[label] with the 1e-12 floor."""
        assert cross_entropy([0.25, 0.75], 1) == pytest.approx(-np.log(0.75))
        assert cross_entropy([0.0, 1.0], 0) == pytest.approx(-np.log(1e-12))
        with pytest.raises(BadLabelError):
            cross_entropy([0.5, 0.5], 2)

    def test_uniform_cross_entropy(self):
        """Test a uniform six-way distribution costs ln 6 for any label."""
        for label in range(6):
            assert cross_entropy(np.full(6, 1 / 6), label) == pytest.approx(np.log(6.0))

    def test_output_bias_gradient(self, rng, tiny_config):
        """Test dL/db_fc is softmax minus the one-hot target."""
        bundle = make_bundle(tiny_config, seed=3)
        x = rng.standard_normal((5, 3))
        probs = softmax(fc_logits(bundle.fc, forward_sequence(bundle.cell, x)))
        _, grads = loss_and_gradients(to_tensors(bundle.cell, bundle.fc), x[None], np.array([1]))
        np.testing.assert_allclose(grads["b_fc"], probs - np.eye(3)[1], rtol=1e-10, atol=1e-14)

    def test_duplicated_batch_same_gradients(self, rng, tiny_config):
        """Test repeating every example leaves the mean loss and gradients unchanged."""
        bundle = make_bundle(tiny_config, seed=5)
        tensors = to_tensors(bundle.cell, bundle.fc)
        x = rng.standard_normal((4, 5, 3))
        y = np.array([0, 1, 2, 1])
        loss, grads = loss_and_gradients(tensors, x, y)
        loss2, grads2 = loss_and_gradients(
            tensors, np.concatenate([x, x]), np.concatenate([y, y])
        )
        assert loss2 == pytest.approx(loss, rel=1e-12)
        for name in PARAM_NAMES:
            np.testing.assert_allclose(grads2[name], grads[name], rtol=1e-10, atol=1e-15)

    def test_gradients_match_finite_differences(self, tiny_config):
        """Test analytic BPTT gradients on 20 random small models."""
        eps = 1e-5
        for seed in range(20):
            rng = np.random.default_rng(seed)
            bundle = make_bundle(tiny_config, seed=seed)
            tensors = to_tensors(bundle.cell, bundle.fc)
            tensors["zeta_raw"] = np.array([rng.normal(0.0, 1.0)])
            tensors["nu_raw"] = np.array([rng.normal(-1.0, 1.0)])
            tensors["U"] = rng.normal(0.0, 0.5, (4, 4))
            x = rng.standard_normal((4, 5, 3))
            y = rng.integers(0, 3, 4)

            _, analytic = loss_and_gradients(tensors, x, y)
            for name in PARAM_NAMES:
                numeric = np.zeros_like(tensors[name])
                for idx in np.ndindex(tensors[name].shape):
                    plus = {k: v.copy() for k, v in tensors.items()}
                    minus = {k: v.copy() for k, v in tensors.items()}
                    plus[name][idx] += eps
                    minus[name][idx] -= eps
                    numeric[idx] = (
                        loss_and_gradients(plus, x, y)[0]
                        - loss_and_gradients(minus, x, y)[0]
                    ) / (2 * eps)
                np.testing.assert_allclose(
                    analytic[name], numeric, rtol=1e-4, atol=1e-8, err_msg=f"{name} seed {seed}"
                )

    def test_backprop_batch_matches_tensor_path(self, rng, tiny_config):
        """Test the record-level entry point agrees with the array path."""
        bundle = make_bundle(tiny_config)
        x = rng.standard_normal((3, 5, 3))
        y = np.array([0, 2, 1])
        grads = backprop_batch(bundle.cell, bundle.fc, list(zip(x, y.tolist())))
        _, expected = loss_and_gradients(to_tensors(bundle.cell, bundle.fc), x, y)
        for name in PARAM_NAMES:
            np.testing.assert_array_equal(grads[name], expected[name])

    def test_backprop_batch_rejects_bad_labels(self, tiny_config):
        """Test out-of-range labels."""
        bundle = make_bundle(tiny_config)
        with pytest.raises(BadLabelError):
            backprop_batch(bundle.cell, bundle.fc, [(np.zeros((5, 3)), 3)])

    def test_clip_gradients(self):
        """Test global-norm rescaling."""
        grads = {"a": np.array([3.0]), "b": np.array([4.0])}
        clipped, norm = clip_gradients(grads, 1.0)
        assert norm == pytest.approx(5.0)
        np.testing.assert_allclose(clipped["a"], [0.6])
        np.testing.assert_allclose(clipped["b"], [0.8])
        unchanged, _ = clip_gradients(grads, 10.0)
        assert unchanged is grads


class TestAdam:
    """Test cases for the Adam update."""

    def test_first_step_is_signed_learning_rate(self):
        """Test bias correction makes the first step lr * g / |g|."""
        params = {"w": np.array([1.0, -2.0, 0.5])}
        grads = {"w": np.array([0.3, -4.0, 1e-3])}
        config = TrainConfig(learning_rate=0.01)
        new, state = adam_step(params, grads, init_adam_state(params), 1, config)
        expected = params["w"] - 0.01 * grads["w"] / (np.abs(grads["w"]) + 1e-8)
        np.testing.assert_allclose(new["w"], expected, rtol=1e-12)
        np.testing.assert_allclose(state.m["w"], 0.1 * grads["w"])
        np.testing.assert_allclose(state.v["w"], 0.001 * grads["w"] ** 2)

    def test_inputs_unchanged(self):
        """Test the update is pure."""
        params = {"w": np.array([1.0])}
        grads = {"w": np.array([1.0])}
        state = init_adam_state(params)
        adam_step(params, grads, state, 1)
        assert params["w"][0] == 1.0
        assert state.m["w"][0] == 0.0

    def test_minimizes_quadratic(self):
        """Test repeated steps approach the minimum of (w - 3)^2."""
        params = {"w": np.array([0.0])}
        state = init_adam_state(params)
        config = TrainConfig(learning_rate=0.1)
        for step in range(1, 1001):
            grads = {"w": 2 * (params["w"] - 3.0)}
            params, state = adam_step(params, grads, state, step, config)
        assert params["w"][0] == pytest.approx(3.0, abs=0.05)

    def test_zero_gradient_is_a_no_op(self):
        """Test steps with zero gradients from a fresh state move nothing."""
        params = {"w": np.array([1.0, -2.0]), "b": np.array([0.25])}
        state = init_adam_state(params)
        current = params
        for step in range(1, 6):
            zeros = {name: np.zeros_like(p) for name, p in current.items()}
            current, state = adam_step(current, zeros, state, step)
        for name in params:
            np.testing.assert_array_equal(current[name], params[name])

    def test_shape_mismatch(self):
        """Test mismatched gradient shapes."""
        params = {"w": np.zeros(3)}
        with pytest.raises(DimensionMismatchError):
            adam_step(params, {"w": np.zeros(2)}, init_adam_state(params), 1)

    def test_state_is_frozen(self):
        """Test AdamState cannot be reassigned."""
        state = AdamState(m={"w": np.zeros(1)}, v={"w": np.zeros(1)})
        with pytest.raises(ValueError):
            state.m = {}


class TestFit:
    """Test cases for the training loop."""

    def test_split_keeps_clips_together(self, rng):
        """Test no clip has segments on both sides of the split."""
        clip_ids = [f"clip{i // 5}" for i in range(50)]
        train_idx, val_idx = split_by_clip(clip_ids, 0.8, rng)
        train_clips = {clip_ids[i] for i in train_idx}
        val_clips = {clip_ids[i] for i in val_idx}
        assert not train_clips & val_clips
        assert len(train_clips) == 8 and len(val_clips) == 2

    def test_learns_separable_toy_data(self, rng):
        """Test a few epochs separate well-spaced classes."""
        config = TrainConfig(max_epochs=60, learning_rate=0.02, batch_size=8)
        run = fit(config, toy_features(rng, clips_per_class=10), hidden_dim=4)
        assert run.history[run.best_epoch - 1].val_accuracy >= 0.9
        assert run.bundle.config.input_dim == 3
        assert not run.bundle.thresholds.calibrated
        np.testing.assert_array_equal(run.bundle.thresholds.tau, 0.5)

    def test_identical_seeds_identical_files(self, rng):
        """Test two runs with one seed serialize to the same bytes."""
        features = toy_features(rng)
        config = TrainConfig(max_epochs=3, rng_seed=11)
        first = fit(config, features, hidden_dim=4).bundle
        second = fit(config, features, hidden_dim=4).bundle
        assert encode_model(first) == encode_model(second)

    def test_train_model_returns_best_bundle(self, rng):
        """Test train_model is the bundle of an equivalent fit."""
        features = toy_features(rng)
        config = TrainConfig(max_epochs=3, rng_seed=4)
        bundle = train_model(config, features, hidden_dim=4)
        assert encode_model(bundle) == encode_model(fit(config, features, hidden_dim=4).bundle)

    def test_early_stopping(self, rng):
        """Test training stops once validation loss stalls."""
        # steps far below one ulp of every weight keep validation loss flat
        config = TrainConfig(max_epochs=200, patience=2, learning_rate=1e-300)
        run = fit(config, toy_features(rng), hidden_dim=4)
        assert run.stopped_early
        assert run.best_epoch == 1
        assert len(run.history) == run.best_epoch + 2
        assert len({s.val_loss for s in run.history}) == 1

    def test_smoothed_training_loss_decreases(self, rng):
        """Test the 5-epoch moving average of training loss never rises."""
        config = TrainConfig(max_epochs=30, patience=30, batch_size=64)
        run = fit(config, toy_features(rng, clips_per_class=10), hidden_dim=4)
        losses = np.array([s.train_loss for s in run.history])
        smoothed = np.convolve(losses, np.ones(5) / 5, mode="valid")
        assert (np.diff(smoothed) <= 0).all()
        assert smoothed[-1] < smoothed[0]

    def test_mixed_records_left_out_of_training(self, rng):
        """Test multi-class records do not change the trained model."""
        features = toy_features(rng)
        mixed = [
            FeatureRecord(clip="mix", segment=s, label=0, mfcc=[[9.0] * 3] * 5, present=[0, 2])
            for s in range(2)
        ]
        with_mix = FeatureFile(labels=features.labels, records=features.records + mixed)
        config = TrainConfig(max_epochs=2, rng_seed=3)
        plain = fit(config, features, hidden_dim=4).bundle
        assert encode_model(fit(config, with_mix, hidden_dim=4).bundle) == encode_model(plain)

    def test_only_mixed_records_rejected(self):
        """Test a dataset of mixed clips alone has nothing to train on."""
        record = FeatureRecord(clip="m", segment=0, label=0, mfcc=[[1.0]], present=[0, 1])
        with pytest.raises(EmptyDatasetError):
            fit(TrainConfig(max_epochs=1), FeatureFile(labels=["a", "b"], records=[record]))

    def test_epoch_callback(self, rng):
        """Test the callback sees every epoch."""
        seen = []
        fit(TrainConfig(max_epochs=2), toy_features(rng), hidden_dim=4, on_epoch=seen.append)
        assert [s.epoch for s in seen] == [1, 2]

    def test_single_class_rejected(self, rng):
        """Test datasets need two classes."""
        features = toy_features(rng, num_classes=1)
        with pytest.raises(SingleClassError):
            fit(TrainConfig(max_epochs=1), features)

    def test_empty_dataset_rejected(self):
        """Test datasets need records."""
        with pytest.raises(EmptyDatasetError):
            fit(TrainConfig(max_epochs=1), FeatureFile(labels=["a", "b"]))

    def test_env_override(self, monkeypatch):
        """Test TINYGRNN_* variables override defaults."""
        monkeypatch.setenv("TINYGRNN_BATCH_SIZE", "64")
        assert TrainConfig().batch_size == 64


class TestCalibration:
    """Test cases for per-class threshold calibration."""

    def test_averaging_rule_on_ten_clips(self):
        """Test tau[c] is the mean aggregate over clips containing c."""
        aggregates = np.array(
            [
                [0.7, 0.2, 0.1],
                [0.6, 0.3, 0.1],
                [0.1, 0.8, 0.1],
                [0.2, 0.5, 0.3],
                [0.1, 0.1, 0.8],
                [0.3, 0.3, 0.4],
                [0.4, 0.4, 0.2],
                [0.5, 0.1, 0.4],
                [0.2, 0.2, 0.6],
                [0.05, 0.9, 0.05],
            ]
        )
        label_sets = [{0}, {0}, {1}, {1, 2}, {2}, {2}, {0, 1}, {0, 2}, {2}, {1}]
        thresholds = thresholds_from_aggregates(aggregates, label_sets, 3)
        expected = [
            (0.7 + 0.6 + 0.4 + 0.5) / 4,
            (0.8 + 0.5 + 0.4 + 0.9) / 4,
            (0.3 + 0.8 + 0.4 + 0.4 + 0.6) / 5,
        ]
        np.testing.assert_allclose(thresholds.tau, expected, rtol=0, atol=1e-12)
        assert thresholds.calibrated

    def test_missing_class(self):
        """Test a class with no clips."""
        with pytest.raises(MissingClassError):
            thresholds_from_aggregates(np.full((2, 3), 1 / 3), [{0}, {1}], 3)

    def test_length_mismatch(self):
        """Test aggregates and label sets must pair up."""
        with pytest.raises(LengthMismatchError):
            thresholds_from_aggregates(np.full((2, 3), 1 / 3), [{0}], 3)

    def test_calibrate_uses_clip_aggregates(self, rng, tiny_config):
        """Test calibration against aggregates from clip inference."""
        model = make_bundle(tiny_config, seed=2)
        clips = [
            LabeledClip(
                clip_id=f"clip{i}",
                sequences=[MfccSequence(coeffs=rng.normal(size=(5, 3))) for _ in range(5)],
                labels=frozenset({i % 3}),
            )
            for i in range(10)
        ]
        thresholds = calibrate_thresholds(model, clips)
        aggregates = np.array([infer_sequences(model, c.sequences).aggregate for c in clips])
        for c in range(3):
            rows = [i for i in range(10) if i % 3 == c]
            assert thresholds.tau[c] == pytest.approx(aggregates[rows, c].mean(), abs=1e-12)

    def test_group_clips(self, rng):
        """Test records are grouped per clip in segment order."""
        features = toy_features(rng, clips_per_class=2, num_classes=2)
        clips = group_clips(features)
        assert [c.clip_id for c in clips] == ["c0_0", "c0_1", "c1_0", "c1_1"]
        assert all(len(c.sequences) == 2 for c in clips)
        assert clips[2].labels == frozenset({1})

    def test_group_clips_unions_present_classes(self):
        """Test a mixed clip's label set holds every present class."""
        features = FeatureFile(
            labels=["a", "b", "c"],
            records=[
                FeatureRecord(clip="m", segment=1, label=2, mfcc=[[1.0]], present=[0, 2]),
                FeatureRecord(clip="m", segment=0, label=2, mfcc=[[2.0]], present=[0, 2]),
            ],
        )
        (clip,) = group_clips(features)
        assert clip.labels == frozenset({0, 2})
        assert [s.coeffs[0, 0] for s in clip.sequences] == [2.0, 1.0]

    def test_calibrate_from_features(self, rng, tiny_config):
        """Test the model is returned with calibrated thresholds."""
        model = make_bundle(tiny_config, labels=("class_0", "class_1", "class_2"))
        calibrated = calibrate_from_features(model, toy_features(rng))
        assert calibrated.thresholds.calibrated
        np.testing.assert_array_equal(calibrated.cell.W, model.cell.W)

    def test_calibrate_label_mismatch(self, rng, tiny_config):
        """Test feature labels must match the model's."""
        model = make_bundle(tiny_config, labels=("x", "y", "z"))
        with pytest.raises(BadLabelError):
            calibrate_from_features(model, toy_features(rng))
