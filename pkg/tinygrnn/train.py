"""
Supervised training of the FastGRNN classifier.

Z-score normalization, cross-entropy, backpropagation through time with the
shared W/U contributions of gate and candidate accumulated at every step,
Adam with bias correction, and per-class threshold calibration.
"""

import logging
from collections.abc import Iterable, Sequence
from typing import Callable, Optional, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray
from pydantic import BaseModel, ConfigDict
from scipy.special import expit

from tinygrnn.exceptions import (
    BadConfigError,
    BadLabelError,
    DimensionMismatchError,
    EmptyDatasetError,
    LengthMismatchError,
    MissingClassError,
    SingleClassError,
)
from tinygrnn.grnn_core import (
    PARAM_NAMES,
    ParamTensors,
    fc_logits,
    forward_sequence,
    from_tensors,
    init_params,
    softmax,
    to_tensors,
    unroll,
)
from tinygrnn.models import (
    STD_FLOOR,
    ClassThresholds,
    FastGrnnParams,
    FcParams,
    FeatureFile,
    FloatArray,
    LabeledClip,
    MfccSequence,
    ModelBundle,
    ModelConfig,
    NormStats,
    TrainConfig,
)

logger = logging.getLogger(__name__)

PROB_FLOOR = 1e-12
DEFAULT_THRESHOLD = 0.5

SequenceLike = Union[MfccSequence, ArrayLike]


def _coeffs(seq: SequenceLike) -> NDArray[np.float64]:
    if isinstance(seq, MfccSequence):
        return seq.coeffs
    return np.asarray(seq, dtype=np.float64)


# Normalization


def fit_norm_stats(features: Iterable[SequenceLike]) -> NormStats:
    """Per-coefficient mean and population std over every frame of every sequence."""
    frames = [_coeffs(seq) for seq in features]
    if not frames:
        raise EmptyDatasetError("Cannot fit normalization on an empty collection")
    stacked = np.concatenate(frames, axis=0)
    std = np.maximum(stacked.std(axis=0), STD_FLOOR)
    return NormStats(mean=stacked.mean(axis=0), std=std)


def apply_norm(stats: NormStats, seq: SequenceLike) -> MfccSequence:
    """(x - mean) / std column-wise."""
    return MfccSequence(coeffs=normalize_array(stats, _coeffs(seq)))


def normalize_array(stats: NormStats, x: NDArray[np.float64]) -> NDArray[np.float64]:
    """Z-score an array whose last axis holds the coefficients."""
    if x.shape[-1:] != stats.mean.shape:
        raise DimensionMismatchError(
            f"Features have width {x.shape[-1:]}, stats have {stats.mean.shape}"
        )
    result: NDArray[np.float64] = (x - stats.mean) / stats.std
    return result


def invert_norm(stats: NormStats, seq: SequenceLike) -> MfccSequence:
    """x * std + mean; undoes :func:`apply_norm`."""
    coeffs = _coeffs(seq)
    if coeffs.shape[-1:] != stats.mean.shape:
        raise DimensionMismatchError("Features and stats differ in width")
    return MfccSequence(coeffs=coeffs * stats.std + stats.mean)


# Loss and gradients


def cross_entropy(probs: ArrayLike, label: int) -> float:
    """-log(max(p[label], 1e-12))."""
    p = np.asarray(probs, dtype=np.float64)
    if not 0 <= label < p.shape[-1]:
        raise BadLabelError(f"Label {label} outside 0..{p.shape[-1] - 1}")
    return float(-np.log(max(float(p[label]), PROB_FLOOR)))


def loss_and_gradients(
    tensors: ParamTensors, x: NDArray[np.float64], y: NDArray[np.int64]
) -> tuple[float, ParamTensors]:
    """
    Mean cross-entropy of a (B, T, D) batch and its gradient for every tensor.

    Backpropagation runs through all T steps. Because W and U feed both the
    gate and the candidate, their gradients collect both paths at each step;
    zeta_raw and nu_raw pick up the sigmoid derivative at the end.
    """
    batch = x.shape[0]
    rows = np.arange(batch)
    trace = unroll(tensors, x)
    h_last = trace.hidden[-1]

    probs = softmax(h_last @ tensors["W_fc"].T + tensors["b_fc"])
    picked = probs[rows, y]
    loss = float(np.mean(-np.log(np.maximum(picked, PROB_FLOOR))))

    d_logits = probs.copy()
    d_logits[rows, y] -= 1.0
    # the clamp is flat below the floor
    d_logits[picked < PROB_FLOOR] = 0.0
    d_logits /= batch

    grads = {name: np.zeros_like(tensors[name]) for name in PARAM_NAMES}
    grads["W_fc"] = d_logits.T @ h_last
    grads["b_fc"] = d_logits.sum(axis=0)

    zeta = float(expit(tensors["zeta_raw"][0]))
    nu = float(expit(tensors["nu_raw"][0]))
    d_zeta = 0.0
    d_nu = 0.0
    d_h = d_logits @ tensors["W_fc"]
    for t in reversed(range(x.shape[1])):
        z, c, h_prev = trace.gate[t], trace.candidate[t], trace.hidden[t]
        d_c = d_h * (zeta * (1.0 - z) + nu)
        d_z = d_h * (h_prev - zeta * c)
        d_zeta += float(np.sum(d_h * (1.0 - z) * c))
        d_nu += float(np.sum(d_h * c))

        d_pre_gate = d_z * z * (1.0 - z)
        d_pre_cand = d_c * (1.0 - c * c)
        grads["b_z"] += d_pre_gate.sum(axis=0)
        grads["b_h"] += d_pre_cand.sum(axis=0)

        d_pre = d_pre_gate + d_pre_cand
        grads["W"] += d_pre.T @ x[:, t, :]
        grads["U"] += d_pre.T @ h_prev
        d_h = d_h * z + d_pre @ tensors["U"]

    grads["zeta_raw"] = np.array([d_zeta * zeta * (1.0 - zeta)])
    grads["nu_raw"] = np.array([d_nu * nu * (1.0 - nu)])
    return loss, grads


def _stack_batch(
    batch: Sequence[tuple[SequenceLike, int]],
) -> tuple[NDArray[np.float64], NDArray[np.int64]]:
    if not batch:
        raise EmptyDatasetError("Batch is empty")
    arrays = [_coeffs(seq) for seq, _ in batch]
    if len({a.shape for a in arrays}) != 1:
        raise DimensionMismatchError("Batch sequences differ in shape")
    return np.stack(arrays), np.array([label for _, label in batch], dtype=np.int64)


def backprop_batch(
    cell: FastGrnnParams,
    fc: FcParams,
    batch: Sequence[tuple[SequenceLike, int]],
) -> ParamTensors:
    """Mean cross-entropy gradient over a batch of (sequence, label) pairs."""
    x, y = _stack_batch(batch)
    if x.shape[2] != cell.input_dim:
        raise DimensionMismatchError(
            f"Sequences have width {x.shape[2]}, cell expects {cell.input_dim}"
        )
    if ((y < 0) | (y >= fc.num_classes)).any():
        raise BadLabelError(f"Labels must lie in 0..{fc.num_classes - 1}")
    _, grads = loss_and_gradients(to_tensors(cell, fc), x, y)
    return grads


def clip_gradients(
    grads: ParamTensors, max_norm: float
) -> tuple[ParamTensors, float]:
    """Scale all gradients together so their global L2 norm is at most max_norm."""
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if norm <= max_norm or norm == 0.0:
        return grads, norm
    scale = max_norm / norm
    return {name: g * scale for name, g in grads.items()}, norm


# Optimizer


class AdamState(BaseModel):
    """First and second moment accumulators, one pair per tensor."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    m: dict[str, FloatArray]
    v: dict[str, FloatArray]


def init_adam_state(params: ParamTensors) -> AdamState:
    zeros = {name: np.zeros_like(p) for name, p in params.items()}
    return AdamState(m=zeros, v=zeros)


def adam_step(
    params: ParamTensors,
    grads: ParamTensors,
    state: AdamState,
    step: int,
    config: Optional[TrainConfig] = None,
) -> tuple[ParamTensors, AdamState]:
    """
    One Adam update with bias correction.

    Args:
        params: Current tensors by name
        grads: Gradients with the same names and shapes
        state: Moment accumulators from the previous step
        step: 1-based step index used for bias correction
        config: Learning rate, betas and epsilon (defaults if omitted)

    Returns:
        Updated tensors and accumulators; the inputs are not modified.
    """
    cfg = config or TrainConfig()
    if step < 1:
        raise BadConfigError(f"Adam step index must be >= 1, got {step}")
    if params.keys() != grads.keys() or params.keys() != state.m.keys():
        raise DimensionMismatchError("Parameters, gradients and state differ in names")

    b1, b2 = cfg.beta1, cfg.beta2
    correction1 = 1.0 - b1**step
    correction2 = 1.0 - b2**step
    new_params: ParamTensors = {}
    new_m: ParamTensors = {}
    new_v: ParamTensors = {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape or state.m[name].shape != p.shape:
            raise DimensionMismatchError(
                f"Shape mismatch for {name}: param {p.shape}, grad {g.shape}"
            )
        m = b1 * state.m[name] + (1.0 - b1) * g
        v = b2 * state.v[name] + (1.0 - b2) * g * g
        m_hat = m / correction1
        v_hat = v / correction2
        new_params[name] = p - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
        new_m[name], new_v[name] = m, v
    return new_params, AdamState(m=new_m, v=new_v)


# Training loop


class EpochStats(BaseModel):
    """Loss and accuracy after one pass over the training split."""

    epoch: int
    train_loss: float
    val_loss: float
    val_accuracy: float


class TrainingRun(BaseModel):
    """Result of :func:`fit`: the best-validation bundle plus its history."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    bundle: ModelBundle
    history: list[EpochStats]
    best_epoch: int
    stopped_early: bool


def _dataset_arrays(
    features: FeatureFile,
) -> tuple[NDArray[np.float64], NDArray[np.int64], list[str]]:
    if not features.records:
        raise EmptyDatasetError("Feature file has no records")
    records = [r for r in features.records if not r.is_mixed]
    if len(records) < len(features.records):
        logger.info(
            f"Leaving {len(features.records) - len(records)} mixed-source segments "
            f"out of training"
        )
    if not records:
        raise EmptyDatasetError("Feature file has no single-source records")
    shapes = {(len(r.mfcc), len(r.mfcc[0])) for r in records}
    if len(shapes) != 1:
        raise DimensionMismatchError(f"Records have mixed MFCC shapes: {sorted(shapes)}")
    x = np.array([r.mfcc for r in records], dtype=np.float64)
    y = np.array([r.label for r in records], dtype=np.int64)
    return x, y, [r.clip for r in records]


def split_by_clip(
    clip_ids: Sequence[str], train_fraction: float, rng: np.random.Generator
) -> tuple[NDArray[np.int64], NDArray[np.int64]]:
    """Shuffle clip identifiers and split record indices so no clip straddles."""
    unique = sorted(set(clip_ids))
    order = rng.permutation(len(unique))
    if len(unique) < 2:
        logger.warning("Only one clip available; validating on the training split")
        everything = np.arange(len(clip_ids))
        return everything, everything
    n_train = min(max(1, int(round(train_fraction * len(unique)))), len(unique) - 1)
    train_clips = {unique[i] for i in order[:n_train]}
    is_train = np.array([c in train_clips for c in clip_ids])
    return np.flatnonzero(is_train), np.flatnonzero(~is_train)


def _predict(tensors: ParamTensors, x: NDArray[np.float64]) -> NDArray[np.float64]:
    h_last = unroll(tensors, x).hidden[-1]
    return softmax(h_last @ tensors["W_fc"].T + tensors["b_fc"])


def _score(
    tensors: ParamTensors, x: NDArray[np.float64], y: NDArray[np.int64]
) -> tuple[float, float]:
    probs = _predict(tensors, x)
    picked = probs[np.arange(len(y)), y]
    loss = float(np.mean(-np.log(np.maximum(picked, PROB_FLOOR))))
    accuracy = float(np.mean(probs.argmax(axis=1) == y))
    return loss, accuracy


def _float32_exact(array: NDArray[np.float64]) -> NDArray[np.float64]:
    return array.astype(np.float32).astype(np.float64)


def fit(
    config: TrainConfig,
    features: FeatureFile,
    hidden_dim: int = 26,
    on_epoch: Optional[Callable[[EpochStats], None]] = None,
) -> TrainingRun:
    """
    Train a classifier on a feature file.

    Records are split by clip into train/validation, normalization is fitted
    on the training split only, and minibatch Adam runs over BPTT gradients
    (clipped to clip_norm) until max_epochs or until validation loss has not
    improved for `patience` epochs. The best-validation parameters are kept
    and rounded to 32-bit values so the saved file reproduces them exactly.

    Raises:
        EmptyDatasetError: No records
        SingleClassError: Fewer than two classes present
    """
    x_all, y_all, clip_ids = _dataset_arrays(features)
    present = np.unique(y_all)
    if present.size < 2:
        raise SingleClassError(
            f"Training needs at least two classes, found {present.tolist()}"
        )

    model_config = ModelConfig(
        input_dim=x_all.shape[2],
        hidden_dim=hidden_dim,
        num_classes=len(features.labels),
        seq_len=x_all.shape[1],
    )
    rng = np.random.default_rng(config.rng_seed)
    train_idx, val_idx = split_by_clip(clip_ids, config.train_fraction, rng)

    norm = fit_norm_stats(x_all[train_idx])
    norm = NormStats(mean=_float32_exact(norm.mean), std=_float32_exact(norm.std))
    x_train = normalize_array(norm, x_all[train_idx])
    y_train = y_all[train_idx]
    x_val = normalize_array(norm, x_all[val_idx])
    y_val = y_all[val_idx]
    logger.info(
        f"Training on {len(train_idx)} segments, validating on {len(val_idx)} "
        f"({model_config.num_classes} classes, H={hidden_dim})"
    )

    cell, fc = init_params(model_config, rng)
    tensors = to_tensors(cell, fc)
    state = init_adam_state(tensors)
    step = 0

    best_loss = np.inf
    best_tensors = tensors
    best_epoch = 0
    stale = 0
    stopped_early = False
    history: list[EpochStats] = []

    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(len(y_train))
        total = 0.0
        for start in range(0, len(order), config.batch_size):
            idx = order[start : start + config.batch_size]
            loss, grads = loss_and_gradients(tensors, x_train[idx], y_train[idx])
            grads, norm_value = clip_gradients(grads, config.clip_norm)
            step += 1
            tensors, state = adam_step(tensors, grads, state, step, config)
            total += loss * len(idx)
            logger.debug(f"epoch {epoch} step {step}: loss {loss:.4f}, |g| {norm_value:.3f}")

        val_loss, val_accuracy = _score(tensors, x_val, y_val)
        stats = EpochStats(
            epoch=epoch,
            train_loss=total / len(y_train),
            val_loss=val_loss,
            val_accuracy=val_accuracy,
        )
        history.append(stats)
        logger.info(
            f"Epoch {epoch}: train loss {stats.train_loss:.4f}, "
            f"val loss {val_loss:.4f}, val acc {val_accuracy:.3f}"
        )
        if on_epoch is not None:
            on_epoch(stats)

        if val_loss < best_loss:
            best_loss, best_tensors, best_epoch, stale = val_loss, tensors, epoch, 0
        else:
            stale += 1
            if stale >= config.patience:
                logger.info(
                    f"Validation loss flat for {config.patience} epochs; "
                    f"stopping at epoch {epoch}, best epoch {best_epoch}"
                )
                stopped_early = True
                break

    cell, fc = from_tensors({k: _float32_exact(v) for k, v in best_tensors.items()})
    bundle = ModelBundle(
        config=model_config,
        cell=cell,
        fc=fc,
        norm=norm,
        thresholds=ClassThresholds(tau=np.full(model_config.num_classes, DEFAULT_THRESHOLD)),
        labels=tuple(features.labels),
    )
    return TrainingRun(
        bundle=bundle, history=history, best_epoch=best_epoch, stopped_early=stopped_early
    )


def train_model(config: TrainConfig, features: FeatureFile, hidden_dim: int = 26) -> ModelBundle:
    """Train and return the best-validation model bundle."""
    return fit(config, features, hidden_dim).bundle


# Threshold calibration


def group_clips(features: FeatureFile) -> list[LabeledClip]:
    """Collect segment records into clips, ordered by first appearance."""
    grouped: dict[str, list[tuple[int, MfccSequence]]] = {}
    labels: dict[str, set[int]] = {}
    for record in features.records:
        grouped.setdefault(record.clip, []).append(
            (record.segment, MfccSequence(coeffs=record.mfcc))
        )
        labels.setdefault(record.clip, set()).update(record.present)
    return [
        LabeledClip(
            clip_id=clip_id,
            sequences=[seq for _, seq in sorted(segments, key=lambda s: s[0])],
            labels=frozenset(labels[clip_id]),
        )
        for clip_id, segments in grouped.items()
    ]


def segment_distribution(model: ModelBundle, seq: SequenceLike) -> NDArray[np.float64]:
    """apply_norm -> forward_sequence -> fc_logits -> softmax for one segment."""
    h_last = forward_sequence(model.cell, apply_norm(model.norm, seq))
    return softmax(fc_logits(model.fc, h_last))


def segment_probabilities(
    model: ModelBundle, sequences: Sequence[SequenceLike]
) -> NDArray[np.float64]:
    """
    Softmax output for each raw (unnormalized) MFCC sequence, shape (S, C).

    Inference and calibration both go through here, so a clip scored at
    calibration time reproduces its aggregate bit for bit at inference.
    """
    if not sequences:
        raise EmptyDatasetError("No sequences to score")
    return np.stack([segment_distribution(model, seq) for seq in sequences])


def thresholds_from_aggregates(
    aggregates: ArrayLike,
    label_sets: Sequence[Iterable[int]],
    num_classes: int,
) -> ClassThresholds:
    """
    tau[c] = mean of aggregate[c] over the clips known to contain class c.

    Raises:
        MissingClassError: Some class occurs in no clip
        LengthMismatchError: Aggregates and label sets differ in count
    """
    agg = np.asarray(aggregates, dtype=np.float64)
    if agg.ndim != 2 or agg.shape[0] != len(label_sets):
        raise LengthMismatchError(
            f"{agg.shape[0] if agg.ndim else 0} aggregates for {len(label_sets)} label sets"
        )
    if agg.shape[1] != num_classes:
        raise DimensionMismatchError(
            f"Expected ({len(label_sets)}, {num_classes}) aggregates, got {agg.shape}"
        )
    tau = np.empty(num_classes)
    missing = []
    for c in range(num_classes):
        rows = [i for i, labels in enumerate(label_sets) if c in set(labels)]
        if not rows:
            missing.append(c)
            continue
        tau[c] = agg[rows, c].mean()
    if missing:
        raise MissingClassError(
            f"Classes {missing} never occur in the calibration clips",
            details={"missing": missing},
        )
    return ClassThresholds(tau=np.clip(tau, 0.0, 1.0), calibrated=True)


def calibrate_thresholds(
    model: ModelBundle, train_data: Sequence[LabeledClip]
) -> ClassThresholds:
    """
    Per-class presence thresholds from the training clips.

    Each clip's aggregate is the mean of its segment distributions; a class
    threshold is the average aggregate probability of that class over the
    clips where it is known to occur.
    """
    if not train_data:
        raise EmptyDatasetError("No clips to calibrate on")
    aggregates = np.stack(
        [segment_probabilities(model, clip.sequences).mean(axis=0) for clip in train_data]
    )
    thresholds = thresholds_from_aggregates(
        aggregates, [clip.labels for clip in train_data], model.config.num_classes
    )
    logger.info(
        "Calibrated thresholds: "
        + ", ".join(f"{label}={t:.3f}" for label, t in zip(model.labels, thresholds.tau))
    )
    return thresholds


def calibrate_from_features(model: ModelBundle, features: FeatureFile) -> ModelBundle:
    """Calibrate on a feature file and return the bundle with the new thresholds."""
    if list(features.labels) != list(model.labels):
        raise BadLabelError(
            "Feature file labels differ from the model's",
            details={"features": features.labels, "model": list(model.labels)},
        )
    thresholds = calibrate_thresholds(model, group_clips(features))
    return model.model_copy(update={"thresholds": thresholds})
