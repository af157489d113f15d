"""
FastGRNN recurrent classifier.

Cell update, with W and U shared between gate and candidate:

    z_t  = sigmoid(W x_t + U h_{t-1} + b_z)
    h~_t = tanh(W x_t + U h_{t-1} + b_h)
    h_t  = (zeta * (1 - z_t) + nu) * h~_t + z_t * h_{t-1}

zeta and nu are sigmoid(zeta_raw) and sigmoid(nu_raw). The last hidden state
feeds a fully connected layer and a softmax over the classes.
"""

from typing import NamedTuple, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.special import expit

from tinygrnn.exceptions import DimensionMismatchError, NonFiniteInputError
from tinygrnn.models import FastGrnnParams, FcParams, MfccSequence, ModelConfig

PARAM_NAMES = ("W", "U", "b_z", "b_h", "zeta_raw", "nu_raw", "W_fc", "b_fc")
CELL_PARAM_NAMES = PARAM_NAMES[:6]

ZETA_RAW_INIT = 4.0
NU_RAW_INIT = -4.0

ParamTensors = dict[str, NDArray[np.float64]]


class ForwardTrace(NamedTuple):
    """Intermediate values of an unrolled pass, time-major."""

    hidden: NDArray[np.float64]  # (T + 1, ..., H), hidden[0] is h_0
    gate: NDArray[np.float64]  # (T, ..., H)
    candidate: NDArray[np.float64]  # (T, ..., H)


def init_params(
    config: ModelConfig, rng: np.random.Generator
) -> tuple[FastGrnnParams, FcParams]:
    """Scaled uniform weights, zero biases, zeta ~ 0.982 and nu ~ 0.018."""
    d, h, c = config.input_dim, config.hidden_dim, config.num_classes
    cell = FastGrnnParams(
        W=rng.uniform(-1.0 / np.sqrt(d), 1.0 / np.sqrt(d), size=(h, d)),
        U=rng.uniform(-1.0 / np.sqrt(h), 1.0 / np.sqrt(h), size=(h, h)),
        b_z=np.zeros(h),
        b_h=np.zeros(h),
        zeta_raw=ZETA_RAW_INIT,
        nu_raw=NU_RAW_INIT,
    )
    fc = FcParams(
        W_fc=rng.uniform(-1.0 / np.sqrt(h), 1.0 / np.sqrt(h), size=(c, h)),
        b_fc=np.zeros(c),
    )
    return cell, fc


def to_tensors(cell: FastGrnnParams, fc: FcParams) -> ParamTensors:
    """Flatten both layers into a name -> array mapping (scalars as shape (1,))."""
    return {
        "W": np.array(cell.W),
        "U": np.array(cell.U),
        "b_z": np.array(cell.b_z),
        "b_h": np.array(cell.b_h),
        "zeta_raw": np.array([cell.zeta_raw]),
        "nu_raw": np.array([cell.nu_raw]),
        "W_fc": np.array(fc.W_fc),
        "b_fc": np.array(fc.b_fc),
    }


def from_tensors(tensors: ParamTensors) -> tuple[FastGrnnParams, FcParams]:
    cell = FastGrnnParams(
        W=tensors["W"],
        U=tensors["U"],
        b_z=tensors["b_z"],
        b_h=tensors["b_h"],
        zeta_raw=float(tensors["zeta_raw"][0]),
        nu_raw=float(tensors["nu_raw"][0]),
    )
    fc = FcParams(W_fc=tensors["W_fc"], b_fc=tensors["b_fc"])
    return cell, fc


def _step(
    t: ParamTensors, zeta: float, nu: float, x: NDArray[np.float64], h: NDArray[np.float64]
) -> tuple[NDArray[np.float64], NDArray[np.float64], NDArray[np.float64]]:
    # computed once, shared by gate and candidate
    pre = x @ t["W"].T + h @ t["U"].T
    z = expit(pre + t["b_z"])
    c = np.tanh(pre + t["b_h"])
    h_new = (zeta * (1.0 - z) + nu) * c + z * h
    return h_new, z, c


def _scalars(t: ParamTensors) -> tuple[float, float]:
    return float(expit(t["zeta_raw"][0])), float(expit(t["nu_raw"][0]))


def cell_step(
    params: FastGrnnParams, x_t: ArrayLike, h_prev: ArrayLike
) -> NDArray[np.float64]:
    """One recurrent update; x_t has length D and h_prev length H."""
    x = np.asarray(x_t, dtype=np.float64)
    h = np.asarray(h_prev, dtype=np.float64)
    if x.shape[-1:] != (params.input_dim,) or h.shape[-1:] != (params.hidden_dim,):
        raise DimensionMismatchError(
            f"cell_step expects x of length {params.input_dim} and h of length "
            f"{params.hidden_dim}, got {x.shape} and {h.shape}"
        )
    tensors = {
        "W": params.W,
        "U": params.U,
        "b_z": params.b_z,
        "b_h": params.b_h,
    }
    h_new, _, _ = _step(tensors, params.zeta, params.nu, x, h)
    return h_new


def forward_sequence(
    params: FastGrnnParams, seq: Union[MfccSequence, ArrayLike]
) -> NDArray[np.float64]:
    """Unroll the cell over a (T, D) sequence from h_0 = 0 and return h_T."""
    coeffs = seq.coeffs if isinstance(seq, MfccSequence) else np.asarray(seq, dtype=np.float64)
    if coeffs.ndim != 2 or coeffs.shape[1] != params.input_dim:
        raise DimensionMismatchError(
            f"Sequence must be (T, {params.input_dim}), got {coeffs.shape}"
        )
    h = np.zeros(params.hidden_dim)
    for x_t in coeffs:
        h = cell_step(params, x_t, h)
    return h


def unroll(tensors: ParamTensors, x: NDArray[np.float64]) -> ForwardTrace:
    """
    Batched unrolled pass keeping every intermediate for backpropagation.

    x is (B, T, D); the trace arrays are time-major.
    """
    if x.ndim != 3 or x.shape[2] != tensors["W"].shape[1]:
        raise DimensionMismatchError(
            f"Batch must be (B, T, {tensors['W'].shape[1]}), got {x.shape}"
        )
    batch, steps, _ = x.shape
    hidden_dim = tensors["W"].shape[0]
    zeta, nu = _scalars(tensors)

    hidden = np.zeros((steps + 1, batch, hidden_dim))
    gate = np.empty((steps, batch, hidden_dim))
    candidate = np.empty((steps, batch, hidden_dim))
    for t in range(steps):
        hidden[t + 1], gate[t], candidate[t] = _step(
            tensors, zeta, nu, x[:, t, :], hidden[t]
        )
    return ForwardTrace(hidden=hidden, gate=gate, candidate=candidate)


def fc_logits(fc: FcParams, h: ArrayLike) -> NDArray[np.float64]:
    """P = W_fc h + b_fc."""
    hidden = np.asarray(h, dtype=np.float64)
    if hidden.shape[-1:] != (fc.W_fc.shape[1],):
        raise DimensionMismatchError(
            f"FC layer expects hidden size {fc.W_fc.shape[1]}, got {hidden.shape}"
        )
    logits: NDArray[np.float64] = hidden @ fc.W_fc.T + fc.b_fc
    return logits


def softmax(logits: ArrayLike) -> NDArray[np.float64]:
    """Numerically stable softmax over the last axis."""
    p = np.asarray(logits, dtype=np.float64)
    if not np.isfinite(p).all():
        raise NonFiniteInputError("softmax received non-finite logits")
    shifted = np.exp(p - p.max(axis=-1, keepdims=True))
    probs: NDArray[np.float64] = shifted / shifted.sum(axis=-1, keepdims=True)
    return probs


def count_parameters(config: ModelConfig, include_fc: bool = True) -> int:
    """H*D + H*H + 2H + 2 for the cell, plus C*H + C for the output layer."""
    d, h, c = config.input_dim, config.hidden_dim, config.num_classes
    cell = h * d + h * h + h + h + 2
    return cell + (c * h + c if include_fc else 0)


def inference_macs(config: ModelConfig) -> int:
    """Multiply-accumulates for one segment: T shared projections plus the FC layer."""
    d, h, c = config.input_dim, config.hidden_dim, config.num_classes
    return config.seq_len * (h * d + h * h) + c * h
