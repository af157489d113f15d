"""Pytest configuration and shared fixtures."""

import struct

import numpy as np
import pytest

from tinygrnn.grnn_core import init_params
from tinygrnn.models import (
    DEFAULT_FEATURE_CONFIG,
    DEFAULT_LABELS,
    AudioClip,
    ClassThresholds,
    FastGrnnParams,
    FcParams,
    ModelBundle,
    ModelConfig,
    NormStats,
)

SAMPLE_RATE = DEFAULT_FEATURE_CONFIG.sample_rate


def _f32(x):
    return np.asarray(x, dtype=np.float64).astype(np.float32).astype(np.float64)


def make_bundle(config=None, seed=0, labels=None):
    """Random float32-representable bundle for a configuration."""
    config = config or ModelConfig()
    rng = np.random.default_rng(seed)
    cell, fc = init_params(config, rng)
    cell = FastGrnnParams(
        W=_f32(cell.W),
        U=_f32(cell.U),
        b_z=_f32(rng.normal(0.0, 0.1, config.hidden_dim)),
        b_h=_f32(rng.normal(0.0, 0.1, config.hidden_dim)),
        zeta_raw=cell.zeta_raw,
        nu_raw=cell.nu_raw,
    )
    fc = FcParams(W_fc=_f32(fc.W_fc), b_fc=_f32(rng.normal(0.0, 0.1, config.num_classes)))
    if labels is None:
        labels = (
            DEFAULT_LABELS
            if config.num_classes == len(DEFAULT_LABELS)
            else tuple(f"class_{c}" for c in range(config.num_classes))
        )
    return ModelBundle(
        config=config,
        cell=cell,
        fc=fc,
        norm=NormStats(
            mean=_f32(rng.normal(0.0, 5.0, config.input_dim)),
            std=_f32(rng.uniform(0.5, 20.0, config.input_dim)),
        ),
        thresholds=ClassThresholds(tau=np.full(config.num_classes, 0.5)),
        labels=labels,
    )


def wav_bytes(payload, format_tag=1, channels=1, rate=22050, bits=16):
    """Hand-built RIFF/WAVE file around a raw data payload."""
    block = channels * bits // 8
    fmt = struct.pack(
        "<4sIHHIIHH", b"fmt ", 16, format_tag, channels, rate, rate * block, block, bits
    )
    data = struct.pack("<4sI", b"data", len(payload)) + payload
    body = b"WAVE" + fmt + data
    return struct.pack("<4sI", b"RIFF", len(body)) + body


def sine(freq, seconds, amplitude=0.5, sample_rate=SAMPLE_RATE):
    t = np.arange(int(round(seconds * sample_rate))) / sample_rate
    return amplitude * np.sin(2 * np.pi * freq * t)


@pytest.fixture
def rng():
    """Seeded random generator."""
    return np.random.default_rng(1234)


@pytest.fixture
def default_config():
    """D=13, H=26, C=6, T=26."""
    return ModelConfig()


@pytest.fixture
def tiny_config():
    """Small model for gradient checks."""
    return ModelConfig(input_dim=3, hidden_dim=4, num_classes=3, seq_len=5)


@pytest.fixture
def default_bundle(default_config):
    """Random model at the default dimensions."""
    return make_bundle(default_config, seed=7)


@pytest.fixture
def sine_clip():
    """Three seconds of a 440 Hz tone at the front-end rate."""
    return AudioClip(samples=sine(440.0, 3.0), sample_rate=SAMPLE_RATE)
