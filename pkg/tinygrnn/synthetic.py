"""
Deterministic six-class synthetic street-sound dataset.

Each class has a distinct spectro-temporal signature that is present in
every 0.6 s window of a 3 s clip. Phase, pitch and timing are randomized per
clip, the level is jittered by +/-6 dB and a faint noise floor is added.
"""

import csv
import logging
from collections.abc import Sequence
from pathlib import Path
from typing import Callable, NamedTuple, Optional, Union

import numpy as np
from numpy.typing import NDArray
from scipy import signal

from tinygrnn.audio_io import write_wav
from tinygrnn.exceptions import BadConfigError, BadLabelError, RateMismatchError
from tinygrnn.features import clip_records
from tinygrnn.models import (
    DEFAULT_FEATURE_CONFIG,
    DEFAULT_LABELS,
    AudioClip,
    FeatureConfig,
    FeatureFile,
    SoundClass,
    WavEncoding,
)

logger = logging.getLogger(__name__)

PEAK_LEVEL = 0.3
GAIN_JITTER_DB = 6.0
NOISE_FLOOR = 0.003

Generator = Callable[[NDArray[np.float64], int, np.random.Generator], NDArray[np.float64]]


class SyntheticClip(NamedTuple):
    clip_id: str
    label: int
    clip: AudioClip
    present: tuple[int, ...] = ()

    @property
    def classes(self) -> tuple[int, ...]:
        return self.present or (self.label,)


def _bandpass_noise(
    n: int, low: float, high: float, sr: int, rng: np.random.Generator
) -> NDArray[np.float64]:
    sos = signal.butter(4, [low, high], btype="bandpass", fs=sr, output="sos")
    return np.asarray(signal.sosfilt(sos, rng.standard_normal(n)))


def _harmonics(
    t: NDArray[np.float64], f0: float, weights: Sequence[float], rng: np.random.Generator
) -> NDArray[np.float64]:
    out = np.zeros_like(t)
    for k, w in enumerate(weights, start=1):
        out += w * np.sin(2 * np.pi * k * f0 * t + rng.uniform(0, 2 * np.pi))
    return out


def _car_horn(t: NDArray[np.float64], sr: int, rng: np.random.Generator) -> NDArray[np.float64]:
    # two-note horn, steady
    f0 = rng.uniform(380.0, 440.0)
    return _harmonics(t, f0, [1.0, 0.6, 0.4, 0.2], rng) + _harmonics(
        t, f0 * 1.26, [0.8, 0.5, 0.3], rng
    )


def _children_playing(
    t: NDArray[np.float64], sr: int, rng: np.random.Generator
) -> NDArray[np.float64]:
    babble = _bandpass_noise(t.size, 1000.0, 4000.0, sr, rng)
    babble /= np.max(np.abs(babble)) + 1e-12
    rate = rng.uniform(3.0, 6.0)
    envelope = 0.5 + 0.5 * np.abs(np.sin(2 * np.pi * rate * t + rng.uniform(0, np.pi)))
    voice = signal.chirp(
        t % 0.3, f0=rng.uniform(300, 400), t1=0.3, f1=rng.uniform(600, 800),
        phi=rng.uniform(0, 360),
    )
    return envelope * babble + 0.4 * voice


def _dog_bark(t: NDArray[np.float64], sr: int, rng: np.random.Generator) -> NDArray[np.float64]:
    period = rng.uniform(0.35, 0.5)
    burst = 0.15
    local = (t + rng.uniform(0, period)) % period
    envelope = np.where(local < burst, np.exp(-local / 0.05), 0.0)
    tone = _harmonics(t, rng.uniform(500.0, 700.0), [1.0, 0.7, 0.5, 0.3, 0.2], rng)
    rasp = _bandpass_noise(t.size, 800.0, 2500.0, sr, rng)
    rasp /= np.max(np.abs(rasp)) + 1e-12
    return envelope * (tone + 0.5 * rasp)


def _drilling(t: NDArray[np.float64], sr: int, rng: np.random.Generator) -> NDArray[np.float64]:
    f0 = rng.uniform(120.0, 180.0)
    motor = signal.sawtooth(2 * np.pi * f0 * t + rng.uniform(0, 2 * np.pi))
    grind = _bandpass_noise(t.size, 3000.0, 6000.0, sr, rng)
    grind /= np.max(np.abs(grind)) + 1e-12
    return 0.6 * motor + grind


def _engine_idling(
    t: NDArray[np.float64], sr: int, rng: np.random.Generator
) -> NDArray[np.float64]:
    f0 = rng.uniform(30.0, 50.0)
    firing = 1.0 + 0.3 * np.sin(2 * np.pi * rng.uniform(8.0, 12.0) * t)
    rumble = _bandpass_noise(t.size, 40.0, 400.0, sr, rng)
    rumble /= np.max(np.abs(rumble)) + 1e-12
    return firing * _harmonics(t, f0, [1.0, 0.8, 0.6, 0.4, 0.3, 0.2], rng) + 0.5 * rumble


def _siren(t: NDArray[np.float64], sr: int, rng: np.random.Generator) -> NDArray[np.float64]:
    period = rng.uniform(0.4, 0.55)
    low = rng.uniform(600.0, 750.0)
    high = rng.uniform(1400.0, 1700.0)
    return signal.chirp(
        (t + rng.uniform(0, period)) % period, f0=low, t1=period, f1=high,
        phi=rng.uniform(0, 360),
    )


GENERATORS: dict[SoundClass, Generator] = {
    SoundClass.CAR_HORN: _car_horn,
    SoundClass.CHILDREN_PLAYING: _children_playing,
    SoundClass.DOG_BARK: _dog_bark,
    SoundClass.DRILLING: _drilling,
    SoundClass.ENGINE_IDLING: _engine_idling,
    SoundClass.SIREN: _siren,
}


def generate_clip(
    sound_class: Union[SoundClass, str],
    rng: np.random.Generator,
    config: FeatureConfig = DEFAULT_FEATURE_CONFIG,
    seconds: Optional[float] = None,
) -> AudioClip:
    """Render one clip of a class at the front-end rate."""
    try:
        generator = GENERATORS[SoundClass(sound_class)]
    except ValueError as e:
        raise BadLabelError(f"Unknown sound class: {sound_class}") from e
    duration = seconds if seconds is not None else config.clip_seconds
    if duration <= 0:
        raise BadConfigError(f"Clip duration must be positive, got {duration}")

    sr = config.sample_rate
    n = int(round(duration * sr))
    t = np.arange(n) / sr
    source = generator(t, sr, rng)
    source *= PEAK_LEVEL / (np.max(np.abs(source)) + 1e-12)
    gain = 10.0 ** (rng.uniform(-GAIN_JITTER_DB, GAIN_JITTER_DB) / 20.0)
    samples = gain * source + NOISE_FLOOR * rng.standard_normal(n)
    return AudioClip(samples=samples, sample_rate=sr)


def generate_dataset(
    clips_per_class: int = 100,
    seed: int = 42,
    config: FeatureConfig = DEFAULT_FEATURE_CONFIG,
    labels: tuple[str, ...] = DEFAULT_LABELS,
) -> list[SyntheticClip]:
    """clips_per_class clips of every class, interleaved by class."""
    if clips_per_class <= 0:
        raise BadConfigError(f"clips_per_class must be positive, got {clips_per_class}")
    rng = np.random.default_rng(seed)
    dataset = []
    for i in range(clips_per_class):
        for label, name in enumerate(labels):
            clip = generate_clip(name, rng, config)
            dataset.append(SyntheticClip(f"{name}_{i:04d}.wav", label, clip))
    logger.info(f"Generated {len(dataset)} synthetic clips (seed {seed})")
    return dataset


def dataset_features(
    dataset: Sequence[SyntheticClip],
    config: FeatureConfig = DEFAULT_FEATURE_CONFIG,
    labels: tuple[str, ...] = DEFAULT_LABELS,
) -> FeatureFile:
    """Feature file for in-memory clips, without a WAV round trip."""
    records = [
        record
        for item in dataset
        for record in clip_records(
            item.clip_id, item.clip, item.label, config, present=item.classes
        )
    ]
    return FeatureFile(labels=list(labels), records=records)


def mix_clips(clips: Sequence[AudioClip], gains: Optional[Sequence[float]] = None) -> AudioClip:
    """Sum clips sample-wise, truncated to the shortest one."""
    if not clips:
        raise BadConfigError("Nothing to mix")
    rates = {clip.sample_rate for clip in clips}
    if len(rates) != 1:
        raise RateMismatchError(f"Clips to mix have different rates: {sorted(rates)}")
    weights = list(gains) if gains is not None else [1.0] * len(clips)
    if len(weights) != len(clips):
        raise BadConfigError(f"{len(weights)} gains for {len(clips)} clips")
    n = min(clip.num_samples for clip in clips)
    mixed = sum(w * clip.samples[:n] for w, clip in zip(weights, clips))
    return AudioClip(samples=np.asarray(mixed, dtype=np.float64), sample_rate=rates.pop())


def generate_mixtures(
    count: int,
    seed: int = 43,
    config: FeatureConfig = DEFAULT_FEATURE_CONFIG,
    labels: tuple[str, ...] = DEFAULT_LABELS,
    gains: Sequence[float] = (0.7, 0.7),
) -> list[SyntheticClip]:
    """count clips that each sum two sources of distinct classes."""
    if count <= 0:
        raise BadConfigError(f"count must be positive, got {count}")
    if len(labels) < 2:
        raise BadConfigError("Mixing needs at least two classes")
    rng = np.random.default_rng(seed)
    mixtures = []
    for i in range(count):
        pair = sorted(int(c) for c in rng.choice(len(labels), size=2, replace=False))
        sources = [generate_clip(labels[c], rng, config) for c in pair]
        mixtures.append(
            SyntheticClip(f"mix_{i:04d}.wav", pair[0], mix_clips(sources, gains), tuple(pair))
        )
    logger.info(f"Generated {count} two-source mixtures (seed {seed})")
    return mixtures


def write_dataset(
    directory: Union[str, Path],
    clips_per_class: int = 100,
    seed: int = 42,
    encoding: WavEncoding = WavEncoding.PCM16,
    config: FeatureConfig = DEFAULT_FEATURE_CONFIG,
    labels: tuple[str, ...] = DEFAULT_LABELS,
    mixtures: int = 0,
) -> Path:
    """
    Write every clip as a WAV plus labels.csv; returns the CSV path.

    With `mixtures`, that many two-source clips are added, each listed on one
    row per class it contains.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    dataset = generate_dataset(clips_per_class, seed, config, labels)
    if mixtures:
        dataset += generate_mixtures(mixtures, seed + 1, config, labels)
    csv_path = directory / "labels.csv"
    with csv_path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["filename", "label"])
        for item in dataset:
            write_wav(directory / item.clip_id, item.clip, encoding)
            for c in item.classes:
                writer.writerow([item.clip_id, labels[c]])
    logger.info(f"Wrote {len(dataset)} clips and {csv_path}")
    return csv_path
