"""
Spectral front-end.

STFT and its overlap-add inverse, power spectrum, mel filterbank, MFCC
extraction and spectral-gating noise reduction. All functions are pure; a
MelFilterbank is immutable and may be shared between threads.
"""

import logging
from functools import lru_cache
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from numpy.typing import ArrayLike, NDArray
from scipy import fft as sp_fft
from scipy import ndimage, signal

from tinygrnn.exceptions import (
    BadConfigError,
    BadFftSizeError,
    DimensionMismatchError,
    EmptySignalError,
    InconsistentGeometryError,
    RateMismatchError,
)
from tinygrnn.models import (
    DEFAULT_FEATURE_CONFIG,
    AudioClip,
    FeatureConfig,
    MelFilterbank,
    MfccSequence,
    Segment,
    Spectrogram,
    SpectralGateConfig,
)

logger = logging.getLogger(__name__)

DEFAULT_GATE_CONFIG = SpectralGateConfig()


def _is_power_of_two(n: int) -> bool:
    return n > 0 and not n & (n - 1)


def _check_geometry(n_fft: int, hop_length: int) -> None:
    if not _is_power_of_two(n_fft):
        raise BadFftSizeError(f"n_fft must be a power of two, got {n_fft}")
    if not 0 < hop_length <= n_fft:
        raise BadFftSizeError(
            f"hop_length must lie in (0, n_fft], got {hop_length} for n_fft={n_fft}"
        )


def hann_window(n_fft: int) -> NDArray[np.float64]:
    """Periodic Hann window (the DFT-even form used for overlap-add)."""
    window: NDArray[np.float64] = signal.get_window("hann", n_fft, fftbins=True)
    return window


def stft(
    samples: ArrayLike,
    n_fft: int = DEFAULT_FEATURE_CONFIG.n_fft,
    hop_length: int = DEFAULT_FEATURE_CONFIG.hop_length,
    sample_rate: int = DEFAULT_FEATURE_CONFIG.sample_rate,
) -> Spectrogram:
    """
    Short-time Fourier transform with centered reflect padding.

    The signal is padded by n_fft // 2 on each side, framed every hop_length
    samples, Hann-windowed and transformed; 1 + len // hop_length frames of
    n_fft // 2 + 1 bins are returned.

    Raises:
        BadFftSizeError: n_fft not a power of two or hop outside (0, n_fft]
        EmptySignalError: No samples
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise EmptySignalError("STFT needs a non-empty one-dimensional signal")
    _check_geometry(n_fft, hop_length)

    padded = np.pad(x, n_fft // 2, mode="reflect")
    frames = sliding_window_view(padded, n_fft)[::hop_length]
    spectrum = np.fft.rfft(frames * hann_window(n_fft), axis=1)
    return Spectrogram(
        frames=spectrum,
        n_fft=n_fft,
        hop_length=hop_length,
        sample_rate=sample_rate,
        signal_length=x.size,
    )


def istft(spec: Spectrogram, length: Optional[int] = None) -> NDArray[np.float64]:
    """
    Overlap-add inverse of :func:`stft`.

    Each frame is inverse transformed, multiplied by the Hann synthesis window
    and accumulated; the sum is divided by the accumulated squared window,
    then the centering pad is removed.

    Raises:
        InconsistentGeometryError: Bin count or hop disagree with n_fft
    """
    n_fft, hop = spec.n_fft, spec.hop_length
    if not _is_power_of_two(n_fft) or not 0 < hop <= n_fft:
        raise InconsistentGeometryError(
            f"Invalid spectrogram geometry n_fft={n_fft}, hop={hop}"
        )
    if spec.num_bins != n_fft // 2 + 1:
        raise InconsistentGeometryError(
            f"Spectrogram has {spec.num_bins} bins, n_fft={n_fft} "
            f"implies {n_fft // 2 + 1}"
        )

    window = hann_window(n_fft)
    grains = np.fft.irfft(spec.frames, n=n_fft, axis=1) * window
    total = n_fft + hop * (spec.num_frames - 1)
    output = np.zeros(total)
    window_sum = np.zeros(total)
    for i, grain in enumerate(grains):
        start = i * hop
        output[start : start + n_fft] += grain
        window_sum[start : start + n_fft] += window**2

    covered = window_sum > np.finfo(np.float64).tiny
    output[covered] /= window_sum[covered]

    if length is None:
        length = (
            spec.signal_length
            if spec.signal_length is not None
            else hop * (spec.num_frames - 1)
        )
    output = output[n_fft // 2 :]
    if output.size < length:
        output = np.pad(output, (0, length - output.size))
    result: NDArray[np.float64] = output[:length]
    return result


def power_spectrum(spec: Spectrogram) -> NDArray[np.float64]:
    """Element-wise |z|^2 of every STFT bin."""
    frames = spec.frames
    power: NDArray[np.float64] = frames.real**2 + frames.imag**2
    return power


def signal_power_spectrum(
    samples: ArrayLike, sample_rate: int = DEFAULT_FEATURE_CONFIG.sample_rate
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Whole-signal FFT power spectrum; returns (frequencies in Hz, power)."""
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise EmptySignalError("Power spectrum needs a non-empty signal")
    spectrum = np.fft.rfft(x)
    freqs = np.fft.rfftfreq(x.size, d=1.0 / sample_rate)
    return freqs, spectrum.real**2 + spectrum.imag**2


def amplitude_to_db(
    magnitudes: ArrayLike,
    ref: float = 1.0,
    amin: float = 1e-10,
    top_db: Optional[float] = 80.0,
) -> NDArray[np.float64]:
    """Convert magnitudes to decibels, optionally clipping top_db below the peak."""
    mag = np.asarray(magnitudes, dtype=np.float64)
    db: NDArray[np.float64] = 20.0 * np.log10(np.maximum(amin, mag) / ref)
    if top_db is not None and db.size:
        db = np.maximum(db, db.max() - top_db)
    return db


def hz_to_mel(freq: ArrayLike) -> NDArray[np.float64]:
    """mel(f) = 2595 * log10(1 + f / 700)."""
    result: NDArray[np.float64] = 2595.0 * np.log10(
        1.0 + np.asarray(freq, dtype=np.float64) / 700.0
    )
    return result


def mel_to_hz(mel: ArrayLike) -> NDArray[np.float64]:
    """Inverse of :func:`hz_to_mel`."""
    result: NDArray[np.float64] = 700.0 * (
        10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0
    )
    return result


def mel_filterbank(
    n_mels: int = DEFAULT_FEATURE_CONFIG.n_mels,
    n_fft: int = DEFAULT_FEATURE_CONFIG.n_fft,
    sample_rate: int = DEFAULT_FEATURE_CONFIG.sample_rate,
    fmin: float = 0.0,
    fmax: Optional[float] = None,
) -> MelFilterbank:
    """
    Triangular filters with centers equally spaced on the mel scale.

    Filter m rises linearly from edge m to its center m + 1 and falls back to
    zero at edge m + 2, where the n_mels + 2 edges are equally spaced in mel
    between fmin and fmax (default: Nyquist).

    Raises:
        BadConfigError: n_mels < 2, n_fft not a power of two, bad band limits,
            or a filter that covers no FFT bin
    """
    if n_mels < 2:
        raise BadConfigError(f"Need at least 2 mel filters, got {n_mels}")
    if not _is_power_of_two(n_fft):
        raise BadConfigError(f"n_fft must be a power of two, got {n_fft}")
    nyquist = sample_rate / 2.0
    fmax = nyquist if fmax is None else fmax
    if not 0.0 <= fmin < fmax <= nyquist:
        raise BadConfigError(
            f"Band limits must satisfy 0 <= fmin < fmax <= {nyquist}",
            details={"fmin": fmin, "fmax": fmax},
        )

    fft_freqs = np.fft.rfftfreq(n_fft, d=1.0 / sample_rate)
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    widths = np.diff(edges)
    ramps = edges[:, None] - fft_freqs[None, :]
    rising = -ramps[:-2] / widths[:-1, None]
    falling = ramps[2:] / widths[1:, None]
    weights = np.maximum(0.0, np.minimum(rising, falling))

    empty = np.flatnonzero(weights.max(axis=1) == 0.0)
    if empty.size:
        raise BadConfigError(
            f"{empty.size} mel filters cover no FFT bin; lower n_mels or raise n_fft",
            details={"filters": empty.tolist()},
        )
    return MelFilterbank(weights=weights, sample_rate=sample_rate, n_fft=n_fft)


@lru_cache(maxsize=8)
def _cached_filterbank(n_mels: int, n_fft: int, sample_rate: int) -> MelFilterbank:
    return mel_filterbank(n_mels, n_fft, sample_rate)


def mfcc_from_samples(
    samples: ArrayLike,
    config: FeatureConfig = DEFAULT_FEATURE_CONFIG,
    filterbank: Optional[MelFilterbank] = None,
) -> MfccSequence:
    """STFT -> power -> mel energies -> log -> orthonormal DCT-II, first n_mfcc."""
    spec = stft(samples, config.n_fft, config.hop_length, config.sample_rate)
    fb = filterbank or _cached_filterbank(
        config.n_mels, config.n_fft, config.sample_rate
    )
    if fb.weights.shape[1] != spec.num_bins:
        raise DimensionMismatchError(
            f"Filterbank expects {fb.weights.shape[1]} bins, STFT has {spec.num_bins}"
        )
    mel_energy = power_spectrum(spec) @ fb.weights.T
    log_mel = np.log(mel_energy + config.log_floor)
    cepstrum = sp_fft.dct(log_mel, type=2, axis=1, norm="ortho")
    return MfccSequence(coeffs=cepstrum[:, : config.n_mfcc])


def mfcc_sequence(
    segment: Segment,
    config: FeatureConfig = DEFAULT_FEATURE_CONFIG,
    filterbank: Optional[MelFilterbank] = None,
) -> MfccSequence:
    """
    MFCC matrix of one canonical segment.

    With the default configuration a 13230-sample segment yields 26 frames
    of 13 coefficients (338 values).
    """
    if segment.samples.size != config.segment_samples:
        raise DimensionMismatchError(
            f"Segment has {segment.samples.size} samples, "
            f"expected {config.segment_samples}"
        )
    return mfcc_from_samples(segment.samples, config, filterbank)


def spectral_gate(
    clip: AudioClip,
    noise_profile: Optional[AudioClip] = None,
    config: FeatureConfig = DEFAULT_FEATURE_CONFIG,
    gate: SpectralGateConfig = DEFAULT_GATE_CONFIG,
) -> AudioClip:
    """
    Attenuate time-frequency bins that fall below a per-frequency noise floor.

    The floor is mean + threshold_std * std of the noise profile's STFT
    magnitudes, or the noise_percentile-th percentile of the clip's own
    magnitudes when no profile is given. Bins above the floor pass with gain
    1, the rest are held at floor_db; the mask is then smoothed with a moving
    average over +/- smooth_frames frames and +/- smooth_bins bins before
    being applied and inverted back to the time domain.

    Raises:
        RateMismatchError: Noise profile sample rate differs from the clip's
    """
    if noise_profile is not None and noise_profile.sample_rate != clip.sample_rate:
        raise RateMismatchError(
            f"Noise profile is at {noise_profile.sample_rate} Hz, "
            f"clip at {clip.sample_rate} Hz"
        )

    n_fft, hop = config.n_fft, config.hop_length
    spec = stft(clip.samples, n_fft, hop, clip.sample_rate)
    magnitude = np.abs(spec.frames)

    if noise_profile is not None:
        noise = np.abs(stft(noise_profile.samples, n_fft, hop, clip.sample_rate).frames)
        floor = noise.mean(axis=0) + gate.threshold_std * noise.std(axis=0)
    else:
        floor = np.percentile(magnitude, gate.noise_percentile, axis=0)
    floor_level = amplitude_to_db(floor, top_db=None)
    logger.debug(
        f"Spectral gate floor: median {np.median(floor_level):.1f} dB, "
        f"max {floor_level.max():.1f} dB"
    )

    floor_gain = 10.0 ** (gate.floor_db / 20.0)
    mask = np.where(magnitude > floor[None, :], 1.0, floor_gain)
    size = (2 * gate.smooth_frames + 1, 2 * gate.smooth_bins + 1)
    mask = ndimage.uniform_filter(mask, size=size, mode="nearest")

    gated = spec.model_copy(update={"frames": spec.frames * mask})
    samples = istft(gated, length=clip.num_samples)
    return AudioClip(samples=samples, sample_rate=clip.sample_rate)
