"""WAV ingest, linear resampling and fixed-window segmentation."""

import logging
import struct
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np
from numpy.typing import NDArray

from tinygrnn.exceptions import (
    BadConfigError,
    EmptyClipError,
    MalformedWavError,
    TooShortError,
    UnsupportedEncodingError,
    WrongRateError,
)
from tinygrnn.models import (
    DEFAULT_FEATURE_CONFIG,
    AudioClip,
    FeatureConfig,
    Segment,
    WavEncoding,
)

logger = logging.getLogger(__name__)

PCM16_SCALE = 32768.0

_FORMAT_PCM = 0x0001
_FORMAT_IEEE_FLOAT = 0x0003
_FORMAT_EXTENSIBLE = 0xFFFE

_FORMAT_NAMES = {
    0x0002: "MS ADPCM",
    0x0006: "A-law",
    0x0007: "mu-law",
    0x0011: "IMA ADPCM",
    0x0055: "MPEG Layer 3",
}


def load_wav(path: Union[str, Path]) -> AudioClip:
    """
    Read a RIFF/WAVE file into a mono clip.

    PCM 16-bit samples are scaled by 1/32768, float32 samples are taken as-is,
    and multi-channel audio is downmixed by averaging channels per frame.

    Raises:
        MalformedWavError: Bad magic, missing chunks or truncated chunk data
        UnsupportedEncodingError: Anything other than PCM16 or float32
    """
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise MalformedWavError(f"Cannot read WAV file {path}: {e}") from e

    clip = decode_wav(data)
    logger.debug(
        f"Loaded {path}: {clip.num_samples} samples @ {clip.sample_rate} Hz"
    )
    return clip


def decode_wav(data: bytes) -> AudioClip:
    """Decode an in-memory RIFF/WAVE byte string."""
    if len(data) < 12 or data[0:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise MalformedWavError("Missing RIFF/WAVE header")

    fmt: Optional[tuple[int, int, int, int]] = None
    payload: Optional[bytes] = None
    offset = 12
    while offset + 8 <= len(data):
        chunk_id = data[offset : offset + 4]
        (size,) = struct.unpack_from("<I", data, offset + 4)
        start, end = offset + 8, offset + 8 + size
        if end > len(data):
            raise MalformedWavError(
                f"Chunk {chunk_id!r} truncated",
                details={"declared": size, "available": len(data) - start},
            )
        if chunk_id == b"fmt ":
            fmt = _parse_fmt(data[start:end])
        elif chunk_id == b"data":
            payload = data[start:end]
        # chunks are word aligned
        offset = end + (size & 1)

    if fmt is None:
        raise MalformedWavError("No fmt chunk found")
    if payload is None:
        raise MalformedWavError("No data chunk found")

    format_tag, channels, sample_rate, bits = fmt
    if format_tag == _FORMAT_PCM and bits == 16:
        raw = _frames(payload, channels, 2, "<i2")
        samples = raw.astype(np.float64) / PCM16_SCALE
    elif format_tag == _FORMAT_IEEE_FLOAT and bits == 32:
        raw = _frames(payload, channels, 4, "<f4")
        samples = np.nan_to_num(raw.astype(np.float64))
    else:
        name = _FORMAT_NAMES.get(format_tag, f"format 0x{format_tag:04x}")
        raise UnsupportedEncodingError(
            f"Unsupported WAV encoding: {name}, {bits}-bit",
            details={"format_tag": format_tag, "bits": bits},
        )

    mono = samples.mean(axis=1) if channels > 1 else samples[:, 0]
    return AudioClip(samples=mono, sample_rate=sample_rate)


def _parse_fmt(body: bytes) -> tuple[int, int, int, int]:
    if len(body) < 16:
        raise MalformedWavError("fmt chunk shorter than 16 bytes")
    format_tag, channels, sample_rate, _, _, bits = struct.unpack_from(
        "<HHIIHH", body
    )
    if format_tag == _FORMAT_EXTENSIBLE:
        if len(body) < 26:
            raise MalformedWavError("WAVE_FORMAT_EXTENSIBLE without sub-format")
        # first two bytes of the sub-format GUID carry the real format tag
        (format_tag,) = struct.unpack_from("<H", body, 24)
    if channels == 0 or sample_rate == 0:
        raise MalformedWavError("fmt chunk declares zero channels or rate")
    return format_tag, channels, sample_rate, bits


def _frames(payload: bytes, channels: int, width: int, dtype: str) -> NDArray[Any]:
    frame_bytes = channels * width
    usable = len(payload) - len(payload) % frame_bytes
    return np.frombuffer(payload[:usable], dtype=dtype).reshape(-1, channels)


def write_wav(
    path: Union[str, Path],
    clip: AudioClip,
    encoding: WavEncoding = WavEncoding.PCM16,
) -> Path:
    """Write a mono clip as a PCM16 or float32 RIFF/WAVE file."""
    path = Path(path)
    if encoding == WavEncoding.PCM16:
        quantized = np.clip(np.round(clip.samples * PCM16_SCALE), -32768, 32767)
        payload = quantized.astype("<i2").tobytes()
        format_tag, bits = _FORMAT_PCM, 16
    else:
        payload = clip.samples.astype("<f4").tobytes()
        format_tag, bits = _FORMAT_IEEE_FLOAT, 32

    block_align = bits // 8
    header = struct.pack("<4sI4s", b"RIFF", 36 + len(payload), b"WAVE")
    fmt_chunk = struct.pack(
        "<4sIHHIIHH",
        b"fmt ",
        16,
        format_tag,
        1,
        clip.sample_rate,
        clip.sample_rate * block_align,
        block_align,
        bits,
    )
    data_chunk = struct.pack("<4sI", b"data", len(payload)) + payload
    if len(payload) & 1:
        data_chunk += b"\x00"

    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(header + fmt_chunk + data_chunk)
    return path


def resample_linear(clip: AudioClip, target_rate: int) -> AudioClip:
    """
    Resample by linear interpolation at fractional source positions.

    Output length is floor(n * target / source); output sample k sits at
    source position k * source / target, so the first sample is preserved.
    """
    if clip.num_samples == 0:
        raise EmptyClipError("Cannot resample an empty clip")
    if target_rate <= 0:
        raise BadConfigError(f"Target rate must be positive, got {target_rate}")
    if target_rate == clip.sample_rate:
        return clip

    source_rate = clip.sample_rate
    out_len = clip.num_samples * target_rate // source_rate
    positions = np.arange(out_len, dtype=np.float64) * source_rate / target_rate
    samples = np.interp(positions, np.arange(clip.num_samples), clip.samples)
    logger.debug(f"Resampled {source_rate} Hz -> {target_rate} Hz ({out_len} samples)")
    return AudioClip(samples=samples, sample_rate=target_rate)


def prepare_clip(
    clip: AudioClip, config: FeatureConfig = DEFAULT_FEATURE_CONFIG
) -> AudioClip:
    """Bring a clip to the canonical front-end rate."""
    if clip.sample_rate == config.sample_rate:
        return clip
    return resample_linear(clip, config.sample_rate)


def segment_clip(
    clip: AudioClip, config: FeatureConfig = DEFAULT_FEATURE_CONFIG
) -> list[Segment]:
    """
    Split a clip into contiguous, non-overlapping fixed-length segments.

    Only the first segments_per_clip * segment_samples samples are kept;
    anything after that is discarded.

    Raises:
        WrongRateError: Clip is not at the configured rate (resample first)
        TooShortError: Clip is shorter than the segmented window
    """
    if clip.sample_rate != config.sample_rate:
        raise WrongRateError(
            f"Clip is at {clip.sample_rate} Hz, expected {config.sample_rate} Hz"
        )
    if clip.num_samples < config.clip_samples:
        raise TooShortError(
            f"Clip lasts {clip.duration:.3f} s, need at least "
            f"{config.clip_seconds:.1f} s",
            details={"samples": clip.num_samples, "required": config.clip_samples},
        )

    width = config.segment_samples
    return [
        Segment(samples=clip.samples[i * width : (i + 1) * width], origin_offset=i * width)
        for i in range(config.segments_per_clip)
    ]
