"""
Binary model files.

Layout (little-endian):

    magic "FGRN" | version u16 | flags u16 | D u16 | H u16 | C u16 | T u16
    W, U, b_z, b_h, zeta_raw, nu_raw, W_fc, b_fc
        float files: row-major f32
        quantized files: f32 scale followed by row-major int8
    norm mean (D f32) | norm std (D f32) | thresholds (C f32)
    C labels, each u16 byte length + UTF-8

Flags: bit 0 quantized, bit 1 thresholds calibrated.
"""

import logging
import struct
from pathlib import Path
from typing import Union

import numpy as np
from numpy.typing import NDArray
from pydantic import ValidationError

from tinygrnn.exceptions import (
    BadMagicError,
    ModelIoError,
    ShapeCorruptionError,
    VersionMismatchError,
)
from tinygrnn.grnn_core import PARAM_NAMES, count_parameters, from_tensors, to_tensors
from tinygrnn.models import (
    ClassThresholds,
    ModelBundle,
    ModelConfig,
    NormStats,
    QuantizedBundle,
    QuantizedTensor,
    SectionSize,
    SizeReport,
)

logger = logging.getLogger(__name__)

MAGIC = b"FGRN"
FORMAT_VERSION = 1
FLAG_QUANTIZED = 0x0001
FLAG_CALIBRATED = 0x0002

_HEADER = struct.Struct("<4sHHHHHH")
_INT8_MAX = 127

AnyBundle = Union[ModelBundle, QuantizedBundle]


def tensor_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Shape of every stored tensor for a configuration, in file order."""
    d, h, c = config.input_dim, config.hidden_dim, config.num_classes
    return {
        "W": (h, d),
        "U": (h, h),
        "b_z": (h,),
        "b_h": (h,),
        "zeta_raw": (1,),
        "nu_raw": (1,),
        "W_fc": (c, h),
        "b_fc": (c,),
    }


# Quantization


def _quantize_tensor(name: str, x: NDArray[np.float64]) -> QuantizedTensor:
    peak = float(np.max(np.abs(x))) if x.size else 0.0
    if peak == 0.0:
        logger.warning(f"Tensor {name} is all zeros; storing with scale 1")
        return QuantizedTensor(values=np.zeros(x.shape, dtype=np.int8), scale=1.0)
    # the scale must survive the f32 file field unchanged
    scale = float(np.float32(peak / _INT8_MAX))
    q = np.clip(np.round(x / scale), -_INT8_MAX, _INT8_MAX).astype(np.int8)
    return QuantizedTensor(values=q, scale=scale)


def _f32(x: NDArray[np.float64]) -> NDArray[np.float64]:
    return x.astype(np.float32).astype(np.float64)


def quantize_int8(bundle: ModelBundle) -> QuantizedBundle:
    """
    Symmetric per-tensor int8 quantization of the eight core tensors.

    scale = max|x| / 127 and q = round(x / scale); an all-zero tensor keeps
    scale 1. Normalization statistics and thresholds stay 32-bit floats.
    """
    tensors = to_tensors(bundle.cell, bundle.fc)
    quantized = {name: _quantize_tensor(name, tensors[name]) for name in PARAM_NAMES}
    return QuantizedBundle(
        config=bundle.config,
        tensors=quantized,
        norm=NormStats(mean=_f32(bundle.norm.mean), std=_f32(bundle.norm.std)),
        thresholds=ClassThresholds(
            tau=_f32(bundle.thresholds.tau), calibrated=bundle.thresholds.calibrated
        ),
        labels=bundle.labels,
    )


def dequantize(bundle: QuantizedBundle) -> ModelBundle:
    """Float model computing with scale * int8 in place of each tensor."""
    cell, fc = from_tensors(
        {name: bundle.tensors[name].dequantize() for name in PARAM_NAMES}
    )
    return ModelBundle(
        config=bundle.config,
        cell=cell,
        fc=fc,
        norm=bundle.norm,
        thresholds=bundle.thresholds,
        labels=bundle.labels,
    )


# Encoding


def _sections(bundle: AnyBundle) -> list[tuple[SectionSize, bytes]]:
    quantized = isinstance(bundle, QuantizedBundle)
    cfg = bundle.config
    flags = (FLAG_QUANTIZED if quantized else 0) | (
        FLAG_CALIBRATED if bundle.thresholds.calibrated else 0
    )
    header = _HEADER.pack(
        MAGIC,
        FORMAT_VERSION,
        flags,
        cfg.input_dim,
        cfg.hidden_dim,
        cfg.num_classes,
        cfg.seq_len,
    )
    out = [(SectionSize(name="header", kind="header", nbytes=len(header)), header)]

    shapes = tensor_shapes(cfg)
    floats = None if quantized else to_tensors(bundle.cell, bundle.fc)
    for name in PARAM_NAMES:
        if isinstance(bundle, QuantizedBundle):
            qt = bundle.tensors[name]
            payload = struct.pack("<f", qt.scale) + qt.values.astype("<i1").tobytes()
        else:
            assert floats is not None
            payload = floats[name].astype("<f4").tobytes()
        out.append(
            (SectionSize(name=name, kind="core", shape=shapes[name], nbytes=len(payload)), payload)
        )

    for name, values in (
        ("norm_mean", bundle.norm.mean),
        ("norm_std", bundle.norm.std),
        ("thresholds", bundle.thresholds.tau),
    ):
        payload = values.astype("<f4").tobytes()
        out.append(
            (
                SectionSize(name=name, kind="auxiliary", shape=values.shape, nbytes=len(payload)),
                payload,
            )
        )

    labels = b""
    for label in bundle.labels:
        raw = label.encode("utf-8")
        labels += struct.pack("<H", len(raw)) + raw
    out.append(
        (
            SectionSize(name="labels", kind="auxiliary", shape=(len(bundle.labels),), nbytes=len(labels)),
            labels,
        )
    )
    return out


def encode_model(bundle: AnyBundle) -> bytes:
    return b"".join(payload for _, payload in _sections(bundle))


def save_model(bundle: AnyBundle, path: Union[str, Path]) -> Path:
    """
    Write a float or quantized bundle.

    Float values are stored as 32-bit; a bundle whose values are already
    float32-representable (as produced by training) reloads bit-exactly.

    Raises:
        ModelIoError: The file cannot be written
    """
    path = Path(path)
    data = encode_model(bundle)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(data)
    except OSError as e:
        raise ModelIoError(f"Cannot write model file {path}: {e}") from e
    kind = "quantized" if isinstance(bundle, QuantizedBundle) else "float"
    logger.info(f"Saved {kind} model to {path} ({len(data)} bytes)")
    return path


def size_report(bundle: AnyBundle) -> SizeReport:
    """Per-section byte counts of the serialized form; totals equal the file size."""
    return SizeReport(
        quantized=isinstance(bundle, QuantizedBundle),
        sections=[section for section, _ in _sections(bundle)],
        parameter_count=count_parameters(bundle.config),
    )


# Decoding


class _Reader:
    """Sequential reader that reports truncation as shape corruption."""

    def __init__(self, data: bytes, offset: int = 0) -> None:
        self.data = data
        self.offset = offset

    def take(self, nbytes: int, what: str) -> bytes:
        end = self.offset + nbytes
        if end > len(self.data):
            raise ShapeCorruptionError(
                f"File truncated while reading {what}",
                details={"needed": nbytes, "available": len(self.data) - self.offset},
            )
        chunk = self.data[self.offset : end]
        self.offset = end
        return chunk

    def floats(self, shape: tuple[int, ...], what: str) -> NDArray[np.float64]:
        count = int(np.prod(shape))
        raw = self.take(4 * count, what)
        return np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(shape)

    def int8s(self, shape: tuple[int, ...], what: str) -> NDArray[np.int8]:
        count = int(np.prod(shape))
        raw = self.take(count, what)
        return np.frombuffer(raw, dtype="<i1").astype(np.int8).reshape(shape)

    def u16(self, what: str) -> int:
        (value,) = struct.unpack("<H", self.take(2, what))
        return int(value)


def decode_model(data: bytes) -> AnyBundle:
    """Parse a model file image into the bundle type it stores."""
    if len(data) < 4 or data[:4] != MAGIC:
        raise BadMagicError(f"Not a model file: magic {data[:4]!r}, expected {MAGIC!r}")
    if len(data) < _HEADER.size:
        raise ShapeCorruptionError("File truncated inside the header")
    _, version, flags, d, h, c, t = _HEADER.unpack_from(data)
    if version != FORMAT_VERSION:
        raise VersionMismatchError(
            f"Model file version {version}, this build reads version {FORMAT_VERSION}",
            details={"version": version},
        )

    try:
        config = ModelConfig(input_dim=d, hidden_dim=h, num_classes=c, seq_len=t)
    except ValidationError as e:
        raise ShapeCorruptionError(f"Header declares invalid dimensions: {e}") from e

    reader = _Reader(data, _HEADER.size)
    quantized = bool(flags & FLAG_QUANTIZED)
    shapes = tensor_shapes(config)
    floats: dict[str, NDArray[np.float64]] = {}
    qtensors: dict[str, QuantizedTensor] = {}
    for name in PARAM_NAMES:
        if quantized:
            (scale,) = struct.unpack("<f", reader.take(4, f"{name} scale"))
            values = reader.int8s(shapes[name], name)
            try:
                qtensors[name] = QuantizedTensor(values=values, scale=float(scale))
            except ValidationError as e:
                raise ShapeCorruptionError(f"Invalid scale for {name}: {scale}") from e
        else:
            floats[name] = reader.floats(shapes[name], name)

    mean = reader.floats((d,), "norm mean")
    std = reader.floats((d,), "norm std")
    tau = reader.floats((c,), "thresholds")
    labels = []
    for i in range(c):
        raw = reader.take(reader.u16(f"label {i} length"), f"label {i}")
        try:
            labels.append(raw.decode("utf-8"))
        except UnicodeDecodeError as e:
            raise ShapeCorruptionError(f"Label {i} is not valid UTF-8") from e
    if reader.offset != len(data):
        raise ShapeCorruptionError(
            f"{len(data) - reader.offset} unexpected trailing bytes after labels"
        )

    try:
        norm = NormStats(mean=mean, std=std)
        thresholds = ClassThresholds(tau=tau, calibrated=bool(flags & FLAG_CALIBRATED))
        if quantized:
            return QuantizedBundle(
                config=config,
                tensors=qtensors,
                norm=norm,
                thresholds=thresholds,
                labels=tuple(labels),
            )
        cell, fc = from_tensors(floats)
        return ModelBundle(
            config=config,
            cell=cell,
            fc=fc,
            norm=norm,
            thresholds=thresholds,
            labels=tuple(labels),
        )
    except ValidationError as e:
        raise ShapeCorruptionError(f"Model file content is inconsistent: {e}") from e


def read_model(path: Union[str, Path]) -> AnyBundle:
    """
    Load a model file exactly as stored.

    Raises:
        ModelIoError: The file cannot be read
        BadMagicError: Wrong magic bytes
        VersionMismatchError: Unknown format version
        ShapeCorruptionError: Truncated or inconsistent content
    """
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise ModelIoError(f"Cannot read model file {path}: {e}") from e
    bundle = decode_model(data)
    logger.info(
        f"Loaded {'quantized' if isinstance(bundle, QuantizedBundle) else 'float'} "
        f"model from {path} ({len(data)} bytes)"
    )
    return bundle


def load_model(path: Union[str, Path]) -> ModelBundle:
    """Load a model file as a float bundle, dequantizing int8 files."""
    bundle = read_model(path)
    if isinstance(bundle, QuantizedBundle):
        return dequantize(bundle)
    return bundle
