"""Batch MFCC extraction into the JSON feature file."""

import csv
import logging
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Optional, Union

from pydantic import ValidationError

from tinygrnn.audio_io import load_wav, prepare_clip, segment_clip
from tinygrnn.dsp import mfcc_sequence, spectral_gate
from tinygrnn.exceptions import (
    BadLabelError,
    FeatureFileError,
    MalformedWavError,
    TooShortError,
    UnsupportedEncodingError,
)
from tinygrnn.models import (
    DEFAULT_FEATURE_CONFIG,
    DEFAULT_LABELS,
    AudioClip,
    FeatureConfig,
    FeatureFile,
    FeatureRecord,
)

logger = logging.getLogger(__name__)

_SKIPPED_ERRORS = (MalformedWavError, UnsupportedEncodingError, TooShortError)


def read_labels_csv(path: Union[str, Path]) -> dict[str, tuple[str, ...]]:
    """
    Map filename -> class names from a `filename,label` CSV.

    A clip holding several sources lists them either on repeated rows or as
    one `;`-separated label; the first name given is the clip's primary label.
    """
    path = Path(path)
    table: dict[str, list[str]] = {}
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or not {"filename", "label"} <= set(
                reader.fieldnames
            ):
                raise FeatureFileError(
                    f"{path} must have a 'filename,label' header",
                    details={"header": reader.fieldnames},
                )
            for row in reader:
                names = table.setdefault((row["filename"] or "").strip(), [])
                for name in (row["label"] or "").split(";"):
                    name = name.strip()
                    if name and name not in names:
                        names.append(name)
    except OSError as e:
        raise FeatureFileError(f"Cannot read labels file {path}: {e}") from e
    empty = sorted(name for name, labels in table.items() if not labels)
    if empty:
        raise FeatureFileError(f"{path} has rows without a label: {empty}")
    return {name: tuple(labels) for name, labels in table.items()}


def clip_records(
    clip_id: str,
    clip: AudioClip,
    label: int,
    config: FeatureConfig = DEFAULT_FEATURE_CONFIG,
    denoise: bool = False,
    noise_profile: Optional[AudioClip] = None,
    present: Optional[Sequence[int]] = None,
) -> list[FeatureRecord]:
    """One record per segment of a clip."""
    prepared = prepare_clip(clip, config)
    if denoise:
        prepared = spectral_gate(prepared, noise_profile, config)
    return [
        FeatureRecord(
            clip=clip_id,
            segment=i,
            label=label,
            mfcc=mfcc_sequence(segment, config).coeffs.tolist(),
            present=list(present) if present else [label],
        )
        for i, segment in enumerate(segment_clip(prepared, config))
    ]


def extract_features(
    directory: Union[str, Path],
    labels_csv: Union[str, Path],
    labels: tuple[str, ...] = DEFAULT_LABELS,
    config: FeatureConfig = DEFAULT_FEATURE_CONFIG,
    denoise: bool = False,
    noise_profile: Optional[AudioClip] = None,
    max_workers: Optional[int] = None,
    on_clip: Optional[Callable[[str], None]] = None,
) -> FeatureFile:
    """
    Extract MFCC records for every WAV listed in a labels CSV.

    Clips are processed in a thread pool and reassembled in filename order,
    so the output does not depend on scheduling. Clips shorter than the
    segmented window, unreadable files and unsupported encodings are skipped
    with a warning.

    Raises:
        FeatureFileError: Unreadable labels CSV
        BadLabelError: A label is not in the vocabulary
    """
    directory = Path(directory)
    table = read_labels_csv(labels_csv)
    index = {name: i for i, name in enumerate(labels)}
    unknown = sorted(
        {name for names in table.values() for name in names if name not in index}
    )
    if unknown:
        raise BadLabelError(
            f"Labels not in the vocabulary: {unknown}",
            details={"vocabulary": list(labels)},
        )
    if noise_profile is not None:
        noise_profile = prepare_clip(noise_profile, config)

    def work(filename: str) -> list[FeatureRecord]:
        present = [index[name] for name in table[filename]]
        try:
            clip = load_wav(directory / filename)
            return clip_records(
                filename, clip, present[0], config, denoise, noise_profile, present
            )
        except _SKIPPED_ERRORS as e:
            logger.warning(f"Skipping {filename}: {e.message}")
            return []
        finally:
            if on_clip is not None:
                on_clip(filename)

    names = sorted(table)
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        results = list(pool.map(work, names))

    records = [record for batch in results for record in batch]
    kept = sum(1 for batch in results if batch)
    logger.info(f"Extracted {len(records)} segments from {kept}/{len(names)} clips")
    return FeatureFile(labels=list(labels), records=records)


def save_features(features: FeatureFile, path: Union[str, Path]) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(features.model_dump_json(), encoding="utf-8")
    except OSError as e:
        raise FeatureFileError(f"Cannot write feature file {path}: {e}") from e
    logger.info(f"Saved {len(features.records)} records to {path}")
    return path


def load_features(path: Union[str, Path]) -> FeatureFile:
    """Read and validate a JSON feature file."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise FeatureFileError(f"Cannot read feature file {path}: {e}") from e
    try:
        features = FeatureFile.model_validate_json(text)
    except ValidationError as e:
        raise FeatureFileError(
            f"Invalid feature file {path}",
            details={"errors": e.errors(include_url=False)},
        ) from e
    logger.info(f"Loaded {len(features.records)} records from {path}")
    return features
