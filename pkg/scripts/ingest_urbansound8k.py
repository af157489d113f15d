#!/usr/bin/env python3
"""
Prepare a user-downloaded UrbanSound8K tree for `tinygrnn extract`.

Keeps the six classes shared with the tinygrnn vocabulary, copies their WAV
files into train/ and test/ directories (one fold held out for testing) and
writes a `filename,label` CSV next to each. Clips are copied unchanged;
extraction resamples them and skips anything shorter than 3 s.

Usage:
    python scripts/ingest_urbansound8k.py --root ~/data/UrbanSound8K --out data/us8k
    tinygrnn extract --in data/us8k/train --labels data/us8k/train/labels.csv \\
        --out train.json
"""

import csv
import logging
import shutil
from collections import Counter
from pathlib import Path

import click
from rich.console import Console
from rich.progress import Progress
from rich.table import Table

from tinygrnn.models import DEFAULT_LABELS

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)
console = Console()

METADATA = Path("metadata") / "UrbanSound8K.csv"


def read_metadata(root: Path) -> list[dict[str, str]]:
    """Rows of the UrbanSound8K metadata table restricted to known classes."""
    path = root / METADATA
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    kept = [row for row in rows if row["class"] in DEFAULT_LABELS]
    logger.info(f"{len(kept)} of {len(rows)} clips belong to the vocabulary")
    return kept


def copy_split(root: Path, rows: list[dict[str, str]], out_dir: Path) -> Counter[str]:
    """Copy clips into out_dir and write out_dir/labels.csv."""
    out_dir.mkdir(parents=True, exist_ok=True)
    counts: Counter[str] = Counter()
    with (out_dir / "labels.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["filename", "label"])
        with Progress() as progress:
            task = progress.add_task(f"Copying to {out_dir.name}...", total=len(rows))
            for row in rows:
                source = root / "audio" / f"fold{row['fold']}" / row["slice_file_name"]
                if not source.exists():
                    logger.warning(f"Missing audio file: {source}")
                    progress.advance(task)
                    continue
                shutil.copy2(source, out_dir / source.name)
                writer.writerow([source.name, row["class"]])
                counts[row["class"]] += 1
                progress.advance(task)
    return counts


@click.command()
@click.option(
    "--root", required=True,
    type=click.Path(exists=True, file_okay=False, path_type=Path),
    help="UrbanSound8K directory (holding audio/ and metadata/)",
)
@click.option("--out", "output", required=True, type=click.Path(path_type=Path))
@click.option("--test-fold", type=click.IntRange(1, 10), default=10, show_default=True)
def main(root: Path, output: Path, test_fold: int) -> None:
    """Split the overlapping UrbanSound8K classes into train/test directories."""
    try:
        rows = read_metadata(root)
    except (OSError, KeyError) as e:
        console.print(f"❌ Cannot read {root / METADATA}: {e}", style="red")
        raise SystemExit(2) from e

    train_rows = [row for row in rows if int(row["fold"]) != test_fold]
    test_rows = [row for row in rows if int(row["fold"]) == test_fold]
    train_counts = copy_split(root, train_rows, output / "train")
    test_counts = copy_split(root, test_rows, output / "test")

    table = Table(title=f"UrbanSound8K subset (test fold {test_fold})")
    table.add_column("Class", style="cyan")
    table.add_column("Train", justify="right")
    table.add_column("Test", justify="right")
    for label in DEFAULT_LABELS:
        table.add_row(label, str(train_counts[label]), str(test_counts[label]))
    console.print(table)
    console.print(f"✅ Wrote {output / 'train'} and {output / 'test'}")


if __name__ == "__main__":
    main()
