"""Command-line interface for tinygrnn-py."""

import json
import sys
from pathlib import Path
from typing import Any, NoReturn, Optional

import click
from rich.console import Console
from rich.progress import Progress
from pydantic import ValidationError
from rich.table import Table

from tinygrnn import __version__
from tinygrnn.audio_io import load_wav
from tinygrnn.eval import FeatureEvaluation, evaluate_features, infer_clip
from tinygrnn.exceptions import BadConfigError, TinyGrnnError
from tinygrnn.features import extract_features, load_features, save_features
from tinygrnn.model_store import quantize_int8, read_model, save_model, size_report
from tinygrnn.model_store import load_model as load_float_model
from tinygrnn.models import ModelBundle, QuantizedBundle, TrainConfig, WavEncoding
from tinygrnn.synthetic import write_dataset
from tinygrnn.train import calibrate_from_features, fit

console = Console()
err_console = Console(stderr=True)


def setup_logging(verbose: bool = False) -> None:
    """Setup logging configuration."""
    import logging

    level = logging.DEBUG if verbose else logging.INFO
    logging.basicConfig(
        level=level,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        handlers=[logging.StreamHandler()],
    )


def _fail(ctx: click.Context, error: Exception) -> NoReturn:
    if isinstance(error, ValidationError):
        problems = "; ".join(
            f"{'.'.join(str(part) for part in item['loc'])}: {item['msg']}"
            for item in error.errors()
        )
        error = BadConfigError(f"Invalid configuration: {problems}")
    if isinstance(error, TinyGrnnError):
        err_console.print(f"❌ Error: {error}", style="red")
        if ctx.obj.get("verbose") and error.details:
            err_console.print(f"Details: {error.details}")
        sys.exit(error.exit_code)
    err_console.print(f"💥 Unexpected error: {error}", style="red")
    if ctx.obj.get("verbose"):
        import traceback

        err_console.print(traceback.format_exc())
    sys.exit(1)


@click.group()
@click.version_option(version=__version__)
@click.option("--verbose", "-v", is_flag=True, help="Enable verbose logging")
@click.pass_context
def main(ctx: click.Context, verbose: bool) -> None:
    """tinygrnn: kilobyte-scale FastGRNN acoustic event classifier"""
    ctx.ensure_object(dict)
    ctx.obj["verbose"] = verbose
    setup_logging(verbose)


@main.command()
@click.option(
    "--in", "input_dir", required=True,
    type=click.Path(exists=True, file_okay=False, path_type=Path),
    help="Directory holding the WAV files",
)
@click.option(
    "--labels", "labels_csv", required=True,
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    help="CSV with a filename,label header",
)
@click.option("--out", "output", required=True, type=click.Path(path_type=Path))
@click.option("--denoise", is_flag=True, help="Apply spectral gating before MFCC")
@click.option(
    "--noise-profile", type=click.Path(exists=True, dir_okay=False, path_type=Path),
    help="Noise-only WAV used as the gating floor",
)
@click.option("--workers", type=int, default=None, help="Extraction threads")
@click.pass_context
def extract(
    ctx: click.Context,
    input_dir: Path,
    labels_csv: Path,
    output: Path,
    denoise: bool,
    noise_profile: Optional[Path],
    workers: Optional[int],
) -> None:
    """Extract MFCC features from labeled WAV files."""
    try:
        profile = load_wav(noise_profile) if noise_profile else None
        with Progress(console=err_console) as progress:
            task = progress.add_task("Extracting features...", total=None)
            features = extract_features(
                input_dir,
                labels_csv,
                denoise=denoise or profile is not None,
                noise_profile=profile,
                max_workers=workers,
                on_clip=lambda _: progress.advance(task),
            )
        save_features(features, output)
        err_console.print(
            f"✅ {len(features.records)} segment records written to "
            f"[bold green]{output}[/bold green]"
        )
    except Exception as e:
        _fail(ctx, e)


@main.command()
@click.option(
    "--features", "features_path", required=True,
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
)
@click.option("--out", "output", required=True, type=click.Path(path_type=Path))
@click.option("--epochs", type=int, default=None, help="Maximum number of epochs")
@click.option("--seed", type=int, default=None, help="Random seed")
@click.option("--lr", type=float, default=None, help="Adam learning rate")
@click.option("--hidden", type=int, default=26, show_default=True, help="Hidden size")
@click.pass_context
def train(
    ctx: click.Context,
    features_path: Path,
    output: Path,
    epochs: Optional[int],
    seed: Optional[int],
    lr: Optional[float],
    hidden: int,
) -> None:
    """Train a FastGRNN classifier on a feature file."""
    try:
        overrides: dict[str, Any] = {
            key: value
            for key, value in (
                ("max_epochs", epochs),
                ("rng_seed", seed),
                ("learning_rate", lr),
            )
            if value is not None
        }
        config = TrainConfig(**overrides)
        features = load_features(features_path)

        with Progress(console=err_console) as progress:
            task = progress.add_task("Training...", total=config.max_epochs)
            run = fit(
                config,
                features,
                hidden_dim=hidden,
                on_epoch=lambda stats: progress.update(
                    task,
                    advance=1,
                    description=f"Training (val acc {stats.val_accuracy:.3f})",
                ),
            )
            progress.update(task, completed=config.max_epochs)

        save_model(run.bundle, output)
        best = run.history[run.best_epoch - 1]
        err_console.print(
            f"✅ Best epoch {run.best_epoch}: validation accuracy "
            f"[bold green]{best.val_accuracy:.4f}[/bold green]"
        )
        err_console.print(f"💾 Model saved to: {output}")
    except Exception as e:
        _fail(ctx, e)


@main.command()
@click.option(
    "--model", "model_path", required=True,
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
)
@click.option(
    "--features", "features_path", required=True,
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
)
@click.option("--out", "output", required=True, type=click.Path(path_type=Path))
@click.pass_context
def calibrate(
    ctx: click.Context, model_path: Path, features_path: Path, output: Path
) -> None:
    """Calibrate per-class presence thresholds and write them into the model."""
    try:
        model = calibrate_from_features(
            load_float_model(model_path), load_features(features_path)
        )
        save_model(model, output)

        table = Table(title="Presence thresholds")
        table.add_column("Class", style="cyan")
        table.add_column("Threshold", style="green", justify="right")
        for label, tau in zip(model.labels, model.thresholds.tau):
            table.add_row(label, f"{tau:.4f}")
        console.print(table)
    except Exception as e:
        _fail(ctx, e)


@main.command()
@click.option(
    "--model", "model_path", required=True,
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
)
@click.option(
    "--wav", "wav_path", required=True,
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
)
@click.option("--denoise", is_flag=True, help="Apply spectral gating first")
@click.option(
    "--noise-profile", type=click.Path(exists=True, dir_okay=False, path_type=Path),
    help="Noise-only WAV used as the gating floor",
)
@click.option("--multitone", is_flag=True, help="Report every class over threshold")
@click.pass_context
def infer(
    ctx: click.Context,
    model_path: Path,
    wav_path: Path,
    denoise: bool,
    noise_profile: Optional[Path],
    multitone: bool,
) -> None:
    """Classify one WAV file and print the result as JSON."""
    try:
        model = load_float_model(model_path)
        profile = load_wav(noise_profile) if noise_profile else None
        prediction = infer_clip(
            model, load_wav(wav_path), denoise or profile is not None, profile
        )
        result: dict[str, Any] = {
            "file": str(wav_path),
            "labels": list(model.labels),
            "per_segment": prediction.per_segment.tolist(),
            "aggregate": prediction.aggregate.tolist(),
            "predicted_class": prediction.predicted_class,
            "predicted_label": model.labels[prediction.predicted_class],
        }
        if multitone:
            if not model.thresholds.calibrated:
                err_console.print(
                    "⚠️  Thresholds are not calibrated; run 'tinygrnn calibrate' first",
                    style="yellow",
                )
            present = sorted(prediction.present_classes)
            result["present_classes"] = present
            result["present_labels"] = [model.labels[c] for c in present]
        click.echo(json.dumps(result, indent=2))
    except Exception as e:
        _fail(ctx, e)


def _print_evaluation(
    target: Console, model: ModelBundle, result: FeatureEvaluation
) -> None:
    report = result.report
    matrix = Table(title="Confusion matrix (rows: truth)")
    matrix.add_column("", style="cyan")
    for label in model.labels:
        matrix.add_column(label, justify="right")
    for label, row in zip(model.labels, result.confusion.counts):
        matrix.add_row(label, *(str(int(n)) for n in row))
    target.print(matrix)

    table = Table(title=f"Accuracy {report.accuracy:.4f} on {report.total} clips")
    table.add_column("Class", style="cyan")
    table.add_column("Precision", justify="right")
    table.add_column("Recall", justify="right")
    table.add_column("F1", justify="right")
    table.add_column("Support", justify="right")
    for row in report.per_class:
        table.add_row(
            row.label,
            f"{row.precision:.4f}",
            f"{row.recall:.4f}",
            f"{row.f1:.4f}",
            str(row.support),
        )
    target.print(table)


@main.command(name="eval")
@click.option(
    "--model", "model_path", required=True,
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
)
@click.option(
    "--features", "features_path", required=True,
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
)
@click.option(
    "--json", "output_json", is_flag=True,
    help="Also print JSON on stdout (tables move to stderr)",
)
@click.pass_context
def evaluate(
    ctx: click.Context, model_path: Path, features_path: Path, output_json: bool
) -> None:
    """Evaluate a model on a feature file (confusion matrix and metrics)."""
    try:
        model = load_float_model(model_path)
        result = evaluate_features(model, load_features(features_path))
        report = result.report

        _print_evaluation(err_console if output_json else console, model, result)
        if output_json:
            click.echo(
                json.dumps(
                    {
                        "labels": list(model.labels),
                        "confusion_matrix": result.confusion.counts.tolist(),
                        "metrics": report.model_dump(),
                    },
                    indent=2,
                )
            )
    except Exception as e:
        _fail(ctx, e)


@main.command()
@click.option(
    "--model", "model_path", required=True,
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
)
@click.option("--out", "output", required=True, type=click.Path(path_type=Path))
@click.pass_context
def quantize(ctx: click.Context, model_path: Path, output: Path) -> None:
    """Write an int8-quantized copy of a model."""
    try:
        bundle = read_model(model_path)
        if isinstance(bundle, QuantizedBundle):
            err_console.print("⚠️  Model is already quantized", style="yellow")
            quantized = bundle
        else:
            quantized = quantize_int8(bundle)
        save_model(quantized, output)
        report = size_report(quantized)
        err_console.print(
            f"✅ Quantized core: [bold green]{report.core_bytes}[/bold green] bytes, "
            f"file {report.total_bytes} bytes"
        )
    except Exception as e:
        _fail(ctx, e)


@main.command()
@click.option(
    "--model", "model_path", required=True,
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
)
@click.option("--json", "output_json", is_flag=True, help="Output as JSON")
@click.pass_context
def size(ctx: click.Context, model_path: Path, output_json: bool) -> None:
    """Show the per-tensor byte footprint of a model file."""
    try:
        report = size_report(read_model(model_path))
        if output_json:
            payload = report.model_dump()
            payload.update(
                core_bytes=report.core_bytes,
                auxiliary_bytes=report.auxiliary_bytes,
                total_bytes=report.total_bytes,
            )
            click.echo(json.dumps(payload, indent=2))
            return

        kind = "int8" if report.quantized else "float32"
        table = Table(title=f"Model size ({kind}, {report.parameter_count:,} parameters)")
        table.add_column("Section", style="cyan")
        table.add_column("Kind")
        table.add_column("Shape")
        table.add_column("Bytes", justify="right", style="green")
        for section in report.sections:
            shape = "x".join(str(n) for n in section.shape) or "-"
            table.add_row(section.name, section.kind, shape, str(section.nbytes))
        table.add_row("core total", "", "", f"{report.core_bytes} ({report.core_bytes / 1024:.2f} KiB)")
        table.add_row("file total", "", "", str(report.total_bytes))
        console.print(table)
    except Exception as e:
        _fail(ctx, e)


@main.command()
@click.option("--out", "output", required=True, type=click.Path(path_type=Path))
@click.option("--clips-per-class", type=int, default=100, show_default=True)
@click.option("--seed", type=int, default=42, show_default=True)
@click.option(
    "--mixtures", type=int, default=0, show_default=True,
    help="Two-source clips to add, labeled with both classes",
)
@click.option(
    "--encoding",
    type=click.Choice([e.value for e in WavEncoding]),
    default=WavEncoding.PCM16.value,
    show_default=True,
)
@click.pass_context
def synth(
    ctx: click.Context,
    output: Path,
    clips_per_class: int,
    seed: int,
    mixtures: int,
    encoding: str,
) -> None:
    """Write the synthetic six-class dataset (WAVs plus labels.csv)."""
    try:
        csv_path = write_dataset(
            output, clips_per_class, seed, WavEncoding(encoding), mixtures=mixtures
        )
        err_console.print(f"✅ Dataset written; labels in [bold green]{csv_path}[/bold green]")
    except Exception as e:
        _fail(ctx, e)


if __name__ == "__main__":
    main()
