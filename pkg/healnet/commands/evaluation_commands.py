import logging
from pathlib import Path

import click
from rich.table import Table

from healnet.commands.train_commands import REPORT_FILE
from healnet.extensions import console
from healnet.repositories import CheckpointRepository, ReportRepository
from healnet.schemas import RunConfig
from healnet.services import evaluate_missing, export_attention, load_inputs, parse_drop_plan, sample_attention
from healnet.services.evaluation_service import fold_test_indices
from healnet.utils.errors import UsageError
from healnet.utils.serializer import RESULT_PREFIX, format_float

logger = logging.getLogger(__name__)

MISSING_REPORT_FILE = "missing_report.kv"


def run_directory(checkpoint_path):
    """``<run>/checkpoints/fold_<i>.heal`` -> ``<run>``."""
    return Path(checkpoint_path).resolve().parent.parent


def load_training_context(checkpoint_path, report_path=None, data_dir=None):
    """Checkpoint, the run config that produced it and the dataset it was trained on."""
    checkpoint = CheckpointRepository.load(checkpoint_path)
    report_path = Path(report_path) if report_path else run_directory(checkpoint_path) / REPORT_FILE
    run_config = RunConfig.from_flat(ReportRepository.read_kv(report_path))
    data_dir = data_dir or run_config.data.data_dir
    if not data_dir:
        raise UsageError(f"no data directory: pass --data-dir ({report_path} has none)")
    dataset = load_inputs(data_dir, run_config.data, [spec.name for spec in checkpoint.model.modalities])
    return checkpoint, run_config, dataset


@click.command("eval-missing")
@click.option("--checkpoint", "checkpoint_path", type=click.Path(dir_okay=False), required=True)
@click.option("--data-dir", type=click.Path(file_okay=False), default=None, help="Defaults to the run's data_dir.")
@click.option("--drop-plan", default="half-half", show_default=True, help="none, half-half or drop:<modality>.")
@click.option("--drop-seed", type=click.IntRange(min=0), default=0, show_default=True, help="Seed of the drop plan only.")
@click.option("--report", "report_path", type=click.Path(dir_okay=False), default=None, help="report.kv of the run.")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None, help="Defaults to the run directory.")
def eval_missing(checkpoint_path, data_dir, drop_plan, drop_seed, report_path, out_dir):
    """
    Re-evaluate a fold's test set with modalities removed by a drop plan.

    half-half gives every test sample exactly one modality, dealt evenly
    after a seeded shuffle; drop:<modality> removes one modality from all
    test samples; none reproduces the training test metric.

    **Exit codes:**
    - 0: evaluated
    - 1: unknown drop plan or modality
    - 2: checkpoint or data unreadable, or data differ from training
    - 3: no comparable pairs in the test set
    """
    checkpoint, run_config, dataset = load_training_context(checkpoint_path, report_path, data_dir)
    plan = parse_drop_plan(drop_plan, dataset.modality_names)
    indices = fold_test_indices(dataset, run_config, checkpoint.fold, edges=checkpoint.edges)
    result = evaluate_missing(checkpoint, dataset, indices, plan, drop_seed=drop_seed)

    out = Path(out_dir) if out_dir else run_directory(checkpoint_path)
    entries = {
        "checkpoint": str(Path(checkpoint_path)),
        "fold": str(result.fold),
        "drop_plan": plan.label,
        "drop_seed": str(drop_seed),
        "n_test": str(result.n_test),
        "cindex_full": format_float(result.full_cindex),
        "cindex_dropped": format_float(result.dropped_cindex),
    }
    entries.update({f"kept.{name}": str(count) for name, count in result.kept.items()})
    ReportRepository.write_kv({RESULT_PREFIX + k: v for k, v in entries.items()}, out / MISSING_REPORT_FILE)

    table = Table(title=f"Fold {result.fold}, {result.n_test} test samples")
    table.add_column("modalities")
    table.add_column("c-index", justify="right")
    table.add_row("all", f"{result.full_cindex:.4f}")
    kept = ", ".join(f"{name} {count}" for name, count in result.kept.items())
    table.add_row(f"{plan.label} ({kept})", f"{result.dropped_cindex:.4f}")
    console.print(table)
    return result


@click.command("inspect")
@click.option("--checkpoint", "checkpoint_path", type=click.Path(dir_okay=False), required=True)
@click.option("--sample-id", required=True, help="Sample to explain.")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
@click.option("--data-dir", type=click.Path(file_okay=False), default=None, help="Defaults to the run's data_dir.")
@click.option("--report", "report_path", type=click.Path(dir_okay=False), default=None, help="report.kv of the run.")
def inspect(checkpoint_path, sample_id, out_dir, data_dir, report_path):
    """
    Export one sample's mean attention per modality as attention_<modality>.csv.

    Modalities with a token grid in token_grids (e.g. wsi:4x4) also get an
    attention_<modality>.pgm heatmap. Modalities the sample lacks are
    reported and skipped.
    """
    checkpoint, run_config, dataset = load_training_context(checkpoint_path, report_path, data_dir)
    export = sample_attention(checkpoint, dataset, sample_id)
    export_attention(export, out_dir, grids=run_config.data.token_grids)

    table = Table(title=f"Attention of {sample_id}")
    table.add_column("modality")
    table.add_column("tokens", justify="right")
    table.add_column("top token", justify="right")
    for name, weights in export.weights.items():
        if weights is None:
            table.add_row(name, "[yellow]absent[/yellow]", "-")
            continue
        top = int(weights.argmax())
        table.add_row(name, str(len(weights)), f"{top} ({weights[top]:.3f})")
    console.print(table)
    return export
