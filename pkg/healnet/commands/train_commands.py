import logging
import time
from pathlib import Path

import click
from rich.table import Table

from healnet.config import Config
from healnet.extensions import console
from healnet.models.fusion import HealNetModel
from healnet.repositories import Checkpoint, CheckpointRepository, ReportRepository
from healnet.services import cross_validate, load_inputs, load_run_config
from healnet.services.dataset_service import modality_specs
from healnet.utils.errors import NumericalError, UsageError
from healnet.utils.serializer import format_float, serialize_cross_validation, serialize_fold

logger = logging.getLogger(__name__)

REPORT_FILE = "report.kv"
FOLDS_FILE = "folds.csv"
TIMING_FILE = "timing.kv"
CHECKPOINT_DIR = "checkpoints"


def checkpoint_name(fold):
    return f"fold_{fold}.heal"


def fold_checkpoint(fold, run_config, dataset, edges):
    model = HealNetModel(
        run_config.fusion_settings(),
        modality_specs(dataset),
        num_bins=run_config.train.num_bins,
        seed=fold.seed,
    )
    model.load_state_dict(fold.state)
    meta = {"edges": edges.edges}
    for name, (mean, std) in fold.norm_stats.items():
        meta[f"norm.{name}.mean"] = mean
        meta[f"norm.{name}.std"] = std
    return Checkpoint(model=model, meta=meta, fold=fold.fold)


def fold_table(cv):
    table = Table(title="Test concordance per fold")
    table.add_column("fold", justify="right")
    table.add_column("status")
    table.add_column("epochs", justify="right")
    table.add_column("best epoch", justify="right")
    table.add_column("c-index", justify="right")
    for fold, split in zip(cv.folds, cv.splits):
        table.add_row(
            str(fold.fold),
            fold.status if not fold.failed else f"[red]{fold.status}[/red]",
            str(fold.epochs_run),
            "-" if fold.best_epoch is None else str(fold.best_epoch),
            f"{fold.test_cindex:.4f}",
        )
    return table


@click.command("train")
@click.option("--config", "config", default=None, help="Config file or preset name (blca, brca, kirp, ucec, synth).")
@click.option("--data-dir", type=click.Path(file_okay=False), default=None, help="Dataset directory; overrides data_dir.")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True, help="Run directory to write.")
@click.option("--jobs", type=click.IntRange(min=1), default=None, help="Folds trained in parallel (HEALNET_JOBS).")
@click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE", help="Override a config key.")
def train(config, data_dir, out_dir, jobs, overrides):
    """
    Cross-validate the fusion model and write report.kv, folds.csv, timing.kv and one checkpoint per fold.

    report.kv echoes the full config, so it can be passed back as --config
    to reproduce the run.

    **Exit codes:**
    - 0: every fold trained
    - 1: config or usage error (all schema violations are listed)
    - 2: data error
    - 3: every fold failed numerically
    """
    started = time.perf_counter()
    run_config = load_run_config(config, overrides, data_dir=data_dir)
    if not run_config.data.data_dir:
        raise UsageError("no data directory: pass --data-dir or set data_dir")
    jobs = jobs or Config.JOBS

    dataset = load_inputs(run_config.data.data_dir, run_config.data)
    cv = cross_validate(dataset, run_config, jobs=jobs)

    out = Path(out_dir)
    report = {**run_config.to_flat(), **serialize_cross_validation(cv, dataset)}
    ReportRepository.write_kv(report, out / REPORT_FILE)
    ReportRepository.write_folds([serialize_fold(f, s) for f, s in zip(cv.folds, cv.splits)], out / FOLDS_FILE)
    for fold in cv.folds:
        if fold.state is not None:
            CheckpointRepository.save(
                fold_checkpoint(fold, run_config, dataset, cv.edges), out / CHECKPOINT_DIR / checkpoint_name(fold.fold)
            )
    timing = {f"fold{f.fold}.seconds": format_float(round(f.seconds, 3)) for f in cv.folds}
    timing["total.seconds"] = format_float(round(time.perf_counter() - started, 3))
    timing["jobs"] = str(jobs)
    ReportRepository.write_kv(timing, out / TIMING_FILE)

    console.print(fold_table(cv))
    console.print(
        f"c-index [bold]{cv.mean_cindex:.4f} ± {cv.std_cindex:.4f}[/bold] "
        f"over {len(cv.succeeded)}/{len(cv.folds)} fold(s), modalities {', '.join(dataset.modality_names)}"
    )
    if not cv.succeeded:
        raise NumericalError("every fold failed", [f"fold {f.fold}: {f.error}" for f in cv.folds])
    return cv
