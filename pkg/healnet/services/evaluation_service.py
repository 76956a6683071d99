"""Missing-modality evaluation of trained checkpoints."""
import logging
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from healnet.repositories.checkpoint_repository import Checkpoint
from healnet.services import dataset_service
from healnet.services.survival_service import harrell_c, risk_score
from healnet.services.training_service import label_dataset, make_folds, predict_hazards
from healnet.utils.errors import DataError, UsageError
from healnet.utils.rng import stream

logger = logging.getLogger(__name__)

NONE = "none"
HALF_HALF = "half-half"
DROP_PREFIX = "drop:"


@dataclass(frozen=True)
class DropPlan:
    kind: str
    modality: Optional[str] = None

    @property
    def label(self):
        return f"{DROP_PREFIX}{self.modality}" if self.kind == "drop" else self.kind


@dataclass
class MissingResult:
    plan: DropPlan
    fold: Optional[int]
    n_test: int
    full_cindex: float
    dropped_cindex: float
    kept: dict


def parse_drop_plan(text, modality_names):
    """``none``, ``half-half`` or ``drop:<modality>``."""
    text = (text or "").strip()
    if text == NONE:
        return DropPlan(NONE)
    if text == HALF_HALF:
        if len(modality_names) < 2:
            raise UsageError("half-half needs at least two modalities")
        return DropPlan(HALF_HALF)
    if text.startswith(DROP_PREFIX):
        name = text[len(DROP_PREFIX) :]
        if name not in modality_names:
            raise UsageError(f"drop plan names unknown modality '{name}'", [f"known: {', '.join(modality_names)}"])
        return DropPlan("drop", name)
    raise UsageError(f"unknown drop plan '{text}'", ["use none, half-half or drop:<modality>"])


def apply_drop_plan(dataset, indices, plan: DropPlan, seed):
    """Clear presence for the planned modalities on ``indices`` only.

    ``half-half`` shuffles the samples with ``seed`` and deals each one a
    single kept modality in turn, so kept counts differ by at most one.
    """
    indices = np.asarray(indices, dtype=np.int64)
    if plan.kind == NONE:
        return dataset
    names = dataset.modality_names
    keep = {name: np.ones(dataset.n, dtype=bool) for name in names}
    if plan.kind == "drop":
        keep[plan.modality][indices] = False
    else:
        order = stream(seed, "drop-plan", plan.label).permutation(indices)
        for turn, sample in enumerate(order):
            kept = names[turn % len(names)]
            for name in names:
                keep[name][sample] = name == kept
    blocks = [b.with_present(b.present & keep[b.name]) for b in dataset.modalities]
    return replace(dataset, modalities=blocks)


def prepare_for_checkpoint(dataset, checkpoint: Checkpoint):
    """Restrict to the checkpoint's modalities and apply its stored z-score statistics."""
    names = [spec.name for spec in checkpoint.model.modalities]
    missing = [name for name in names if name not in dataset.modality_names]
    if missing:
        raise DataError(f"data has no modality {missing} required by the checkpoint")
    selected = dataset.select(names)
    stats = {}
    for block in selected.modalities:
        found = checkpoint.norm_stats(block.name)
        if found is not None:
            stats[block.name] = found
    normalized, _ = dataset_service.normalize(selected, np.arange(0), stats=stats)
    return normalized


def fold_test_indices(dataset, run_config, fold, edges=None):
    """Rebuild the fold assignment of a training run; ``edges`` guards against different data."""
    labeled, found = label_dataset(dataset, run_config.train.num_bins)
    if edges is not None and not np.array_equal(np.asarray(edges, dtype=np.float64), found.edges):
        raise DataError("survival bins differ from the ones the checkpoint was trained on; wrong data directory?")
    _, _, bins = labeled.survival_arrays()
    splits = make_folds(bins, run_config.train, run_config.train.seed)
    if fold is None or not 0 <= fold < len(splits):
        raise UsageError(f"checkpoint fold {fold} is not one of the {len(splits)} configured folds")
    return splits[fold].test


def _cindex(checkpoint, dataset, indices):
    months, censored, _ = dataset.survival_arrays()
    h = predict_hazards(checkpoint.model, dataset, indices)
    return harrell_c(risk_score(h), months[indices], censored[indices])


def evaluate_missing(checkpoint: Checkpoint, dataset, indices, plan: DropPlan, drop_seed=0) -> MissingResult:
    """Test c-index with every modality and under ``plan``, side by side."""
    prepared = prepare_for_checkpoint(dataset, checkpoint)
    indices = np.asarray(indices, dtype=np.int64)
    full = _cindex(checkpoint, prepared, indices)
    dropped_data = apply_drop_plan(prepared, indices, plan, drop_seed)
    dropped = _cindex(checkpoint, dropped_data, indices)
    kept = {b.name: int(b.present[indices].sum()) for b in dropped_data.modalities}
    logger.info("plan %s: c-index %.4f -> %.4f on %d test sample(s)", plan.label, full, dropped, len(indices))
    return MissingResult(
        plan=plan,
        fold=checkpoint.fold,
        n_test=len(indices),
        full_cindex=full,
        dropped_cindex=dropped,
        kept=kept,
    )
