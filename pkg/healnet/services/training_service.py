"""Fold construction, the per-fold training loop and cross-validation."""
import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from sklearn.model_selection import KFold, StratifiedKFold, train_test_split

from healnet.models import tensor as T
from healnet.models.fusion import ForwardContext, HealNetModel, fusion_forward
from healnet.models.survival_record import BinEdges
from healnet.schemas import RunConfig, SelectBy, TrainConfig
from healnet.services import dataset_service
from healnet.services.optimizer_service import AdamState, adam_step, l1_penalty, l2_penalty, onecycle_lr
from healnet.services.survival_service import (
    class_weights,
    discretize,
    harrell_c,
    hazards,
    nll_from_arrays,
    risk_score,
)
from healnet.utils.errors import DataError, HealNetError, NumericalError, UndefinedCIndexError
from healnet.utils.rng import derive_seed, stream

logger = logging.getLogger(__name__)

PREDICT_CHUNK = 256


@dataclass(frozen=True)
class FoldSplit:
    fold: int
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray


@dataclass
class FoldResult:
    fold: int
    seed: int
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    val_cindex: list = field(default_factory=list)
    best_epoch: Optional[int] = None  # 1-based
    test_cindex: float = math.nan
    status: str = "ok"
    error: str = ""
    seconds: float = 0.0
    state: Optional[dict] = None
    norm_stats: dict = field(default_factory=dict)

    @property
    def failed(self):
        return self.status != "ok"

    @property
    def epochs_run(self):
        return len(self.train_loss)


@dataclass
class CrossValidationResult:
    folds: list
    edges: BinEdges
    splits: list

    @property
    def succeeded(self):
        return [f for f in self.folds if not f.failed and np.isfinite(f.test_cindex)]

    @property
    def mean_cindex(self):
        values = [f.test_cindex for f in self.succeeded]
        return float(np.mean(values)) if values else math.nan

    @property
    def std_cindex(self):
        values = [f.test_cindex for f in self.succeeded]
        return float(np.std(values)) if values else math.nan


class EarlyStopping:
    """Tracks the best validation score and the parameters that produced it."""

    def __init__(self, patience, minimize=True):
        self.patience = patience
        self.minimize = minimize
        self.best = None
        self.best_epoch = None
        self.best_state = None
        self.bad_epochs = 0

    def _better(self, score):
        if not np.isfinite(score):
            return False
        if self.best is None:
            return True
        return score < self.best if self.minimize else score > self.best

    def update(self, epoch, score, snapshot=None):
        """Record one epoch; ``snapshot()`` is only called when the score improves."""
        if self._better(score):
            self.best = score
            self.best_epoch = epoch
            self.best_state = snapshot() if snapshot is not None else None
            self.bad_epochs = 0
            return True
        self.bad_epochs += 1
        return False

    @property
    def should_stop(self):
        return self.bad_epochs >= self.patience


def make_folds(bins, config: TrainConfig, seed):
    """``config.folds`` disjoint test sets stratified by survival bin, then a stratified val cut of the rest.

    Test sets come from a ``max(folds, round(1 / split_test))``-way split.
    """
    bins = np.asarray(bins)
    n = bins.shape[0]
    n_splits = max(config.folds, int(round(1.0 / config.split_test)))
    if n < n_splits:
        raise DataError(f"{n} samples cannot fill {n_splits} folds")
    random_state = derive_seed(seed, "folds") % 2**32
    counts = np.bincount(bins)
    if counts[counts > 0].min() >= n_splits:
        splitter = StratifiedKFold(n_splits=n_splits, shuffle=True, random_state=random_state)
        parts = splitter.split(np.zeros(n), bins)
    else:
        logger.warning("a survival bin has fewer than %d samples; folds are not stratified", n_splits)
        parts = KFold(n_splits=n_splits, shuffle=True, random_state=random_state).split(np.zeros(n))

    val_fraction = config.split_val / (config.split_train + config.split_val)
    splits = []
    for fold, (rest, test) in enumerate(parts):
        if fold == config.folds:
            break
        state = derive_seed(seed, "val", fold) % 2**32
        try:
            train, val = train_test_split(rest, test_size=val_fraction, stratify=bins[rest], random_state=state)
        except ValueError:
            train, val = train_test_split(rest, test_size=val_fraction, random_state=state)
        splits.append(FoldSplit(fold, np.sort(train), np.sort(val), np.sort(test)))
    return splits


def predict_hazards(model: HealNetModel, dataset, indices=None):
    """Eval-mode hazards ``[n, k]`` as float64."""
    if indices is None:
        indices = np.arange(dataset.n)
    indices = np.asarray(indices, dtype=np.int64)
    chunks = []
    for start in range(0, len(indices), PREDICT_CHUNK):
        part = indices[start : start + PREDICT_CHUNK]
        batches = dataset_service.build_batches(dataset, part, model=model)
        logits, _ = fusion_forward(model, batches, ForwardContext(training=False), record_attention=False)
        chunks.append(hazards(logits).data.astype(np.float64))
    if not chunks:
        return np.zeros((0, model.num_bins))
    return np.concatenate(chunks)


def _labels(dataset, indices):
    months, censored, bins = dataset.survival_arrays()
    return months[indices], censored[indices], bins[indices]


def evaluate_split(model, dataset, indices, weights):
    """``(weighted NLL, c-index)``; the c-index is NaN when no pair is comparable."""
    h = predict_hazards(model, dataset, indices)
    months, censored, bins = _labels(dataset, indices)
    loss = nll_from_arrays(T.Tensor(h), bins, censored, weights).item()
    try:
        cindex = harrell_c(risk_score(h), months, censored)
    except (UndefinedCIndexError, ValueError):
        cindex = math.nan
    return loss, cindex


def drop_modalities(batches, rate, rng):
    """Hide each present modality of each sample with probability ``rate``.

    A sample that would lose every modality keeps its original presence.
    """
    if rate <= 0.0 or len(batches) < 2:
        return batches
    present = np.stack([b.present for b in batches], axis=1)
    kept = present & (rng.random(present.shape) >= rate)
    emptied = ~kept.any(axis=1)
    kept[emptied] = present[emptied]
    return [replace(b, present=kept[:, i]) for i, b in enumerate(batches)]


def train_fold(model: HealNetModel, dataset, split: FoldSplit, config: TrainConfig, weights, seed) -> FoldResult:
    """Adam + OneCycle on the train split with early stopping on the val split.

    The best-epoch parameters are restored before the single test evaluation.
    """
    result = FoldResult(fold=split.fold, seed=seed)
    started = time.perf_counter()
    months, censored, bins = dataset.survival_arrays()
    steps_per_epoch = math.ceil(len(split.train) / config.batch_size)
    total_steps = config.epochs * steps_per_epoch
    minimize = config.select_by is SelectBy.NLL
    stopper = EarlyStopping(config.early_stop_patience, minimize=minimize)
    adam = AdamState()
    step = 0

    try:
        for epoch in range(1, config.epochs + 1):
            order = stream(seed, "shuffle", epoch).permutation(split.train)
            seen, running = 0, 0.0
            for start in range(0, len(order), config.batch_size):
                idx = order[start : start + config.batch_size]
                params = model.parameters()
                with T.GradTape() as tape:
                    batches = dataset_service.build_batches(dataset, idx, model=model)
                    if config.modality_dropout > 0.0:
                        rng = stream(seed, "modality_dropout", step)
                        batches = drop_modalities(batches, config.modality_dropout, rng)
                    ctx = ForwardContext(training=True, seed=seed, step=step)
                    logits, _ = fusion_forward(model, batches, ctx, record_attention=False)
                    nll = nll_from_arrays(hazards(logits), bins[idx], censored[idx], weights)
                    loss = nll + l1_penalty(params, config.effective_l1) + l2_penalty(params, config.effective_l2)
                value = loss.item()
                if not np.isfinite(value):
                    raise NumericalError(f"loss diverged at epoch {epoch}, step {step}")
                grads = tape.gradient(loss, params)
                adam_step(params, grads, adam, onecycle_lr(step, total_steps, config.max_lr), beta1=config.momentum)
                running += value * len(idx)
                seen += len(idx)
                step += 1
            result.train_loss.append(running / seen)

            val_loss, val_cindex = evaluate_split(model, dataset, split.val, weights)
            result.val_loss.append(val_loss)
            result.val_cindex.append(val_cindex)
            score = val_loss if minimize else val_cindex
            stopper.update(epoch, score, model.state_dict)
            logger.debug(
                "fold %d epoch %d: train %.4f val %.4f c %.3f", split.fold, epoch, result.train_loss[-1], val_loss, val_cindex
            )
            if stopper.should_stop:
                logger.info("fold %d: early stop after epoch %d (best %d)", split.fold, epoch, stopper.best_epoch)
                break
    except NumericalError as e:
        result.status = "failed"
        result.error = str(e)
        result.seconds = time.perf_counter() - started
        logger.warning("fold %d failed: %s", split.fold, e)
        return result

    if stopper.best_state is None:
        result.status = "failed"
        result.error = f"no finite validation {config.select_by.value} in any epoch"
        result.seconds = time.perf_counter() - started
        logger.warning("fold %d failed: %s", split.fold, result.error)
        return result

    model.load_state_dict(stopper.best_state)
    result.best_epoch = stopper.best_epoch
    result.state = stopper.best_state
    h = predict_hazards(model, dataset, split.test)
    try:
        result.test_cindex = harrell_c(risk_score(h), months[split.test], censored[split.test])
    except UndefinedCIndexError as e:
        result.status = "failed"
        result.error = str(e)
        logger.warning("fold %d: %s", split.fold, e)
    result.seconds = time.perf_counter() - started
    return result


def prepare_fold(dataset, split: FoldSplit, run_config: RunConfig, num_bins):
    """Normalized data, loss weights and a fresh model for one fold."""
    seed = derive_seed(run_config.train.seed, "fold", split.fold)
    normalized, stats = dataset_service.normalize(dataset, split.train)
    _, _, bins = dataset.survival_arrays()
    weights = class_weights(np.bincount(bins[split.train], minlength=num_bins))
    model = HealNetModel(
        run_config.fusion_settings(),
        dataset_service.modality_specs(normalized),
        num_bins=num_bins,
        seed=seed,
    )
    return normalized, stats, weights, model, seed


def run_fold(dataset, split: FoldSplit, run_config: RunConfig, num_bins) -> FoldResult:
    try:
        normalized, stats, weights, model, seed = prepare_fold(dataset, split, run_config, num_bins)
    except HealNetError as e:
        logger.warning("fold %d failed before training: %s", split.fold, e)
        return FoldResult(fold=split.fold, seed=0, status="failed", error=str(e))
    result = train_fold(model, normalized, split, run_config.train, weights, seed)
    result.norm_stats = stats
    return result


def label_dataset(dataset, num_bins):
    edges, labeled = discretize(dataset.records, num_bins)
    return replace(dataset, records=labeled), edges


def cross_validate(dataset, run_config: RunConfig, jobs=1) -> CrossValidationResult:
    """Train one model per fold; report per-fold test c-index plus mean and std over successful folds."""
    num_bins = run_config.train.num_bins
    labeled, edges = label_dataset(dataset, num_bins)
    _, _, bins = labeled.survival_arrays()
    splits = make_folds(bins, run_config.train, run_config.train.seed)
    logger.info(
        "cross-validating %d fold(s) on %d sample(s), modalities %s",
        len(splits),
        labeled.n,
        labeled.modality_names,
    )

    if jobs > 1:
        from healnet.tasks.fold_tasks import run_folds_parallel

        folds = run_folds_parallel(labeled, splits, run_config, num_bins, jobs)
    else:
        folds = [run_fold(labeled, split, run_config, num_bins) for split in splits]

    result = CrossValidationResult(folds=folds, edges=edges, splits=splits)
    failed = [f.fold for f in folds if f.failed]
    if failed:
        logger.warning("fold(s) %s failed and are excluded from the summary", failed)
    return result
