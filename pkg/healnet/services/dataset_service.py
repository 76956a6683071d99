"""Joining modality files into datasets, train-split z-scoring, and batch building."""
import logging
from dataclasses import replace
from pathlib import Path

import numpy as np

from healnet.models.dataset import ModalityBlock, ModalityKind, MultiModalDataset, Provenance
from healnet.models.fusion import ModalityBatch, ModalitySpec
from healnet.models.tensor import Tensor
from healnet.repositories import PatchFeatureRepository, ReportRepository, SurvivalRepository, TabularRepository
from healnet.repositories.patch_feature_repository import ids_path
from healnet.schemas import DataSettings, InputFusion
from healnet.utils.errors import DataError, JoinError

logger = logging.getLogger(__name__)

SURVIVAL_FILE = "survival.csv"
MANIFEST_FILE = "dataset.kv"
SUFFIXES = {".csv": ModalityKind.TABULAR, ".hpf": ModalityKind.PATCHES}
CONCAT_NAME = "concat"


def join_modalities(blocks, records, provenance=None):
    """Align every block on the survival records' ids.

    Record ids missing from a block stay in the dataset with ``present``
    false for that block. Block samples without a record are dropped.
    """
    if not blocks:
        raise JoinError("nothing to join: no modality blocks")
    record_ids = [r.sample_id for r in records]
    if len(set(record_ids)) != len(record_ids):
        raise JoinError("survival records contain duplicate sample ids")
    wanted = set(record_ids)

    aligned = []
    covered = set()
    for block in blocks:
        if len(set(block.ids)) != len(block.ids):
            raise JoinError(f"modality '{block.name}' has duplicate sample ids")
        position = {sample_id: i for i, sample_id in enumerate(block.ids)}
        dropped = len(set(block.ids) - wanted)
        if dropped:
            logger.warning("modality '%s': dropped %d sample(s) without a survival record", block.name, dropped)
        covered |= set(block.ids) & wanted

        n = len(record_ids)
        data = np.zeros((n, block.tokens, block.channels), dtype=np.float32)
        present = np.zeros(n, dtype=bool)
        token_mask = np.ones((n, block.tokens), dtype=bool)
        for row, sample_id in enumerate(record_ids):
            source = position.get(sample_id)
            if source is None:
                continue
            data[row] = block.data[source]
            present[row] = block.present[source]
            token_mask[row] = block.token_mask[source]
        aligned.append(replace(block, ids=list(record_ids), data=data, present=present, token_mask=token_mask))

    if not covered:
        raise JoinError("no sample id is shared between the survival records and any modality")
    dataset = MultiModalDataset(
        sample_ids=list(record_ids),
        modalities=aligned,
        records=list(records),
        provenance=provenance or Provenance("loaded"),
    )
    logger.info(
        "joined %d sample(s); %d with every modality, %d with none",
        dataset.n,
        overlap_count(dataset),
        int((~any_present(dataset)).sum()),
    )
    return dataset


def any_present(dataset):
    seen = np.zeros(dataset.n, dtype=bool)
    for block in dataset.modalities:
        seen |= block.present
    return seen


def overlap_count(dataset):
    """Samples that carry every modality."""
    both = np.ones(dataset.n, dtype=bool)
    for block in dataset.modalities:
        both &= block.present
    return int(both.sum())


def _discover(data_dir):
    manifest = data_dir / MANIFEST_FILE
    if manifest.is_file():
        values = ReportRepository.read_kv(manifest)
        names = [n.strip() for n in values.get("modalities", "").split(",") if n.strip()]
        files = {}
        for name in names:
            matches = [data_dir / f"{name}{suffix}" for suffix in SUFFIXES if (data_dir / f"{name}{suffix}").is_file()]
            if not matches:
                raise DataError(f"{manifest}: modality '{name}' has no {'/'.join(SUFFIXES)} file")
            files[name] = matches[0]
        return files, values
    files = {
        path.stem: path
        for path in sorted(data_dir.iterdir())
        if path.suffix in SUFFIXES and path.name != SURVIVAL_FILE
    }
    return files, {}


def load_data_dir(data_dir, modalities=None):
    """Read ``survival.csv`` plus one ``<name>.csv`` or ``<name>.hpf`` per modality and join them.

    ``modalities`` picks and orders the modalities; empty means every file found.
    """
    data_dir = Path(data_dir)
    if not data_dir.is_dir():
        raise DataError(f"no such data directory: {data_dir}")
    records = SurvivalRepository.load(data_dir / SURVIVAL_FILE)
    files, manifest = _discover(data_dir)
    if modalities:
        unknown = [m for m in modalities if m not in files]
        if unknown:
            raise DataError(f"{data_dir}: no file for modality {unknown}, found {sorted(files)}")
        files = {name: files[name] for name in modalities}
    if not files:
        raise DataError(f"{data_dir}: no modality files")

    blocks = []
    for name, path in files.items():
        if SUFFIXES[path.suffix] is ModalityKind.TABULAR:
            blocks.append(TabularRepository.load(path, name=name))
            continue
        ids = None
        if not ids_path(path).exists():
            ids = [r.sample_id for r in records]
            logger.info("%s: no %s, matching samples to %s by position", path.name, ids_path(path).name, SURVIVAL_FILE)
        blocks.append(PatchFeatureRepository.load(path, name=name, ids=ids))

    seed = manifest.get("seed")
    provenance = Provenance(
        source="synthetic" if manifest.get("scenario") else "loaded",
        scenario=manifest.get("scenario") or None,
        seed=int(seed) if seed else None,
        location=str(data_dir),
    )
    return join_modalities(blocks, records, provenance=provenance)


def _flat_feature_names(block: ModalityBlock):
    if block.kind is ModalityKind.TABULAR and block.channels == 1:
        names = block.feature_names or [f"f{i}" for i in range(block.tokens)]
        return [f"{block.name}.{name}" for name in names]
    return [f"{block.name}.t{i}c{j}" for i in range(block.tokens) for j in range(block.channels)]


def concat_modalities(dataset: MultiModalDataset, name=CONCAT_NAME):
    """Every modality flattened into one tabular block, the plain early-fusion input.

    Absent modalities and padded tokens contribute zeros. A sample is
    present when any of its modalities is.
    """
    parts, names = [], []
    for block in dataset.modalities:
        keep = block.present[:, None, None] & block.token_mask[:, :, None]
        parts.append(np.where(keep, block.data, 0.0).reshape(block.n, -1))
        names.extend(_flat_feature_names(block))
    merged = ModalityBlock(
        name=name,
        kind=ModalityKind.TABULAR,
        ids=list(dataset.sample_ids),
        data=np.concatenate(parts, axis=1)[:, :, None],
        present=any_present(dataset),
        feature_names=names,
    )
    logger.info("concatenated %s into %d feature(s)", dataset.modality_names, merged.tokens)
    return replace(dataset, modalities=[merged])


def load_inputs(data_dir, settings: DataSettings, modalities=None):
    """:func:`load_data_dir` followed by the configured input fusion.

    ``modalities`` overrides ``settings.modalities`` for separate inputs.
    """
    if settings.input_fusion is InputFusion.CONCAT:
        return concat_modalities(load_data_dir(data_dir, settings.modalities))
    return load_data_dir(data_dir, modalities or settings.modalities)


def save_data_dir(dataset: MultiModalDataset, out_dir):
    """Write a dataset in the layout :func:`load_data_dir` reads."""
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise DataError(f"cannot create {out_dir}: {e.strerror}") from None
    written = []
    for block in dataset.modalities:
        if block.kind is ModalityKind.TABULAR:
            written.append(TabularRepository.save(block, out_dir / f"{block.name}.csv"))
        else:
            written.append(PatchFeatureRepository.save(block, out_dir / f"{block.name}.hpf"))
    written.append(SurvivalRepository.save(dataset.records, out_dir / SURVIVAL_FILE))

    manifest = {"modalities": ",".join(dataset.modality_names)}
    if dataset.provenance.scenario:
        manifest["scenario"] = dataset.provenance.scenario
    if dataset.provenance.seed is not None:
        manifest["seed"] = str(dataset.provenance.seed)
    written.append(ReportRepository.write_kv(manifest, out_dir / MANIFEST_FILE))
    return written


def fit_zscore(block: ModalityBlock, indices):
    """Per-feature mean and std over the present samples among ``indices``.

    Constant features get std 0, which :func:`apply_zscore` maps to zeros.
    """
    indices = np.asarray(indices, dtype=np.int64)
    rows = indices[block.present[indices]]
    if rows.size == 0:
        logger.warning("modality '%s': no present training samples, features left unscaled", block.name)
        return np.zeros(block.data.shape[1:]), np.ones(block.data.shape[1:])
    values = block.data[rows].astype(np.float64)
    mean = values.mean(axis=0)
    std = values.std(axis=0)
    constant = ~(values.max(axis=0) > values.min(axis=0))
    std[constant] = 0.0
    if constant.any():
        names = block.feature_names or []
        flat = np.flatnonzero(constant.any(axis=-1))
        shown = [names[i] if i < len(names) else str(i) for i in flat[:5]]
        logger.warning(
            "modality '%s': %d constant feature(s) %s z-score to zero", block.name, int(constant.sum()), shown
        )
    return mean, std


def apply_zscore(block: ModalityBlock, mean, std):
    std = np.asarray(std, dtype=np.float64)
    safe = np.where(std > 0, std, 1.0)
    scaled = np.where(std > 0, (block.data.astype(np.float64) - mean) / safe, 0.0)
    scaled[~block.present] = 0.0
    return replace(block, data=scaled.astype(np.float32))


def normalize(dataset: MultiModalDataset, train_indices, stats=None):
    """Z-score every tabular modality on training statistics.

    Returns the normalized dataset and ``{modality: (mean, std)}``. Pass
    ``stats`` to reuse statistics fitted earlier.
    """
    stats = dict(stats or {})
    blocks = []
    for block in dataset.modalities:
        if block.kind is not ModalityKind.TABULAR:
            blocks.append(block)
            continue
        if block.name not in stats:
            stats[block.name] = fit_zscore(block, train_indices)
        blocks.append(apply_zscore(block, *stats[block.name]))
    return replace(dataset, modalities=blocks), stats


def modality_specs(dataset: MultiModalDataset):
    return [ModalitySpec(b.name, b.kind, b.tokens, b.channels) for b in dataset.modalities]


def build_batches(dataset: MultiModalDataset, indices=None, model=None):
    """One :class:`ModalityBatch` per modality, ids matched to ``model`` when given."""
    if indices is None:
        indices = np.arange(dataset.n)
    indices = np.asarray(indices, dtype=np.int64)
    batches = []
    for position, block in enumerate(dataset.modalities, start=1):
        modality_id = model.modality_id(block.name) if model is not None else position
        token_mask = block.token_mask[indices]
        batches.append(
            ModalityBatch(
                modality_id=modality_id,
                data=Tensor(block.data[indices]),
                present=block.present[indices],
                token_mask=None if token_mask.all() else token_mask,
            )
        )
    return batches
