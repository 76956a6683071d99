from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional

import numpy as np

from healnet.models.survival_record import record_arrays
from healnet.utils.errors import ContractError, DataError


class ModalityKind(str, Enum):
    TABULAR = "tabular"
    PATCHES = "patches"


@dataclass
class ModalityBlock:
    """One modality, ``data`` shaped ``[n, t, d_x]``.

    Absence is carried by ``present`` only; the values of absent samples
    are never read. ``token_mask`` marks real (unpadded) tokens.
    """

    name: str
    kind: ModalityKind
    ids: list
    data: np.ndarray
    present: np.ndarray
    token_mask: Optional[np.ndarray] = None
    feature_names: Optional[list] = None

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        self.present = np.asarray(self.present, dtype=bool)
        if self.data.ndim != 3 or min(self.data.shape[1:]) < 1:
            raise ContractError(f"modality '{self.name}': data must be [n, t>=1, d_x>=1], got {self.data.shape}")
        if len(self.ids) != self.data.shape[0] or self.present.shape != (self.data.shape[0],):
            raise ContractError(f"modality '{self.name}': ids, data and presence mask disagree on n")
        if self.token_mask is None:
            self.token_mask = np.ones(self.data.shape[:2], dtype=bool)
        self.token_mask = np.asarray(self.token_mask, dtype=bool)
        if self.token_mask.shape != self.data.shape[:2]:
            raise ContractError(f"modality '{self.name}': token mask shape {self.token_mask.shape} != {self.data.shape[:2]}")

    @property
    def n(self):
        return self.data.shape[0]

    @property
    def tokens(self):
        return self.data.shape[1]

    @property
    def channels(self):
        return self.data.shape[2]

    def take(self, indices):
        indices = np.asarray(indices, dtype=np.int64)
        return replace(
            self,
            ids=[self.ids[i] for i in indices],
            data=self.data[indices],
            present=self.present[indices],
            token_mask=self.token_mask[indices],
        )

    def with_present(self, present):
        return replace(self, present=np.asarray(present, dtype=bool))

    def __repr__(self):
        return f"<ModalityBlock {self.name} {self.kind.value} n={self.n} t={self.tokens} d_x={self.channels}>"


@dataclass(frozen=True)
class Provenance:
    source: str  # "loaded" or "synthetic"
    scenario: Optional[str] = None
    seed: Optional[int] = None
    location: Optional[str] = None


@dataclass
class MultiModalDataset:
    sample_ids: list
    modalities: list
    records: list
    provenance: Provenance = field(default_factory=lambda: Provenance("loaded"))

    def __post_init__(self):
        n = len(self.sample_ids)
        if len(self.records) != n:
            raise ContractError(f"{len(self.records)} survival records for {n} samples")
        for block in self.modalities:
            if block.n != n or list(block.ids) != list(self.sample_ids):
                raise ContractError(f"modality '{block.name}' is not aligned with the sample ids")
        names = [b.name for b in self.modalities]
        if len(set(names)) != len(names):
            raise ContractError(f"duplicate modality names {names}")

    @property
    def n(self):
        return len(self.sample_ids)

    @property
    def modality_names(self):
        return [b.name for b in self.modalities]

    def modality(self, name):
        for block in self.modalities:
            if block.name == name:
                return block
        raise DataError(f"unknown modality '{name}', available: {self.modality_names}")

    def select(self, names):
        """View restricted to ``names`` (in the given order); empty selects all."""
        if not names:
            return self
        return replace(self, modalities=[self.modality(name) for name in names])

    def take(self, indices):
        indices = np.asarray(indices, dtype=np.int64)
        return replace(
            self,
            sample_ids=[self.sample_ids[i] for i in indices],
            modalities=[b.take(indices) for b in self.modalities],
            records=[self.records[i] for i in indices],
        )

    def index_of(self, sample_id):
        try:
            return self.sample_ids.index(sample_id)
        except ValueError:
            raise DataError(f"sample '{sample_id}' not in dataset") from None

    def survival_arrays(self):
        return record_arrays(self.records)

    def __repr__(self):
        return f"<MultiModalDataset n={self.n} modalities={self.modality_names} source={self.provenance.source}>"
