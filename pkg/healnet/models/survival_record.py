from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from healnet.utils.errors import ContractError


@dataclass
class SurvivalRecord:
    sample_id: str
    months: float
    censored: int  # 1 = outcome not observed
    bin: Optional[int] = None

    def __post_init__(self):
        if not self.months >= 0:
            raise ContractError(f"sample '{self.sample_id}': survival months must be >= 0, got {self.months}")
        if self.censored not in (0, 1):
            raise ContractError(f"sample '{self.sample_id}': censorship must be 0 or 1, got {self.censored}")

    def __repr__(self):
        return f"<SurvivalRecord {self.sample_id} {self.months:.2f}m c={self.censored} bin={self.bin}>"


@dataclass(frozen=True)
class BinEdges:
    """``k - 1`` strictly increasing cut points. Buckets are ``[low, high)``, the last is closed above."""

    edges: np.ndarray
    counts: np.ndarray = field(default=None)

    @property
    def k(self):
        return len(self.edges) + 1

    def assign(self, months):
        return np.searchsorted(self.edges, np.asarray(months, dtype=np.float64), side="right")


def record_arrays(records):
    """``(months, censored, bins)`` arrays; ``bins`` is None if any record is unlabeled."""
    months = np.array([r.months for r in records], dtype=np.float64)
    censored = np.array([r.censored for r in records], dtype=np.int64)
    if any(r.bin is None for r in records):
        return months, censored, None
    bins = np.array([r.bin for r in records], dtype=np.int64)
    return months, censored, bins
