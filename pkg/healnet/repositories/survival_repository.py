from pathlib import Path

import numpy as np
import pandas as pd

from healnet.models.survival_record import SurvivalRecord
from healnet.repositories.tabular_repository import check_rows, parse_numeric, read_text_table
from healnet.utils.errors import ParseError

COLUMNS = ["id", "months", "censored"]


class SurvivalRepository:
    @staticmethod
    def load(path):
        """``id,months,censored`` rows; ``censored`` is 1 when the event was not observed."""
        path = Path(path)
        frame = read_text_table(path)
        if list(frame.columns) != COLUMNS:
            raise ParseError(f"header must be {','.join(COLUMNS)}, got {','.join(frame.columns)}", path=path, line=1)
        check_rows(frame, path)
        numeric = parse_numeric(frame[COLUMNS[1:]], path)
        blank = numeric.isna().any(axis=1).to_numpy()
        if blank.any():
            raise ParseError("missing survival value", path=path, line=int(np.flatnonzero(blank)[0]) + 2)

        records = []
        for row, (sample_id, months, censored) in enumerate(
            zip(frame["id"], numeric["months"], numeric["censored"])
        ):
            if months < 0 or censored not in (0, 1):
                raise ParseError(
                    f"sample '{sample_id}': months must be >= 0 and censored 0 or 1", path=path, line=row + 2
                )
            records.append(SurvivalRecord(sample_id, float(months), int(censored)))
        return records

    @staticmethod
    def save(records, path):
        frame = pd.DataFrame(
            {
                "id": [r.sample_id for r in records],
                "months": [r.months for r in records],
                "censored": [int(r.censored) for r in records],
            }
        )
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
        return path
