import logging
import re
from pathlib import Path

import numpy as np
import pandas as pd

from healnet.models.dataset import ModalityBlock, ModalityKind
from healnet.utils.errors import DataError, ParseError

logger = logging.getLogger(__name__)

ID_COLUMN = "id"
FLOAT_FORMAT = "%.9g"
_PANDAS_LINE = re.compile(r"line (\d+)")


def read_text_table(path):
    """Every cell as a string; blank cells stay ``""``, short rows show up as NaN."""
    path = Path(path)
    try:
        return pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except FileNotFoundError:
        raise DataError(f"no such file: {path}") from None
    except pd.errors.EmptyDataError:
        raise ParseError("file is empty", path=path, line=1) from None
    except pd.errors.ParserError as e:
        match = _PANDAS_LINE.search(str(e))
        line = int(match.group(1)) if match else None
        raise ParseError("ragged row: too many fields", path=path, line=line) from None
    except UnicodeDecodeError as e:
        raise ParseError(f"not valid UTF-8 ({e.reason})", path=path) from None


def check_rows(frame, path):
    """Reject short rows and duplicate ids. Line numbers count the header as line 1."""
    short = frame.isna().any(axis=1).to_numpy()
    if short.any():
        row = int(np.flatnonzero(short)[0])
        raise ParseError("ragged row: too few fields", path=path, line=row + 2)
    ids = frame.iloc[:, 0]
    duplicated = ids.duplicated().to_numpy()
    if duplicated.any():
        row = int(np.flatnonzero(duplicated)[0])
        raise ParseError(f"duplicate sample id '{ids.iloc[row]}'", path=path, line=row + 2)
    blank = (ids == "").to_numpy()
    if blank.any():
        raise ParseError("empty sample id", path=path, line=int(np.flatnonzero(blank)[0]) + 2)


def parse_numeric(raw, path):
    """Numeric view of a string frame; ``""`` becomes NaN, anything else unparsable is an error."""
    numeric = raw.apply(pd.to_numeric, errors="coerce")
    bad = (numeric.isna() | ~np.isfinite(numeric)) & (raw != "")
    if bad.to_numpy().any():
        row, col = np.argwhere(bad.to_numpy())[0]
        raise ParseError(
            f"non-numeric value '{raw.iat[row, col]}' in column '{raw.columns[col]}'",
            path=path,
            line=int(row) + 2,
        )
    return numeric


class TabularRepository:
    @staticmethod
    def load(path, name=None):
        """One row per sample, first column the sample id, one token per feature column.

        A row with any blank cell marks the modality absent for that sample.
        """
        path = Path(path)
        frame = read_text_table(path)
        if frame.shape[1] < 2:
            raise ParseError("need an id column and at least one feature column", path=path, line=1)
        check_rows(frame, path)

        numeric = parse_numeric(frame.iloc[:, 1:], path)
        present = ~numeric.isna().any(axis=1).to_numpy()
        values = numeric.fillna(0.0).to_numpy(dtype=np.float64)
        block = ModalityBlock(
            name=name or path.stem,
            kind=ModalityKind.TABULAR,
            ids=frame.iloc[:, 0].tolist(),
            data=values[:, :, None],
            present=present,
            feature_names=list(frame.columns[1:]),
        )
        if not present.all():
            logger.info("%s: %d of %d sample(s) have blank cells, marked absent", path.name, int((~present).sum()), block.n)
        return block

    @staticmethod
    def save(block: ModalityBlock, path):
        if block.channels != 1:
            raise DataError(f"modality '{block.name}' has {block.channels} channels; tabular files hold one")
        columns = block.feature_names or [f"f{i}" for i in range(block.tokens)]
        frame = pd.DataFrame(block.data[:, :, 0].astype(np.float64), columns=columns)
        frame.loc[~block.present, :] = np.nan
        frame.insert(0, ID_COLUMN, block.ids)
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n", na_rep="")
        return path
