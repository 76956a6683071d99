from pathlib import Path

import numpy as np
import pandas as pd
from dotenv import dotenv_values

from healnet.utils.errors import ConfigError, ContractError, DataError


class ReportRepository:
    @staticmethod
    def write_kv(mapping, path):
        """One ``key=value`` per line, in insertion order."""
        lines = []
        for key, value in mapping.items():
            text = str(value)
            if "\n" in text:
                raise ContractError(f"value of '{key}' spans lines")
            lines.append(f"{key}={text}\n")
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("".join(lines), encoding="utf-8")
        return path

    @staticmethod
    def read_kv(path):
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"no such config file: {path}")
        values = dotenv_values(path, interpolate=False, encoding="utf-8")
        return {key: "" if value is None else value for key, value in values.items()}

    @staticmethod
    def write_folds(rows, path):
        """``rows`` is a list of flat dicts, one per fold."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        pd.DataFrame(rows).to_csv(path, index=False, lineterminator="\n", float_format="%.17g", na_rep="")
        return path

    @staticmethod
    def read_folds(path):
        path = Path(path)
        if not path.is_file():
            raise DataError(f"no such fold table: {path}")
        return pd.read_csv(path)

    @staticmethod
    def write_attention_csv(weights, path):
        frame = pd.DataFrame({"token": np.arange(len(weights)), "weight": np.asarray(weights, dtype=np.float64)})
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(path, index=False, lineterminator="\n", float_format="%.9g")
        return path

    @staticmethod
    def write_pgm(weights, grid, path):
        """Binary P5 grayscale; the heaviest token is white."""
        rows, cols = grid
        weights = np.asarray(weights, dtype=np.float64)
        if rows * cols != weights.size:
            raise ConfigError(f"token grid {rows}x{cols} does not cover {weights.size} tokens")
        peak = weights.max() if weights.size else 0.0
        scaled = weights / peak if peak > 0 else np.zeros_like(weights)
        pixels = np.rint(scaled * 255).clip(0, 255).astype(np.uint8).reshape(rows, cols)
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(f"P5\n{cols} {rows}\n255\n".encode("ascii") + pixels.tobytes())
        return path
