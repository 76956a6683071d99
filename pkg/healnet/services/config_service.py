import logging
from pathlib import Path

from healnet.config import Config
from healnet.repositories import ReportRepository
from healnet.schemas import RunConfig
from healnet.utils.errors import ConfigError

logger = logging.getLogger(__name__)

PRESET_SUFFIX = ".kv"


def resolve_config_path(name_or_path):
    """A file path, or the name of a preset in ``Config.PRESET_DIR``."""
    path = Path(name_or_path)
    if path.is_file():
        return path
    preset = Path(Config.PRESET_DIR) / f"{name_or_path}{PRESET_SUFFIX}"
    if preset.is_file():
        return preset
    raise ConfigError(f"no config file or preset named '{name_or_path}'", [f"presets live in {Config.PRESET_DIR}"])


def parse_overrides(pairs):
    overrides = {}
    problems = []
    for pair in pairs or ():
        key, sep, value = pair.partition("=")
        if not sep or not key.strip():
            problems.append(f"override '{pair}' must look like key=value")
            continue
        overrides[key.strip()] = value.strip()
    if problems:
        raise ConfigError("invalid --set override", problems)
    return overrides


def load_run_config(config=None, overrides=(), **fields):
    """File values, then ``--set`` overrides, then explicit ``fields`` (``None`` values skipped).

    The seed falls back to ``HEALNET_SEED`` when nothing sets it.
    """
    values = {}
    if config:
        path = resolve_config_path(config)
        values.update(ReportRepository.read_kv(path))
        logger.debug("config loaded from %s", path)
    values.update(parse_overrides(overrides))
    values.update({key: str(value) for key, value in fields.items() if value is not None})
    values.setdefault("seed", str(Config.SEED))
    return RunConfig.from_flat(values)
