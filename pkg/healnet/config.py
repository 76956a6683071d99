import os
from pathlib import Path

from dotenv import load_dotenv  # type: ignore

load_dotenv()


class Config:
    LOG_LEVEL = os.getenv("HEALNET_LOG_LEVEL", "INFO")
    SEED = int(os.getenv("HEALNET_SEED", "0"))
    JOBS = int(os.getenv("HEALNET_JOBS", "1"))
    PRESET_DIR = os.getenv("HEALNET_PRESET_DIR", str(Path(__file__).resolve().parent.parent / "configs"))
