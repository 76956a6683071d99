"""Counter-based random streams.

Every stream is a Philox generator keyed by the run seed plus a tuple of
labels (site name, step, fold ...), so a draw never depends on how many
draws happened elsewhere.
"""
import zlib

import numpy as np


def _label_word(label):
    if isinstance(label, (int, np.integer)):
        return int(label) & 0xFFFFFFFF
    return zlib.crc32(str(label).encode("utf-8"))


def stream(seed, *labels):
    words = [int(seed) & 0xFFFFFFFF, (int(seed) >> 32) & 0xFFFFFFFF]
    words.extend(_label_word(label) for label in labels)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(words)))


def derive_seed(seed, *labels):
    return int(stream(seed, *labels).integers(0, 2**63 - 1))
