"""HEAL checkpoint container.

Little-endian throughout::

    b"HEAL" u32 version
    u32 j, c_l, d_l, depth, heads, dims_per_head, k
    u32 use_snn, head (0 flatten, 1 mean_pool), snn_hidden_mult, latent_trainable, fold
    u64 seed; f32 attn_dropout, ff_dropout
    j x (u16 len, utf-8 name, u8 kind (0 tabular, 1 patches), u32 d_x, u32 t_m)
    u32 blob count
    blob x (u16 len, utf-8 name, u8 dtype (0 f32, 1 f64), u8 ndim, ndim x u32, values)

Parameters are f32 blobs; ``meta.*`` blobs carry bin edges and z-score
statistics, in f64 so evaluation reproduces training exactly.
"""
import io
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from healnet.models.dataset import ModalityKind
from healnet.models.fusion import HealNetModel, ModalitySpec
from healnet.schemas import HeadMode, ModelConfig
from healnet.utils.errors import DataError, FormatError

MAGIC = b"HEAL"
VERSION = 1
META_PREFIX = "meta."
NO_FOLD = 0xFFFFFFFF

_KINDS = [ModalityKind.TABULAR, ModalityKind.PATCHES]
_HEADS = [HeadMode.FLATTEN, HeadMode.MEAN_POOL]
_DTYPES = [np.dtype("<f4"), np.dtype("<f8")]


@dataclass
class Checkpoint:
    model: HealNetModel
    meta: dict = field(default_factory=dict)
    fold: Optional[int] = None

    @property
    def seed(self):
        return self.model.seed

    @property
    def edges(self):
        return self.meta.get("edges")

    def norm_stats(self, modality):
        mean = self.meta.get(f"norm.{modality}.mean")
        std = self.meta.get(f"norm.{modality}.std")
        return None if mean is None else (mean, std)


def _write_name(out, name):
    raw = name.encode("utf-8")
    out.write(struct.pack("<H", len(raw)))
    out.write(raw)


def _write_blob(out, name, values, dtype):
    values = np.asarray(values)
    _write_name(out, name)
    out.write(struct.pack("<BB", _DTYPES.index(dtype), values.ndim))
    out.write(struct.pack(f"<{values.ndim}I", *values.shape))
    out.write(values.astype(dtype).tobytes())


def encode(checkpoint: Checkpoint):
    model = checkpoint.model
    config = model.config
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<I", VERSION))
    out.write(
        struct.pack(
            "<7I",
            len(model.modalities),
            config.latent_channels,
            config.latent_dim,
            config.depth,
            config.heads,
            config.dims_per_head,
            model.num_bins,
        )
    )
    out.write(
        struct.pack(
            "<5I",
            int(config.use_snn),
            _HEADS.index(config.head),
            config.snn_hidden_mult,
            int(config.latent_trainable),
            NO_FOLD if checkpoint.fold is None else checkpoint.fold,
        )
    )
    out.write(struct.pack("<Q2f", model.seed, config.attn_dropout, config.ff_dropout))
    for spec in model.modalities:
        _write_name(out, spec.name)
        out.write(struct.pack("<BII", _KINDS.index(spec.kind), spec.channels, spec.tokens))

    state = model.state_dict()
    out.write(struct.pack("<I", len(state) + len(checkpoint.meta)))
    for name, values in state.items():
        _write_blob(out, name, values, _DTYPES[0])
    for name, values in checkpoint.meta.items():
        _write_blob(out, META_PREFIX + name, values, _DTYPES[1])
    return out.getvalue()


class _Reader:
    def __init__(self, payload, path):
        self.payload = payload
        self.path = path
        self.offset = 0

    def take(self, size, what):
        if self.offset + size > len(self.payload):
            raise FormatError(f"truncated {what}", path=self.path, offset=self.offset)
        chunk = self.payload[self.offset : self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    def name(self, what):
        (length,) = self.unpack("<H", what)
        start = self.offset
        try:
            return self.take(length, what).decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError(f"{what} is not UTF-8", path=self.path, offset=start) from None

    def code(self, table, value, what):
        if value >= len(table):
            raise FormatError(f"unknown {what} code {value}", path=self.path, offset=self.offset)
        return table[value]


def decode(payload, path=None):
    reader = _Reader(payload, path)
    if reader.take(4, "magic") != MAGIC:
        raise FormatError(f"bad magic, expected {MAGIC!r}", path=path, offset=0)
    (version,) = reader.unpack("<I", "version")
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", path=path, offset=4)

    j, c_l, d_l, depth, heads, dph, k = reader.unpack("<7I", "config block")
    use_snn, head, mult, trainable, fold = reader.unpack("<5I", "config block")
    seed, attn_dropout, ff_dropout = reader.unpack("<Q2f", "config block")
    specs = []
    for _ in range(j):
        name = reader.name("modality name")
        kind, d_x, t_m = reader.unpack("<BII", "modality entry")
        specs.append(ModalitySpec(name, reader.code(_KINDS, kind, "modality kind"), t_m, d_x))

    config = ModelConfig(
        latent_channels=c_l,
        latent_dim=d_l,
        depth=depth,
        heads=heads,
        dims_per_head=dph,
        attn_dropout=float(np.float32(attn_dropout)),
        ff_dropout=float(np.float32(ff_dropout)),
        snn_hidden_mult=mult,
        latent_trainable=bool(trainable),
        head=reader.code(_HEADS, head, "head mode"),
        use_snn=bool(use_snn),
    )

    (count,) = reader.unpack("<I", "blob count")
    state, meta = {}, {}
    for _ in range(count):
        name = reader.name("blob name")
        dtype_code, ndim = reader.unpack("<BB", "blob header")
        dtype = reader.code(_DTYPES, dtype_code, "blob dtype")
        shape = reader.unpack(f"<{ndim}I", "blob shape")
        size = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        values = np.frombuffer(reader.take(size, f"blob '{name}'"), dtype=dtype).reshape(shape).copy()
        if name.startswith(META_PREFIX):
            meta[name[len(META_PREFIX) :]] = values.astype(np.float64)
        else:
            state[name] = values
    if reader.offset != len(payload):
        raise FormatError("trailing bytes after last blob", path=path, offset=reader.offset)

    model = HealNetModel(config, specs, num_bins=k, seed=seed)
    model.load_state_dict(state)
    return Checkpoint(model=model, meta=meta, fold=None if fold == NO_FOLD else fold)


class CheckpointRepository:
    @staticmethod
    def save(checkpoint: Checkpoint, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(encode(checkpoint))
        return path

    @staticmethod
    def load(path):
        path = Path(path)
        try:
            payload = path.read_bytes()
        except FileNotFoundError:
            raise DataError(f"no such checkpoint: {path}") from None
        return decode(payload, path=path)
