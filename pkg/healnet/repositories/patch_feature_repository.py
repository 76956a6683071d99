"""HPF1 patch-feature container.

Layout, little-endian: ``b"HPF1"``, u32 n, u32 t_max, u32 d_x, then per
sample a u32 patch count ``t_i`` followed by ``t_i * d_x`` f32 values.
Sample ids live next to the file in ``<stem>.ids``, one UTF-8 id per line.
"""
from pathlib import Path

import numpy as np

from healnet.models.dataset import ModalityBlock, ModalityKind
from healnet.utils.errors import DataError, FormatError

MAGIC = b"HPF1"
U32 = np.dtype("<u4")
F32 = np.dtype("<f4")
HEADER_BYTES = len(MAGIC) + 3 * U32.itemsize


def ids_path(path):
    path = Path(path)
    return path.with_suffix(".ids")


def decode(payload, path=None):
    """``(data [n, t_max, d_x], token_mask [n, t_max])`` from HPF1 bytes."""
    if len(payload) < len(MAGIC) or payload[: len(MAGIC)] != MAGIC:
        raise FormatError(f"bad magic {payload[:4]!r}, expected {MAGIC!r}", path=path, offset=0)
    if len(payload) < HEADER_BYTES:
        raise FormatError("truncated header", path=path, offset=len(payload))
    n, t_max, d_x = (int(v) for v in np.frombuffer(payload, dtype=U32, count=3, offset=len(MAGIC)))
    if d_x < 1:
        raise FormatError("feature dimension must be >= 1", path=path, offset=12)
    if HEADER_BYTES + n * U32.itemsize > len(payload):
        raise FormatError(f"header claims {n} samples, file too short", path=path, offset=len(payload))

    data = np.zeros((n, max(t_max, 1), d_x), dtype=np.float32)
    mask = np.zeros((n, max(t_max, 1)), dtype=bool)
    offset = HEADER_BYTES
    for i in range(n):
        if offset + U32.itemsize > len(payload):
            raise FormatError(f"truncated before patch count of sample {i}", path=path, offset=offset)
        t_i = int(np.frombuffer(payload, dtype=U32, count=1, offset=offset)[0])
        if t_i > t_max:
            raise FormatError(f"sample {i} has {t_i} patches, header allows {t_max}", path=path, offset=offset)
        offset += U32.itemsize
        size = t_i * d_x * F32.itemsize
        if offset + size > len(payload):
            raise FormatError(f"truncated payload for sample {i}", path=path, offset=len(payload))
        data[i, :t_i] = np.frombuffer(payload, dtype=F32, count=t_i * d_x, offset=offset).reshape(t_i, d_x)
        mask[i, :t_i] = True
        offset += size
    if offset != len(payload):
        raise FormatError(f"{len(payload) - offset} trailing byte(s)", path=path, offset=offset)
    return data, mask


def encode(data, token_mask, present):
    """Absent samples are written with ``t_i = 0``. Real tokens must come first."""
    data = np.asarray(data, dtype=np.float32)
    n, t_max, d_x = data.shape
    chunks = [MAGIC, np.array([n, t_max, d_x], dtype=U32).tobytes()]
    for i in range(n):
        t_i = int(token_mask[i].sum()) if present[i] else 0
        if t_i and not token_mask[i, :t_i].all():
            raise DataError(f"sample {i}: padding must follow the real patches")
        chunks.append(np.array([t_i], dtype=U32).tobytes())
        chunks.append(data[i, :t_i].astype(F32).tobytes())
    return b"".join(chunks)


class PatchFeatureRepository:
    @staticmethod
    def load(path, name=None, ids=None):
        """Patch features with their padding mask; ``t_i = 0`` marks the sample absent.

        ``ids`` falls back to the ``.ids`` file next to ``path``.
        """
        path = Path(path)
        try:
            payload = path.read_bytes()
        except FileNotFoundError:
            raise DataError(f"no such file: {path}") from None
        data, mask = decode(payload, path=path)

        if ids is None:
            sidecar = ids_path(path)
            if not sidecar.exists():
                raise DataError(f"{path}: no sample ids given and no {sidecar.name} next to it")
            ids = sidecar.read_text(encoding="utf-8").splitlines()
        ids = list(ids)
        if len(ids) != data.shape[0]:
            raise DataError(f"{path}: {len(ids)} sample ids for {data.shape[0]} samples")
        if len(set(ids)) != len(ids):
            raise DataError(f"{path}: duplicate sample ids")

        present = mask.any(axis=1)
        # keep at least one unmasked slot per row so softmax stays defined for absent samples
        mask[~present, 0] = True
        return ModalityBlock(
            name=name or path.stem,
            kind=ModalityKind.PATCHES,
            ids=ids,
            data=data,
            present=present,
            token_mask=mask,
        )

    @staticmethod
    def save(block: ModalityBlock, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(encode(block.data, block.token_mask, block.present))
        ids_path(path).write_text("".join(f"{i}\n" for i in block.ids), encoding="utf-8")
        return path
