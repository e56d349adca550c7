"""Binary model snapshots.

Layout::

    DPMPN1\\n
    <n_entities> <n_relations> <n_dims> <n_dims_att>\\n
    repeated:  <name>\\n  <dim> <dim> ...\\n  <raw little-endian float32 bytes>
    <crc32 of everything above, 8 hex digits>\\n
"""

from __future__ import annotations

import zlib
from collections import OrderedDict
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .params import ModelParams

MAGIC = b"DPMPN1\n"
_F32 = np.dtype("<f4")


class CheckpointError(ValueError):
    pass


class DimensionError(CheckpointError):
    pass


def encode(params: ModelParams) -> bytes:
    parts = [MAGIC, f"{params.n_entities} {params.n_relations} {params.n_dims} {params.n_dims_att}\n".encode()]
    for name, t in params.items():
        arr = np.ascontiguousarray(t.data, dtype=_F32)
        parts.append(f"{name}\n".encode())
        parts.append((" ".join(str(d) for d in arr.shape) + "\n").encode())
        parts.append(arr.tobytes())
    payload = b"".join(parts)
    return payload + f"{zlib.crc32(payload) & 0xFFFFFFFF:08x}\n".encode()


def save(params: ModelParams, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode(params))
    tmp.replace(path)
    return path


def _readline(buf: bytes, pos: int) -> tuple[str, int]:
    end = buf.find(b"\n", pos)
    if end < 0:
        raise CheckpointError("unexpected end of checkpoint")
    return buf[pos:end].decode("ascii"), end + 1


def decode(buf: bytes, expect: tuple[int, int, int, int] | None = None) -> ModelParams:
    """Parse bytes from :func:`encode`; ``expect`` = (n_entities,
    n_relations, n_dims, n_dims_att) that the caller's config requires."""
    if not buf.startswith(MAGIC):
        raise CheckpointError("bad magic: not a DPMPN1 checkpoint")
    # the checksum line is the last 9 bytes; verify before parsing anything else
    if len(buf) < len(MAGIC) + 9 or not buf.endswith(b"\n"):
        raise CheckpointError("checksum mismatch: checkpoint truncated")
    payload, tail = buf[:-9], buf[-9:-1]
    try:
        stored = int(tail.decode("ascii"), 16)
    except (UnicodeDecodeError, ValueError):
        raise CheckpointError("checksum mismatch: checkpoint truncated or corrupt") from None
    if stored != zlib.crc32(payload) & 0xFFFFFFFF:
        raise CheckpointError("checksum mismatch: checkpoint truncated or corrupt")

    header, pos = _readline(payload, len(MAGIC))
    try:
        dims = tuple(int(x) for x in header.split())
    except ValueError:
        raise CheckpointError(f"bad header line {header!r}") from None
    if len(dims) != 4:
        raise CheckpointError(f"bad header line {header!r}")
    if expect is not None:
        labels = ("n_entities", "n_relations", "n_dims", "n_dims_att")
        for label, got, want in zip(labels, dims, expect):
            if got != want:
                raise DimensionError(f"{label} mismatch: checkpoint has {got}, config expects {want}")

    tensors: OrderedDict[str, Tensor] = OrderedDict()
    while pos < len(payload):
        name, pos = _readline(payload, pos)
        shape_line, pos = _readline(payload, pos)
        shape = tuple(int(x) for x in shape_line.split())
        n = int(np.prod(shape, dtype=np.int64)) * _F32.itemsize
        if pos + n > len(payload):
            raise CheckpointError(f"block {name!r} runs past end of payload")
        arr = np.frombuffer(payload, dtype=_F32, count=n // _F32.itemsize, offset=pos).reshape(shape)
        pos += n
        tensors[name] = Tensor(arr.astype(np.float32), requires_grad=True, name=name)
    return ModelParams(*dims, tensors=tensors)


def load(path, expect: tuple[int, int, int, int] | None = None) -> ModelParams:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"{path}: no such checkpoint")
    return decode(path.read_bytes(), expect)
