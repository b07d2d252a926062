"""Self-describing binary checkpoints.

Layout: magic "BGCK", format version, UTF-8 config block, then each named
float64 block as (name, shape, row-major little-endian payload), in sorted
name order. Loading reproduces every array bit-exactly.
"""

from __future__ import annotations

import struct

import numpy as np

from ..errors import DataError
from .autograd import Tensor
from .model import ModelConfig, dump_config, load_config

_MAGIC = b"BGCK"
_VERSION = 1


def _pack_bytes(payload: bytes) -> bytes:
    return struct.pack("<I", len(payload)) + payload


def dump_checkpoint(params: dict[str, Tensor], config: ModelConfig) -> bytes:
    out = [_MAGIC, struct.pack("<I", _VERSION)]
    out.append(_pack_bytes(dump_config(config).encode("utf-8")))
    out.append(struct.pack("<I", len(params)))
    for name in sorted(params):
        data = np.ascontiguousarray(params[name].data, dtype="<f8")
        out.append(_pack_bytes(name.encode("utf-8")))
        out.append(struct.pack("<I", data.ndim))
        out.append(struct.pack(f"<{data.ndim}I", *data.shape))
        out.append(_pack_bytes(data.tobytes()))
    return b"".join(out)


class _Cursor:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise DataError("checkpoint truncated")
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def block(self) -> bytes:
        return self.take(self.u32())


def load_checkpoint(blob: bytes) -> tuple[dict[str, Tensor], ModelConfig]:
    cur = _Cursor(blob)
    if cur.take(4) != _MAGIC:
        raise DataError("not a checkpoint file")
    version = cur.u32()
    if version != _VERSION:
        raise DataError(f"unsupported checkpoint version {version}")
    config = load_config(cur.block().decode("utf-8"))
    n_params = cur.u32()
    params: dict[str, Tensor] = {}
    for _ in range(n_params):
        name = cur.block().decode("utf-8")
        ndim = cur.u32()
        shape = struct.unpack(f"<{ndim}I", cur.take(4 * ndim))
        data = np.frombuffer(cur.block(), dtype="<f8").reshape(shape).copy()
        # fixed sinusoidal tables are the only non-trainable blocks
        trainable = name not in ("pe", "pe_bar", "vq_pe", "vq_dec_pe")
        params[name] = Tensor(data, requires_grad=trainable)
    return params, config


def save_checkpoint_file(path: str, params: dict[str, Tensor],
                         config: ModelConfig) -> None:
    with open(path, "wb") as f:
        f.write(dump_checkpoint(params, config))


def load_checkpoint_file(path: str) -> tuple[dict[str, Tensor], ModelConfig]:
    with open(path, "rb") as f:
        return load_checkpoint(f.read())
