"""ADNZ model files.

Layout (little-endian)::

    b"ADNZ" | u8 version | u32 n | n bytes UTF-8 JSON topology
    u32 tensor count
    per tensor: u16 n | name | u8 ndim | ndim * u32 dims | float32 data
"""

from __future__ import annotations

import json
import struct

import numpy as np

from ..tensor import Tensor
from .genome import Genome
from .network import NetworkInstance

MAGIC = b"ADNZ"
VERSION = 1


class ModelFileError(ValueError):
    pass


def model_bytes(net: NetworkInstance) -> bytes:
    topo = {
        "genome": net.genome.to_dict(),
        "n_bins": net.n_bins,
        "enc_widths": list(map(int, net.enc_widths)),
        "hidden": int(net.hidden),
        "dec_widths": list(map(int, net.dec_widths)),
    }
    meta = json.dumps(topo, sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<B", VERSION), struct.pack("<I", len(meta)), meta,
             struct.pack("<I", len(net.params))]
    for name in sorted(net.params):
        arr = np.ascontiguousarray(net.params[name].data, dtype="<f4")
        enc = name.encode()
        parts.append(struct.pack("<H", len(enc)) + enc)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def save_model(path, net: NetworkInstance) -> None:
    with open(path, "wb") as fh:
        fh.write(model_bytes(net))


def _take(buf, pos, n, what):
    if pos + n > len(buf):
        raise ModelFileError(f"file truncated while reading {what}")
    return buf[pos:pos + n], pos + n


def parse_model(buf: bytes) -> NetworkInstance:
    head, pos = _take(buf, 0, 5, "header")
    if head[:4] != MAGIC:
        raise ModelFileError(f"bad magic {head[:4]!r}, expected {MAGIC!r}")
    if head[4] != VERSION:
        raise ModelFileError(f"unsupported model format version {head[4]}")
    raw, pos = _take(buf, pos, 4, "topology length")
    (n,) = struct.unpack("<I", raw)
    meta, pos = _take(buf, pos, n, "topology")
    topo = json.loads(meta.decode())
    raw, pos = _take(buf, pos, 4, "tensor count")
    (count,) = struct.unpack("<I", raw)
    params = {}
    for _ in range(count):
        raw, pos = _take(buf, pos, 2, "tensor name length")
        (n,) = struct.unpack("<H", raw)
        name, pos = _take(buf, pos, n, "tensor name")
        raw, pos = _take(buf, pos, 1, "tensor rank")
        ndim = raw[0]
        raw, pos = _take(buf, pos, 4 * ndim, "tensor shape")
        shape = struct.unpack(f"<{ndim}I", raw)
        size = int(np.prod(shape)) if ndim else 1
        raw, pos = _take(buf, pos, 4 * size, f"tensor {name.decode()!r}")
        data = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float64)
        params[name.decode()] = Tensor(data)
    if pos != len(buf):
        raise ModelFileError(f"{len(buf) - pos} trailing bytes after last tensor")
    return NetworkInstance(Genome.from_dict(topo["genome"]), topo["n_bins"],
                           topo["enc_widths"], topo["hidden"], topo["dec_widths"], params)


def load_model(path) -> NetworkInstance:
    with open(path, "rb") as fh:
        return parse_model(fh.read())
