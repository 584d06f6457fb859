"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"DRIBOCKP"                 8-byte magic
    u32 version                 currently 1
    u32 header_len
    header_len bytes            UTF-8 JSON: {"config": {...}, "groups": [...], "count": n}
    u32 crc32(header)
    n records:
        u16 name_len, name (UTF-8, "group/param")
        u8 ndim, ndim * u32 shape
        prod(shape) * f64 raw values ('<f8')
    u32 crc32(all record bytes)

Values are written verbatim so a save/load round trip is bit-exact.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .nn import ParamRegistry

MAGIC = b"DRIBOCKP"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save(path, groups: dict[str, ParamRegistry], config: dict | None = None) -> None:
    header = json.dumps(
        {"config": config or {}, "groups": list(groups),
         "count": sum(len(r) for r in groups.values())},
        sort_keys=True,
    ).encode()
    body = bytearray()
    for gname, reg in groups.items():
        for pname, node in reg.items():
            name = f"{gname}/{pname}".encode()
            # ascontiguousarray would promote 0-d values to shape (1,)
            arr = np.array(node.value, dtype="<f8", order="C")
            body += struct.pack("<H", len(name)) + name
            body += struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
            body += arr.tobytes()
    blob = (MAGIC + struct.pack("<II", VERSION, len(header)) + header
            + struct.pack("<I", zlib.crc32(header)) + bytes(body)
            + struct.pack("<I", zlib.crc32(bytes(body))))
    Path(path).write_bytes(blob)


def read(path) -> tuple[dict, dict[str, dict[str, np.ndarray]]]:
    """Return ``(config, {group: {param: array}})``."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if data[:8] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    if len(data) < 16:
        raise CheckpointError("truncated checkpoint")
    version, hlen = struct.unpack_from("<II", data, 8)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {VERSION})")
    pos = 16
    header = data[pos:pos + hlen]
    pos += hlen
    if len(header) != hlen or len(data) < pos + 4:
        raise CheckpointError("truncated checkpoint header")
    (crc,) = struct.unpack_from("<I", data, pos)
    pos += 4
    if zlib.crc32(header) != crc:
        raise CheckpointError("corrupted checkpoint header (crc mismatch)")
    try:
        meta = json.loads(header)
    except ValueError as exc:
        raise CheckpointError(f"corrupted checkpoint header: {exc}") from exc
    body = data[pos:-4]
    if zlib.crc32(body) != struct.unpack("<I", data[-4:])[0]:
        raise CheckpointError("corrupted checkpoint body (crc mismatch)")
    groups: dict[str, dict[str, np.ndarray]] = {g: {} for g in meta["groups"]}
    p = 0
    for _ in range(meta["count"]):
        (nlen,) = struct.unpack_from("<H", body, p)
        p += 2
        name = body[p:p + nlen].decode()
        p += nlen
        (ndim,) = struct.unpack_from("<B", body, p)
        p += 1
        shape = struct.unpack_from(f"<{ndim}I", body, p)
        p += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(body, dtype="<f8", count=size, offset=p).reshape(shape).astype(np.float64)
        p += 8 * size
        gname, pname = name.split("/", 1)
        groups[gname][pname] = arr
    if p != len(body):
        raise CheckpointError("trailing bytes in checkpoint body")
    return meta["config"], groups


def load_into(path, groups: dict[str, ParamRegistry]) -> dict:
    config, stored = read(path)
    for gname, reg in groups.items():
        if gname not in stored:
            raise CheckpointError(f"checkpoint has no group {gname!r}")
        reg.load_state(stored[gname])
    return config
