"""SALN binary checkpoint container.

Layout (all integers little-endian u32)::

    b"SALN" | version
    repeated until EOF:
        name length | name (UTF-8) | ndim | dim_0 .. dim_{ndim-1} | float64 data ('<f8', C order)
"""
import logging
import os
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from structalign.exceptions import CheckpointFormatError

logger = logging.getLogger(__name__)

MAGIC = b"SALN"
VERSION = 1
_U32 = struct.Struct("<I")


def encode_checkpoint(params: Mapping[str, np.ndarray]) -> bytes:
    chunks = [MAGIC, _U32.pack(VERSION)]
    for name in sorted(params):
        value = np.ascontiguousarray(params[name], dtype="<f8")
        encoded_name = name.encode("utf-8")
        chunks.append(_U32.pack(len(encoded_name)))
        chunks.append(encoded_name)
        chunks.append(_U32.pack(value.ndim))
        chunks.extend(_U32.pack(dim) for dim in value.shape)
        chunks.append(value.tobytes(order="C"))
    return b"".join(chunks)


def decode_checkpoint(payload: bytes) -> dict[str, np.ndarray]:
    if payload[:4] != MAGIC:
        raise CheckpointFormatError("missing SALN magic bytes")
    offset = 4

    def read_u32() -> int:
        nonlocal offset
        if offset + 4 > len(payload):
            raise CheckpointFormatError(f"truncated checkpoint at byte {offset}")
        (value,) = _U32.unpack_from(payload, offset)
        offset += 4
        return value

    version = read_u32()
    if version != VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version {version}")

    params: dict[str, np.ndarray] = {}
    while offset < len(payload):
        name_len = read_u32()
        if offset + name_len > len(payload):
            raise CheckpointFormatError(f"truncated parameter name at byte {offset}")
        name = payload[offset:offset + name_len].decode("utf-8")
        offset += name_len
        shape = tuple(read_u32() for _ in range(read_u32()))
        nbytes = 8 * int(np.prod(shape, dtype=np.int64))
        if offset + nbytes > len(payload):
            raise CheckpointFormatError(f"truncated data for parameter {name!r}")
        params[name] = np.frombuffer(payload, dtype="<f8", count=nbytes // 8, offset=offset).reshape(shape).copy()
        offset += nbytes
    return params


def save_checkpoint(path: str | os.PathLike, params: Mapping[str, np.ndarray]) -> Path:
    target = Path(path)
    target.write_bytes(encode_checkpoint(params))
    logger.info(f"Wrote checkpoint with {len(params)} parameter blocks to {target}")
    return target


def load_checkpoint(path: str | os.PathLike) -> dict[str, np.ndarray]:
    try:
        payload = Path(path).read_bytes()
    except OSError as e:
        raise CheckpointFormatError(f"Failed to read checkpoint {path}: {e}")
    return decode_checkpoint(payload)
