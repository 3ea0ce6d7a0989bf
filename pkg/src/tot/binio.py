"""Little-endian binary helpers shared by the dataset and checkpoint formats."""
from __future__ import annotations

import struct
import zlib

import numpy as np


class FormatError(ValueError):
    """A binary file is corrupt, truncated, or of an unsupported version."""


def pack_arrays(arrays: dict[str, np.ndarray]) -> bytes:
    """Named float64 tensor table: count, then (name, ndim, shape, data) per entry."""
    parts = [struct.pack("<I", len(arrays))]
    for name, arr in arrays.items():
        key = name.encode()
        arr = np.ascontiguousarray(arr, dtype="<f8")
        parts.append(struct.pack("<H", len(key)) + key)
        parts.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def unpack_arrays(buf: bytes, pos: int) -> tuple[dict[str, np.ndarray], int]:
    try:
        (count,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        out = {}
        for _ in range(count):
            (klen,) = struct.unpack_from("<H", buf, pos)
            pos += 2
            name = buf[pos:pos + klen].decode()
            pos += klen
            (ndim,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            shape = struct.unpack_from(f"<{ndim}I", buf, pos)
            pos += 4 * ndim
            count_f = int(np.prod(shape, dtype=np.int64))
            if pos + 8 * count_f > len(buf):
                raise FormatError(f"array {name!r} runs past end of payload")
            out[name] = np.frombuffer(buf, dtype="<f8", count=count_f, offset=pos).reshape(shape).astype(np.float64)
            pos += 8 * count_f
    except (struct.error, UnicodeDecodeError) as e:
        raise FormatError(f"malformed array table: {e}") from None
    return out, pos


def pack_blob(data: bytes) -> bytes:
    return struct.pack("<I", len(data)) + data


def unpack_blob(buf: bytes, pos: int) -> tuple[bytes, int]:
    try:
        (size,) = struct.unpack_from("<I", buf, pos)
    except struct.error as e:
        raise FormatError(f"malformed block: {e}") from None
    pos += 4
    if pos + size > len(buf):
        raise FormatError("block runs past end of payload")
    return buf[pos:pos + size], pos + size


def seal(body: bytes) -> bytes:
    """Append a CRC32 of the body."""
    return body + struct.pack("<I", zlib.crc32(body))


def unseal(buf: bytes, magic: bytes, min_size: int) -> bytes:
    """Verify magic and CRC32; return the body without the checksum."""
    if len(buf) < min_size + 4:
        raise FormatError("file too short")
    if buf[:len(magic)] != magic:
        raise FormatError(f"bad magic: expected {magic!r}")
    body, (crc,) = buf[:-4], struct.unpack("<I", buf[-4:])
    if zlib.crc32(body) != crc:
        raise FormatError("checksum mismatch: file is corrupt or truncated")
    return body
