"""Binary containers: tensors (.ten), checkpoints (.ckpt), caches (.cache).

All integers little-endian; all payloads 32-bit floats.  Round-trips are
bit-exact for float32 arrays.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC_TEN = b"TEN1"
MAGIC_CKPT = b"CKP1"
MAGIC_CACHE = b"CAC1"


class FileFormatError(Exception):
    """Malformed or truncated container."""


def tensor_bytes(arr):
    arr = np.ascontiguousarray(arr, dtype="<f4")
    head = MAGIC_TEN + struct.pack("<I", arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + arr.tobytes()


def tensor_from_bytes(buf, offset=0):
    """Parse one tensor record; returns (array, next_offset)."""
    if buf[offset:offset + 4] != MAGIC_TEN:
        raise FileFormatError(f"bad tensor magic at offset {offset}")
    offset += 4
    (ndim,) = struct.unpack_from("<I", buf, offset)
    offset += 4
    if ndim > 32:
        raise FileFormatError(f"implausible tensor rank {ndim}")
    dims = struct.unpack_from(f"<{ndim}I", buf, offset)
    offset += 4 * ndim
    count = 1
    for d in dims:
        count *= d
    end = offset + 4 * count
    if end > len(buf):
        raise FileFormatError("truncated tensor payload")
    arr = np.frombuffer(buf[offset:end], dtype="<f4").reshape(dims)
    return np.array(arr, copy=True), end


def write_tensor(path, arr):
    with open(path, "wb") as f:
        f.write(tensor_bytes(arr))


def read_tensor(path):
    with open(path, "rb") as f:
        buf = f.read()
    arr, end = tensor_from_bytes(buf)
    if end != len(buf):
        raise FileFormatError(f"{path}: trailing bytes after tensor record")
    return arr


def write_ckpt(path, entries):
    """Write named arrays; ``entries`` is a dict or (name, array) iterable."""
    items = list(entries.items()) if isinstance(entries, dict) else list(entries)
    with open(path, "wb") as f:
        f.write(MAGIC_CKPT + struct.pack("<I", len(items)))
        for name, arr in items:
            nb = name.encode("utf-8")
            if len(nb) > 0xFFFF:
                raise FileFormatError(f"entry name too long: {name[:40]}...")
            f.write(struct.pack("<H", len(nb)) + nb)
            f.write(tensor_bytes(arr))


def read_ckpt(path):
    """Read a checkpoint into an ordered name -> array dict."""
    with open(path, "rb") as f:
        buf = f.read()
    if buf[:4] != MAGIC_CKPT:
        raise FileFormatError(f"{path}: bad checkpoint magic")
    (count,) = struct.unpack_from("<I", buf, 4)
    offset = 8
    out = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", buf, offset)
        offset += 2
        name = buf[offset:offset + nlen].decode("utf-8")
        offset += nlen
        arr, offset = tensor_from_bytes(buf, offset)
        out[name] = arr
    if offset != len(buf):
        raise FileFormatError(f"{path}: trailing bytes after last entry")
    return out


def write_cache_file(path, entries):
    """Write (sample_id, loss, latent) triples."""
    entries = list(entries)
    with open(path, "wb") as f:
        f.write(MAGIC_CACHE + struct.pack("<I", len(entries)))
        for sid, loss, w in entries:
            f.write(struct.pack("<Qf", int(sid), float(loss)))
            f.write(tensor_bytes(w))


def read_cache_file(path):
    with open(path, "rb") as f:
        buf = f.read()
    if buf[:4] != MAGIC_CACHE:
        raise FileFormatError(f"{path}: bad cache magic")
    (count,) = struct.unpack_from("<I", buf, 4)
    offset = 8
    out = []
    for _ in range(count):
        sid, loss = struct.unpack_from("<Qf", buf, offset)
        offset += 12
        w, offset = tensor_from_bytes(buf, offset)
        out.append((sid, np.float32(loss), w))
    if offset != len(buf):
        raise FileFormatError(f"{path}: trailing bytes after last entry")
    return out
