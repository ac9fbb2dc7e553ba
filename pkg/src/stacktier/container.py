"""Versioned binary model container.

Layout::

    b"TLENS1" | u16 version | u64 payload length | payload

The payload is ``u64 manifest length | manifest JSON | array blob``. The
manifest is the model state with every ndarray replaced by a reference
``{"__array__": [offset, nbytes], "dtype": ..., "shape": ...}`` into the blob.
All integers are little-endian; JSON keys are sorted so equal models give
equal bytes.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ._io import atomic_write_bytes
from .errors import ModelFormatError

MAGIC = b"TLENS1"
VERSION = 1
_HEAD = struct.Struct("<6sHQ")


def _encode(obj, blobs: list, offset: list):
    if isinstance(obj, np.ndarray):
        arr = np.ascontiguousarray(obj)
        dtype = arr.dtype.newbyteorder("<") if arr.dtype.byteorder == ">" else arr.dtype
        data = arr.astype(dtype, copy=False).tobytes()
        ref = {"__array__": [offset[0], len(data)], "dtype": dtype.str,
               "shape": list(arr.shape)}
        blobs.append(data)
        offset[0] += len(data)
        return ref
    if isinstance(obj, dict):
        return {str(k): _encode(v, blobs, offset) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_encode(v, blobs, offset) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _decode(obj, blob: memoryview):
    if isinstance(obj, dict):
        if "__array__" in obj:
            start, n = obj["__array__"]
            if start < 0 or start + n > len(blob):
                raise ModelFormatError("array reference outside payload")
            arr = np.frombuffer(blob[start:start + n], dtype=np.dtype(obj["dtype"]))
            return arr.reshape(obj["shape"]).copy()
        return {k: _decode(v, blob) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_decode(v, blob) for v in obj]
    return obj


def pack(state: dict) -> bytes:
    blobs: list[bytes] = []
    manifest = _encode(state, blobs, [0])
    text = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    payload = struct.pack("<Q", len(text)) + text + b"".join(blobs)
    return _HEAD.pack(MAGIC, VERSION, len(payload)) + payload


def unpack(data: bytes) -> dict:
    if len(data) < _HEAD.size:
        raise ModelFormatError("file too short to be a model container")
    magic, version, length = _HEAD.unpack_from(data)
    if magic != MAGIC:
        raise ModelFormatError(f"bad magic {magic!r}; not a model container")
    if version != VERSION:
        raise ModelFormatError(f"unsupported container version {version} (expected {VERSION})")
    payload = memoryview(data)[_HEAD.size:]
    if len(payload) != length:
        raise ModelFormatError("payload length mismatch; file truncated or padded")
    (mlen,) = struct.unpack_from("<Q", payload)
    if 8 + mlen > length:
        raise ModelFormatError("manifest length exceeds payload")
    try:
        manifest = json.loads(bytes(payload[8:8 + mlen]).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"corrupt manifest: {exc}") from None
    return _decode(manifest, payload[8 + mlen:])


def save(path, state: dict) -> Path:
    return atomic_write_bytes(path, pack(state))


def load(path) -> dict:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise ModelFormatError(f"cannot read model file {path}: {exc.strerror}") from None
    return unpack(data)
