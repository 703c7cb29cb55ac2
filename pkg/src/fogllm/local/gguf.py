"""GGUF model-file header validation.

Layout (all little-endian)::

    magic         4 bytes  "GGUF"
    version       uint32   2 or 3 accepted
    tensor_count  uint64
    kv_count      uint64
    kv_count x { key: gguf_string, value_type: uint32, value }

where ``gguf_string`` is a uint64 byte length followed by UTF-8 bytes.
Only the header and metadata are read; tensor data is never touched.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO

from ..errors import BadMagic, ModelFileError, ModelIOError, UnsupportedVersion

MAGIC = b"GGUF"
SUPPORTED_VERSIONS = (2, 3)

# value type id -> struct format for scalars
_SCALARS = {0: "<B", 1: "<b", 2: "<H", 3: "<h", 4: "<I", 5: "<i", 6: "<f", 7: "<?", 10: "<Q", 11: "<q", 12: "<d"}
_STRING, _ARRAY = 8, 9
MAX_METADATA_KEYS = 1 << 16


@dataclass(frozen=True)
class GGUFHeader:
    version: int
    tensor_count: int
    metadata: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ModelFile:
    model_id: str
    path: Path
    size_bytes: int
    checksum: str
    format: str = "gguf"
    format_version: int = 3


def _read(f: BinaryIO, n: int) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise ModelFileError(f"truncated GGUF header: wanted {n} bytes at offset {f.tell() - len(data)}")
    return data


def _unpack(f: BinaryIO, fmt: str):
    return struct.unpack(fmt, _read(f, struct.calcsize(fmt)))[0]


def _string(f: BinaryIO) -> str:
    n = _unpack(f, "<Q")
    if n > 1 << 24:
        raise ModelFileError(f"implausible string length {n}")
    return _read(f, n).decode("utf-8", "replace")


def _value(f: BinaryIO, vtype: int):
    if vtype in _SCALARS:
        return _unpack(f, _SCALARS[vtype])
    if vtype == _STRING:
        return _string(f)
    if vtype == _ARRAY:
        item_type = _unpack(f, "<I")
        count = _unpack(f, "<Q")
        if count > 1 << 24:
            raise ModelFileError(f"implausible array length {count}")
        return [_value(f, item_type) for _ in range(count)]
    raise ModelFileError(f"unknown metadata value type {vtype}")


def read_header(f: BinaryIO, *, metadata: bool = True) -> GGUFHeader:
    magic = f.read(4)
    if magic != MAGIC:
        raise BadMagic(f"expected magic {MAGIC!r}, found {magic!r}")
    version = _unpack(f, "<I")
    if version not in SUPPORTED_VERSIONS:
        raise UnsupportedVersion(f"GGUF version {version} not supported (want one of {SUPPORTED_VERSIONS})")
    tensor_count = _unpack(f, "<Q")
    kv_count = _unpack(f, "<Q")
    if kv_count > MAX_METADATA_KEYS:
        raise ModelFileError(f"implausible metadata count {kv_count}")
    meta = {}
    if metadata:
        for _ in range(kv_count):
            key = _string(f)
            meta[key] = _value(f, _unpack(f, "<I"))
    return GGUFHeader(version, tensor_count, meta)


def sha256_file(path: str | Path, chunk_size: int = 1 << 20) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(chunk_size), b""):
            h.update(block)
    return h.hexdigest()


def validate_model_file(path: str | Path, model_id: str | None = None) -> ModelFile:
    """Check the GGUF header and compute the file's SHA-256."""
    path = Path(path)
    try:
        with open(path, "rb") as f:
            header = read_header(f)
        size = path.stat().st_size
        checksum = sha256_file(path)
    except ModelFileError:
        raise
    except OSError as exc:
        raise ModelIOError(f"{path}: {exc}") from exc
    return ModelFile(model_id or path.stem, path, size, checksum, "gguf", header.version)


def build_header(version: int = 3, tensor_count: int = 0, metadata: dict | None = None) -> bytes:
    """Serialize a header; handy for fixtures and placeholder models."""
    out = bytearray(MAGIC)
    out += struct.pack("<IQQ", version, tensor_count, len(metadata or {}))
    for key, value in (metadata or {}).items():
        kb = key.encode("utf-8")
        out += struct.pack("<Q", len(kb)) + kb
        if isinstance(value, str):
            vb = value.encode("utf-8")
            out += struct.pack("<IQ", _STRING, len(vb)) + vb
        elif isinstance(value, bool):
            out += struct.pack("<I?", 7, value)
        elif isinstance(value, int):
            out += struct.pack("<Iq", 11, value)
        elif isinstance(value, float):
            out += struct.pack("<Id", 12, value)
        else:
            raise TypeError(f"unsupported metadata value for {key!r}: {type(value).__name__}")
    return bytes(out)
