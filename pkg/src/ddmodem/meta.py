"""Trailing metadata block shared by the binary file formats.

Layout: ``b"META"``, u32 little-endian byte length, UTF-8 JSON (sorted keys).
Readers of the fixed-layout part of each format may ignore it.
"""
import json
import struct

from .errors import FormatError

_TAG = b"META"
_LEN = struct.Struct("<I")


def encode_meta(meta: dict) -> bytes:
    if not meta:
        return b""
    payload = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode()
    return _TAG + _LEN.pack(len(payload)) + payload


def write_meta(f, meta: dict) -> None:
    f.write(encode_meta(meta))


def read_meta(buf: bytes, offset: int, path="<buffer>") -> dict:
    if offset == len(buf):
        return {}
    if buf[offset : offset + 4] != _TAG or len(buf) < offset + 8:
        raise FormatError(f"{path}: unexpected trailing bytes")
    (n,) = _LEN.unpack_from(buf, offset + 4)
    body = buf[offset + 8 : offset + 8 + n]
    if len(body) != n:
        raise FormatError(f"{path}: truncated metadata block")
    try:
        return json.loads(body)
    except ValueError as exc:
        raise FormatError(f"{path}: corrupt metadata block") from exc
