"""Canonical binary encoding for all wire types.

Rules: every top-level value is a one-byte type tag followed by its fields in
declaration order; integers are fixed-width big-endian; byte strings and text
are length-prefixed; lists are count-prefixed; maps are encoded sorted by key
so equal values always produce identical bytes. decode(encode(x)) == x and
encoding is injective per type.

Wire classes are plain dataclasses registered with @wire_type, declaring
their field layout in WIRE_FIELDS. Field specs:

    "u8" | "u32" | "u64" | "f64" | "bool" | "bytes" | "str"
    ("opt", spec)          optional value, presence byte
    ("list", spec)         count-prefixed sequence
    ("map", spec, spec)    sorted key/value pairs
    ("enum", EnumClass)    u8 index into the enum's declaration order
    ("wire", Cls or None)  nested registered wire value (tagged); None = any
"""

from __future__ import annotations

import math
import struct
from enum import Enum
from typing import Any

from .errors import MalformedBytes, TrailingBytes

_REGISTRY: dict[int, type] = {}
_TAG_OF: dict[type, int] = {}


def wire_type(tag: int):
    """Class decorator registering a dataclass as a wire type under tag."""

    def deco(cls):
        if tag in _REGISTRY:
            raise RuntimeError(f"wire tag {tag:#x} already used by {_REGISTRY[tag]}")
        if not hasattr(cls, "WIRE_FIELDS"):
            raise RuntimeError(f"{cls.__name__} missing WIRE_FIELDS")
        _REGISTRY[tag] = cls
        _TAG_OF[cls] = tag
        return cls

    return deco


def tag_of(cls: type) -> int:
    return _TAG_OF[cls]


class _Reader:
    __slots__ = ("data", "pos")

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise MalformedBytes("truncated buffer")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def remaining(self) -> int:
        return len(self.data) - self.pos


def _encode_value(spec, value, out: bytearray) -> None:
    if spec == "u8":
        if not (0 <= value <= 0xFF):
            raise ValueError("u8 out of range")
        out.append(value)
    elif spec == "u32":
        if not (0 <= value <= 0xFFFFFFFF):
            raise ValueError("u32 out of range")
        out += value.to_bytes(4, "big")
    elif spec == "u64":
        if not (0 <= value <= 0xFFFFFFFFFFFFFFFF):
            raise ValueError("u64 out of range")
        out += value.to_bytes(8, "big")
    elif spec == "f64":
        f = float(value)
        if not math.isfinite(f):
            raise ValueError("non-finite float not encodable")
        if f == 0.0:
            f = 0.0  # normalize -0.0 so equal values encode identically
        out += struct.pack(">d", f)
    elif spec == "bool":
        out.append(1 if value else 0)
    elif spec == "bytes":
        if not isinstance(value, (bytes, bytearray)):
            raise ValueError("expected bytes")
        out += len(value).to_bytes(4, "big")
        out += value
    elif spec == "str":
        raw = value.encode("utf-8")
        out += len(raw).to_bytes(4, "big")
        out += raw
    elif isinstance(spec, tuple):
        kind = spec[0]
        if kind == "opt":
            if value is None:
                out.append(0)
            else:
                out.append(1)
                _encode_value(spec[1], value, out)
        elif kind == "list":
            items = list(value)
            out += len(items).to_bytes(4, "big")
            for item in items:
                _encode_value(spec[1], item, out)
        elif kind == "map":
            entries = []
            for k, v in value.items():
                kb = bytearray()
                _encode_value(spec[1], k, kb)
                vb = bytearray()
                _encode_value(spec[2], v, vb)
                entries.append((bytes(kb), bytes(vb)))
            entries.sort(key=lambda e: e[0])
            out += len(entries).to_bytes(4, "big")
            for kb, vb in entries:
                out += kb
                out += vb
        elif kind == "enum":
            members = list(spec[1])
            out.append(members.index(value))
        elif kind == "wire":
            if spec[1] is not None and type(value) is not spec[1]:
                raise ValueError(f"expected {spec[1].__name__}, got {type(value).__name__}")
            out += encode(value)
        else:
            raise ValueError(f"bad field spec {spec!r}")
    else:
        raise ValueError(f"bad field spec {spec!r}")


def _decode_value(spec, r: _Reader):
    if spec == "u8":
        return r.take(1)[0]
    if spec == "u32":
        return int.from_bytes(r.take(4), "big")
    if spec == "u64":
        return int.from_bytes(r.take(8), "big")
    if spec == "f64":
        (f,) = struct.unpack(">d", r.take(8))
        if not math.isfinite(f):
            raise MalformedBytes("non-finite float")
        return f
    if spec == "bool":
        b = r.take(1)[0]
        if b > 1:
            raise MalformedBytes("invalid bool byte")
        return bool(b)
    if spec == "bytes":
        n = int.from_bytes(r.take(4), "big")
        return bytes(r.take(n))
    if spec == "str":
        n = int.from_bytes(r.take(4), "big")
        try:
            return r.take(n).decode("utf-8")
        except UnicodeDecodeError as e:
            raise MalformedBytes("invalid utf-8") from e
    if isinstance(spec, tuple):
        kind = spec[0]
        if kind == "opt":
            b = r.take(1)[0]
            if b == 0:
                return None
            if b != 1:
                raise MalformedBytes("invalid option byte")
            return _decode_value(spec[1], r)
        if kind == "list":
            n = int.from_bytes(r.take(4), "big")
            if n > r.remaining():
                raise MalformedBytes("list count exceeds buffer")
            return [_decode_value(spec[1], r) for _ in range(n)]
        if kind == "map":
            n = int.from_bytes(r.take(4), "big")
            if n > r.remaining():
                raise MalformedBytes("map count exceeds buffer")
            out = {}
            for _ in range(n):
                k = _decode_value(spec[1], r)
                v = _decode_value(spec[2], r)
                if k in out:
                    raise MalformedBytes("duplicate map key")
                out[k] = v
            return out
        if kind == "enum":
            members = list(spec[1])
            idx = r.take(1)[0]
            if idx >= len(members):
                raise MalformedBytes(f"enum index {idx} out of range")
            return members[idx]
        if kind == "wire":
            value = _decode_nested(r)
            if spec[1] is not None and type(value) is not spec[1]:
                raise MalformedBytes(
                    f"expected nested {spec[1].__name__}, got {type(value).__name__}"
                )
            return value
    raise MalformedBytes(f"bad field spec {spec!r}")


def _decode_nested(r: _Reader):
    tag = r.take(1)[0]
    cls = _REGISTRY.get(tag)
    if cls is None:
        raise MalformedBytes(f"unknown wire tag {tag:#x}")
    values = {}
    for name, spec in cls.WIRE_FIELDS:
        values[name] = _decode_value(spec, r)
    try:
        return cls(**values)
    except MalformedBytes:
        raise
    except (ValueError, TypeError) as e:
        raise MalformedBytes(f"invalid {cls.__name__}: {e}") from e


def encode(value: Any) -> bytes:
    """Canonical bytes for a registered wire value (type tag + fields)."""
    tag = _TAG_OF.get(type(value))
    if tag is None:
        raise ValueError(f"{type(value).__name__} is not a wire type")
    out = bytearray([tag])
    for name, spec in type(value).WIRE_FIELDS:
        _encode_value(spec, getattr(value, name), out)
    return bytes(out)


def decode(data: bytes) -> Any:
    """Decode one wire value; the buffer must contain exactly one value."""
    if not data:
        raise MalformedBytes("empty buffer")
    r = _Reader(bytes(data))
    value = _decode_nested(r)
    if r.remaining():
        raise TrailingBytes(f"{r.remaining()} trailing bytes")
    return value


def signing_bytes(value: Any) -> bytes:
    """Encoding of a signed structure with its trailing signature omitted.

    This is the exact payload covered by the structure's signature, so
    mutating any other field invalidates the signature.
    """
    fields = type(value).WIRE_FIELDS
    if fields[-1][0] != "signature":
        raise ValueError(f"{type(value).__name__} has no trailing signature field")
    tag = _TAG_OF[type(value)]
    out = bytearray([tag])
    for name, spec in fields[:-1]:
        _encode_value(spec, getattr(value, name), out)
    return bytes(out)


def to_debug(value: Any):
    """JSON-friendly rendering for reports. Canonical bytes stay authoritative."""
    if isinstance(value, (bytes, bytearray)):
        return value.hex()
    if isinstance(value, Enum):
        return value.name
    if isinstance(value, dict):
        return {str(to_debug(k)): to_debug(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_debug(v) for v in value]
    if type(value) in _TAG_OF:
        d = {"_type": type(value).__name__}
        for name, _ in type(value).WIRE_FIELDS:
            d[name] = to_debug(getattr(value, name))
        return d
    return value
