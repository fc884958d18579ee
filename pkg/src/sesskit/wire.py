"""Architecture-independent wire encoding of primitive values and frames.

Every encoded value begins with one tag byte.  Multi-byte quantities are
big-endian.  Layouts:

    INT      0x01 + 8 bytes two's complement (narrower ints sign-extended)
    FLOAT    0x02 + 8 bytes IEEE-754 double (single precision widened exactly)
    STRING   0x03 + u32 length + raw bytes
    RECORD   0x04 + u32 entry count + (name STRING, value)* + END
    FILEBLOB 0x05 + u32 total length + (u32 chunk length + bytes)*,
             each chunk at most 64 KB
    END      0x00

Encoding is deterministic: identical values always produce identical
bytes.  Record entry order is preserved on the wire, but record equality
is order-insensitive.  Nested records are permitted (an extension beyond
flat attribute lists).

Message frames wrap an opaque body for transmission:

    u32 body length + u8 flags + body + (u8 mac length + mac, iff MAC flag)
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

from .errstack import (
    WIRE_DECODE,
    WIRE_ENCODE,
    CommError,
    ErrorFrame,
    ErrorStack,
)

TAG_END = 0x00
TAG_INT = 0x01
TAG_FLOAT = 0x02
TAG_STRING = 0x03
TAG_RECORD = 0x04
TAG_FILEBLOB = 0x05

_TAG_NAMES = {
    TAG_END: "END",
    TAG_INT: "INT",
    TAG_FLOAT: "FLOAT",
    TAG_STRING: "STRING",
    TAG_RECORD: "RECORD",
    TAG_FILEBLOB: "FILEBLOB",
}

INT64_MIN = -(1 << 63)
INT64_MAX = (1 << 63) - 1
MAX_CHUNK = 64 * 1024

# Frame flag bits.  PLAIN is the absence of both.
FLAG_ENCRYPTED = 0x01
FLAG_MAC_PRESENT = 0x02


class WireEncodeError(CommError):
    def __init__(self, message: str):
        frame = ErrorFrame(WIRE_ENCODE, "WIRE", message)
        super().__init__(ErrorStack((frame,)))


class WireDecodeError(CommError):
    """Decode failure; ``offset`` is the byte position where it was detected."""

    def __init__(self, message: str, offset: int):
        frame = ErrorFrame(WIRE_DECODE, "WIRE", f"{message} at offset {offset}")
        super().__init__(ErrorStack((frame,)))
        self.offset = offset


@dataclass(frozen=True)
class FileBlob:
    """A file payload, kept distinct from STRING so receivers can spool it."""

    data: bytes


class Record:
    """Ordered map from attribute name to wire value.

    Names must be unique and non-empty.  Values may be int, float, bytes,
    FileBlob, or nested Record.  Equality ignores entry order.
    """

    def __init__(self, entries=()):
        self._names: list[str] = []
        self._values: dict[str, object] = {}
        items = entries.items() if isinstance(entries, dict) else entries
        for name, value in items:
            self.set(name, value)

    def set(self, name: str, value) -> None:
        if not name:
            raise WireEncodeError("record attribute name must be non-empty")
        if name in self._values:
            raise WireEncodeError(f"duplicate record attribute {name!r}")
        self._names.append(name)
        self._values[name] = value

    def __getitem__(self, name: str):
        return self._values[name]

    def get(self, name: str, default=None):
        return self._values.get(name, default)

    def __contains__(self, name: str) -> bool:
        return name in self._values

    def items(self):
        return [(n, self._values[n]) for n in self._names]

    def names(self) -> list[str]:
        return list(self._names)

    def __len__(self) -> int:
        return len(self._names)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Record):
            return NotImplemented
        return self._values == other._values

    def __repr__(self) -> str:
        inner = ", ".join(f"{n}={self._values[n]!r}" for n in self._names)
        return f"Record({inner})"


def encode_int(value: int) -> bytes:
    """Tag byte plus 8 bytes big-endian two's complement.

    Inputs from any narrower signed width are sign-extended, so the same
    mathematical value encodes identically regardless of source width.
    """
    if not (INT64_MIN <= value <= INT64_MAX):
        raise WireEncodeError(f"integer {value} exceeds 64-bit range")
    return bytes([TAG_INT]) + struct.pack(">q", value)


def encode_float(value: float) -> bytes:
    """Tag byte plus 8 bytes IEEE-754 double, big-endian.

    Values that arrived as single precision are widened exactly: the wire
    carries the double nearest the *single-precision* value, not the double
    nearest the original decimal literal.
    """
    return bytes([TAG_FLOAT]) + struct.pack(">d", value)


def encode_string(value: bytes) -> bytes:
    if len(value) > 0xFFFFFFFF:
        raise WireEncodeError("string exceeds u32 length")
    return bytes([TAG_STRING]) + struct.pack(">I", len(value)) + value


def encode_fileblob(blob: FileBlob) -> bytes:
    data = blob.data
    if len(data) > 0xFFFFFFFF:
        raise WireEncodeError("file blob exceeds u32 length")
    out = bytearray([TAG_FILEBLOB])
    out += struct.pack(">I", len(data))
    for start in range(0, len(data), MAX_CHUNK):
        chunk = data[start : start + MAX_CHUNK]
        out += struct.pack(">I", len(chunk))
        out += chunk
    return bytes(out)


def encode_record(ad: Record) -> bytes:
    out = bytearray([TAG_RECORD])
    out += struct.pack(">I", len(ad))
    for name, value in ad.items():
        out += encode_string(name.encode("utf-8"))
        out += encode_value(value)
    out.append(TAG_END)
    return bytes(out)


def encode_value(value) -> bytes:
    if isinstance(value, bool) or isinstance(value, int):
        return encode_int(int(value))
    if isinstance(value, float):
        return encode_float(value)
    if isinstance(value, (bytes, bytearray)):
        return encode_string(bytes(value))
    if isinstance(value, FileBlob):
        return encode_fileblob(value)
    if isinstance(value, Record):
        return encode_record(value)
    raise WireEncodeError(f"unencodable value type {type(value).__name__}")


def _need(data: bytes, offset: int, n: int, what: str) -> None:
    if offset + n > len(data):
        raise WireDecodeError(f"truncated {what}", offset)


def decode_prefix(data: bytes, offset: int = 0):
    """Decode one value starting at ``offset``; return (value, next offset)."""
    _need(data, offset, 1, "tag")
    tag = data[offset]
    offset += 1
    if tag == TAG_INT:
        _need(data, offset, 8, "INT payload")
        return struct.unpack_from(">q", data, offset)[0], offset + 8
    if tag == TAG_FLOAT:
        _need(data, offset, 8, "FLOAT payload")
        return struct.unpack_from(">d", data, offset)[0], offset + 8
    if tag == TAG_STRING:
        _need(data, offset, 4, "STRING length")
        n = struct.unpack_from(">I", data, offset)[0]
        offset += 4
        _need(data, offset, n, "STRING payload")
        return bytes(data[offset : offset + n]), offset + n
    if tag == TAG_FILEBLOB:
        _need(data, offset, 4, "FILEBLOB length")
        total = struct.unpack_from(">I", data, offset)[0]
        offset += 4
        parts = bytearray()
        while len(parts) < total:
            _need(data, offset, 4, "FILEBLOB chunk length")
            n = struct.unpack_from(">I", data, offset)[0]
            offset += 4
            if n == 0 or n > MAX_CHUNK:
                raise WireDecodeError(f"bad FILEBLOB chunk length {n}", offset - 4)
            if len(parts) + n > total:
                raise WireDecodeError("FILEBLOB chunks exceed declared length", offset - 4)
            _need(data, offset, n, "FILEBLOB chunk")
            parts += data[offset : offset + n]
            offset += n
        return FileBlob(bytes(parts)), offset
    if tag == TAG_RECORD:
        _need(data, offset, 4, "RECORD count")
        count = struct.unpack_from(">I", data, offset)[0]
        offset += 4
        rec = Record()
        for _ in range(count):
            name_off = offset
            name, offset = decode_prefix(data, offset)
            if not isinstance(name, bytes):
                raise WireDecodeError("record attribute name is not a string", name_off)
            value, offset = decode_prefix(data, offset)
            try:
                rec.set(name.decode("utf-8"), value)
            except (UnicodeDecodeError, WireEncodeError):
                raise WireDecodeError("bad record attribute name", name_off) from None
        _need(data, offset, 1, "RECORD terminator")
        if data[offset] != TAG_END:
            raise WireDecodeError("missing RECORD terminator", offset)
        return rec, offset + 1
    raise WireDecodeError(f"unknown tag 0x{tag:02x}", offset - 1)


def decode(data: bytes):
    """Decode exactly one value occupying the whole buffer."""
    value, offset = decode_prefix(data, 0)
    if offset != len(data):
        raise WireDecodeError("trailing bytes after value", offset)
    return value


@dataclass(frozen=True)
class MessageFrame:
    """Length-delimited transmission unit: flags, opaque body, optional MAC."""

    flags: int
    body: bytes
    mac: bytes | None = None

    def __post_init__(self) -> None:
        has_mac = bool(self.flags & FLAG_MAC_PRESENT)
        if has_mac != (self.mac is not None):
            raise WireEncodeError("mac present iff MAC_PRESENT flag set")

    @property
    def length(self) -> int:
        return len(self.body)


def encode_frame(frame: MessageFrame) -> bytes:
    if len(frame.body) > 0xFFFFFFFF:
        raise WireEncodeError("frame body exceeds u32 length")
    out = bytearray(struct.pack(">IB", len(frame.body), frame.flags))
    out += frame.body
    if frame.mac is not None:
        if len(frame.mac) > 0xFF:
            raise WireEncodeError("mac exceeds u8 length")
        out.append(len(frame.mac))
        out += frame.mac
    return bytes(out)


def decode_frame(data: bytes, offset: int = 0) -> tuple[MessageFrame, int]:
    _need(data, offset, 5, "frame header")
    length, flags = struct.unpack_from(">IB", data, offset)
    offset += 5
    _need(data, offset, length, "frame body")
    body = bytes(data[offset : offset + length])
    offset += length
    mac = None
    if flags & FLAG_MAC_PRESENT:
        _need(data, offset, 1, "mac length")
        n = data[offset]
        offset += 1
        _need(data, offset, n, "mac")
        mac = bytes(data[offset : offset + n])
        offset += n
    return MessageFrame(flags, body, mac), offset
