"""
Payload codec shared by every protocol.

    tag      1 byte
    origin   u16 big-endian
    round    u16 big-endian
    value    u16 length + ASCII decimal string
    path     u16 count + u16 node ids

Values are fixed-point decimals with 12 fractional digits so that encodings
are bit-identical across runs.
"""

import struct
from dataclasses import dataclass
from decimal import ROUND_HALF_EVEN, Decimal, InvalidOperation
from enum import IntEnum
from typing import Iterable, Tuple

from .errors import WireFormatError

QUANTUM = Decimal("1e-12")
_HEADER = struct.Struct(">BHH")
_U16 = struct.Struct(">H")


class Tag(IntEnum):
    VALUE = 1
    RELAY_VALUE = 2
    REPORT = 3
    RELAY_REPORT = 4
    DONE = 5
    RELAY_DONE = 6

    @property
    def is_relay(self) -> bool:
        return self.value % 2 == 0

    @property
    def base(self) -> "Tag":
        return Tag(self.value - 1) if self.is_relay else self

    @property
    def relayed(self) -> "Tag":
        return self if self.is_relay else Tag(self.value + 1)


def quantize(value) -> Decimal:
    return Decimal(value).quantize(QUANTUM, rounding=ROUND_HALF_EVEN)


def format_value(value) -> str:
    return format(quantize(value), "f")


def display_value(value) -> str:
    """Shortest plain rendering, e.g. 0.5 or 1000, for reports and logs."""
    return format(Decimal(value).normalize(), "f")


def parse_value(text: str) -> Decimal:
    try:
        value = Decimal(text)
    except InvalidOperation:
        raise WireFormatError(f"not a decimal: {text!r}")
    if not value.is_finite():
        raise WireFormatError(f"non-finite value {text!r}")
    return value


def format_origins(origins: Iterable[int]) -> str:
    return ",".join(str(o) for o in sorted(set(origins)))


def parse_origins(text: str) -> Tuple[int, ...]:
    if not text:
        return ()
    try:
        return tuple(int(part) for part in text.split(","))
    except ValueError:
        raise WireFormatError(f"bad origin list {text!r}")


@dataclass(frozen=True)
class WireMessage:
    tag: Tag
    origin: int
    round: int
    value: str
    path: Tuple[int, ...] = ()

    @property
    def content(self) -> Tuple[Tag, int, int]:
        """Key under which relayed copies of one broadcast are grouped."""
        return (self.tag.base, self.origin, self.round)

    def extended(self, node: int) -> "WireMessage":
        path = self.path + (node,)
        return WireMessage(self.tag.relayed, self.origin, self.round, self.value, path)

    def encode(self) -> bytes:
        value = self.value.encode("ascii")
        parts = [
            _HEADER.pack(int(self.tag), self.origin, self.round),
            _U16.pack(len(value)),
            value,
            _U16.pack(len(self.path)),
        ]
        parts.extend(_U16.pack(node) for node in self.path)
        return b"".join(parts)

    @classmethod
    def decode(cls, payload: bytes) -> "WireMessage":
        try:
            tag, origin, rnd = _HEADER.unpack_from(payload, 0)
            offset = _HEADER.size
            (length,) = _U16.unpack_from(payload, offset)
            offset += _U16.size
            value = payload[offset : offset + length]
            if len(value) != length:
                raise WireFormatError("truncated value")
            offset += length
            (count,) = _U16.unpack_from(payload, offset)
            offset += _U16.size
            path = tuple(
                _U16.unpack_from(payload, offset + i * _U16.size)[0] for i in range(count)
            )
            offset += count * _U16.size
        except struct.error as e:
            raise WireFormatError(f"truncated payload: {e}")
        if offset != len(payload):
            raise WireFormatError("trailing bytes after path")
        try:
            tag = Tag(tag)
            text = value.decode("ascii")
        except (ValueError, UnicodeDecodeError) as e:
            raise WireFormatError(str(e))
        return cls(tag, origin, rnd, text, path)
