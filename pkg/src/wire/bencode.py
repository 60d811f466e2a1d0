"""Bencoding: canonical encoder and strict decoder.

Values map onto Python types: bytes (byte string), int (signed 64-bit),
list, and dict with bytes keys. The decoder is strict: it accepts only the
canonical encoding of some value, so ``bencode(bdecode(b)) == b`` whenever
``bdecode(b)`` succeeds.
"""

from __future__ import annotations

import re
from typing import Union

BValue = Union[bytes, int, list["BValue"], dict[bytes, "BValue"]]

INT64_MIN = -(2 ** 63)
INT64_MAX = 2 ** 63 - 1
MAX_DEPTH = 256

_INT_RE = re.compile(rb"-?(?:0|[1-9][0-9]*)")
_LEN_RE = re.compile(rb"0|[1-9][0-9]*")


class MalformedBencoding(ValueError):
    """Input is not the canonical bencoding of any value."""


def bencode(value: BValue) -> bytes:
    """Encode a value canonically (dict keys sorted)."""
    out: list[bytes] = []
    _encode(value, out)
    return b"".join(out)


def _encode(value: BValue, out: list[bytes]) -> None:
    # bool is an int subclass; it has no bencoding
    if isinstance(value, bool):
        raise TypeError("bool has no bencoding")
    if isinstance(value, int):
        if not (INT64_MIN <= value <= INT64_MAX):
            raise ValueError(f"integer outside signed 64-bit range: {value}")
        out.append(b"i%de" % value)
    elif isinstance(value, (bytes, bytearray)):
        out.append(b"%d:" % len(value))
        out.append(bytes(value))
    elif isinstance(value, list):
        out.append(b"l")
        for item in value:
            _encode(item, out)
        out.append(b"e")
    elif isinstance(value, dict):
        out.append(b"d")
        for key in sorted(value):
            if not isinstance(key, bytes):
                raise TypeError(f"dict keys must be bytes, got {type(key).__name__}")
            out.append(b"%d:" % len(key))
            out.append(key)
            _encode(value[key], out)
        out.append(b"e")
    else:
        raise TypeError(f"cannot bencode {type(value).__name__}")


def bdecode(data: bytes) -> BValue:
    """Decode one canonical value; trailing bytes are rejected."""
    decoder = _Decoder(bytes(data))
    value = decoder.value(0)
    if decoder.pos != len(decoder.data):
        raise MalformedBencoding(f"trailing bytes at offset {decoder.pos}")
    return value


class _Decoder:

    def __init__(self, data: bytes) -> None:
        self.data = data
        self.pos = 0

    def _peek(self) -> int:
        if self.pos >= len(self.data):
            raise MalformedBencoding("unexpected end of data")
        return self.data[self.pos]

    def value(self, depth: int) -> BValue:
        if depth > MAX_DEPTH:
            raise MalformedBencoding("nesting too deep")
        head = self._peek()
        if head == ord("i"):
            return self._integer()
        if head == ord("l"):
            return self._list(depth)
        if head == ord("d"):
            return self._dict(depth)
        if ord("0") <= head <= ord("9"):
            return self._string()
        raise MalformedBencoding(f"invalid type byte {head!r} at offset {self.pos}")

    def _integer(self) -> int:
        end = self.data.find(b"e", self.pos + 1)
        if end < 0:
            raise MalformedBencoding("unterminated integer")
        digits = self.data[self.pos + 1:end]
        if not _INT_RE.fullmatch(digits) or digits == b"-0":
            raise MalformedBencoding(f"non-canonical integer {digits!r}")
        number = int(digits)
        if not (INT64_MIN <= number <= INT64_MAX):
            raise MalformedBencoding("integer outside signed 64-bit range")
        self.pos = end + 1
        return number

    def _string(self) -> bytes:
        colon = self.data.find(b":", self.pos)
        if colon < 0:
            raise MalformedBencoding("unterminated string length")
        digits = self.data[self.pos:colon]
        if not _LEN_RE.fullmatch(digits):
            raise MalformedBencoding(f"non-canonical string length {digits!r}")
        length = int(digits)
        start = colon + 1
        if start + length > len(self.data):
            raise MalformedBencoding("truncated string")
        self.pos = start + length
        return self.data[start:self.pos]

    def _list(self, depth: int) -> list[BValue]:
        self.pos += 1
        items: list[BValue] = []
        while self._peek() != ord("e"):
            items.append(self.value(depth + 1))
        self.pos += 1
        return items

    def _dict(self, depth: int) -> dict[bytes, BValue]:
        self.pos += 1
        result: dict[bytes, BValue] = {}
        previous: bytes | None = None
        while self._peek() != ord("e"):
            if not (ord("0") <= self._peek() <= ord("9")):
                raise MalformedBencoding("dict key is not a byte string")
            key = self._string()
            if previous is not None and key <= previous:
                raise MalformedBencoding(f"dict keys unsorted or duplicated at {key!r}")
            result[key] = self.value(depth + 1)
            previous = key
        self.pos += 1
        return result
