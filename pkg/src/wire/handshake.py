"""BitTorrent peer handshake and the extension-protocol handshake carrying the listening port."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Optional

from src.wire.bencode import MalformedBencoding, bdecode, bencode
from src.wire.tracker import MalformedMessage

PROTOCOL = b"BitTorrent protocol"
HEADER = bytes([len(PROTOCOL)]) + PROTOCOL     # 20 bytes
HANDSHAKE_LEN = 68
EXTENSION_BYTE = 5
EXTENSION_BIT = 0x10
MSG_EXTENDED = 20


@dataclass(frozen=True)
class ExtendedHandshake:
    listening_port: int


@dataclass(frozen=True)
class BtHandshake:
    info_hash: bytes
    peer_id: bytes
    extended: Optional[ExtendedHandshake] = None

    def __post_init__(self) -> None:
        if len(self.info_hash) != 20 or len(self.peer_id) != 20:
            raise MalformedMessage("info_hash and peer_id must be 20 bytes")


def has_handshake_header(prefix: bytes) -> bool:
    return prefix[:20] == HEADER


def encode_handshake(hs: BtHandshake) -> bytes:
    reserved = bytearray(8)
    if hs.extended is not None:
        reserved[EXTENSION_BYTE] |= EXTENSION_BIT
    out = HEADER + bytes(reserved) + hs.info_hash + hs.peer_id
    if hs.extended is not None:
        payload = bytes([0]) + bencode({b"p": hs.extended.listening_port})
        out += struct.pack(">IB", len(payload) + 1, MSG_EXTENDED) + payload
    return out


def decode_handshake(data: bytes) -> BtHandshake:
    """Decode a handshake; a following extended handshake is parsed when present and announced."""
    if len(data) < HANDSHAKE_LEN or not has_handshake_header(data):
        raise MalformedMessage("not a BitTorrent handshake")
    reserved = data[20:28]
    info_hash = data[28:48]
    peer_id = data[48:68]
    extended = None
    rest = data[HANDSHAKE_LEN:]
    if reserved[EXTENSION_BYTE] & EXTENSION_BIT and len(rest) >= 6:
        (length,) = struct.unpack(">I", rest[:4])
        if rest[4] != MSG_EXTENDED or rest[5] != 0 or len(rest) < 4 + length:
            raise MalformedMessage("bad extended handshake framing")
        try:
            body = bdecode(rest[6:4 + length])
        except MalformedBencoding as e:
            raise MalformedMessage(f"bad extended handshake body: {e}") from e
        port = body.get(b"p") if isinstance(body, dict) else None
        if isinstance(port, int) and 1 <= port <= 65535:
            extended = ExtendedHandshake(listening_port=port)
    return BtHandshake(info_hash=info_hash, peer_id=peer_id, extended=extended)
