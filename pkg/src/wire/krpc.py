"""KRPC messages for DHT tracking: get_peers and announce_peer, their responses, and errors."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from src.shell.contract import Endpoint
from src.wire.bencode import MalformedBencoding, bdecode, bencode
from src.wire.tracker import MalformedMessage, decode_compact_peers, encode_compact_peers


class KrpcKind(Enum):
    GET_PEERS_QUERY = "get_peers_query"
    GET_PEERS_RESPONSE = "get_peers_response"
    ANNOUNCE_PEER_QUERY = "announce_peer_query"
    ANNOUNCE_PEER_RESPONSE = "announce_peer_response"
    ERROR = "error"


@dataclass(frozen=True)
class KrpcMessage:
    txn_id: bytes
    kind: KrpcKind
    node_id: bytes = b"\x00" * 20
    info_hash: Optional[bytes] = None
    peers: list[Endpoint] = field(default_factory=list)
    port: Optional[int] = None
    token: Optional[bytes] = None
    error_code: Optional[int] = None
    error_text: str = ""

    def reply(self, kind: KrpcKind, **fields) -> "KrpcMessage":
        """Build a response echoing this query's txn_id."""
        return KrpcMessage(txn_id=self.txn_id, kind=kind, **fields)


def encode_krpc(msg: KrpcMessage) -> bytes:
    k = msg.kind
    if k is KrpcKind.GET_PEERS_QUERY:
        body = {b"y": b"q", b"q": b"get_peers",
                b"a": {b"id": msg.node_id, b"info_hash": msg.info_hash}}
    elif k is KrpcKind.ANNOUNCE_PEER_QUERY:
        body = {b"y": b"q", b"q": b"announce_peer",
                b"a": {b"id": msg.node_id, b"info_hash": msg.info_hash,
                       b"port": msg.port, b"token": msg.token or b""}}
    elif k is KrpcKind.GET_PEERS_RESPONSE:
        body = {b"y": b"r", b"r": {
            b"id": msg.node_id,
            b"token": msg.token or b"",
            b"values": [encode_compact_peers([p]) for p in msg.peers],
        }}
    elif k is KrpcKind.ANNOUNCE_PEER_RESPONSE:
        body = {b"y": b"r", b"r": {b"id": msg.node_id}}
    else:
        body = {b"y": b"e", b"e": [msg.error_code or 201, msg.error_text.encode("utf-8")]}
    body[b"t"] = msg.txn_id
    return bencode(body)


def _get(d: dict, key: bytes, kind: type):
    value = d.get(key)
    if not isinstance(value, kind):
        raise MalformedMessage(f"KRPC field {key!r} missing or mistyped")
    return value


def decode_krpc(data: bytes) -> KrpcMessage:
    try:
        value = bdecode(data)
    except MalformedBencoding as e:
        raise MalformedMessage(f"bad KRPC bencoding: {e}") from e
    if not isinstance(value, dict):
        raise MalformedMessage("KRPC message is not a dict")
    txn = _get(value, b"t", bytes)
    y = _get(value, b"y", bytes)
    if y == b"q":
        q = _get(value, b"q", bytes)
        args = _get(value, b"a", dict)
        node_id = _get(args, b"id", bytes)
        info_hash = _get(args, b"info_hash", bytes)
        if q == b"get_peers":
            return KrpcMessage(txn, KrpcKind.GET_PEERS_QUERY, node_id=node_id, info_hash=info_hash)
        if q == b"announce_peer":
            return KrpcMessage(
                txn, KrpcKind.ANNOUNCE_PEER_QUERY, node_id=node_id, info_hash=info_hash,
                port=_get(args, b"port", int), token=_get(args, b"token", bytes),
            )
        raise MalformedMessage(f"unsupported KRPC query {q!r}")
    if y == b"r":
        r = _get(value, b"r", dict)
        node_id = _get(r, b"id", bytes)
        if b"values" in r:
            peers: list[Endpoint] = []
            for compact in _get(r, b"values", list):
                if not isinstance(compact, bytes):
                    raise MalformedMessage("KRPC values entry is not a byte string")
                peers.extend(decode_compact_peers(compact))
            return KrpcMessage(txn, KrpcKind.GET_PEERS_RESPONSE, node_id=node_id,
                               peers=peers, token=r.get(b"token"))
        return KrpcMessage(txn, KrpcKind.ANNOUNCE_PEER_RESPONSE, node_id=node_id)
    if y == b"e":
        err = _get(value, b"e", list)
        if len(err) != 2 or not isinstance(err[0], int) or not isinstance(err[1], bytes):
            raise MalformedMessage("bad KRPC error body")
        return KrpcMessage(txn, KrpcKind.ERROR, error_code=err[0],
                           error_text=err[1].decode("utf-8", "replace"))
    raise MalformedMessage(f"unknown KRPC message type {y!r}")
