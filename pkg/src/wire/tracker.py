"""Tracker wire formats: compact peer lists, HTTP announce requests and responses."""

from __future__ import annotations

import ipaddress
import struct
from dataclasses import dataclass, field
from typing import Optional
from urllib.parse import unquote_to_bytes

from src.shell.contract import AnnounceEvent, Endpoint
from src.wire.bencode import MalformedBencoding, bdecode, bencode

COMPACT_PEER_SIZE = 6


class MalformedMessage(ValueError):
    """A wire artifact does not follow its layout."""


# --- Compact peers ---

def encode_compact_peers(peers: list[Endpoint]) -> bytes:
    """4-byte big-endian IPv4 + 2-byte big-endian port per peer, order preserved."""
    return b"".join(
        ipaddress.IPv4Address(p.ip).packed + struct.pack(">H", p.port) for p in peers
    )


def decode_compact_peers(data: bytes) -> list[Endpoint]:
    if len(data) % COMPACT_PEER_SIZE:
        raise MalformedMessage(f"compact peer list length {len(data)} is not a multiple of 6")
    peers = []
    for offset in range(0, len(data), COMPACT_PEER_SIZE):
        ip = str(ipaddress.IPv4Address(data[offset:offset + 4]))
        (port,) = struct.unpack(">H", data[offset + 4:offset + 6])
        peers.append(Endpoint(ip, port))
    return peers


# --- Announce request ---

def percent_encode(raw: bytes) -> str:
    """Percent-encode every byte, so binary identifiers parse unambiguously."""
    return "".join(f"%{b:02X}" for b in raw)


@dataclass(frozen=True)
class AnnounceRequest:
    info_hash: bytes
    peer_id: bytes
    port: int
    event: AnnounceEvent = AnnounceEvent.PERIODIC
    ip: Optional[str] = None    # client-declared public address

    def __post_init__(self) -> None:
        if len(self.info_hash) != 20:
            raise MalformedMessage("info_hash must be 20 bytes")
        if len(self.peer_id) != 20:
            raise MalformedMessage("peer_id must be 20 bytes")
        if not (1 <= self.port <= 65535):
            raise MalformedMessage(f"port out of range: {self.port}")
        if self.ip is not None:
            try:
                ipaddress.IPv4Address(self.ip)
            except ValueError as e:
                raise MalformedMessage(f"declared ip is not an IPv4 address: {self.ip!r}") from e

    def declared_endpoint(self, fallback_ip: str) -> Endpoint:
        return Endpoint(self.ip or fallback_ip, self.port)


def encode_announce_request(req: AnnounceRequest, host: str = "tracker") -> bytes:
    params = [
        f"info_hash={percent_encode(req.info_hash)}",
        f"peer_id={percent_encode(req.peer_id)}",
        f"port={req.port}",
        "compact=1",
    ]
    if req.event is not AnnounceEvent.PERIODIC:
        params.append(f"event={req.event.value}")
    if req.ip:
        params.append(f"ip={req.ip}")
    line = f"GET /announce?{'&'.join(params)} HTTP/1.1\r\nHost: {host}\r\n\r\n"
    return line.encode("ascii")


def parse_query(target: bytes) -> dict[str, bytes]:
    """Split the query part of a request target into raw (percent-decoded) values."""
    _, _, query = target.partition(b"?")
    params: dict[str, bytes] = {}
    for pair in query.split(b"&"):
        if not pair:
            continue
        key, _, value = pair.partition(b"=")
        params[key.decode("latin-1")] = unquote_to_bytes(value)
    return params


def decode_announce_request(payload: bytes) -> AnnounceRequest:
    line, _, _ = payload.partition(b"\r\n")
    parts = line.split(b" ")
    if len(parts) != 3 or parts[0] != b"GET" or not parts[2].startswith(b"HTTP/1."):
        raise MalformedMessage("not an HTTP GET request line")
    params = parse_query(parts[1])
    try:
        event_raw = params.get("event", b"periodic").decode("ascii") or "periodic"
        return AnnounceRequest(
            info_hash=params["info_hash"],
            peer_id=params["peer_id"],
            port=int(params["port"]),
            event=AnnounceEvent(event_raw),
            ip=params["ip"].decode("ascii") if "ip" in params else None,
        )
    except (KeyError, ValueError, UnicodeDecodeError) as e:
        if isinstance(e, MalformedMessage):
            raise
        raise MalformedMessage(f"bad announce query: {e}") from e


# --- Announce response ---

@dataclass(frozen=True)
class AnnounceResponse:
    interval: int
    peers: list[Endpoint] = field(default_factory=list)


def http_wrap(body: bytes, status: str = "200 OK") -> bytes:
    head = f"HTTP/1.1 {status}\r\nContent-Type: text/plain\r\nContent-Length: {len(body)}\r\n\r\n"
    return head.encode("ascii") + body


def http_unwrap(payload: bytes) -> bytes:
    head, sep, body = payload.partition(b"\r\n\r\n")
    if not sep or not head.startswith(b"HTTP/1."):
        raise MalformedMessage("not an HTTP response")
    return body


def encode_announce_response(resp: AnnounceResponse) -> bytes:
    body = bencode({b"interval": resp.interval, b"peers": encode_compact_peers(resp.peers)})
    return http_wrap(body)


def encode_tracker_failure(reason: str) -> bytes:
    return http_wrap(bencode({b"failure reason": reason.encode("utf-8")}))


class TrackerFailure(RuntimeError):
    """The tracker answered with a failure reason."""


def decode_announce_response(payload: bytes) -> AnnounceResponse:
    try:
        value = bdecode(http_unwrap(payload))
    except MalformedBencoding as e:
        raise MalformedMessage(f"bad announce response body: {e}") from e
    if not isinstance(value, dict):
        raise MalformedMessage("announce response is not a dict")
    if b"failure reason" in value:
        raise TrackerFailure(value[b"failure reason"].decode("utf-8", "replace"))
    interval = value.get(b"interval")
    peers = value.get(b"peers")
    if not isinstance(interval, int) or not isinstance(peers, bytes):
        raise MalformedMessage("announce response lacks interval/peers")
    return AnnounceResponse(interval=interval, peers=decode_compact_peers(peers))
