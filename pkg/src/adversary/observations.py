"""Turn raw exit taps into ExitObservations."""

from __future__ import annotations

from typing import Optional

from src.shell.contract import AnnounceEvent, Endpoint, ExitObservation, StreamClass
from src.tor.overlay import TapRecord
from src.wire.classify import classify_stream
from src.wire.handshake import decode_handshake
from src.wire.tracker import (
    AnnounceRequest,
    MalformedMessage,
    TrackerFailure,
    decode_announce_request,
    decode_announce_response,
)

_PRINTABLE = frozenset(range(0x20, 0x7F)) | {0x09, 0x0A, 0x0D}


def looks_encrypted(prefix: bytes) -> bool:
    """High share of non-text bytes on an unrecognised stream."""
    if len(prefix) < 32:
        return False
    binary = sum(1 for b in prefix if b not in _PRINTABLE)
    return binary / len(prefix) > 0.3


def parse_announce(record: TapRecord) -> Optional[AnnounceRequest]:
    try:
        return decode_announce_request(record.payload_prefix)
    except MalformedMessage:
        return None


def announce_peers(response: bytes) -> tuple[Endpoint, ...]:
    try:
        return tuple(decode_announce_response(response).peers)
    except (MalformedMessage, TrackerFailure):
        return ()


def extract_observation(
    record: TapRecord,
    stream_class: Optional[StreamClass] = None,
    peers: tuple[Endpoint, ...] = (),
) -> ExitObservation:
    """Classify the stream and pull out whatever identifiers its class carries."""
    cls = stream_class or classify_stream(record.payload_prefix, record.destination.port)
    info_hash = peer_id = port = None
    encrypted = False
    if cls is StreamClass.BT_HANDSHAKE:
        try:
            hs = decode_handshake(record.payload_prefix)
            info_hash, peer_id = hs.info_hash, hs.peer_id
            port = hs.extended.listening_port if hs.extended else None
        except MalformedMessage:
            pass
    elif cls is StreamClass.TRACKER_ANNOUNCE:
        req = parse_announce(record)
        if req is not None:
            info_hash, peer_id, port = req.info_hash, req.peer_id, req.port
    elif cls is StreamClass.OTHER:
        encrypted = looks_encrypted(record.payload_prefix)
    return ExitObservation(
        circuit_id=record.circuit_id,
        stream_id=record.stream_id,
        destination=record.destination,
        stream_class=cls,
        at=record.at,
        encrypted=encrypted,
        info_hash=info_hash,
        peer_id=peer_id,
        listening_port=port,
        announce_peers=peers,
    )


def is_stopping(record: TapRecord) -> bool:
    req = parse_announce(record)
    return req is not None and req.event is AnnounceEvent.STOPPED
