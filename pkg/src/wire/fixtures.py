"""Golden codec fixtures: ``<kind>.bin`` plus ``<kind>.expected.json``.

A fixture passes when its bytes decode to the expected description and
re-encoding the decoded value reproduces the bytes exactly. The kind is the
longest known prefix of the file stem, so ``krpc_error.bin`` is a ``krpc``
fixture.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Optional

import structlog

from src.wire.bencode import BValue, MalformedBencoding, bdecode, bencode
from src.wire.handshake import decode_handshake, encode_handshake
from src.wire.krpc import KrpcMessage, decode_krpc, encode_krpc
from src.wire.tracker import (
    MalformedMessage,
    decode_announce_request,
    decode_announce_response,
    decode_compact_peers,
    encode_announce_request,
    encode_announce_response,
    encode_compact_peers,
)

log = structlog.get_logger()

EXPECTED_SUFFIX = ".expected.json"


def describe_bvalue(value: BValue) -> Any:
    """JSON view of a bencoded value: byte strings as hex, dict keys as text."""
    if isinstance(value, bytes):
        return value.hex()
    if isinstance(value, list):
        return [describe_bvalue(v) for v in value]
    if isinstance(value, dict):
        return {k.decode("latin-1"): describe_bvalue(v) for k, v in value.items()}
    return value


def _hex(raw: Optional[bytes]) -> Optional[str]:
    return raw.hex() if raw is not None else None


def _describe_krpc(msg: KrpcMessage) -> dict:
    return {
        "txn_id": msg.txn_id.hex(),
        "kind": msg.kind.value,
        "node_id": msg.node_id.hex(),
        "info_hash": _hex(msg.info_hash),
        "peers": [str(p) for p in msg.peers],
        "port": msg.port,
        "token": _hex(msg.token),
        "error_code": msg.error_code,
        "error_text": msg.error_text,
    }


def _request_roundtrip(data: bytes) -> tuple[dict, bytes]:
    req = decode_announce_request(data)
    host = b"tracker"
    for line in data.split(b"\r\n")[1:]:
        if line.lower().startswith(b"host:"):
            host = line[5:].strip()
    desc = {"info_hash": req.info_hash.hex(), "peer_id": req.peer_id.hex(), "port": req.port,
            "event": req.event.value, "ip": req.ip}
    return desc, encode_announce_request(req, host=host.decode("ascii"))


def _response_roundtrip(data: bytes) -> tuple[dict, bytes]:
    resp = decode_announce_response(data)
    return {"interval": resp.interval, "peers": [str(p) for p in resp.peers]}, encode_announce_response(resp)


def _handshake_roundtrip(data: bytes) -> tuple[dict, bytes]:
    hs = decode_handshake(data)
    desc = {"info_hash": hs.info_hash.hex(), "peer_id": hs.peer_id.hex(),
            "listening_port": hs.extended.listening_port if hs.extended else None}
    return desc, encode_handshake(hs)


def _peers_roundtrip(data: bytes) -> tuple[list, bytes]:
    peers = decode_compact_peers(data)
    return [str(p) for p in peers], encode_compact_peers(peers)


def _bencode_roundtrip(data: bytes) -> tuple[Any, bytes]:
    value = bdecode(data)
    return describe_bvalue(value), bencode(value)


def _krpc_roundtrip(data: bytes) -> tuple[dict, bytes]:
    msg = decode_krpc(data)
    return _describe_krpc(msg), encode_krpc(msg)


CODECS: dict[str, Callable[[bytes], tuple[Any, bytes]]] = {
    "bencode": _bencode_roundtrip,
    "compact_peers": _peers_roundtrip,
    "announce_request": _request_roundtrip,
    "announce_response": _response_roundtrip,
    "handshake": _handshake_roundtrip,
    "krpc": _krpc_roundtrip,
}


@dataclass(frozen=True)
class Fixture:
    name: str
    kind: str
    data: bytes
    expected: Any


@dataclass(frozen=True)
class FixtureResult:
    name: str
    ok: bool
    reason: str = ""


def kind_of(stem: str) -> str:
    matches = [k for k in CODECS if stem == k or stem.startswith(k + "_")]
    if not matches:
        raise ValueError(f"no codec for fixture {stem!r}")
    return max(matches, key=len)


def load_fixture(path: Path) -> Fixture:
    """Read ``<name>.bin`` and its sibling ``<name>.expected.json``."""
    path = Path(path)
    expected_path = path.with_name(path.stem + EXPECTED_SUFFIX)
    return Fixture(
        name=path.stem,
        kind=kind_of(path.stem),
        data=path.read_bytes(),
        expected=json.loads(expected_path.read_text(encoding="utf-8")),
    )


def validate_fixture(fixture: Fixture) -> FixtureResult:
    try:
        described, reencoded = CODECS[fixture.kind](fixture.data)
    except (MalformedMessage, MalformedBencoding, ValueError, TypeError) as e:
        return FixtureResult(fixture.name, False, f"decode failed: {e}")
    if described != fixture.expected:
        return FixtureResult(fixture.name, False, "decoded value differs from expected")
    if reencoded != fixture.data:
        return FixtureResult(fixture.name, False, "re-encoding differs from fixture bytes")
    return FixtureResult(fixture.name, True)


def fixture_paths(directory: Path) -> list[Path]:
    return sorted(Path(directory).glob("*.bin"))
