"""Tests for the wire codecs: bencoding, tracker messages, handshakes, KRPC, stream classes.

Includes the golden fixture check and the randomised round-trip properties.
"""

from __future__ import annotations

import shutil
import time
from pathlib import Path

import numpy as np
import pytest

from src.shell.contract import AnnounceEvent, Endpoint, StreamClass

FIXTURES = Path(__file__).parent / "fixtures" / "codecs"


def _random_bvalue(rng: np.random.Generator, depth: int = 0):
    kind = int(rng.integers(0, 4 if depth < 4 else 2))
    if kind == 0:
        return int(rng.integers(-(2 ** 63), 2 ** 63 - 1, endpoint=True))
    if kind == 1:
        return rng.bytes(int(rng.integers(0, 24)))
    if kind == 2:
        return [_random_bvalue(rng, depth + 1) for _ in range(int(rng.integers(0, 5)))]
    return {rng.bytes(int(rng.integers(0, 8))): _random_bvalue(rng, depth + 1)
            for _ in range(int(rng.integers(0, 5)))}


def _random_endpoint(rng: np.random.Generator) -> Endpoint:
    octets = rng.integers(0, 256, size=4)
    return Endpoint(".".join(str(int(o)) for o in octets), int(rng.integers(0, 65536)))


# --- Bencoding ---

def test_bencode_examples():
    from src.wire.bencode import bdecode, bencode
    assert bencode(b"spam") == b"4:spam"
    assert bencode(-3) == b"i-3e"
    assert bencode({b"b": 1, b"a": [b"x"]}) == b"d1:al1:xe1:bi1ee"
    assert bdecode(b"le") == []
    assert bdecode(b"d3:cow3:mooe") == {b"cow": b"moo"}


@pytest.mark.parametrize("raw", [
    b"i03e", b"i-0e", b"ie", b"03:abc", b"4:abc", b"d1:bi1e1:ai2ee", b"d1:ai1e1:ai2ee",
    b"i1ei2e", b"l", b"x", b"di1ei2ee", b"i9223372036854775808e",
])
def test_bdecode_rejects_non_canonical(raw):
    from src.wire.bencode import MalformedBencoding, bdecode
    with pytest.raises(MalformedBencoding):
        bdecode(raw)


def test_bencode_rejects_unencodable():
    from src.wire.bencode import bencode
    with pytest.raises(TypeError):
        bencode(True)
    with pytest.raises(TypeError):
        bencode({"text-key": 1})
    with pytest.raises(ValueError):
        bencode(2 ** 63)


def test_bencode_random_trees_roundtrip():
    from src.wire.bencode import bdecode, bencode
    rng = np.random.default_rng(7)
    start = time.monotonic()
    for _ in range(10_000):
        value = _random_bvalue(rng)
        encoded = bencode(value)
        assert bdecode(encoded) == value
        assert bencode(bdecode(encoded)) == encoded
    assert time.monotonic() - start < 10


def _mutate(rng: np.random.Generator, data: bytes) -> bytes:
    raw = bytearray(data)
    op = int(rng.integers(0, 3))
    if op == 0 and raw:
        i = int(rng.integers(0, len(raw)))
        raw[i] ^= int(rng.integers(1, 256))
    elif op == 1 and raw:
        del raw[int(rng.integers(0, len(raw))):]
    else:
        raw.insert(int(rng.integers(0, len(raw) + 1)), int(rng.integers(0, 256)))
    return bytes(raw)


def test_bdecode_mutated_encodings_rejected_or_canonical():
    from src.wire.bencode import MalformedBencoding, bdecode, bencode
    rng = np.random.default_rng(23)
    accepted = 0
    for _ in range(5_000):
        mutated = _mutate(rng, bencode(_random_bvalue(rng)))
        try:
            value = bdecode(mutated)
        except MalformedBencoding:
            continue
        accepted += 1
        assert bencode(value) == mutated
    assert accepted < 5_000


# --- Compact peers ---

def test_compact_peers_random_lists_roundtrip():
    from src.wire.tracker import decode_compact_peers, encode_compact_peers
    rng = np.random.default_rng(11)
    for _ in range(1_000):
        peers = [_random_endpoint(rng) for _ in range(int(rng.integers(0, 30)))]
        data = encode_compact_peers(peers)
        assert len(data) == 6 * len(peers)
        assert decode_compact_peers(data) == peers


def test_compact_peers_bad_length():
    from src.wire.tracker import MalformedMessage, decode_compact_peers
    with pytest.raises(MalformedMessage):
        decode_compact_peers(b"\x01\x02\x03\x04\x05")


# --- Announce ---

def test_announce_request_percent_encodes_every_byte():
    from src.wire.tracker import AnnounceRequest, decode_announce_request, encode_announce_request
    req = AnnounceRequest(b"&=?% \x00" + bytes(range(14)), b"P" * 20, 6881,
                          AnnounceEvent.STARTED, ip="10.1.2.3")
    raw = encode_announce_request(req, host="t.example:6969")
    assert b"%26%3D%3F%25%20%00" in raw
    assert decode_announce_request(raw) == req


def test_announce_request_periodic_has_no_event():
    from src.wire.tracker import AnnounceRequest, decode_announce_request, encode_announce_request
    req = AnnounceRequest(b"h" * 20, b"p" * 20, 1024)
    raw = encode_announce_request(req)
    assert b"event=" not in raw
    assert decode_announce_request(raw).event is AnnounceEvent.PERIODIC


def test_announce_request_malformed():
    from src.wire.tracker import MalformedMessage, decode_announce_request
    with pytest.raises(MalformedMessage):
        decode_announce_request(b"POST /announce HTTP/1.1\r\n\r\n")
    with pytest.raises(MalformedMessage):
        decode_announce_request(b"GET /announce?info_hash=%01&port=1 HTTP/1.1\r\n\r\n")


@pytest.mark.parametrize("ip", ["not.an.address", "300.1.1.1", "::1", ""])
def test_announce_request_rejects_bad_declared_ip(ip):
    from src.wire.tracker import AnnounceRequest, MalformedMessage, decode_announce_request
    raw = (b"GET /announce?info_hash=" + b"%68" * 20 + b"&peer_id=" + b"%70" * 20
           + b"&port=6881&ip=" + ip.encode("ascii") + b" HTTP/1.1\r\n\r\n")
    with pytest.raises(MalformedMessage):
        decode_announce_request(raw)
    with pytest.raises(MalformedMessage):
        AnnounceRequest(b"h" * 20, b"p" * 20, 6881, ip=ip)


def test_announce_response_and_failure():
    from src.wire.tracker import (
        AnnounceResponse, TrackerFailure, decode_announce_response,
        encode_announce_response, encode_tracker_failure,
    )
    peers = [Endpoint("10.0.0.1", 6881), Endpoint("10.0.0.2", 51413)]
    resp = decode_announce_response(encode_announce_response(AnnounceResponse(600, peers)))
    assert resp.interval == 600 and resp.peers == peers
    with pytest.raises(TrackerFailure, match="unregistered"):
        decode_announce_response(encode_tracker_failure("unregistered torrent"))


# --- Handshake ---

def test_handshake_with_extended_port():
    from src.wire.handshake import (
        HANDSHAKE_LEN, BtHandshake, ExtendedHandshake, decode_handshake, encode_handshake,
    )
    hs = BtHandshake(b"i" * 20, b"p" * 20, ExtendedHandshake(40000))
    raw = encode_handshake(hs)
    assert raw[25] & 0x10
    assert len(raw) > HANDSHAKE_LEN
    assert decode_handshake(raw) == hs


def test_handshake_without_extension():
    from src.wire.handshake import HANDSHAKE_LEN, BtHandshake, decode_handshake, encode_handshake
    hs = BtHandshake(b"i" * 20, b"p" * 20)
    raw = encode_handshake(hs)
    assert len(raw) == HANDSHAKE_LEN
    assert decode_handshake(raw).extended is None


def test_handshake_rejects_garbage():
    from src.wire.handshake import decode_handshake
    from src.wire.tracker import MalformedMessage
    with pytest.raises(MalformedMessage):
        decode_handshake(b"\x13NotTorrent protocol" + bytes(48))


# --- KRPC ---

def test_krpc_messages_roundtrip():
    from src.wire.krpc import KrpcKind, KrpcMessage, decode_krpc, encode_krpc
    messages = [
        KrpcMessage(b"t1", KrpcKind.GET_PEERS_QUERY, info_hash=b"h" * 20),
        KrpcMessage(b"t2", KrpcKind.ANNOUNCE_PEER_QUERY, info_hash=b"h" * 20, port=6881, token=b"tk"),
        KrpcMessage(b"t3", KrpcKind.GET_PEERS_RESPONSE, token=b"tk",
                    peers=[Endpoint("1.2.3.4", 5), Endpoint("5.6.7.8", 9)]),
        KrpcMessage(b"t4", KrpcKind.ANNOUNCE_PEER_RESPONSE),
        KrpcMessage(b"t5", KrpcKind.ERROR, error_code=203, error_text="bad token"),
    ]
    for msg in messages:
        assert decode_krpc(encode_krpc(msg)) == msg


def test_krpc_reply_echoes_txn():
    from src.wire.krpc import KrpcKind, KrpcMessage
    query = KrpcMessage(b"zz", KrpcKind.GET_PEERS_QUERY, info_hash=b"h" * 20)
    assert query.reply(KrpcKind.GET_PEERS_RESPONSE, token=b"t").txn_id == b"zz"


def test_krpc_malformed():
    from src.wire.krpc import decode_krpc
    from src.wire.tracker import MalformedMessage
    with pytest.raises(MalformedMessage):
        decode_krpc(b"d1:t2:aa1:y1:xe")
    with pytest.raises(MalformedMessage):
        decode_krpc(b"not bencoding")


# --- Classification ---

def test_classify_stream():
    from src.wire.classify import classify_stream
    from src.wire.handshake import BtHandshake, encode_handshake
    from src.wire.tracker import AnnounceRequest, encode_announce_request
    announce = encode_announce_request(AnnounceRequest(b"h" * 20, b"p" * 20, 6881))
    assert classify_stream(announce, 6969) is StreamClass.TRACKER_ANNOUNCE
    assert classify_stream(encode_handshake(BtHandshake(b"h" * 20, b"p" * 20)), 51413) is StreamClass.BT_HANDSHAKE
    assert classify_stream(b"GET /index.html HTTP/1.1\r\nHost: a\r\n\r\n", 80) is StreamClass.HTTP
    assert classify_stream(b"GET /index.h", 80) is StreamClass.HTTP
    assert classify_stream(b"GET /index.h", 6667) is StreamClass.OTHER
    assert classify_stream(b"\x16\x03\x01\x02\x00", 443) is StreamClass.OTHER


def test_generated_handshakes_never_classified_http():
    from src.wire.classify import classify_stream
    from src.wire.handshake import BtHandshake, ExtendedHandshake, encode_handshake
    rng = np.random.default_rng(31)
    ports = [80, 443, 8080, 6881, 51413]
    for _ in range(2_000):
        extended = ExtendedHandshake(int(rng.integers(1, 65536))) if rng.random() < 0.5 else None
        raw = encode_handshake(BtHandshake(rng.bytes(20), rng.bytes(20), extended))
        port = ports[int(rng.integers(0, len(ports)))] if rng.random() < 0.5 else int(rng.integers(1, 65536))
        assert classify_stream(raw, port) is StreamClass.BT_HANDSHAKE
        cut = raw[:int(rng.integers(1, len(raw) + 1))]
        assert classify_stream(cut, port) is not StreamClass.HTTP


# --- Golden fixtures ---

def test_golden_fixtures_pass():
    from src.wire.fixtures import fixture_paths, load_fixture, validate_fixture
    paths = fixture_paths(FIXTURES)
    assert len(paths) >= 10
    assert {f"krpc_{m}" for m in ("get_peers_query", "get_peers_response", "announce_peer_query",
                                  "announce_peer_response", "error")} <= {p.stem for p in paths}
    kinds = set()
    for path in paths:
        fixture = load_fixture(path)
        kinds.add(fixture.kind)
        result = validate_fixture(fixture)
        assert result.ok, f"{result.name}: {result.reason}"
    assert kinds == {"bencode", "compact_peers", "announce_request", "announce_response",
                     "handshake", "krpc"}


def test_corrupted_fixture_fails(tmp_path):
    from src.wire.fixtures import load_fixture, validate_fixture
    for name in ("handshake.bin", "handshake.expected.json"):
        shutil.copy(FIXTURES / name, tmp_path / name)
    raw = bytearray((tmp_path / "handshake.bin").read_bytes())
    raw[30] ^= 0xFF                                # inside info_hash
    (tmp_path / "handshake.bin").write_bytes(bytes(raw))
    result = validate_fixture(load_fixture(tmp_path / "handshake.bin"))
    assert not result.ok
    assert result.name == "handshake"


def test_fixture_kind_from_stem():
    from src.wire.fixtures import kind_of
    assert kind_of("krpc_error") == "krpc"
    assert kind_of("announce_response") == "announce_response"
    with pytest.raises(ValueError):
        kind_of("mystery")
