"""Peer agents and the client side of every BitTorrent exchange.

A peer reaches the tracker, the DHT, and other peers either directly from its
public address or through the overlay, depending on its behavior:

    NoTor              everything direct
    TrackerOnlyViaTor  tracker through a circuit, DHT and peer connections direct
    AllViaTor          tracker and peer connections through circuits, DHT direct
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Protocol

import numpy as np
import structlog

from src.bittorrent.dht import DhtClient
from src.bittorrent.tracker import UNREGISTERED, Tracker, UnknownInfoHash
from src.shell.contract import (
    AnnounceEvent,
    Behavior,
    Endpoint,
    Host,
    SimTime,
    SubscriptionSource,
)
from src.shell.truth import APP_BITTORRENT
from src.tor.overlay import TorOverlay
from src.wire.handshake import BtHandshake, ExtendedHandshake, encode_handshake
from src.wire.tracker import (
    AnnounceRequest,
    AnnounceResponse,
    TrackerFailure,
    decode_announce_response,
    encode_announce_request,
)

log = structlog.get_logger()

EPHEMERAL_PORTS = (49152, 65535)


class ConnectionRefused(RuntimeError):
    """Nothing is listening at the target endpoint for this content."""


class Listener(Protocol):
    endpoint: Endpoint

    def accepts(self, info_hash: bytes) -> bool: ...

    def accept(self, source: Endpoint, handshake: BtHandshake, at: SimTime) -> Optional[BtHandshake]: ...


@dataclass
class PeerAgent:
    host: Host
    behavior: Behavior = Behavior.NO_TOR
    downloads: list[bytes] = field(default_factory=list)
    peer_id: bytes = b"\x00" * 20
    online: bool = False
    browses: bool = False
    candidates: dict[bytes, list[Endpoint]] = field(default_factory=dict)
    connected: dict[bytes, set[Endpoint]] = field(default_factory=dict)
    attempted: dict[bytes, set[Endpoint]] = field(default_factory=dict)
    dht: Optional[DhtClient] = None

    @property
    def endpoint(self) -> Endpoint:
        return self.host.endpoint

    @property
    def public_ip(self) -> str:
        return self.host.endpoint.ip

    @property
    def listening_port(self) -> int:
        return self.host.endpoint.port

    @property
    def tracker_via_tor(self) -> bool:
        return self.behavior is not Behavior.NO_TOR

    @property
    def peers_via_tor(self) -> bool:
        return self.behavior is Behavior.ALL_VIA_TOR

    def new_session(self, rng: np.random.Generator) -> None:
        self.peer_id = rng.bytes(20)
        self.online = True

    def handshake(self, info_hash: bytes) -> BtHandshake:
        return BtHandshake(info_hash, self.peer_id, ExtendedHandshake(self.listening_port))

    def learn(self, info_hash: bytes, endpoints: list[Endpoint], front: bool = False) -> None:
        """Add candidates, dropping self and duplicates; ``front`` puts them first in line."""
        current = self.candidates.setdefault(info_hash, [])
        fresh = [ep for ep in dict.fromkeys(endpoints) if ep != self.endpoint and ep not in current]
        if front:
            current[:0] = fresh
        else:
            current.extend(fresh)

    def next_candidates(self, info_hash: bytes, k: int) -> list[Endpoint]:
        """Pop up to ``k`` candidates not yet tried, in line order."""
        tried = self.attempted.setdefault(info_hash, set())
        pool = self.candidates.get(info_hash, [])
        picked, rest = [], []
        for ep in pool:
            if len(picked) < k and ep not in tried:
                picked.append(ep)
                tried.add(ep)
            elif ep not in tried:
                rest.append(ep)
        self.candidates[info_hash] = rest
        return picked

    def known(self, info_hash: bytes) -> set[Endpoint]:
        return set(self.connected.get(info_hash, ())) | set(self.candidates.get(info_hash, ()))

    def pex_list(self, info_hash: bytes) -> set[Endpoint]:
        return set(self.connected.get(info_hash, ()))

    def accepts(self, info_hash: bytes) -> bool:
        return self.online and info_hash in self.downloads

    def accept(self, source: Endpoint, handshake: BtHandshake, at: SimTime) -> Optional[BtHandshake]:
        port = handshake.extended.listening_port if handshake.extended else source.port
        self.connected.setdefault(handshake.info_hash, set()).add(Endpoint(source.ip, port))
        return self.handshake(handshake.info_hash)


class PeerNetwork:
    """Who listens where."""

    def __init__(self) -> None:
        self._listeners: dict[Endpoint, Listener] = {}

    def register(self, listener: Listener) -> None:
        self._listeners[listener.endpoint] = listener

    def get(self, endpoint: Endpoint) -> Optional[Listener]:
        return self._listeners.get(endpoint)


@dataclass(frozen=True)
class Connection:
    initiator: int          # host id
    target: Endpoint
    source: Endpoint        # what the target sees
    info_hash: bytes
    via_tor: bool
    encrypted: bool
    dropped: bool           # target hung up after its handshake
    stream_id: Optional[int] = None
    at: SimTime = 0


def announce_to_tracker(
    peer: PeerAgent,
    info_hash: bytes,
    via_tor: bool,
    *,
    tracker: Tracker,
    tor: Optional[TorOverlay],
    at: SimTime,
    event: AnnounceEvent = AnnounceEvent.PERIODIC,
) -> AnnounceResponse:
    """One HTTP announce, through a circuit when ``via_tor``.

    The request always declares the peer's public address and listening port.
    """
    if info_hash not in peer.downloads:
        raise ValueError("peer is not downloading this content")
    request = encode_announce_request(
        AnnounceRequest(info_hash, peer.peer_id, peer.listening_port, event, ip=peer.public_ip),
        host=str(tracker.endpoint),
    )
    if via_tor:
        if tor is None:
            raise ValueError("via_tor announce needs an overlay")
        stream = tor.open_stream(peer.host.id, tracker.endpoint, APP_BITTORRENT, at)
        tor.exit_deliver(stream, request, at)
        raw = tracker.handle(request, tor.exit_address(stream), at, SubscriptionSource.TOR_EXIT)
        raw = tor.exit_return(stream, raw, at)
    else:
        raw = tracker.handle(request, peer.public_ip, at, SubscriptionSource.DIRECT)
    try:
        return decode_announce_response(raw)
    except TrackerFailure as e:
        if str(e) == UNREGISTERED:
            raise UnknownInfoHash(info_hash.hex()) from e
        raise


def dht_announce_and_lookup(peer: PeerAgent, info_hash: bytes, at: SimTime) -> list[Endpoint]:
    """get_peers for a token, announce_peer, then a fresh get_peers. Always direct."""
    if peer.dht is None:
        raise ValueError("peer has no DHT client")
    _, token = peer.dht.get_peers(info_hash, at)
    peer.dht.announce_peer(info_hash, peer.listening_port, token, at)
    peers, _ = peer.dht.get_peers(info_hash, at)
    return peers


def _obfuscated_handshake(rng: np.random.Generator) -> bytes:
    # key exchange plus random padding, opaque to the exit
    return rng.bytes(96 + int(rng.integers(0, 417)))


def connect_peer(
    initiator: PeerAgent,
    target: Endpoint,
    info_hash: bytes,
    via_tor: bool,
    *,
    network: PeerNetwork,
    tor: Optional[TorOverlay],
    at: SimTime,
    rng: np.random.Generator,
    encrypted: bool = False,
) -> Connection:
    """Open a connection and exchange handshakes (extended, carrying the listening port)."""
    listener = network.get(target)
    if listener is None or not listener.accepts(info_hash):
        raise ConnectionRefused(str(target))

    hs = initiator.handshake(info_hash)
    wire = _obfuscated_handshake(rng) if encrypted else encode_handshake(hs)
    ephemeral = int(rng.integers(EPHEMERAL_PORTS[0], EPHEMERAL_PORTS[1] + 1))
    stream = None
    if via_tor:
        if tor is None:
            raise ValueError("via_tor connection needs an overlay")
        stream = tor.open_stream(initiator.host.id, target, APP_BITTORRENT, at)
        stream.encrypted_payload = encrypted
        tor.exit_deliver(stream, wire, at)
        source = Endpoint(tor.exit_address(stream), ephemeral)
    else:
        source = Endpoint(initiator.public_ip, ephemeral)

    reply = listener.accept(source, hs, at)
    if reply is not None:
        initiator.connected.setdefault(info_hash, set()).add(target)
        if stream is not None:
            back = _obfuscated_handshake(rng) if encrypted else encode_handshake(reply)
            tor.exit_return(stream, back, at)
    return Connection(
        initiator=initiator.host.id, target=target, source=source, info_hash=info_hash,
        via_tor=via_tor, encrypted=encrypted, dropped=reply is None,
        stream_id=stream.id if stream is not None else None, at=at,
    )


def pex_exchange(a: PeerAgent, b: PeerAgent, info_hash: bytes) -> None:
    """Each side learns the other's connection list and the other itself."""
    a_list = a.pex_list(info_hash) | {a.endpoint}
    b_list = b.pex_list(info_hash) | {b.endpoint}
    a.learn(info_hash, sorted(b_list))
    b.learn(info_hash, sorted(a_list))
