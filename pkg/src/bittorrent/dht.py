"""DHT tracking as one logical key-value service spoken to in KRPC.

Peers reach it directly from their public address: a client running over
the overlay cannot carry these datagrams through a circuit, so every
message here is sent outside Tor.
"""

from __future__ import annotations

import hashlib
import ipaddress
from collections import Counter
from typing import Iterable

import structlog

from src.shell.contract import Endpoint, SimTime, SubscriptionSource
from src.bittorrent.tracker import SwarmState
from src.wire.krpc import KrpcKind, KrpcMessage, decode_krpc, encode_krpc
from src.wire.tracker import MalformedMessage

log = structlog.get_logger()

ERR_GENERIC = 201
ERR_PROTOCOL = 203


class DhtTracker:
    def __init__(self, secret: bytes, ttl: SimTime, node_id: bytes = b"\x00" * 20) -> None:
        self._secret = secret
        self._ttl = ttl
        self._node_id = node_id
        self._swarms: dict[bytes, SwarmState] = {}
        self.sources: Counter[str] = Counter()

    def token_for(self, ip: str) -> bytes:
        return hashlib.sha1(ipaddress.IPv4Address(ip).packed + self._secret).digest()[:8]

    def swarm(self, info_hash: bytes) -> SwarmState:
        swarm = self._swarms.get(info_hash)
        if swarm is None:
            swarm = self._swarms[info_hash] = SwarmState(info_hash, self._ttl)
        return swarm

    def store(self, info_hash: bytes, endpoint: Endpoint, at: SimTime) -> None:
        """Store without a wire exchange (background seeders)."""
        self.swarm(info_hash).subscribe(endpoint, at, SubscriptionSource.DIRECT)

    def peers(self, info_hash: bytes, at: SimTime) -> list[Endpoint]:
        swarm = self._swarms.get(info_hash)
        if swarm is None:
            return []
        swarm.expire(at)
        return [sub.endpoint for sub in swarm.subscribers]

    def messages_from(self, addresses: Iterable[str]) -> int:
        """How many datagrams arrived from any of ``addresses``."""
        return sum(self.sources[a] for a in set(addresses))

    def handle(self, datagram: bytes, source: Endpoint, at: SimTime) -> bytes:
        self.sources[source.ip] += 1
        try:
            query = decode_krpc(datagram)
        except MalformedMessage as e:
            log.debug("dht.malformed", error=str(e), tick=at)
            return encode_krpc(KrpcMessage(b"", KrpcKind.ERROR, error_code=ERR_PROTOCOL,
                                           error_text="malformed message"))

        if query.kind is KrpcKind.GET_PEERS_QUERY:
            return encode_krpc(query.reply(
                KrpcKind.GET_PEERS_RESPONSE, node_id=self._node_id,
                peers=self.peers(query.info_hash, at), token=self.token_for(source.ip),
            ))
        if query.kind is KrpcKind.ANNOUNCE_PEER_QUERY:
            if query.token != self.token_for(source.ip):
                return encode_krpc(query.reply(KrpcKind.ERROR, error_code=ERR_PROTOCOL,
                                               error_text="bad token"))
            self.store(query.info_hash, Endpoint(source.ip, query.port), at)
            return encode_krpc(query.reply(KrpcKind.ANNOUNCE_PEER_RESPONSE, node_id=self._node_id))
        return encode_krpc(query.reply(KrpcKind.ERROR, error_code=ERR_GENERIC,
                                       error_text="unsupported"))


class DhtClient:
    """One host's view of the DHT: txn ids, tokens, and get_peers/announce_peer round trips."""

    def __init__(self, dht: DhtTracker, source: Endpoint, node_id: bytes = b"\x00" * 20) -> None:
        self._dht = dht
        self.source = source
        self._node_id = node_id
        self._next_txn = 0

    def _txn(self) -> bytes:
        txn = self._next_txn.to_bytes(2, "big")
        self._next_txn = (self._next_txn + 1) & 0xFFFF
        return txn

    def _roundtrip(self, msg: KrpcMessage, at: SimTime) -> KrpcMessage:
        reply = decode_krpc(self._dht.handle(encode_krpc(msg), self.source, at))
        if reply.txn_id != msg.txn_id:
            raise MalformedMessage("KRPC reply does not echo the transaction id")
        return reply

    def get_peers(self, info_hash: bytes, at: SimTime) -> tuple[list[Endpoint], bytes]:
        reply = self._roundtrip(
            KrpcMessage(self._txn(), KrpcKind.GET_PEERS_QUERY, node_id=self._node_id,
                        info_hash=info_hash), at)
        if reply.kind is not KrpcKind.GET_PEERS_RESPONSE:
            return [], b""
        return reply.peers, reply.token or b""

    def announce_peer(self, info_hash: bytes, port: int, token: bytes, at: SimTime) -> bool:
        reply = self._roundtrip(
            KrpcMessage(self._txn(), KrpcKind.ANNOUNCE_PEER_QUERY, node_id=self._node_id,
                        info_hash=info_hash, port=port, token=token), at)
        return reply.kind is KrpcKind.ANNOUNCE_PEER_RESPONSE
