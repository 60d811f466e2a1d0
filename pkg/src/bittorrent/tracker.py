"""Centralized tracker: per-info_hash swarms answering HTTP announces."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional

import structlog

from src.shell.contract import AnnounceEvent, Endpoint, SimTime, SubscriptionSource
from src.wire.tracker import (
    AnnounceRequest,
    AnnounceResponse,
    MalformedMessage,
    decode_announce_request,
    encode_announce_response,
    encode_tracker_failure,
)

log = structlog.get_logger()


UNREGISTERED = "unregistered torrent"


class UnknownInfoHash(ValueError):
    """The tracker does not track this content."""


@dataclass(frozen=True)
class Subscription:
    endpoint: Endpoint
    subscribed_at: SimTime
    via: SubscriptionSource


class SwarmState:
    """Live subscriptions for one info_hash, at most one per endpoint."""

    def __init__(self, info_hash: bytes, ttl: SimTime) -> None:
        self.info_hash = info_hash
        self.ttl = ttl
        self._subs: dict[Endpoint, Subscription] = {}

    def __len__(self) -> int:
        return len(self._subs)

    def __contains__(self, endpoint: Endpoint) -> bool:
        return endpoint in self._subs

    @property
    def subscribers(self) -> list[Subscription]:
        return list(self._subs.values())

    def subscribe(self, endpoint: Endpoint, at: SimTime, via: SubscriptionSource) -> None:
        # re-insert so dict order tracks recency
        self._subs.pop(endpoint, None)
        self._subs[endpoint] = Subscription(endpoint, at, via)

    def unsubscribe(self, endpoint: Endpoint) -> None:
        self._subs.pop(endpoint, None)

    def expire(self, now: SimTime) -> int:
        cutoff = now - self.ttl
        stale = [ep for ep, sub in self._subs.items() if sub.subscribed_at < cutoff]
        for ep in stale:
            del self._subs[ep]
        return len(stale)

    def recent(self, now: SimTime, limit: int, exclude: Optional[Endpoint] = None) -> list[Endpoint]:
        """Up to ``limit`` live endpoints, most recently subscribed first."""
        self.expire(now)
        out = []
        for ep in reversed(self._subs):
            if ep == exclude:
                continue
            out.append(ep)
            if len(out) >= limit:
                break
        return out


class Tracker:
    def __init__(
        self,
        endpoint: Endpoint,
        info_hashes: Iterable[bytes],
        interval_s: int = 600,
        max_peers: int = 50,
    ) -> None:
        self.endpoint = endpoint
        self.interval_s = interval_s
        self.max_peers = max_peers
        ttl = 2 * interval_s * 1000
        self._swarms = {ih: SwarmState(ih, ttl) for ih in info_hashes}
        self.announces = 0

    def swarm(self, info_hash: bytes) -> SwarmState:
        try:
            return self._swarms[info_hash]
        except KeyError:
            raise UnknownInfoHash(info_hash.hex()) from None

    def swarms(self) -> list[SwarmState]:
        return list(self._swarms.values())

    def register(self, info_hash: bytes, endpoint: Endpoint, at: SimTime,
                 via: SubscriptionSource = SubscriptionSource.DIRECT) -> None:
        """Subscribe without a wire exchange (background seeders)."""
        self.swarm(info_hash).subscribe(endpoint, at, via)

    def announce(self, req: AnnounceRequest, source_ip: str, at: SimTime,
                 via: SubscriptionSource) -> AnnounceResponse:
        """Register the client-declared endpoint and return recent peers.

        The endpoint recorded is the one the announce declares, falling back
        to the connection's source address, so a client announcing through
        an exit still subscribes its own public address.
        """
        swarm = self.swarm(req.info_hash)
        self.announces += 1
        endpoint = req.declared_endpoint(source_ip)
        if req.event is AnnounceEvent.STOPPED:
            swarm.unsubscribe(endpoint)
            return AnnounceResponse(interval=self.interval_s, peers=[])
        peers = swarm.recent(at, self.max_peers, exclude=endpoint)
        swarm.subscribe(endpoint, at, via)
        return AnnounceResponse(interval=self.interval_s, peers=peers)

    def handle(self, payload: bytes, source_ip: str, at: SimTime, via: SubscriptionSource) -> bytes:
        """Serve one HTTP announce; failures come back as a bencoded failure reason."""
        try:
            req = decode_announce_request(payload)
            return encode_announce_response(self.announce(req, source_ip, at, via))
        except UnknownInfoHash:
            log.debug("tracker.unknown_info_hash", tick=at)
            return encode_tracker_failure(UNREGISTERED)
        except MalformedMessage as e:
            log.debug("tracker.malformed_announce", error=str(e), tick=at)
            return encode_tracker_failure("invalid request")
