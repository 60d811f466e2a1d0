"""Match an observed listening port against the DHT's subscribers for the same content."""

from __future__ import annotations

from typing import Callable, Iterable, Optional

from src.shell.contract import Endpoint, ExitObservation, StreamClass, TraceMethod, TraceResult

Lookup = Callable[[bytes], list[Endpoint]]

MATCHABLE = (StreamClass.TRACKER_ANNOUNCE, StreamClass.BT_HANDSHAKE)


def port_match(peers: Iterable[Endpoint], port: int) -> Optional[Endpoint]:
    """The only peer listening on ``port``; None for zero or several."""
    found = None
    for peer in peers:
        if peer.port == port:
            if found is not None:
                return None
            found = peer
    return found


def dht_port_match(observation: ExitObservation, lookup: Lookup) -> Optional[TraceResult]:
    if observation.stream_class not in MATCHABLE:
        return None
    if observation.info_hash is None or observation.listening_port is None:
        return None
    match = port_match(lookup(observation.info_hash), observation.listening_port)
    if match is None:
        return None
    return TraceResult(
        circuit_id=observation.circuit_id, traced_endpoint=match,
        method=TraceMethod.DHT_PORT_MATCH, at=observation.at, stream_id=observation.stream_id,
    )


class DhtMatcher:
    """Looks each (circuit, info_hash) up once."""

    def __init__(self, lookup: Lookup) -> None:
        self._lookup = lookup
        self._done: set[tuple[int, bytes]] = set()
        self.lookups = 0

    def observe(self, observation: ExitObservation) -> Optional[TraceResult]:
        if observation.info_hash is None or observation.listening_port is None:
            return None
        key = (observation.circuit_id, observation.info_hash)
        if key in self._done:
            return None
        self._done.add(key)
        self.lookups += 1
        return dht_port_match(observation, self._lookup)
