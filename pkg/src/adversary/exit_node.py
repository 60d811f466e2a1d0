"""The instrumented exits and the malicious peer, wired to the three attacks."""

from __future__ import annotations

from collections import Counter
from typing import Optional

import structlog

from src.adversary.dht_match import DhtMatcher, Lookup
from src.adversary.hijack import AmbiguousCorrelation, HijackLedger, hijack_announce, malicious_peer_accept
from src.adversary.linkage import LinkageGraph, StreamLinker
from src.adversary.observations import announce_peers, extract_observation, is_stopping
from src.adversary.tracelog import TraceLog
from src.shell.config import AdversaryConfig
from src.shell.contract import Endpoint, ExitObservation, SimTime, StreamClass, TraceResult, seconds
from src.tor.overlay import TapRecord
from src.wire.classify import classify_stream
from src.wire.handshake import BtHandshake
from src.wire.tracker import MalformedMessage, TrackerFailure, decode_announce_response, encode_announce_response

log = structlog.get_logger()


class MaliciousExit:
    """Tap shared by every instrumented exit.

    Announce requests are held until their response passes back through the
    exit, so the observation carries the peer list the client actually got.
    Only ``hijack_exit`` rewrites responses.
    """

    def __init__(
        self,
        config: AdversaryConfig,
        *,
        exit_addresses: frozenset[str],
        malicious_endpoint: Endpoint,
        hijack_exit: Optional[int],
        dht_lookup: Optional[Lookup] = None,
    ) -> None:
        self._config = config
        self.exit_addresses = exit_addresses
        self.malicious_endpoint = malicious_endpoint
        self._hijack_exit = hijack_exit if (config.enabled and config.hijack_enabled) else None
        self.observations: list[ExitObservation] = []
        self.trace_log = TraceLog()
        self.graph = LinkageGraph()
        self.linker = StreamLinker(self.graph, seconds(config.freshness_window_s),
                                   ignore=frozenset({malicious_endpoint}))
        self.ledger = HijackLedger(seconds(config.correlation_window_s))
        self.matcher = (DhtMatcher(dht_lookup)
                        if (config.enabled and config.dht_match_enabled and dht_lookup) else None)
        self._linkage = config.enabled and config.linkage_enabled
        self.counters: Counter[str] = Counter()
        self._pending: dict[int, tuple[TapRecord, StreamClass]] = {}

    # --- ExitTap ---

    def on_forward(self, record: TapRecord) -> StreamClass:
        cls = classify_stream(record.payload_prefix, record.destination.port)
        self.counters[f"class.{cls.value}"] += 1
        if cls is StreamClass.TRACKER_ANNOUNCE:
            self._pending[record.stream_id] = (record, cls)
        else:
            self._observe(extract_observation(record, cls))
        return cls

    def on_return(self, record: TapRecord, payload: bytes) -> bytes:
        pending = self._pending.pop(record.stream_id, None)
        if pending is None:
            return payload
        forward, cls = pending
        if forward.exit_id == self._hijack_exit and not is_stopping(forward):
            payload = self._hijack(forward, payload)
        peers = tuple(p for p in announce_peers(payload) if p != self.malicious_endpoint)
        self._observe(extract_observation(forward, cls, peers))
        return payload

    def _hijack(self, forward: TapRecord, payload: bytes) -> bytes:
        try:
            response = decode_announce_response(payload)
        except (MalformedMessage, TrackerFailure):
            return payload
        info_hash = extract_observation(forward, StreamClass.TRACKER_ANNOUNCE).info_hash
        if info_hash is None:
            return payload
        self.trace_log.add(self.ledger.record(forward.circuit_id, forward.stream_id, info_hash, forward.at))
        self.counters["hijacked"] += 1
        return encode_announce_response(hijack_announce(response, self.malicious_endpoint))

    def _observe(self, obs: ExitObservation) -> None:
        self.observations.append(obs)
        if self._linkage:
            for union in self.linker.link_streams(obs):
                self.trace_log.add(union)
                self.counters["unions"] += 1
        else:
            self.graph.add_stream(obs.circuit_id, obs.stream_id)
        if self.matcher is not None:
            trace = self.matcher.observe(obs)
            if trace is not None:
                self._emit(trace)

    def _emit(self, trace: TraceResult) -> None:
        self.trace_log.add(trace)
        self.counters[f"trace.{trace.method.value}"] += 1
        log.debug("adversary.trace", method=trace.method.value, circuit=trace.circuit_id, tick=trace.at)

    # --- malicious peer ---

    def on_incoming(self, source: Endpoint, handshake: BtHandshake, at: SimTime) -> None:
        try:
            trace = malicious_peer_accept(source, handshake, at,
                                          exit_addresses=self.exit_addresses, ledger=self.ledger)
        except AmbiguousCorrelation as e:
            self.counters["ambiguous"] += 1
            log.debug("adversary.ambiguous_correlation", circuits=e.circuits, tick=at)
            return
        self.counters["incoming"] += 1
        if trace is not None:
            self._emit(trace)

    def flush(self) -> None:
        """Observe announces whose response never came back."""
        for forward, cls in list(self._pending.values()):
            self._observe(extract_observation(forward, cls))
        self._pending.clear()


class MaliciousPeer:
    """Listens for any content, reports the handshake, then hangs up."""

    def __init__(self, endpoint: Endpoint, adversary: MaliciousExit) -> None:
        self.endpoint = endpoint
        self._adversary = adversary

    def accepts(self, info_hash: bytes) -> bool:
        return True

    def accept(self, source: Endpoint, handshake: BtHandshake, at: SimTime) -> Optional[BtHandshake]:
        self._adversary.on_incoming(source, handshake, at)
        return None
