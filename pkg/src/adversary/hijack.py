"""Tracker-response hijacking and the malicious peer that checks who shows up."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Optional

import structlog

from src.shell.contract import Endpoint, SimTime, TraceMethod, TraceResult
from src.wire.handshake import BtHandshake
from src.wire.tracker import AnnounceResponse

log = structlog.get_logger()


class AmbiguousCorrelation(RuntimeError):
    """Several hijacked circuits could explain one incoming connection."""

    def __init__(self, info_hash: bytes, circuits: list[int]) -> None:
        super().__init__(f"{len(circuits)} hijacked circuits for {info_hash.hex()}: {circuits}")
        self.info_hash = info_hash
        self.circuits = circuits


def hijack_announce(response: AnnounceResponse, malicious: Endpoint) -> AnnounceResponse:
    """Prepend the malicious peer and keep the original length (at least one entry)."""
    keep = max(len(response.peers), 1)
    peers = [malicious] + [p for p in response.peers if p != malicious]
    return AnnounceResponse(interval=response.interval, peers=peers[:keep])


@dataclass(frozen=True)
class HijackRecord:
    circuit_id: int
    stream_id: int
    info_hash: bytes
    at: SimTime

    def to_record(self) -> dict:
        return {"kind": "hijack", "circuit": self.circuit_id, "stream": self.stream_id,
                "tick": self.at}


class HijackLedger:
    """Hijacked responses per info_hash, kept for the correlation window."""

    def __init__(self, window: SimTime) -> None:
        self.window = window
        self._by_hash: dict[bytes, deque[HijackRecord]] = {}
        self.records: list[HijackRecord] = []

    def record(self, circuit_id: int, stream_id: int, info_hash: bytes, at: SimTime) -> HijackRecord:
        rec = HijackRecord(circuit_id, stream_id, info_hash, at)
        self._by_hash.setdefault(info_hash, deque()).append(rec)
        self.records.append(rec)
        return rec

    def correlate(self, info_hash: bytes, at: SimTime) -> Optional[HijackRecord]:
        """Most recent hijack of this content within the window; ambiguous if several circuits."""
        queue = self._by_hash.get(info_hash)
        if not queue:
            return None
        while queue and queue[0].at < at - self.window:
            queue.popleft()
        live = [r for r in queue if r.at <= at]
        circuits = sorted({r.circuit_id for r in live})
        if len(circuits) >= 2:
            raise AmbiguousCorrelation(info_hash, circuits)
        return live[-1] if live else None


def malicious_peer_accept(
    source: Endpoint,
    handshake: BtHandshake,
    at: SimTime,
    *,
    exit_addresses: frozenset[str],
    ledger: HijackLedger,
) -> Optional[TraceResult]:
    """Trace a direct connection back to the circuit whose response named us.

    Connections from a listed exit are the victim distributing content over
    Tor and reveal nothing. Raises AmbiguousCorrelation when two or more
    circuits qualify.
    """
    if source.ip in exit_addresses:
        log.debug("adversary.exit_connection", tick=at)
        return None
    hit = ledger.correlate(handshake.info_hash, at)
    if hit is None:
        return None
    return TraceResult(
        circuit_id=hit.circuit_id, traced_endpoint=source, method=TraceMethod.HIJACK,
        at=at, stream_id=hit.stream_id,
    )
