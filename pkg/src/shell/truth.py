"""Ground truth: what really happened in a run.

Recorded by the simulation as it goes and read only by the analysis pipeline
after the run. The adversary never sees this ledger. Everything here is
simple bookkeeping and counts that can be checked by inspecting the records.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional

from src.shell.contract import Behavior, Host, SimTime

APP_BITTORRENT = "bittorrent"


@dataclass(frozen=True)
class StreamTruth:
    stream_id: int
    circuit_id: int
    owner: int
    app_tag: str
    dst_port: int
    exit_id: int
    opened_at: SimTime

    @property
    def is_bittorrent(self) -> bool:
        return self.app_tag == APP_BITTORRENT


@dataclass(frozen=True)
class ConnectionTruth:
    initiator: int
    source_ip: str
    via_tor: bool
    encrypted: bool
    at: SimTime


@dataclass
class GroundTruth:
    hosts: dict[int, Host] = field(default_factory=dict)
    behaviors: dict[int, Behavior] = field(default_factory=dict)
    downloads: dict[int, list[bytes]] = field(default_factory=dict)
    circuit_owner: dict[int, int] = field(default_factory=dict)
    streams: dict[int, StreamTruth] = field(default_factory=dict)
    connections: list[ConnectionTruth] = field(default_factory=list)
    exit_addresses: frozenset[str] = frozenset()

    # --- recording ---

    def add_host(self, host: Host, behavior: Optional[Behavior] = None,
                 downloads: Iterable[bytes] = ()) -> None:
        self.hosts[host.id] = host
        if behavior is not None:
            self.behaviors[host.id] = behavior
            self.downloads[host.id] = list(downloads)

    def record_stream(self, stream, circuit) -> None:
        self.circuit_owner[circuit.id] = circuit.owner
        self.streams[stream.id] = StreamTruth(
            stream_id=stream.id, circuit_id=circuit.id, owner=circuit.owner,
            app_tag=stream.app_tag, dst_port=stream.destination.port,
            exit_id=circuit.exit_hop, opened_at=stream.opened_at,
        )

    def record_connection(self, initiator: int, source_ip: str, via_tor: bool,
                          encrypted: bool, at: SimTime) -> None:
        self.connections.append(ConnectionTruth(initiator, source_ip, via_tor, encrypted, at))

    # --- queries ---

    def owner_host(self, circuit_id: int) -> Optional[Host]:
        owner = self.circuit_owner.get(circuit_id)
        return self.hosts.get(owner) if owner is not None else None

    def tor_bittorrent_users(self) -> set[int]:
        return {h for h, b in self.behaviors.items() if b is not Behavior.NO_TOR}

    def users_with(self, behavior: Behavior) -> set[int]:
        return {h for h, b in self.behaviors.items() if b is behavior}

    def tor_connection_counts(self) -> dict[str, int]:
        """P2P connections initiated by Tor BitTorrent users, split by what the target saw."""
        tor_users = self.tor_bittorrent_users()
        counts = {"total": 0, "from_exit": 0, "direct": 0}
        for c in self.connections:
            if c.initiator not in tor_users:
                continue
            counts["total"] += 1
            if c.source_ip in self.exit_addresses:
                counts["from_exit"] += 1
            else:
                counts["direct"] += 1
        return counts
