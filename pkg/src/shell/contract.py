"""Shared domain types: the vocabulary every layer of the simulator speaks.

Codecs, overlays, the adversary and the analysis pipeline exchange these
types only. Ground-truth fields (circuit owners, host identities) never
appear in the adversary-facing types defined here.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional

# 1 tick = 1 virtual millisecond
SimTime = int

TICKS_PER_SECOND = 1000


def seconds(value: float) -> SimTime:
    return int(round(value * TICKS_PER_SECOND))


# --- Enums ---

class StreamClass(Enum):
    BT_HANDSHAKE = "BtHandshake"
    TRACKER_ANNOUNCE = "TrackerAnnounce"
    HTTP = "Http"
    OTHER = "Other"


class Behavior(Enum):
    NO_TOR = "NoTor"
    TRACKER_ONLY_VIA_TOR = "TrackerOnlyViaTor"
    ALL_VIA_TOR = "AllViaTor"


class Ecosystem(Enum):
    PUBLIC = "Public"
    PRIVATE = "Private"
    UNDERGROUND = "Underground"


class SubscriptionSource(Enum):
    DIRECT = "Direct"
    TOR_EXIT = "TorExit"


class AnnounceEvent(Enum):
    STARTED = "started"
    STOPPED = "stopped"
    COMPLETED = "completed"
    PERIODIC = "periodic"


class TraceMethod(Enum):
    HIJACK = "Hijack"
    DHT_PORT_MATCH = "DhtPortMatch"
    LINK_SAME_CIRCUIT = "LinkSameCircuit"
    LINK_PEER_ID = "LinkPeerId"
    LINK_FRESH_ENDPOINT = "LinkFreshEndpoint"


DIRECT_METHODS = (TraceMethod.HIJACK, TraceMethod.DHT_PORT_MATCH)


class LinkProvenance(Enum):
    PEER_ID_MATCH = "PeerIdMatch"
    FRESH_ENDPOINT_FOLLOW = "FreshEndpointFollow"

    @property
    def method(self) -> TraceMethod:
        if self is LinkProvenance.PEER_ID_MATCH:
            return TraceMethod.LINK_PEER_ID
        return TraceMethod.LINK_FRESH_ENDPOINT


# --- Identity ---

@dataclass(frozen=True, order=True)
class Endpoint:
    ip: str      # dotted-quad IPv4
    port: int    # 0-65535

    def __post_init__(self) -> None:
        if not (0 <= self.port <= 65535):
            raise ValueError(f"port out of range: {self.port}")

    def __str__(self) -> str:
        return f"{self.ip}:{self.port}"


@dataclass(frozen=True)
class Host:
    id: int
    endpoint: Endpoint
    country: str     # ISO-3166 alpha-2
    asn: int


# --- Adversary-facing records ---

@dataclass(frozen=True)
class ExitObservation:
    """One stream as the instrumented exit understands it. Never carries the circuit owner."""
    circuit_id: int
    stream_id: int
    destination: Endpoint
    stream_class: StreamClass
    at: SimTime
    encrypted: bool = False
    info_hash: Optional[bytes] = None
    peer_id: Optional[bytes] = None
    listening_port: Optional[int] = None
    announce_peers: tuple[Endpoint, ...] = ()


@dataclass(frozen=True)
class TraceResult:
    circuit_id: int
    traced_endpoint: Endpoint
    method: TraceMethod
    at: SimTime
    stream_id: Optional[int] = None     # stream whose content produced the trace

    def to_record(self) -> dict:
        return {
            "kind": "trace",
            "circuit": self.circuit_id,
            "stream": self.stream_id,
            "endpoint": str(self.traced_endpoint),
            "method": self.method.value,
            "tick": self.at,
        }


class PolicyKind(Enum):
    MULTIPLEX_ALL = "MultiplexAll"
    ONE_STREAM_PER_CIRCUIT = "OneStreamPerCircuit"
    PORT_GROUP_ISOLATION = "PortGroupIsolation"
    PER_APPLICATION_ISOLATION = "PerApplicationIsolation"


class IoFailure(RuntimeError):
    """A report or log file could not be read or written."""
