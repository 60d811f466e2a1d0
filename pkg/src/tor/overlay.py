"""Stream multiplexing over circuits and delivery to instrumented exits."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Protocol

import numpy as np
import structlog

from src.shell.config import TorConfig
from src.shell.contract import Endpoint, PolicyKind, SimTime, StreamClass, seconds
from src.tor.directory import Circuit, Directory, build_circuit
from src.wire.classify import TAP_BYTES

log = structlog.get_logger()


@dataclass(frozen=True)
class CircuitPolicy:
    """Which of a client's circuits a new stream may join.

    ``port_groups`` maps destination ports to a group name; every other port
    falls into ``default_group``, so each port belongs to exactly one group.
    """
    kind: PolicyKind = PolicyKind.MULTIPLEX_ALL
    port_groups: dict[int, str] = field(default_factory=dict)
    default_group: str = "other"

    @classmethod
    def from_config(cls, tor: TorConfig) -> "CircuitPolicy":
        groups = {port: name for name, ports in tor.port_groups.items() for port in ports}
        return cls(kind=PolicyKind(tor.policy), port_groups=groups)

    def group_of(self, port: int) -> str:
        return self.port_groups.get(port, self.default_group)

    def isolation_key(self, destination: Endpoint, app_tag: str) -> object:
        """None means any circuit; a OneStreamPerCircuit stream never reuses."""
        if self.kind is PolicyKind.PORT_GROUP_ISOLATION:
            return ("port-group", self.group_of(destination.port))
        if self.kind is PolicyKind.PER_APPLICATION_ISOLATION:
            return ("app", app_tag)
        return None


@dataclass
class Stream:
    id: int
    circuit_id: int
    destination: Endpoint
    opened_at: SimTime
    app_tag: str
    stream_class: Optional[StreamClass] = None    # filled at the exit
    encrypted_payload: bool = False


@dataclass(frozen=True)
class TapRecord:
    """What an instrumented exit hands its tap. The circuit owner is deliberately absent."""
    circuit_id: int
    stream_id: int
    exit_id: int
    destination: Endpoint
    payload_prefix: bytes
    at: SimTime


class ExitTap(Protocol):
    def on_forward(self, record: TapRecord) -> Optional[StreamClass]: ...

    def on_return(self, record: TapRecord, payload: bytes) -> bytes: ...


class TorOverlay:
    """Client-side circuit management plus the exit side of every stream."""

    def __init__(
        self,
        directory: Directory,
        policy: CircuitPolicy,
        rng: np.random.Generator,
        n_hops: int = 3,
        circuit_lifetime: SimTime = seconds(600),
    ) -> None:
        self._directory = directory
        self._policy = policy
        self._rng = rng
        self._n_hops = n_hops
        self._lifetime = circuit_lifetime
        self._circuits: dict[int, Circuit] = {}
        self._streams: dict[int, Stream] = {}
        self._by_client: dict[int, list[int]] = {}
        self._latest: dict[tuple[int, object], int] = {}
        self._taps: dict[int, ExitTap] = {}
        self._open_hooks: list[Callable[[Stream, Circuit], None]] = []

    @property
    def policy(self) -> CircuitPolicy:
        return self._policy

    @property
    def directory(self) -> Directory:
        return self._directory

    @property
    def circuits(self) -> dict[int, Circuit]:
        return self._circuits

    @property
    def streams(self) -> dict[int, Stream]:
        return self._streams

    def circuit(self, circuit_id: int) -> Circuit:
        return self._circuits[circuit_id]

    def circuits_of(self, client: int) -> list[Circuit]:
        return [self._circuits[c] for c in self._by_client.get(client, [])]

    def attach_tap(self, exit_host_id: int, tap: ExitTap) -> None:
        self._taps[exit_host_id] = tap

    def on_stream_opened(self, hook: Callable[[Stream, Circuit], None]) -> None:
        self._open_hooks.append(hook)

    def _reusable(self, client: int, key: object, at: SimTime) -> Optional[Circuit]:
        if self._policy.kind is PolicyKind.ONE_STREAM_PER_CIRCUIT:
            return None
        circuit_id = self._latest.get((client, key))
        if circuit_id is None:
            return None
        circuit = self._circuits[circuit_id]
        if at - circuit.created_at >= self._lifetime:
            return None
        return circuit

    def open_stream(self, client: int, destination: Endpoint, app_tag: str, at: SimTime) -> Stream:
        """Attach a new stream to a reusable circuit or a freshly built one.

        Raises InsufficientRelays when a new circuit is needed and cannot be built.
        """
        key = self._policy.isolation_key(destination, app_tag)
        circuit = self._reusable(client, key, at)
        if circuit is None:
            circuit = build_circuit(
                self._directory, client, self._rng,
                n_hops=self._n_hops, circuit_id=len(self._circuits), at=at,
            )
            circuit.isolation_key = key
            self._circuits[circuit.id] = circuit
            self._by_client.setdefault(client, []).append(circuit.id)
            self._latest[(client, key)] = circuit.id
            log.debug("tor.circuit_built", circuit=circuit.id, exit=circuit.exit_hop, tick=at)
        stream = Stream(
            id=len(self._streams), circuit_id=circuit.id, destination=destination,
            opened_at=at, app_tag=app_tag,
        )
        self._streams[stream.id] = stream
        circuit.streams.append(stream.id)
        for hook in self._open_hooks:
            hook(stream, circuit)
        return stream

    def exit_of(self, stream: Stream) -> int:
        return self._circuits[stream.circuit_id].exit_hop

    def exit_address(self, stream: Stream) -> str:
        """The address the destination sees for a Tor stream."""
        return self._directory[self.exit_of(stream)].endpoint.ip

    def _record(self, stream: Stream, payload: bytes, at: SimTime) -> TapRecord:
        return TapRecord(
            circuit_id=stream.circuit_id,
            stream_id=stream.id,
            exit_id=self.exit_of(stream),
            destination=stream.destination,
            payload_prefix=payload[:TAP_BYTES],
            at=at,
        )

    def exit_deliver(self, stream: Stream, payload: bytes, at: SimTime) -> Optional[TapRecord]:
        """Relay the stream's opening bytes out of the exit; instrumented exits see them."""
        tap = self._taps.get(self.exit_of(stream))
        if tap is None:
            return None
        record = self._record(stream, payload, at)
        stream.stream_class = tap.on_forward(record)
        return record

    def exit_return(self, stream: Stream, payload: bytes, at: SimTime) -> bytes:
        """Carry destination bytes back into the circuit; an instrumented exit may rewrite them."""
        tap = self._taps.get(self.exit_of(stream))
        if tap is None:
            return payload
        return tap.on_return(self._record(stream, b"", at), payload)
