"""Circuit linkage: union-find over circuits, fresh-endpoint index, trace propagation.

A circuit is the union-find element, so streams sharing a circuit are linked
implicitly. Two rules join circuits:

  * the same peer_id in unencrypted BitTorrent messages on both
  * a stream to an endpoint that a tracker response on the other circuit
    returned within the freshness window
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Hashable, Iterable, Optional, Sequence

import structlog

from src.shell.contract import (
    Endpoint,
    ExitObservation,
    LinkProvenance,
    SimTime,
    TraceMethod,
    TraceResult,
)

log = structlog.get_logger()


class UnionFind:
    """Union by rank with path compression. Elements are added on first sight."""

    def __init__(self, elements: Iterable[Hashable] = ()) -> None:
        self._leader: dict[Hashable, Hashable] = {}
        self._rank: dict[Hashable, int] = {}
        self._size: dict[Hashable, int] = {}
        self.n_clusters = 0
        for e in elements:
            self.add(e)

    def __contains__(self, element: Hashable) -> bool:
        return element in self._leader

    def __len__(self) -> int:
        return len(self._leader)

    def add(self, element: Hashable) -> None:
        if element not in self._leader:
            self._leader[element] = element
            self._rank[element] = 0
            self._size[element] = 1
            self.n_clusters += 1

    def find(self, element: Hashable) -> Hashable:
        self.add(element)
        root = element
        while self._leader[root] != root:
            root = self._leader[root]
        while self._leader[element] != root:
            self._leader[element], element = root, self._leader[element]
        return root

    def size(self, element: Hashable) -> int:
        return self._size[self.find(element)]

    def union(self, a: Hashable, b: Hashable) -> bool:
        """Merge the sets of ``a`` and ``b``; False when they were already one set."""
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        if self._rank[ra] < self._rank[rb]:
            ra, rb = rb, ra
        self._leader[rb] = ra
        self._size[ra] += self._size[rb]
        if self._rank[ra] == self._rank[rb]:
            self._rank[ra] += 1
        self.n_clusters -= 1
        return True


@dataclass(frozen=True)
class UnionRecord:
    a: int
    b: int
    provenance: LinkProvenance
    at: SimTime

    def to_record(self) -> dict:
        return {"kind": "union", "a": self.a, "b": self.b,
                "provenance": self.provenance.value, "tick": self.at}


class LinkageGraph:
    def __init__(self) -> None:
        self._uf = UnionFind()
        self._streams: dict[int, list[int]] = {}
        self.edges: list[UnionRecord] = []

    def add_circuit(self, circuit_id: int) -> None:
        self._uf.add(circuit_id)
        self._streams.setdefault(circuit_id, [])

    def add_stream(self, circuit_id: int, stream_id: int) -> None:
        self.add_circuit(circuit_id)
        self._streams[circuit_id].append(stream_id)

    @property
    def circuits(self) -> list[int]:
        return list(self._streams)

    def streams_of(self, circuit_id: int) -> list[int]:
        return self._streams.get(circuit_id, [])

    def find(self, circuit_id: int) -> int:
        self.add_circuit(circuit_id)
        return self._uf.find(circuit_id)

    def union(self, a: int, b: int, provenance: LinkProvenance, at: SimTime) -> Optional[UnionRecord]:
        self.add_circuit(a)
        self.add_circuit(b)
        if not self._uf.union(a, b):
            return None
        record = UnionRecord(a, b, provenance, at)
        self.edges.append(record)
        return record

    def components(self) -> dict[int, list[int]]:
        out: dict[int, list[int]] = {}
        for c in self._streams:
            out.setdefault(self._uf.find(c), []).append(c)
        return out

    @classmethod
    def from_log(cls, observations: Iterable[ExitObservation],
                 unions: Iterable[UnionRecord]) -> "LinkageGraph":
        """Rebuild from recorded observations and unions."""
        graph = cls()
        for obs in observations:
            graph.add_stream(obs.circuit_id, obs.stream_id)
        for u in unions:
            graph.union(u.a, u.b, u.provenance, u.at)
        return graph


class FreshEndpointIndex:
    """Endpoints returned in tracker responses, by the circuit that received them."""

    def __init__(self, window: SimTime) -> None:
        self.window = window
        self._entries: dict[Endpoint, deque[tuple[int, SimTime]]] = {}

    def __len__(self) -> int:
        return len(self._entries)

    def add(self, endpoint: Endpoint, circuit_id: int, at: SimTime) -> None:
        self._entries.setdefault(endpoint, deque()).append((circuit_id, at))

    def sources(self, endpoint: Endpoint, at: SimTime) -> list[int]:
        """Distinct circuits that received ``endpoint`` within the window, oldest first."""
        entries = self._entries.get(endpoint)
        if not entries:
            return []
        while entries and at - entries[0][1] > self.window:
            entries.popleft()
        if not entries:
            del self._entries[endpoint]
            return []
        return list(dict.fromkeys(c for c, _ in entries))


class StreamLinker:
    """Applies both linkage rules to each observation as it arrives."""

    def __init__(self, graph: LinkageGraph, window: SimTime,
                 ignore: frozenset[Endpoint] = frozenset()) -> None:
        self.graph = graph
        self.index = FreshEndpointIndex(window)
        self._ignore = ignore
        self._peer_ids: dict[bytes, int] = {}

    def link_streams(self, obs: ExitObservation) -> list[UnionRecord]:
        self.graph.add_stream(obs.circuit_id, obs.stream_id)
        unions = []

        if obs.peer_id is not None and not obs.encrypted:
            first = self._peer_ids.setdefault(obs.peer_id, obs.circuit_id)
            if first != obs.circuit_id:
                rec = self.graph.union(first, obs.circuit_id, LinkProvenance.PEER_ID_MATCH, obs.at)
                if rec is not None:
                    unions.append(rec)

        # a destination handed to several circuits, or to this one, proves nothing
        sources = self.index.sources(obs.destination, obs.at)
        if len(sources) == 1 and sources[0] != obs.circuit_id:
            rec = self.graph.union(sources[0], obs.circuit_id,
                                   LinkProvenance.FRESH_ENDPOINT_FOLLOW, obs.at)
            if rec is not None:
                unions.append(rec)

        for peer in obs.announce_peers:
            if peer not in self._ignore:
                self.index.add(peer, obs.circuit_id, obs.at)
        return unions


# --- Propagation ---

@dataclass(frozen=True)
class StreamTrace:
    stream_id: int
    circuit_id: int
    endpoint: Endpoint
    method: TraceMethod


@dataclass
class Propagation:
    streams: dict[int, StreamTrace]
    component_endpoint: dict[int, Endpoint]
    conflicted: set[int]

    @property
    def traced_circuits(self) -> set[int]:
        return {t.circuit_id for t in self.streams.values()}


def propagate_traces(graph: LinkageGraph, traces: Sequence[TraceResult]) -> Propagation:
    """Mark every stream of every circuit in a traced component.

    Components whose traces name different addresses are Conflicted and yield
    nothing. Each traced stream records how it was reached: the direct method
    for the stream that produced a trace, LinkSameCircuit for its circuit
    mates, and the provenance of the linking edge for other circuits.
    """
    by_root: dict[int, list[TraceResult]] = {}
    for t in traces:
        by_root.setdefault(graph.find(t.circuit_id), []).append(t)

    adjacency: dict[int, list[tuple[int, LinkProvenance]]] = {}
    for e in graph.edges:
        adjacency.setdefault(e.a, []).append((e.b, e.provenance))
        adjacency.setdefault(e.b, []).append((e.a, e.provenance))

    streams: dict[int, StreamTrace] = {}
    endpoints: dict[int, Endpoint] = {}
    conflicted: set[int] = set()
    for root in sorted(by_root):
        found = sorted(by_root[root], key=lambda t: t.at)
        if len({t.traced_endpoint.ip for t in found}) > 1:
            conflicted.add(root)
            log.debug("adversary.component_conflicted", root=root, traces=len(found))
            continue
        endpoint = found[0].traced_endpoint
        endpoints[root] = endpoint

        direct: dict[int, TraceMethod] = {}
        for t in found:
            if t.stream_id is not None:
                direct.setdefault(t.stream_id, t.method)

        sources = sorted({t.circuit_id for t in found})
        reached: dict[int, TraceMethod] = {c: TraceMethod.LINK_SAME_CIRCUIT for c in sources}
        queue = deque(sources)
        while queue:
            c = queue.popleft()
            for nxt, provenance in adjacency.get(c, ()):
                if nxt not in reached:
                    reached[nxt] = provenance.method
                    queue.append(nxt)

        for c, method in reached.items():
            for s in graph.streams_of(c):
                streams[s] = StreamTrace(s, c, endpoint, direct.get(s, method))
    return Propagation(streams=streams, component_endpoint=endpoints, conflicted=conflicted)
