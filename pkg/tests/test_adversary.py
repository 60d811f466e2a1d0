"""Tests for the adversary: observation extraction, the tracker hijack, DHT port
matching, circuit linkage, and trace propagation."""

from __future__ import annotations

import numpy as np
import pytest

from src.shell.contract import (
    AnnounceEvent,
    Endpoint,
    ExitObservation,
    LinkProvenance,
    StreamClass,
    TraceMethod,
    TraceResult,
    seconds,
)
from src.tor.overlay import TapRecord

IH = b"\x33" * 20
PID = b"P" * 20
MALICIOUS = Endpoint("203.0.113.66", 51413)
TRACKER = Endpoint("198.51.100.7", 6969)
EXIT_IPS = frozenset({"10.9.0.3", "10.9.0.4"})


def _announce_record(circuit=1, stream=1, exit_id=3, at=0, event=AnnounceEvent.STARTED, port=40000):
    from src.wire.tracker import AnnounceRequest, encode_announce_request
    raw = encode_announce_request(AnnounceRequest(IH, PID, port, event, ip="81.0.0.1"))
    return TapRecord(circuit, stream, exit_id, TRACKER, raw, at)


def _response(*peers):
    from src.wire.tracker import AnnounceResponse, encode_announce_response
    return encode_announce_response(AnnounceResponse(600, list(peers)))


def _obs(circuit, stream, at=0, **kwargs):
    fields = dict(destination=Endpoint("82.0.0.1", 7000), stream_class=StreamClass.BT_HANDSHAKE)
    fields.update(kwargs)
    return ExitObservation(circuit_id=circuit, stream_id=stream, at=at, **fields)


def _exit(**overrides):
    from src.adversary.exit_node import MaliciousExit
    from src.shell.config import AdversaryConfig
    config = AdversaryConfig(**overrides)
    return MaliciousExit(config, exit_addresses=EXIT_IPS, malicious_endpoint=MALICIOUS,
                         hijack_exit=3, dht_lookup=lambda ih: [])


# --- Observations ---

def test_extract_announce_observation():
    from src.adversary.observations import extract_observation
    obs = extract_observation(_announce_record(port=41234))
    assert obs.stream_class is StreamClass.TRACKER_ANNOUNCE
    assert obs.info_hash == IH and obs.peer_id == PID and obs.listening_port == 41234


def test_extract_handshake_observation():
    from src.adversary.observations import extract_observation
    from src.wire.handshake import BtHandshake, ExtendedHandshake, encode_handshake
    raw = encode_handshake(BtHandshake(IH, PID, ExtendedHandshake(5555)))
    obs = extract_observation(TapRecord(2, 9, 3, Endpoint("82.0.0.1", 7000), raw, 10))
    assert obs.stream_class is StreamClass.BT_HANDSHAKE
    assert (obs.info_hash, obs.peer_id, obs.listening_port) == (IH, PID, 5555)


def test_looks_encrypted():
    from src.adversary.observations import looks_encrypted
    assert looks_encrypted(np.random.default_rng(0).bytes(200))
    assert not looks_encrypted(b"USER nick\r\nNICK someone\r\n" * 4)
    assert not looks_encrypted(b"\x00" * 10)


# --- Hijack ---

def test_hijack_prepends_and_keeps_length():
    from src.adversary.hijack import hijack_announce
    from src.wire.tracker import AnnounceResponse
    a, b = Endpoint("82.0.0.1", 1), Endpoint("82.0.0.2", 2)
    out = hijack_announce(AnnounceResponse(600, [a, b]), MALICIOUS)
    assert out.peers == [MALICIOUS, a]
    assert hijack_announce(AnnounceResponse(600, []), MALICIOUS).peers == [MALICIOUS]


def test_exit_rewrites_only_on_hijack_exit():
    from src.wire.tracker import decode_announce_response
    adversary = _exit()
    peer = Endpoint("82.0.0.1", 1)
    rec = _announce_record(exit_id=3)
    adversary.on_forward(rec)
    out = adversary.on_return(rec, _response(peer))
    assert decode_announce_response(out).peers == [MALICIOUS]
    other = _announce_record(circuit=2, stream=2, exit_id=4)
    adversary.on_forward(other)
    assert adversary.on_return(other, _response(peer)) == _response(peer)
    assert len(adversary.trace_log.hijacks) == 1
    # the observation keeps what the client got, minus the malicious peer
    assert all(MALICIOUS not in o.announce_peers for o in adversary.observations)


def test_stopped_announce_not_hijacked():
    adversary = _exit()
    rec = _announce_record(event=AnnounceEvent.STOPPED)
    adversary.on_forward(rec)
    assert adversary.on_return(rec, _response()) == _response()
    assert adversary.counters["hijacked"] == 0


def test_hijack_disabled():
    adversary = _exit(hijack_enabled=False)
    rec = _announce_record()
    adversary.on_forward(rec)
    assert adversary.on_return(rec, _response()) == _response()


def test_malicious_peer_traces_direct_connection():
    from src.adversary.hijack import HijackLedger, malicious_peer_accept
    from src.wire.handshake import BtHandshake
    ledger = HijackLedger(seconds(120))
    ledger.record(circuit_id=7, stream_id=70, info_hash=IH, at=seconds(10))
    source = Endpoint("81.0.0.1", 50000)
    trace = malicious_peer_accept(source, BtHandshake(IH, PID), seconds(12),
                                  exit_addresses=EXIT_IPS, ledger=ledger)
    assert trace.circuit_id == 7 and trace.traced_endpoint == source
    assert trace.method is TraceMethod.HIJACK and trace.stream_id == 70


def test_malicious_peer_ignores_exit_connections():
    from src.adversary.hijack import HijackLedger, malicious_peer_accept
    from src.wire.handshake import BtHandshake
    ledger = HijackLedger(seconds(120))
    ledger.record(7, 70, IH, 0)
    assert malicious_peer_accept(Endpoint("10.9.0.3", 50000), BtHandshake(IH, PID), 1,
                                 exit_addresses=EXIT_IPS, ledger=ledger) is None


def test_correlation_window():
    from src.adversary.hijack import HijackLedger
    ledger = HijackLedger(seconds(120))
    ledger.record(7, 70, IH, 0)
    assert ledger.correlate(IH, seconds(120)).circuit_id == 7
    assert ledger.correlate(IH, seconds(121)) is None
    assert ledger.correlate(b"\x44" * 20, 0) is None


def test_two_circuits_are_ambiguous():
    from src.adversary.hijack import AmbiguousCorrelation, HijackLedger
    ledger = HijackLedger(seconds(120))
    ledger.record(7, 70, IH, 0)
    ledger.record(8, 80, IH, seconds(5))
    with pytest.raises(AmbiguousCorrelation) as err:
        ledger.correlate(IH, seconds(6))
    assert err.value.circuits == [7, 8]


def test_ambiguous_connection_counted_not_traced():
    from src.wire.handshake import BtHandshake
    adversary = _exit()
    adversary.ledger.record(7, 70, IH, 0)
    adversary.ledger.record(8, 80, IH, 0)
    adversary.on_incoming(Endpoint("81.0.0.1", 50000), BtHandshake(IH, PID), 1)
    assert adversary.counters["ambiguous"] == 1
    assert adversary.trace_log.traces == []


def test_malicious_peer_hangs_up():
    from src.adversary.exit_node import MaliciousPeer
    from src.wire.handshake import BtHandshake
    peer = MaliciousPeer(MALICIOUS, _exit())
    assert peer.accepts(b"\x99" * 20)
    assert peer.accept(Endpoint("81.0.0.1", 1), BtHandshake(IH, PID), 0) is None


# --- DHT port match ---

def test_port_match_unique():
    from src.adversary.dht_match import port_match
    peers = [Endpoint("81.0.0.1", 1000), Endpoint("81.0.0.2", 2000)]
    assert port_match(peers, 2000) == peers[1]
    assert port_match(peers, 3000) is None
    assert port_match(peers + [Endpoint("81.0.0.3", 2000)], 2000) is None


def test_dht_port_match_trace():
    from src.adversary.dht_match import dht_port_match
    target = Endpoint("81.0.0.2", 2000)
    obs = _obs(4, 40, stream_class=StreamClass.TRACKER_ANNOUNCE, info_hash=IH, listening_port=2000)
    trace = dht_port_match(obs, lambda ih: [Endpoint("81.0.0.1", 1000), target])
    assert trace.traced_endpoint == target and trace.method is TraceMethod.DHT_PORT_MATCH
    assert trace.circuit_id == 4 and trace.stream_id == 40


def test_dht_port_match_needs_identifiers():
    from src.adversary.dht_match import dht_port_match
    lookup = lambda ih: [Endpoint("81.0.0.1", 1000)]
    assert dht_port_match(_obs(4, 40, stream_class=StreamClass.HTTP), lookup) is None
    assert dht_port_match(_obs(4, 40, info_hash=IH), lookup) is None


def test_matcher_looks_up_once_per_circuit_and_content():
    from src.adversary.dht_match import DhtMatcher
    matcher = DhtMatcher(lambda ih: [Endpoint("81.0.0.1", 1000)])
    obs = _obs(4, 40, info_hash=IH, listening_port=1000)
    assert matcher.observe(obs) is not None
    assert matcher.observe(_obs(4, 41, info_hash=IH, listening_port=1000)) is None
    assert matcher.lookups == 1


def test_unique_port_probability_matches_closed_form():
    from src.adversary.dht_match import port_match
    from src.sim.population import N_PEER_PORTS, PEER_PORT_MAX, PEER_PORT_MIN
    rng = np.random.default_rng(21)
    size, trials, hits = 4000, 250, 0
    for _ in range(trials):
        ports = rng.integers(PEER_PORT_MIN, PEER_PORT_MAX + 1, size=size)
        peers = [Endpoint("81.0.0.1", int(p)) for p in ports]
        if port_match(peers, int(ports[0])) is not None:
            hits += 1
    closed_form = (1 - 1 / N_PEER_PORTS) ** (size - 1)
    assert abs(hits / trials - closed_form) < 0.05


@pytest.mark.parametrize("size", [2, 10, 100])
def test_dht_port_match_success_over_synthetic_swarms(size):
    from src.adversary.dht_match import dht_port_match
    from src.sim.population import N_PEER_PORTS, PEER_PORT_MAX, PEER_PORT_MIN
    rng = np.random.default_rng(size)
    n_swarms, hits = 10_000, 0
    addresses = [f"81.0.{j >> 8}.{j & 255}" for j in range(size)]
    for row in rng.integers(PEER_PORT_MIN, PEER_PORT_MAX + 1, size=(n_swarms, size)).tolist():
        swarm = [Endpoint(ip, port) for ip, port in zip(addresses, row)]
        obs = _obs(1, 1, info_hash=IH, listening_port=row[0])
        trace = dht_port_match(obs, lambda ih, swarm=swarm: swarm)
        if trace is not None:
            assert trace.traced_endpoint == swarm[0]
            hits += 1
    closed_form = (1 - 1 / N_PEER_PORTS) ** (size - 1)
    assert abs(hits / n_swarms - closed_form) <= 0.02


# --- Linkage ---

def test_union_find_basics():
    from src.adversary.linkage import UnionFind
    uf = UnionFind(range(6))
    assert uf.n_clusters == 6
    assert uf.union(0, 1) and uf.union(2, 3) and uf.union(1, 3)
    assert not uf.union(0, 2)
    assert uf.find(0) == uf.find(3)
    assert uf.size(2) == 4
    assert uf.n_clusters == 3


def test_peer_id_links_unencrypted_circuits():
    from src.adversary.linkage import LinkageGraph, StreamLinker
    linker = StreamLinker(LinkageGraph(), seconds(120))
    assert linker.link_streams(_obs(1, 10, peer_id=PID)) == []
    (union,) = linker.link_streams(_obs(2, 20, peer_id=PID, at=5))
    assert union.provenance is LinkProvenance.PEER_ID_MATCH
    assert linker.graph.find(1) == linker.graph.find(2)


def test_encrypted_streams_not_linked_by_peer_id():
    from src.adversary.linkage import LinkageGraph, StreamLinker
    linker = StreamLinker(LinkageGraph(), seconds(120))
    linker.link_streams(_obs(1, 10, peer_id=PID))
    assert linker.link_streams(_obs(2, 20, peer_id=PID, encrypted=True)) == []


def test_fresh_endpoint_follow():
    from src.adversary.linkage import LinkageGraph, StreamLinker
    peer = Endpoint("82.0.0.9", 6000)
    linker = StreamLinker(LinkageGraph(), seconds(120))
    linker.link_streams(_obs(1, 10, stream_class=StreamClass.TRACKER_ANNOUNCE, announce_peers=(peer,)))
    (union,) = linker.link_streams(_obs(2, 20, destination=peer, at=seconds(30)))
    assert union.provenance is LinkProvenance.FRESH_ENDPOINT_FOLLOW
    # stale endpoint does not link
    linker.link_streams(_obs(3, 30, stream_class=StreamClass.TRACKER_ANNOUNCE, announce_peers=(peer,),
                             at=seconds(200)))
    assert linker.link_streams(_obs(4, 40, destination=peer, at=seconds(321))) == []


def test_fresh_endpoint_shared_by_two_circuits_links_nothing():
    from src.adversary.linkage import LinkageGraph, StreamLinker
    peer = Endpoint("82.0.0.9", 6000)
    linker = StreamLinker(LinkageGraph(), seconds(120))
    for c in (1, 2):
        linker.link_streams(_obs(c, c * 10, stream_class=StreamClass.TRACKER_ANNOUNCE, announce_peers=(peer,)))
    assert linker.link_streams(_obs(3, 30, destination=peer, at=5)) == []


def test_malicious_endpoint_never_indexed():
    from src.adversary.linkage import LinkageGraph, StreamLinker
    linker = StreamLinker(LinkageGraph(), seconds(120), ignore=frozenset({MALICIOUS}))
    linker.link_streams(_obs(1, 10, stream_class=StreamClass.TRACKER_ANNOUNCE, announce_peers=(MALICIOUS,)))
    assert len(linker.index) == 0


# --- Propagation ---

def _trace(circuit, ip, method=TraceMethod.HIJACK, stream=None, at=0):
    return TraceResult(circuit, Endpoint(ip, 1000), method, at, stream)


def test_propagate_marks_linked_circuits():
    from src.adversary.linkage import LinkageGraph, propagate_traces
    graph = LinkageGraph()
    for c, s in ((1, 10), (1, 11), (2, 20), (3, 30)):
        graph.add_stream(c, s)
    graph.union(1, 2, LinkProvenance.PEER_ID_MATCH, 0)
    prop = propagate_traces(graph, [_trace(1, "81.0.0.1", stream=10)])
    assert set(prop.streams) == {10, 11, 20}
    assert prop.streams[10].method is TraceMethod.HIJACK
    assert prop.streams[11].method is TraceMethod.LINK_SAME_CIRCUIT
    assert prop.streams[20].method is TraceMethod.LINK_PEER_ID
    assert prop.streams[20].endpoint.ip == "81.0.0.1"


def test_conflicting_component_yields_nothing():
    from src.adversary.linkage import LinkageGraph, propagate_traces
    graph = LinkageGraph()
    graph.add_stream(1, 10)
    graph.add_stream(2, 20)
    graph.union(1, 2, LinkProvenance.FRESH_ENDPOINT_FOLLOW, 0)
    prop = propagate_traces(graph, [_trace(1, "81.0.0.1"), _trace(2, "81.0.0.2")])
    assert prop.streams == {}
    assert len(prop.conflicted) == 1


def test_agreeing_traces_on_different_ports_are_consistent():
    from src.adversary.linkage import LinkageGraph, propagate_traces
    graph = LinkageGraph()
    graph.add_stream(1, 10)
    traces = [_trace(1, "81.0.0.1"), TraceResult(1, Endpoint("81.0.0.1", 2222), TraceMethod.DHT_PORT_MATCH, 5)]
    assert set(propagate_traces(graph, traces).streams) == {10}


def test_propagation_matches_brute_force_components():
    from src.adversary.linkage import LinkageGraph, propagate_traces
    rng = np.random.default_rng(8)
    for _ in range(30):
        n = 40
        graph = LinkageGraph()
        streams = {}
        for c in range(n):
            for k in range(int(rng.integers(1, 4))):
                sid = len(streams)
                streams[sid] = c
                graph.add_stream(c, sid)
        edges = [tuple(int(x) for x in rng.choice(n, 2, replace=False)) for _ in range(25)]
        for a, b in edges:
            graph.union(a, b, LinkProvenance.PEER_ID_MATCH, 0)
        traced = rng.choice(n, 6, replace=False)
        traces = [_trace(int(c), f"81.0.0.{int(rng.integers(1, 4))}") for c in traced]

        adjacency = {c: set() for c in range(n)}
        for a, b in edges:
            adjacency[a].add(b)
            adjacency[b].add(a)
        expected = set()
        seen = set()
        for start in range(n):
            if start in seen:
                continue
            component, frontier = {start}, [start]
            while frontier:
                for nxt in adjacency[frontier.pop()]:
                    if nxt not in component:
                        component.add(nxt)
                        frontier.append(nxt)
            seen |= component
            ips = {t.traced_endpoint.ip for t in traces if t.circuit_id in component}
            if len(ips) == 1:
                expected |= {s for s, c in streams.items() if c in component}
        assert set(propagate_traces(graph, traces).streams) == expected


def test_graph_rebuilds_from_log():
    from src.adversary.linkage import LinkageGraph
    original = LinkageGraph()
    obs = [_obs(1, 10), _obs(2, 20), _obs(3, 30)]
    for o in obs:
        original.add_stream(o.circuit_id, o.stream_id)
    original.union(1, 3, LinkProvenance.PEER_ID_MATCH, 4)
    rebuilt = LinkageGraph.from_log(obs, original.edges)
    assert sorted(map(sorted, rebuilt.components().values())) == [[1, 3], [2]]


def _components(nodes, edges) -> dict[int, frozenset]:
    adjacency = {n: set() for n in nodes}
    for a, b in edges:
        adjacency[a].add(b)
        adjacency[b].add(a)
    out = {}
    for start in sorted(adjacency):
        if start in out:
            continue
        component, frontier = {start}, [start]
        while frontier:
            for nxt in adjacency[frontier.pop()]:
                if nxt not in component:
                    component.add(nxt)
                    frontier.append(nxt)
        frozen = frozenset(component)
        out.update({c: frozen for c in component})
    return out


def _edges_from_observations(observations, window):
    """Both linkage rules, recomputed by scanning every earlier observation."""
    edges = []
    first_circuit: dict[bytes, int] = {}
    for obs in observations:
        if obs.peer_id is not None and not obs.encrypted:
            first = first_circuit.setdefault(obs.peer_id, obs.circuit_id)
            if first != obs.circuit_id:
                edges.append((first, obs.circuit_id))
    handed_out: dict[Endpoint, list[tuple[int, int]]] = {}
    for obs in observations:
        sources = {c for c, at in handed_out.get(obs.destination, ()) if obs.at - at <= window}
        if len(sources) == 1 and obs.circuit_id not in sources:
            edges.append((sources.pop(), obs.circuit_id))
        for peer in obs.announce_peers:
            handed_out.setdefault(peer, []).append((obs.circuit_id, obs.at))
    return edges


def test_full_run_linkage_matches_rebuild_from_observations():
    from src.adversary.linkage import LinkageGraph, propagate_traces
    from src.shell.config import ScenarioConfig
    from src.simulation.runner import run_scenario
    config = ScenarioConfig().with_changes(virtual_duration_s=14400.0)
    output = run_scenario(config, 3)
    observations, trace_log = output.observations, output.trace_log

    graph = LinkageGraph.from_log(observations, trace_log.unions)
    circuits = {o.circuit_id for o in observations}
    expected = _components(circuits, _edges_from_observations(
        observations, seconds(config.adversary.freshness_window_s)))
    assert {frozenset(c) for c in graph.components().values()} == set(expected.values())
    assert any(len(c) > 1 for c in expected.values())

    prop = propagate_traces(graph, trace_log.traces)
    traced: dict[frozenset, set[str]] = {}
    for t in trace_log.traces:
        component = expected.get(t.circuit_id, frozenset({t.circuit_id}))
        traced.setdefault(component, set()).add(t.traced_endpoint.ip)
    want = {}
    for o in observations:
        ips = traced.get(expected[o.circuit_id], set())
        if len(ips) == 1:
            want[o.stream_id] = ips
    assert set(prop.streams) == set(want)
    assert all({prop.streams[s].endpoint.ip} == ips for s, ips in want.items())
    assert len(prop.conflicted) == sum(1 for ips in traced.values() if len(ips) > 1)


def test_linkage_and_propagation_at_1e5_streams():
    import time

    from src.adversary.linkage import LinkageGraph, StreamLinker, propagate_traces
    rng = np.random.default_rng(5)
    n_streams, n_circuits = 100_000, 25_000
    pool = [Endpoint(f"81.0.{i >> 8}.{i & 255}", 1024 + i) for i in range(20_000)]
    peer_ids = [rng.bytes(20) for _ in range(60_000)]
    circuits = rng.integers(0, n_circuits, size=n_streams).tolist()
    destinations = rng.integers(0, len(pool), size=n_streams).tolist()
    pids = rng.integers(0, len(peer_ids), size=n_streams).tolist()
    announces = (rng.random(n_streams) < 0.2).tolist()

    start = time.perf_counter()
    graph = LinkageGraph()
    linker = StreamLinker(graph, seconds(120))
    for sid in range(n_streams):
        handed = tuple(pool[j] for j in rng.integers(0, len(pool), size=5).tolist()) if announces[sid] else ()
        linker.link_streams(ExitObservation(
            circuit_id=circuits[sid], stream_id=sid, destination=pool[destinations[sid]],
            stream_class=StreamClass.TRACKER_ANNOUNCE if announces[sid] else StreamClass.BT_HANDSHAKE,
            at=sid * 20, peer_id=peer_ids[pids[sid]], announce_peers=handed,
        ))
    roots = {graph.find(int(c)) for c in rng.choice(n_circuits, 2_000, replace=False)}
    traces = [_trace(r, f"82.0.{r >> 8}.{r & 255}") for r in sorted(roots)]
    prop = propagate_traces(graph, traces)
    elapsed = time.perf_counter() - start

    assert elapsed < 120
    assert not prop.conflicted
    assert set(prop.streams) == {s for c in graph.circuits if graph.find(c) in roots
                                 for s in graph.streams_of(c)}


# --- Trace log ---

def test_trace_log_records_in_order(tmp_path):
    from src.adversary.hijack import HijackRecord
    from src.adversary.linkage import UnionRecord
    from src.adversary.tracelog import TraceLog
    log = TraceLog()
    log.add(HijackRecord(1, 10, IH, 0))
    log.add(UnionRecord(1, 2, LinkProvenance.PEER_ID_MATCH, 5))
    log.add(_trace(1, "81.0.0.1", stream=10, at=9))
    assert [r["kind"] for r in log.records()] == ["hijack", "union", "trace"]
    assert len(log.traces) == 1 and len(log.unions) == 1 and len(log.hijacks) == 1
    path = tmp_path / "traces.ndjson"
    log.write(path)
    assert len(path.read_text().splitlines()) == 3
