"""Run scoring: what the adversary traced, checked against ground truth.

Only streams seen on instrumented exits count. A stream is traced when its
circuit sits in a linkage component holding at least one direct trace that
is not conflicted. Precision for the direct methods is judged per trace;
for the linkage methods per stream attribution.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Iterable, Optional

import structlog

from src.adversary.linkage import LinkageGraph, Propagation, propagate_traces
from src.adversary.tracelog import TraceLog
from src.shell.contract import DIRECT_METHODS, Behavior, ExitObservation, TraceMethod
from src.shell.truth import GroundTruth

log = structlog.get_logger()

HTTP_PORT = 80
WEB_PORTS = (80, 443)


class GroundTruthMissing(RuntimeError):
    """Scoring needs the ground-truth ledger of the run being scored."""


@dataclass
class RunMetrics:
    total_streams: int = 0
    bt_streams: int = 0
    traced_streams: int = 0
    traced_bt_streams: int = 0
    additional_traced_streams: int = 0
    additional_by_port: dict[int, int] = field(default_factory=dict)
    additional_by_method: dict[str, int] = field(default_factory=dict)
    web_same_circuit: int = 0
    traced_fraction_all: float = 0.0
    multiplier: Optional[float] = None
    bt_stream_share: float = 0.0
    traced_http_fraction: Optional[float] = None
    direct_p2p_fraction: Optional[float] = None
    trace_counts: dict[str, int] = field(default_factory=dict)
    precision: dict[str, Optional[float]] = field(default_factory=dict)
    recall_observed: Optional[float] = None
    recall_all: Optional[float] = None
    traced_users: int = 0
    conflicted_components: int = 0
    hijack_targeted: int = 0
    hijack_traced: int = 0
    hijack_fidelity: Optional[float] = None
    hijack_targeted_by_behavior: dict[str, int] = field(default_factory=dict)
    hijack_traced_by_behavior: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def summary(self) -> str:
        mult = f"{self.multiplier:.2f}" if self.multiplier is not None else "n/a"
        prec = self.precision.get("overall")
        prec_s = f"{prec:.3f}" if prec is not None else "n/a"
        return (
            f"Streams: {self.total_streams} (BT {self.bt_stream_share:.1%}) | "
            f"Traced: {self.traced_streams} ({self.traced_fraction_all:.1%}) | "
            f"Additional: {self.additional_traced_streams} (x{mult}) | Precision: {prec_s}"
        )


def _ratio(num: int, den: int) -> Optional[float]:
    return num / den if den else None


def observed_streams(observations: Iterable[ExitObservation]) -> dict[int, ExitObservation]:
    """First observation per stream, in arrival order."""
    out: dict[int, ExitObservation] = {}
    for obs in observations:
        out.setdefault(obs.stream_id, obs)
    return out


def propagate(observations: list[ExitObservation], trace_log: TraceLog) -> Propagation:
    graph = LinkageGraph.from_log(observations, trace_log.unions)
    return propagate_traces(graph, trace_log.traces)


def score_run(
    observations: list[ExitObservation],
    trace_log: TraceLog,
    truth: Optional[GroundTruth],
) -> RunMetrics:
    if truth is None:
        raise GroundTruthMissing("no ground truth for this run")
    streams = observed_streams(observations)
    missing = [sid for sid in streams if sid not in truth.streams]
    if missing:
        raise GroundTruthMissing(f"{len(missing)} observed streams absent from ground truth")

    prop = propagate(observations, trace_log)
    m = RunMetrics(total_streams=len(streams), conflicted_components=len(prop.conflicted))

    def owner_ip(circuit_id: int) -> Optional[str]:
        host = truth.owner_host(circuit_id)
        return host.endpoint.ip if host else None

    additional_port: Counter[int] = Counter()
    additional_method: Counter[str] = Counter()
    http_total = http_traced = 0
    attributed: dict[str, list[bool]] = {}
    traced_users: set[int] = set()

    for sid, obs in streams.items():
        st = truth.streams[sid]
        if st.is_bittorrent:
            m.bt_streams += 1
        if obs.destination.port == HTTP_PORT:
            http_total += 1
        hit = prop.streams.get(sid)
        if hit is None:
            continue
        m.traced_streams += 1
        correct = owner_ip(hit.circuit_id) == hit.endpoint.ip
        attributed.setdefault("overall", []).append(correct)
        if hit.method not in DIRECT_METHODS:
            attributed.setdefault(hit.method.value, []).append(correct)
        if correct and st.owner in truth.behaviors:
            traced_users.add(st.owner)
        if obs.destination.port == HTTP_PORT:
            http_traced += 1
        if st.is_bittorrent:
            m.traced_bt_streams += 1
        else:
            m.additional_traced_streams += 1
            additional_port[st.dst_port] += 1
            additional_method[hit.method.value] += 1
            if hit.method is TraceMethod.LINK_SAME_CIRCUIT and st.dst_port in WEB_PORTS:
                m.web_same_circuit += 1

    traces = trace_log.traces
    m.trace_counts = {method.value: 0 for method in TraceMethod}
    for t in traces:
        m.trace_counts[t.method.value] += 1
        if t.method in DIRECT_METHODS:
            attributed.setdefault(t.method.value, []).append(owner_ip(t.circuit_id) == t.traced_endpoint.ip)
    m.precision = {key: _ratio(sum(attributed.get(key, ())), len(attributed.get(key, ())))
                   for key in ["overall"] + [method.value for method in TraceMethod]}

    m.additional_by_port = dict(sorted(additional_port.items()))
    m.additional_by_method = dict(sorted(additional_method.items()))
    m.traced_fraction_all = m.traced_streams / m.total_streams if m.total_streams else 0.0
    m.bt_stream_share = m.bt_streams / m.total_streams if m.total_streams else 0.0
    m.multiplier = _ratio(m.additional_traced_streams, m.traced_bt_streams)
    m.traced_http_fraction = _ratio(http_traced, http_total)

    tor_users = truth.tor_bittorrent_users()
    observed_users = {truth.streams[sid].owner for sid in streams} & tor_users
    m.traced_users = len(traced_users & tor_users)
    m.recall_observed = _ratio(len(traced_users & observed_users), len(observed_users))
    m.recall_all = _ratio(m.traced_users, len(tor_users))

    conn = truth.tor_connection_counts()
    m.direct_p2p_fraction = _ratio(conn["direct"], conn["total"])

    _score_hijack(m, trace_log, truth)
    log.debug("analysis.scored", streams=m.total_streams, traced=m.traced_streams,
              traces=len(traces), conflicted=m.conflicted_components)
    return m


def _score_hijack(m: RunMetrics, trace_log: TraceLog, truth: GroundTruth) -> None:
    """Targeted users own a hijacked circuit; traced ones were named correctly by a hijack trace."""
    targeted = {truth.circuit_owner[h.circuit_id] for h in trace_log.hijacks
                if h.circuit_id in truth.circuit_owner}
    traced = set()
    for t in trace_log.traces:
        if t.method is not TraceMethod.HIJACK:
            continue
        host = truth.owner_host(t.circuit_id)
        if host is not None and host.endpoint.ip == t.traced_endpoint.ip:
            traced.add(host.id)
    traced &= targeted
    m.hijack_targeted = len(targeted)
    m.hijack_traced = len(traced)
    m.hijack_fidelity = _ratio(len(traced), len(targeted))
    by_t: Counter[str] = Counter(truth.behaviors.get(u, Behavior.NO_TOR).value for u in targeted)
    by_h: Counter[str] = Counter(truth.behaviors.get(u, Behavior.NO_TOR).value for u in traced)
    m.hijack_targeted_by_behavior = dict(sorted(by_t.items()))
    m.hijack_traced_by_behavior = dict(sorted(by_h.items()))
