"""Simulation: one scenario, one seed, driven through the event engine.

BitTorrent agents run sessions: a started announce per download, periodic
re-announces with jitter, connection attempts to the candidates each announce
produced, then stopped announces when the session ends. Browsing Tor users
open web streams at exponential intervals. Background seeders re-register
with the tracker and the DHT every announce interval.

No real network I/O happens here; every exchange is a function call on the
overlay objects built by ``build_world``.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Union

import numpy as np
import structlog

from src.adversary.tracelog import TraceLog
from src.bittorrent.catalog import Catalog
from src.bittorrent.peer import (
    ConnectionRefused,
    PeerAgent,
    announce_to_tracker,
    connect_peer,
    dht_announce_and_lookup,
    pex_exchange,
)
from src.bittorrent.tracker import UnknownInfoHash
from src.shell.config import ScenarioConfig
from src.shell.contract import AnnounceEvent, Endpoint, ExitObservation, IoFailure, SimTime, seconds
from src.shell.truth import GroundTruth
from src.sim.engine import Event, write_event_log
from src.sim.population import HostRegistry
from src.simulation.web import APP_BROWSER, WebDirectory, request_payload
from src.simulation.world import World, build_world
from src.tor.directory import InsufficientRelays
from src.utils.logging import run_context
from src.wire.tracker import TrackerFailure

log = structlog.get_logger()


# --- event payloads ---

@dataclass(frozen=True)
class StartSession:
    pass


@dataclass(frozen=True)
class Announce:
    info_hash: bytes
    event: AnnounceEvent


@dataclass(frozen=True)
class Connect:
    info_hash: bytes


@dataclass(frozen=True)
class EndSession:
    pass


@dataclass(frozen=True)
class Browse:
    pass


@dataclass(frozen=True)
class RefreshBackground:
    pass


Payload = Union[StartSession, Announce, Connect, EndSession, Browse, RefreshBackground]


@dataclass
class RunOutput:
    name: str
    seed: int
    policy: str
    duration: SimTime
    observations: list[ExitObservation] = field(default_factory=list)
    trace_log: TraceLog = field(default_factory=TraceLog)
    truth: GroundTruth = field(default_factory=GroundTruth)
    catalog: Optional[Catalog] = None
    sites: Optional[WebDirectory] = None
    registry: Optional[HostRegistry] = None
    counters: dict[str, int] = field(default_factory=dict)
    event_log: list[dict] = field(default_factory=list)
    dht_messages_from_exits: int = 0
    events_dispatched: int = 0

    def summary(self) -> str:
        traces = len(self.trace_log.traces)
        return (
            f"{self.name} seed={self.seed} policy={self.policy} | "
            f"observed streams: {len(self.observations)} | traces: {traces} | "
            f"unions: {len(self.trace_log.unions)} | events: {self.events_dispatched}"
        )


class Simulation:
    def __init__(self, world: World) -> None:
        self.world = world
        self._config = world.config
        self._rng: np.random.Generator = world.rngs["agents"]
        self._agents = {a.host.id: a for a in world.agents}
        self._session_end: dict[int, SimTime] = {}
        self.counters: Counter[str] = Counter()
        self._handlers: dict[type, Callable[[Event], None]] = {
            StartSession: self._start_session,
            Announce: self._announce,
            Connect: self._connect,
            EndSession: self._end_session,
            Browse: self._browse,
            RefreshBackground: self._refresh_background,
        }
        world.engine.set_default_handler(self._dispatch)

    @property
    def duration(self) -> SimTime:
        return seconds(self._config.virtual_duration_s)

    def _dispatch(self, event: Event) -> None:
        self._handlers[type(event.payload)](event)

    # --- setup ---

    def _seed_events(self) -> None:
        engine, bt = self.world.engine, self._config.bittorrent
        duration = self.duration
        self._refresh_background(Event(0, -1, self.world.tracker_host.id, RefreshBackground()))
        for agent in self.world.agents:
            start = int(self._rng.integers(0, max(duration, 1)))
            engine.schedule(start, agent.host.id, StartSession())
        for host in self.world.web_users:
            engine.schedule(self._next_browse(0), host.id, Browse())
        log.debug("simulation.seeded", agents=len(self.world.agents),
                  web_users=len(self.world.web_users), session_s=bt.session_s)

    def _next_browse(self, now: SimTime) -> SimTime:
        gap = self._rng.exponential(self._config.web.request_interval_s)
        return now + max(1, seconds(gap))

    def _next_announce(self, now: SimTime) -> SimTime:
        bt = self._config.bittorrent
        jitter = 1.0 + bt.announce_jitter * (2.0 * self._rng.random() - 1.0)
        return now + seconds(bt.announce_interval_s * jitter)

    # --- handlers ---

    def _start_session(self, event: Event) -> None:
        agent = self._agents[event.target]
        agent.new_session(self._rng)
        span = self._config.bittorrent.session_s * self._rng.uniform(0.5, 1.5)
        end = event.fire_at + seconds(span)
        self._session_end[agent.host.id] = end
        engine = self.world.engine
        for info_hash in agent.downloads:
            engine.schedule(event.fire_at, agent.host.id, Announce(info_hash, AnnounceEvent.STARTED))
        engine.schedule(end, agent.host.id, EndSession())
        if agent.browses:
            engine.schedule(self._next_browse(event.fire_at), agent.host.id, Browse())
        self.counters["sessions"] += 1

    def _announce(self, event: Event) -> None:
        agent = self._agents[event.target]
        payload: Announce = event.payload
        now = event.fire_at
        stopping = payload.event is AnnounceEvent.STOPPED
        if not agent.online and not stopping:
            return
        w = self.world

        if agent.dht is not None and not stopping:
            agent.learn(payload.info_hash, dht_announce_and_lookup(agent, payload.info_hash, now))
            self.counters["dht.announces"] += 1

        try:
            response = announce_to_tracker(
                agent, payload.info_hash, agent.tracker_via_tor,
                tracker=w.tracker, tor=w.tor, at=now, event=payload.event,
            )
        except UnknownInfoHash:
            self.counters["announce.unknown_info_hash"] += 1
            return
        except TrackerFailure:
            self.counters["announce.failure"] += 1
            return
        except InsufficientRelays:
            self.counters["announce.no_circuit"] += 1
            return
        self.counters["announces"] += 1
        if stopping:
            return

        agent.learn(payload.info_hash, response.peers, front=True)
        delay = w.engine.latency(agent.host.id, w.tracker_host.id)
        w.engine.schedule_in(delay, agent.host.id, Connect(payload.info_hash))
        nxt = self._next_announce(now)
        if nxt < self._session_end.get(agent.host.id, 0):
            w.engine.schedule(nxt, agent.host.id, Announce(payload.info_hash, AnnounceEvent.PERIODIC))

    def _connect(self, event: Event) -> None:
        agent = self._agents[event.target]
        if not agent.online:
            return
        info_hash: bytes = event.payload.info_hash
        w, bt = self.world, self._config.bittorrent
        for target in agent.next_candidates(info_hash, bt.max_connects):
            encrypted = bool(self._rng.random() < bt.encryption_fraction)
            try:
                conn = connect_peer(
                    agent, target, info_hash, agent.peers_via_tor,
                    network=w.network, tor=w.tor, at=event.fire_at, rng=self._rng,
                    encrypted=encrypted,
                )
            except ConnectionRefused:
                self.counters["connect.refused"] += 1
                continue
            except InsufficientRelays:
                self.counters["connect.no_circuit"] += 1
                continue
            self.counters["connections"] += 1
            w.truth.record_connection(agent.host.id, conn.source.ip, conn.via_tor, encrypted, conn.at)
            if conn.dropped:
                self.counters["connect.dropped"] += 1
                continue
            listener = w.network.get(target)
            if bt.pex_enabled and isinstance(listener, PeerAgent):
                pex_exchange(agent, listener, info_hash)
                self.counters["pex"] += 1

    def _end_session(self, event: Event) -> None:
        agent = self._agents[event.target]
        for info_hash in agent.downloads:
            self._announce(Event(event.fire_at, event.seq, agent.host.id,
                                 Announce(info_hash, AnnounceEvent.STOPPED)))
        agent.online = False

    def _browse(self, event: Event) -> None:
        agent = self._agents.get(event.target)
        if agent is not None and not agent.online:
            return
        w, web = self.world, self._config.web
        site = w.sites.sites[int(self._rng.integers(len(w.sites)))]
        weights = np.asarray(web.port_weights, dtype=float)
        port = int(web.ports[int(self._rng.choice(len(web.ports), p=weights / weights.sum()))])
        try:
            stream = w.tor.open_stream(event.target, Endpoint(site.ip, port), APP_BROWSER, event.fire_at)
            w.tor.exit_deliver(stream, request_payload(site, port, self._rng), event.fire_at)
            self.counters["web.requests"] += 1
        except InsufficientRelays:
            self.counters["web.no_circuit"] += 1
        w.engine.schedule(self._next_browse(event.fire_at), event.target, Browse())

    def _refresh_background(self, event: Event) -> None:
        w = self.world
        for seeder in w.background:
            for info_hash in seeder.downloads:
                w.tracker.register(info_hash, seeder.endpoint, event.fire_at)
                w.dht.store(info_hash, seeder.endpoint, event.fire_at)
        w.engine.schedule(event.fire_at + seconds(self._config.bittorrent.announce_interval_s),
                          w.tracker_host.id, RefreshBackground())

    # --- run ---

    def run(self) -> RunOutput:
        w = self.world
        self._seed_events()
        dispatched = w.engine.run_until(self.duration)
        w.adversary.flush()
        counters = dict(self.counters)
        counters.update({f"adversary.{k}": v for k, v in w.adversary.counters.items()})
        output = RunOutput(
            name=self._config.name,
            seed=w.seed,
            policy=self._config.policy.value,
            duration=self.duration,
            observations=list(w.adversary.observations),
            trace_log=w.adversary.trace_log,
            truth=w.truth,
            catalog=w.catalog,
            sites=w.sites,
            registry=w.registry,
            counters=dict(sorted(counters.items())),
            event_log=w.engine.event_log,
            dht_messages_from_exits=w.dht.messages_from(w.directory.exit_addresses()),
            events_dispatched=dispatched,
        )
        log.info("simulation.run_complete", name=output.name, seed=output.seed, policy=output.policy,
                 events=dispatched, observations=len(output.observations),
                 traces=len(output.trace_log.traces), circuits=len(w.tor.circuits))
        return output


def run_scenario(config: ScenarioConfig, seed: int) -> RunOutput:
    """Build a fresh world for ``seed`` and run it to the configured duration."""
    with run_context(config.name, seed, config.policy.value):
        output = Simulation(build_world(config, seed)).run()
    if config.emit_logs:
        write_logs(output, Path(config.report_dir) / "logs")
    return output


def write_logs(output: RunOutput, directory: Path) -> list[Path]:
    """Event log and trace log as NDJSON. Diagnostics only, kept apart from reports."""
    stem = f"{output.name}_{output.seed}_{output.policy}"
    events = directory / f"{stem}_events.ndjson"
    traces = directory / f"{stem}_traces.ndjson"
    try:
        write_event_log(events, output.event_log)
        output.trace_log.write(traces)
    except OSError as e:
        raise IoFailure(f"cannot write logs to {directory}: {e}") from e
    log.info("runner.logs_written", directory=str(directory), events=len(output.event_log))
    return [events, traces]
