"""Build everything a run needs from a scenario and a seed."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import structlog

from src.adversary.exit_node import MaliciousExit, MaliciousPeer
from src.bittorrent.catalog import Catalog, build_catalog
from src.bittorrent.dht import DhtClient, DhtTracker
from src.bittorrent.peer import PeerAgent, PeerNetwork
from src.bittorrent.tracker import Tracker
from src.shell.config import ScenarioConfig
from src.shell.contract import Behavior, Host, seconds
from src.shell.truth import GroundTruth
from src.sim.engine import Engine, make_rng_streams
from src.sim.population import HostRegistry, sample_population
from src.simulation.web import WebDirectory, build_sites
from src.tor.directory import Directory, Relay, RelayRole
from src.tor.overlay import CircuitPolicy, TorOverlay

log = structlog.get_logger()

RELAY_PORT = 9001


@dataclass
class World:
    config: ScenarioConfig
    seed: int
    rngs: dict[str, np.random.Generator]
    engine: Engine
    registry: HostRegistry
    directory: Directory
    tor: TorOverlay
    catalog: Catalog
    tracker: Tracker
    tracker_host: Host
    dht: DhtTracker
    network: PeerNetwork
    sites: WebDirectory
    truth: GroundTruth
    adversary: MaliciousExit
    agents: list[PeerAgent] = field(default_factory=list)
    background: list[PeerAgent] = field(default_factory=list)
    web_users: list[Host] = field(default_factory=list)


def exact_counts(shares: list[float], n: int) -> list[int]:
    """Split ``n`` by ``shares`` using largest remainders, so counts sum to ``n``."""
    raw = np.asarray(shares, dtype=float) * n
    counts = np.floor(raw).astype(int)
    short = n - int(counts.sum())
    order = np.argsort(-(raw - counts), kind="stable")
    for i in order[:short]:
        counts[i] += 1
    return [int(c) for c in counts]


def _relays(config: ScenarioConfig, registry: HostRegistry, rng: np.random.Generator) -> Directory:
    relays = []
    for role in (RelayRole.ENTRY, RelayRole.MIDDLE, RelayRole.EXIT):
        for _ in range(config.tor.n_relays.get(role.value, 0)):
            host = registry.add_random(rng, port=RELAY_PORT)
            relays.append(Relay(host.id, host.endpoint, frozenset({role})))
    return Directory(relays)


def _behaviors(config: ScenarioConfig, n_tor: int, rng: np.random.Generator) -> list[Behavior]:
    mix = config.bittorrent.behavior_mix
    kinds = [Behavior(k) for k in mix]
    counts = exact_counts(list(mix.values()), n_tor)
    assigned = [kind for kind, count in zip(kinds, counts) for _ in range(count)]
    return [assigned[int(i)] for i in rng.permutation(len(assigned))]


def build_world(config: ScenarioConfig, seed: int) -> World:
    rngs = make_rng_streams(seed)
    pop_rng, behavior_rng = rngs["population"], rngs["behavior"]
    bt = config.bittorrent

    engine = Engine(
        latency_rng=rngs["latency"],
        latency_range_ms=(config.latency_ms[0], config.latency_ms[1]),
        record_log=config.emit_logs,
    )
    registry = HostRegistry()
    directory = _relays(config, registry, pop_rng)
    tor = TorOverlay(
        directory, CircuitPolicy.from_config(config.tor), rngs["circuits"],
        n_hops=config.tor.n_hops, circuit_lifetime=seconds(config.tor.circuit_lifetime_s),
    )
    truth = GroundTruth(exit_addresses=directory.exit_addresses())
    tor.on_stream_opened(truth.record_stream)

    catalog = build_catalog(config.catalog, rngs["catalog"])
    tracker_host = registry.add_random(pop_rng, port=bt.tracker_port)
    interval = int(bt.announce_interval_s)
    tracker = Tracker(tracker_host.endpoint, (i.info_hash for i in catalog),
                      interval_s=interval, max_peers=bt.max_peers)
    dht = DhtTracker(secret=rngs["adversary"].bytes(16), ttl=2 * seconds(interval))
    network = PeerNetwork()
    sites = build_sites(config.web, registry, pop_rng)

    # adversary: shared tap on every instrumented exit, malicious peer beside the hijack exit
    malicious_host = registry.add_random(pop_rng, port=config.adversary.malicious_port)
    lookup_client = DhtClient(dht, malicious_host.endpoint)
    exits = directory.exits
    instrumented = [exits[i].host_id for i in config.tor.instrumented_exits]
    hijack_exit: Optional[int] = None
    if instrumented and config.adversary.hijack_exit < len(instrumented):
        hijack_exit = instrumented[config.adversary.hijack_exit]
    adversary = MaliciousExit(
        config.adversary,
        exit_addresses=directory.exit_addresses(),
        malicious_endpoint=malicious_host.endpoint,
        hijack_exit=hijack_exit,
        dht_lookup=lambda ih: lookup_client.get_peers(ih, engine.clock)[0],
    )
    for exit_id in instrumented:
        tor.attach_tap(exit_id, adversary)
    if config.adversary.enabled and config.adversary.hijack_enabled:
        network.register(MaliciousPeer(malicious_host.endpoint, adversary))

    world = World(
        config=config, seed=seed, rngs=rngs, engine=engine, registry=registry,
        directory=directory, tor=tor, catalog=catalog, tracker=tracker,
        tracker_host=tracker_host, dht=dht, network=network, sites=sites,
        truth=truth, adversary=adversary,
    )

    # BitTorrent users: Tor users drawn from the Tor population table, the rest from the baseline
    n_tor = int(round(bt.n_peers * bt.tor_user_fraction))
    tor_hosts = sample_population(config.population.tor_users, n_tor, pop_rng, registry)
    plain_hosts = sample_population(config.population.baseline, bt.n_peers - n_tor, pop_rng, registry)
    behaviors = _behaviors(config, n_tor, behavior_rng) + [Behavior.NO_TOR] * len(plain_hosts)
    lo, hi = bt.downloads_per_peer
    for host, behavior in zip(tor_hosts + plain_hosts, behaviors):
        downloads = catalog.sample(behavior_rng, int(behavior_rng.integers(lo, hi + 1)))
        agent = PeerAgent(host=host, behavior=behavior, downloads=downloads)
        agent.browses = behavior is not Behavior.NO_TOR and behavior_rng.random() < bt.browse_fraction
        if bt.dht_enabled:
            agent.dht = DhtClient(dht, host.endpoint)
        network.register(agent)
        truth.add_host(host, behavior, downloads)
        world.agents.append(agent)

    # background seeders, swarm sizes from the configured distribution
    sizes = np.asarray(bt.swarm_size.sizes)
    weights = np.asarray(bt.swarm_size.weights, dtype=float)
    per_item = sizes[rngs["catalog"].choice(len(sizes), size=len(catalog), p=weights / weights.sum())]
    seeders = sample_population(config.population.baseline, int(per_item.sum()), pop_rng, registry)
    cursor = 0
    for item, count in zip(catalog, per_item):
        for host in seeders[cursor:cursor + int(count)]:
            agent = PeerAgent(host=host, downloads=[item.info_hash], online=True)
            network.register(agent)
            truth.add_host(host)
            world.background.append(agent)
        cursor += int(count)

    world.web_users = sample_population(config.population.tor_users, config.web.n_web_users,
                                        pop_rng, registry)
    for host in world.web_users:
        truth.add_host(host)

    log.info("world.built", seed=seed, relays=len(directory), items=len(catalog),
             agents=len(world.agents), tor_agents=n_tor, seeders=len(world.background),
             web_users=len(world.web_users), instrumented_exits=len(instrumented))
    return world
