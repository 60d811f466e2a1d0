"""Configuration loading: scenario TOML, --override pairs, and .env."""

from __future__ import annotations

import dataclasses
import os

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

from dotenv import load_dotenv

from src.shell.contract import Behavior, Ecosystem, PolicyKind
from src.sim.population import PopulationEntry

PROJECT_ROOT = Path(__file__).resolve().parent.parent.parent
CONFIG_DIR = PROJECT_ROOT / "config"
DEFAULT_SCENARIO = CONFIG_DIR / "scenario.toml"


class ConfigInvalid(ValueError):
    """Scenario configuration failed to parse or validate."""


# Top-10 countries/ASes of traced users (share of traced addresses) and the
# population outside the overlay back-derived as share / over-representation.
DEFAULT_TOR_USERS = [
    PopulationEntry("US", 7132, 0.14),
    PopulationEntry("JP", 4713, 0.13),
    PopulationEntry("DE", 3320, 0.09),
    PopulationEntry("DE", 13184, 0.04),
    PopulationEntry("FR", 3215, 0.05),
    PopulationEntry("PL", 5617, 0.05),
    PopulationEntry("IT", 3269, 0.03),
    PopulationEntry("GB", 2856, 0.03),
    PopulationEntry("CN", 4134, 0.03),
    PopulationEntry("CA", 577, 0.03),
    PopulationEntry("RU", 12389, 0.02),
    PopulationEntry("MY", 4788, 0.02),
    PopulationEntry("AT", 6830, 0.02),
    PopulationEntry("ZZ", 0, 0.32),
]

DEFAULT_BASELINE = [
    PopulationEntry("US", 7132, 0.1556),
    PopulationEntry("JP", 4713, 0.0232),
    PopulationEntry("DE", 3320, 0.0330),
    PopulationEntry("DE", 13184, 0.0134),
    PopulationEntry("FR", 3215, 0.0385),
    PopulationEntry("PL", 5617, 0.0278),
    PopulationEntry("IT", 3269, 0.0333),
    PopulationEntry("GB", 2856, 0.0500),
    PopulationEntry("CN", 4134, 0.0),
    PopulationEntry("CA", 577, 0.0429),
    PopulationEntry("RU", 12389, 0.0143),
    PopulationEntry("MY", 4788, 0.0100),
    PopulationEntry("AT", 6830, 0.0111),
    PopulationEntry("ZZ", 0, 0.5469),
]

DEFAULT_TAGS = [
    "movie", "tv", "music", "anime", "hentai", "porn", "software", "games",
    "ebook", "documentary",
]

DEFAULT_WEB_CATEGORIES = [
    "FileSharing", "Search", "News", "Hacking", "Porn", "Social", "Shopping", "Other",
]


@dataclass
class TorConfig:
    n_hops: int = 3
    circuit_lifetime_s: float = 600.0
    policy: str = PolicyKind.MULTIPLEX_ALL.value
    port_groups: dict[str, list[int]] = field(default_factory=lambda: {"web": [80, 443]})
    n_relays: dict[str, int] = field(default_factory=lambda: {"entry": 20, "middle": 20, "exit": 12})
    instrumented_exits: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4, 5])


@dataclass
class SwarmSizeConfig:
    sizes: list[int] = field(default_factory=lambda: [1, 2, 3, 4, 6, 8, 12, 20, 40, 100, 300])
    weights: list[float] = field(default_factory=lambda: [
        0.16, 0.14, 0.12, 0.10, 0.10, 0.09, 0.08, 0.07, 0.06, 0.05, 0.03,
    ])


@dataclass
class BitTorrentConfig:
    n_peers: int = 240
    tor_user_fraction: float = 0.5
    behavior_mix: dict[str, float] = field(default_factory=lambda: {
        Behavior.TRACKER_ONLY_VIA_TOR.value: 0.72,
        Behavior.ALL_VIA_TOR.value: 0.28,
    })
    downloads_per_peer: list[int] = field(default_factory=lambda: [1, 3])
    announce_interval_s: float = 600.0
    announce_jitter: float = 0.10
    session_s: float = 5400.0
    max_peers: int = 50
    max_connects: int = 4
    encryption_fraction: float = 0.25
    dht_enabled: bool = True
    pex_enabled: bool = True
    browse_fraction: float = 0.6
    tracker_port: int = 6969
    swarm_size: SwarmSizeConfig = field(default_factory=SwarmSizeConfig)


@dataclass
class CatalogConfig:
    n_items: int = 300
    ecosystem_shares: dict[str, float] = field(default_factory=lambda: {
        Ecosystem.PUBLIC.value: 0.90,
        Ecosystem.PRIVATE.value: 0.07,
        Ecosystem.UNDERGROUND.value: 0.03,
    })
    popularity: str = "zipf"          # "zipf" or "uniform"
    zipf_exponent: float = 0.8
    tags: list[str] = field(default_factory=lambda: list(DEFAULT_TAGS))
    tags_per_item: int = 2


@dataclass
class WebConfig:
    n_web_users: int = 120
    n_sites: int = 200
    request_interval_s: float = 300.0
    ports: list[int] = field(default_factory=lambda: [80, 443, 6667, 22])
    port_weights: list[float] = field(default_factory=lambda: [0.55, 0.38, 0.04, 0.03])
    categories: list[str] = field(default_factory=lambda: list(DEFAULT_WEB_CATEGORIES))


@dataclass
class AdversaryConfig:
    enabled: bool = True
    hijack_enabled: bool = True
    dht_match_enabled: bool = True
    linkage_enabled: bool = True
    hijack_exit: int = 0                 # index into tor.instrumented_exits
    correlation_window_s: float = 120.0
    freshness_window_s: float = 120.0
    malicious_port: int = 51413


@dataclass
class PopulationConfig:
    tor_users: list[PopulationEntry] = field(default_factory=lambda: list(DEFAULT_TOR_USERS))
    baseline: list[PopulationEntry] = field(default_factory=lambda: list(DEFAULT_BASELINE))


@dataclass
class AnalysisConfig:
    top_k: int = 10


@dataclass
class ScenarioConfig:
    name: str = "default"
    seeds: list[int] = field(default_factory=lambda: [1])
    virtual_duration_s: float = 86400.0
    report_dir: str = "reports"
    emit_logs: bool = False
    log_level: str = "INFO"
    latency_ms: list[int] = field(default_factory=lambda: [20, 200])
    snapshot_interval_s: float = 3600.0
    tor: TorConfig = field(default_factory=TorConfig)
    bittorrent: BitTorrentConfig = field(default_factory=BitTorrentConfig)
    catalog: CatalogConfig = field(default_factory=CatalogConfig)
    web: WebConfig = field(default_factory=WebConfig)
    adversary: AdversaryConfig = field(default_factory=AdversaryConfig)
    population: PopulationConfig = field(default_factory=PopulationConfig)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)

    @property
    def policy(self) -> PolicyKind:
        return PolicyKind(self.tor.policy)

    def with_changes(self, **changes: Any) -> "ScenarioConfig":
        """Copy with dotted-key changes, e.g. with_changes(**{"tor.policy": "OneStreamPerCircuit"})."""
        raw = to_dict(self)
        for key, value in changes.items():
            _set_dotted(raw, key, value)
        return build_config(raw)


# --- Building from raw dicts ---

def _coerce(value: Any, default: Any, path: str, errors: list[str]) -> Any:
    if isinstance(default, bool):
        if not isinstance(value, bool):
            errors.append(f"{path}: expected boolean, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            errors.append(f"{path}: expected number, got {value!r}")
            return default
        return float(value)
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            errors.append(f"{path}: expected integer, got {value!r}")
            return default
        return value
    if isinstance(default, str) and not isinstance(value, str):
        errors.append(f"{path}: expected string, got {value!r}")
        return default
    if isinstance(default, list) and not isinstance(value, list):
        errors.append(f"{path}: expected array, got {value!r}")
        return default
    if isinstance(default, dict) and not isinstance(value, dict):
        errors.append(f"{path}: expected table, got {value!r}")
        return default
    return value


def _population(value: Any, path: str, errors: list[str]) -> list[PopulationEntry]:
    entries = []
    if not isinstance(value, list):
        errors.append(f"{path}: expected array of tables")
        return entries
    for i, row in enumerate(value):
        if not isinstance(row, dict) or set(row) != {"country", "asn", "weight"}:
            errors.append(f"{path}[{i}]: needs exactly country, asn, weight")
            continue
        entries.append(PopulationEntry(str(row["country"]), int(row["asn"]), float(row["weight"])))
    return entries


def _build(cls: type, data: dict, path: str, errors: list[str]) -> Any:
    instance = cls()
    known = {f.name: f for f in dataclasses.fields(cls)}
    for key, value in data.items():
        dotted = f"{path}.{key}" if path else key
        if key not in known:
            errors.append(f"{dotted}: unknown key")
            continue
        default = getattr(instance, key)
        if dataclasses.is_dataclass(default):
            if not isinstance(value, dict):
                errors.append(f"{dotted}: expected table")
                continue
            setattr(instance, key, _build(type(default), value, dotted, errors))
        elif cls is PopulationConfig:
            setattr(instance, key, _population(value, dotted, errors))
        else:
            setattr(instance, key, _coerce(value, default, dotted, errors))
    return instance


def to_dict(config: ScenarioConfig) -> dict:
    raw = dataclasses.asdict(config)
    raw["population"] = {
        name: [{"country": e.country, "asn": e.asn, "weight": e.weight} for e in entries]
        for name, entries in (("tor_users", config.population.tor_users),
                              ("baseline", config.population.baseline))
    }
    return raw


def _set_dotted(raw: dict, key: str, value: Any) -> None:
    parts = key.split(".")
    node = raw
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigInvalid(f"{key}: {part} is not a table")
    node[parts[-1]] = value


def parse_override(pair: str) -> tuple[str, Any]:
    """Parse ``section.key=value``; the value is read as a TOML scalar or array, else a bare string."""
    key, sep, text = pair.partition("=")
    if not sep or not key.strip():
        raise ConfigInvalid(f"override must look like key=value, got {pair!r}")
    try:
        value = tomllib.loads(f"v = {text.strip()}")["v"]
    except tomllib.TOMLDecodeError:
        value = text.strip()
    return key.strip(), value


def build_config(raw: dict) -> ScenarioConfig:
    errors: list[str] = []
    config = _build(ScenarioConfig, raw, "", errors)
    if not errors:
        _validate_config(config, errors)
    if errors:
        raise ConfigInvalid("Config validation failed:\n  " + "\n  ".join(errors))
    return config


def load_config(path: Optional[Path] = None, overrides: Optional[list[str]] = None) -> ScenarioConfig:
    """Load a scenario file (default: bundled scenario), apply overrides and env, validate."""
    load_dotenv(PROJECT_ROOT / ".env")
    path = Path(path) if path else DEFAULT_SCENARIO
    raw: dict = {}
    if path.exists():
        try:
            with open(path, "rb") as f:
                raw = tomllib.load(f)
        except tomllib.TOMLDecodeError as e:
            raise ConfigInvalid(f"{path}: {e}") from e
    elif path != DEFAULT_SCENARIO:
        raise ConfigInvalid(f"config file not found: {path}")

    # [scenario] holds the top-level keys
    flat = dict(raw.pop("scenario", {}))
    flat.update(raw)

    for pair in overrides or []:
        key, value = parse_override(pair)
        if key.startswith("scenario."):
            key = key[len("scenario."):]
        _set_dotted(flat, key, value)

    if os.getenv("BAD_APPLE_REPORT_DIR"):
        flat["report_dir"] = os.environ["BAD_APPLE_REPORT_DIR"]
    if os.getenv("LOG_LEVEL") and "log_level" not in flat:
        flat["log_level"] = os.environ["LOG_LEVEL"]

    return build_config(flat)


def _fraction(errors: list[str], key: str, value: float) -> None:
    if not (0.0 <= value <= 1.0):
        errors.append(f"{key} must be in [0,1], got {value}")


def _weights(errors: list[str], key: str, weights: list[float]) -> None:
    if any(w < 0 for w in weights) or abs(sum(weights) - 1.0) > 1e-9:
        errors.append(f"{key} must be non-negative and sum to 1, got {sum(weights)!r}")


def _validate_config(config: ScenarioConfig, errors: list[str]) -> None:
    """Validate values are within sane ranges; append one message per offending key."""
    tor, bt, cat, web, adv = config.tor, config.bittorrent, config.catalog, config.web, config.adversary

    if not config.seeds:
        errors.append("seeds must list at least one seed")
    if any(not isinstance(s, int) or s < 0 for s in config.seeds):
        errors.append(f"seeds must be non-negative integers, got {config.seeds}")
    if config.virtual_duration_s <= 0:
        errors.append(f"virtual_duration_s must be > 0, got {config.virtual_duration_s}")
    if config.snapshot_interval_s <= 0:
        errors.append(f"snapshot_interval_s must be > 0, got {config.snapshot_interval_s}")
    if len(config.latency_ms) != 2 or not (0 <= config.latency_ms[0] <= config.latency_ms[1]):
        errors.append(f"latency_ms must be [low, high] with 0 <= low <= high, got {config.latency_ms}")

    # tor
    if tor.n_hops < 2:
        errors.append(f"tor.n_hops must be >= 2, got {tor.n_hops}")
    if tor.circuit_lifetime_s <= 0:
        errors.append(f"tor.circuit_lifetime_s must be > 0, got {tor.circuit_lifetime_s}")
    if tor.policy not in {p.value for p in PolicyKind}:
        errors.append(f"tor.policy must be one of {[p.value for p in PolicyKind]}, got '{tor.policy}'")
    if set(tor.n_relays) - {"entry", "middle", "exit"}:
        errors.append(f"tor.n_relays has unknown roles: {sorted(set(tor.n_relays) - {'entry', 'middle', 'exit'})}")
    if any(not isinstance(v, int) or v < 0 for v in tor.n_relays.values()):
        errors.append(f"tor.n_relays counts must be non-negative integers, got {tor.n_relays}")
    n_exits = tor.n_relays.get("exit", 0)
    if any(not isinstance(i, int) or not (0 <= i < n_exits) for i in tor.instrumented_exits):
        errors.append(f"tor.instrumented_exits must index exits 0..{n_exits - 1}, got {tor.instrumented_exits}")
    seen_ports: dict[int, str] = {}
    for group, ports in tor.port_groups.items():
        for port in ports:
            if not isinstance(port, int) or not (1 <= port <= 65535):
                errors.append(f"tor.port_groups.{group}: invalid port {port!r}")
            elif port in seen_ports:
                errors.append(f"tor.port_groups: port {port} in both '{seen_ports[port]}' and '{group}'")
            else:
                seen_ports[port] = group

    # bittorrent
    if bt.n_peers < 0:
        errors.append(f"bittorrent.n_peers must be >= 0, got {bt.n_peers}")
    _fraction(errors, "bittorrent.tor_user_fraction", bt.tor_user_fraction)
    _fraction(errors, "bittorrent.encryption_fraction", bt.encryption_fraction)
    _fraction(errors, "bittorrent.announce_jitter", bt.announce_jitter)
    _fraction(errors, "bittorrent.browse_fraction", bt.browse_fraction)
    tor_behaviors = {Behavior.TRACKER_ONLY_VIA_TOR.value, Behavior.ALL_VIA_TOR.value}
    if set(bt.behavior_mix) - tor_behaviors:
        errors.append(f"bittorrent.behavior_mix keys must be in {sorted(tor_behaviors)}")
    for key, value in bt.behavior_mix.items():
        _fraction(errors, f"bittorrent.behavior_mix.{key}", value)
    _weights(errors, "bittorrent.behavior_mix", list(bt.behavior_mix.values()))
    if len(bt.downloads_per_peer) != 2 or not (1 <= bt.downloads_per_peer[0] <= bt.downloads_per_peer[1]):
        errors.append(f"bittorrent.downloads_per_peer must be [min, max] with 1 <= min <= max, got {bt.downloads_per_peer}")
    if bt.announce_interval_s <= 0:
        errors.append(f"bittorrent.announce_interval_s must be > 0, got {bt.announce_interval_s}")
    if bt.session_s <= 0:
        errors.append(f"bittorrent.session_s must be > 0, got {bt.session_s}")
    if bt.max_peers < 1 or bt.max_connects < 0:
        errors.append("bittorrent.max_peers must be >= 1 and bittorrent.max_connects >= 0")
    if not (1 <= bt.tracker_port <= 65535):
        errors.append(f"bittorrent.tracker_port must be 1-65535, got {bt.tracker_port}")
    sw = bt.swarm_size
    if len(sw.sizes) != len(sw.weights) or not sw.sizes or any(s < 0 for s in sw.sizes):
        errors.append("bittorrent.swarm_size.sizes and weights must be equal-length, non-empty, sizes >= 0")
    else:
        _weights(errors, "bittorrent.swarm_size.weights", sw.weights)

    # catalog
    if cat.n_items < 1:
        errors.append(f"catalog.n_items must be >= 1, got {cat.n_items}")
    ecosystems = {e.value for e in Ecosystem}
    if set(cat.ecosystem_shares) - ecosystems:
        errors.append(f"catalog.ecosystem_shares keys must be in {sorted(ecosystems)}")
    for key, value in cat.ecosystem_shares.items():
        _fraction(errors, f"catalog.ecosystem_shares.{key}", value)
    _weights(errors, "catalog.ecosystem_shares", list(cat.ecosystem_shares.values()))
    if cat.popularity not in ("zipf", "uniform"):
        errors.append(f"catalog.popularity must be 'zipf' or 'uniform', got '{cat.popularity}'")
    if not cat.tags or not (0 <= cat.tags_per_item <= len(cat.tags)):
        errors.append("catalog.tags must be non-empty and catalog.tags_per_item <= len(tags)")

    # web
    if web.n_web_users < 0 or web.n_sites < 1 or web.request_interval_s <= 0:
        errors.append("web.n_web_users >= 0, web.n_sites >= 1 and web.request_interval_s > 0 required")
    if len(web.ports) != len(web.port_weights) or not web.ports:
        errors.append("web.ports and web.port_weights must be equal-length and non-empty")
    else:
        _weights(errors, "web.port_weights", web.port_weights)
    if not web.categories:
        errors.append("web.categories must be non-empty")

    # adversary
    if adv.enabled and not (0 <= adv.hijack_exit < len(tor.instrumented_exits)):
        errors.append(f"adversary.hijack_exit must index tor.instrumented_exits, got {adv.hijack_exit}")
    if adv.correlation_window_s <= 0 or adv.freshness_window_s <= 0:
        errors.append("adversary.correlation_window_s and adversary.freshness_window_s must be > 0")
    if not (1 <= adv.malicious_port <= 65535):
        errors.append(f"adversary.malicious_port must be 1-65535, got {adv.malicious_port}")

    # population
    for name in ("tor_users", "baseline"):
        entries = getattr(config.population, name)
        if not entries:
            errors.append(f"population.{name} must not be empty")
            continue
        _weights(errors, f"population.{name}", [e.weight for e in entries])
