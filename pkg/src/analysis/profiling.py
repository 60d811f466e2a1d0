"""Who got traced and what they do: country/AS profiles, content and web categories.

Everything here works from what the adversary holds after a run (exit
observations, its trace log) plus the public lookups an observer has:
IP geolocation through the host registry, the public and private content
listings, and website categories. Outputs are aggregate tables only.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
import pandas as pd
import structlog
from scipy.stats import rankdata

from src.adversary.dht_match import dht_port_match
from src.adversary.linkage import Propagation
from src.bittorrent.catalog import Catalog
from src.shell.contract import Ecosystem, Endpoint, ExitObservation, Host, SimTime, StreamClass, TraceResult
from src.sim.population import N_PEER_PORTS, PEER_PORT_MAX, PEER_PORT_MIN, HostRegistry, PopulationEntry, check_weights
from src.simulation.web import UNKNOWN_CATEGORY, WebDirectory

log = structlog.get_logger()

UNKNOWN = "Unknown"
GROUPINGS = ("country", "asn")
ORACLE_INFO_HASH = b"\x00" * 20


class EmptyInput(ValueError):
    """Nothing to aggregate."""


@dataclass(frozen=True)
class OverRepresentationRow:
    key: str
    count_on_tor: int
    share_on_tor: float
    share_baseline: float
    over: Optional[float]

    def to_dict(self) -> dict:
        return {"key": self.key, "count_on_tor": self.count_on_tor, "share_on_tor": self.share_on_tor,
                "share_baseline": self.share_baseline, "over": self.over}


@dataclass(frozen=True)
class EcosystemBreakdown:
    shares: dict[str, float]
    total: int

    def to_dict(self) -> dict:
        return {"total": self.total, **self.shares}


def _key(host: Host, by: str) -> str:
    if by == "country":
        return host.country
    if by == "asn":
        return f"AS{host.asn}"
    raise ValueError(f"unknown grouping: {by}")


# --- who ---

def traced_addresses(propagation: Propagation) -> list[str]:
    """Distinct addresses named by non-conflicted components."""
    return sorted({ep.ip for ep in propagation.component_endpoint.values()})


def traced_hosts(propagation: Propagation, registry: HostRegistry) -> list[Host]:
    hosts = []
    for ip in traced_addresses(propagation):
        host = registry.by_ip(ip)
        if host is not None:
            hosts.append(host)
    return hosts


def baseline_shares(table: Sequence[PopulationEntry], by: str = "country") -> dict[str, float]:
    check_weights([e.weight for e in table], "baseline")
    shares: Counter[str] = Counter()
    for e in table:
        key = e.country if by == "country" else f"AS{e.asn}"
        shares[key] += e.weight
    return dict(shares)


def over_representation(
    counts: Mapping[str, int],
    baseline: Mapping[str, float],
    top_k: Optional[int] = 10,
) -> list[OverRepresentationRow]:
    """Share among traced Tor users divided by the share outside Tor, per key."""
    check_weights(list(baseline.values()), "baseline")
    total = sum(counts.values())
    if total == 0:
        return []
    rows = []
    for key, count in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0])):
        share = count / total
        base = float(baseline.get(key, 0.0))
        rows.append(OverRepresentationRow(
            key=key, count_on_tor=int(count), share_on_tor=share, share_baseline=base,
            over=share / base if base > 0 else None,
        ))
    return rows[:top_k] if top_k is not None else rows


def profile_hosts(hosts: Iterable[Host], table: Sequence[PopulationEntry],
                  by: str = "country", top_k: Optional[int] = 10) -> list[OverRepresentationRow]:
    counts = Counter(_key(h, by) for h in hosts)
    return over_representation(counts, baseline_shares(table, by), top_k)


def traced_snapshots(
    traces: Sequence[TraceResult],
    propagation: Propagation,
    registry: HostRegistry,
    interval: SimTime,
    duration: SimTime,
    by: str = "country",
) -> pd.DataFrame:
    """Cumulative distinct traced addresses per key, one row per snapshot tick."""
    first_seen: dict[str, SimTime] = {}
    kept = {ep.ip for ep in propagation.component_endpoint.values()}
    for t in sorted(traces, key=lambda t: t.at):
        ip = t.traced_endpoint.ip
        if ip in kept:
            first_seen.setdefault(ip, t.at)
    ticks = list(range(interval, duration + 1, interval)) if interval > 0 else []
    if not ticks or ticks[-1] != duration:
        ticks.append(duration)
    records = []
    for ip, at in first_seen.items():
        host = registry.by_ip(ip)
        if host is not None:
            records.append({"key": _key(host, by), "at": at})
    if not records:
        return pd.DataFrame(index=pd.Index(ticks, name="tick"))
    df = pd.DataFrame(records)
    keys = sorted(df["key"].unique())
    table = {key: [int(((df["key"] == key) & (df["at"] <= tick)).sum()) for tick in ticks] for key in keys}
    return pd.DataFrame(table, index=pd.Index(ticks, name="tick"))


def rank_stability(snapshots: pd.DataFrame) -> pd.DataFrame:
    """Per key, rank at each snapshot minus rank at the last one (rank 1 = most traced)."""
    if len(snapshots.index) < 2:
        raise EmptyInput("rank stability needs at least two snapshots")
    if snapshots.shape[1] == 0:
        return pd.DataFrame(index=snapshots.index)
    ranks = np.vstack([rankdata(-row, method="min") for row in snapshots.to_numpy(dtype=float)])
    diff = ranks - ranks[-1]
    return pd.DataFrame(diff.astype(int), index=snapshots.index, columns=snapshots.columns)


# --- what ---

def traced_downloads(observations: Iterable[ExitObservation], propagation: Propagation) -> list[bytes]:
    """Content named by traced streams, one entry per (address, info_hash)."""
    seen: dict[tuple[str, bytes], None] = {}
    for obs in observations:
        hit = propagation.streams.get(obs.stream_id)
        if hit is not None and obs.info_hash is not None:
            seen.setdefault((hit.endpoint.ip, obs.info_hash), None)
    return [ih for _, ih in seen]


def ecosystem_breakdown(downloads: Sequence[bytes], catalog: Catalog) -> EcosystemBreakdown:
    """Public / Private / Unknown shares, judged by listing membership alone."""
    if not downloads:
        raise EmptyInput("no downloads to classify")
    known = catalog.known_lists()
    counts = Counter()
    for ih in downloads:
        if ih in known[Ecosystem.PUBLIC]:
            counts[Ecosystem.PUBLIC.value] += 1
        elif ih in known[Ecosystem.PRIVATE]:
            counts[Ecosystem.PRIVATE.value] += 1
        else:
            counts[UNKNOWN] += 1
    n = len(downloads)
    labels = (Ecosystem.PUBLIC.value, Ecosystem.PRIVATE.value, UNKNOWN)
    return EcosystemBreakdown(shares={k: counts[k] / n for k in labels}, total=n)


def tag_profile(
    observations: Iterable[ExitObservation],
    propagation: Propagation,
    catalog: Catalog,
    registry: HostRegistry,
) -> pd.DataFrame:
    """Tag counts of traced downloads, one row per country."""
    rows = []
    seen: set[tuple[str, bytes]] = set()
    for obs in observations:
        hit = propagation.streams.get(obs.stream_id)
        if hit is None or obs.info_hash is None or (hit.endpoint.ip, obs.info_hash) in seen:
            continue
        seen.add((hit.endpoint.ip, obs.info_hash))
        item, host = catalog.get(obs.info_hash), registry.by_ip(hit.endpoint.ip)
        if item is None or host is None:
            continue
        rows.extend({"country": host.country, "tag": tag} for tag in item.tags)
    if not rows:
        return pd.DataFrame()
    df = pd.DataFrame(rows)
    return df.groupby(["country", "tag"]).size().unstack(fill_value=0).sort_index()


def web_profile(
    observations: Iterable[ExitObservation],
    propagation: Propagation,
    sites: WebDirectory,
    registry: HostRegistry,
) -> dict[str, pd.DataFrame]:
    """Website categories of HTTP streams: all of them versus the traced ones, and per country."""
    rows = []
    for obs in observations:
        if obs.destination.port != 80 or obs.info_hash is not None:
            continue
        category = sites.category_of(obs.destination)
        if category == UNKNOWN_CATEGORY:
            continue
        hit = propagation.streams.get(obs.stream_id)
        host = registry.by_ip(hit.endpoint.ip) if hit is not None else None
        rows.append({"category": category, "traced": hit is not None,
                     "country": host.country if host else None})
    if not rows:
        return {"shares": pd.DataFrame(), "by_country": pd.DataFrame()}
    df = pd.DataFrame(rows)
    shares = pd.DataFrame({
        "Tor": df["category"].value_counts(normalize=True),
        "BitTorrent": df.loc[df["traced"], "category"].value_counts(normalize=True),
    }).fillna(0.0).sort_index()
    traced = df[df["traced"] & df["country"].notna()]
    by_country = (traced.groupby(["country", "category"]).size().unstack(fill_value=0).sort_index()
                  if not traced.empty else pd.DataFrame())
    return {"shares": shares, "by_country": by_country}


# --- port identifiability ---

def port_uniqueness_oracle(
    sizes: Sequence[int],
    n_swarms: int,
    rng: np.random.Generator,
) -> pd.DataFrame:
    """DHT port-match success over synthetic swarms, against the closed form.

    Member 0 of each swarm announces its listening port through an exit; the
    match runs through ``dht_port_match`` against the whole swarm and counts
    only when it names that member.
    """
    rows = []
    for s in sizes:
        if s < 1:
            raise ValueError(f"swarm size must be >= 1, got {s}")
        addresses = [f"10.{j >> 16 & 255}.{j >> 8 & 255}.{j & 255}" for j in range(s)]
        ports = rng.integers(PEER_PORT_MIN, PEER_PORT_MAX + 1, size=(n_swarms, s))
        hits = 0
        for row in ports.tolist():
            swarm = [Endpoint(ip, port) for ip, port in zip(addresses, row)]
            obs = ExitObservation(circuit_id=0, stream_id=0, destination=swarm[0],
                                  stream_class=StreamClass.BT_HANDSHAKE, at=0,
                                  info_hash=ORACLE_INFO_HASH, listening_port=row[0])
            trace = dht_port_match(obs, lambda _ih, swarm=swarm: swarm)
            if trace is not None and trace.traced_endpoint == swarm[0]:
                hits += 1
        rows.append({
            "swarm_size": int(s),
            "empirical": hits / n_swarms if n_swarms else float("nan"),
            "closed_form": (1.0 - 1.0 / N_PEER_PORTS) ** (s - 1),
        })
    df = pd.DataFrame(rows)
    df["abs_error"] = (df["empirical"] - df["closed_form"]).abs()
    log.debug("analysis.port_oracle", sizes=list(sizes), swarms=n_swarms)
    return df
