"""Host registry and population sampling from country/AS weight tables."""

from __future__ import annotations

import ipaddress
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from src.shell.contract import Endpoint, Host

PEER_PORT_MIN = 1024
PEER_PORT_MAX = 65535
N_PEER_PORTS = PEER_PORT_MAX - PEER_PORT_MIN + 1   # 64512

_IP_LOW = int(ipaddress.IPv4Address("1.0.0.0"))
_IP_HIGH = int(ipaddress.IPv4Address("223.255.255.255"))


class WeightSumInvalid(ValueError):
    """Population weights do not sum to 1."""


@dataclass(frozen=True)
class PopulationEntry:
    country: str
    asn: int
    weight: float


def check_weights(weights: Sequence[float], what: str = "population") -> None:
    total = float(sum(weights))
    if abs(total - 1.0) > 1e-9 or any(w < 0 for w in weights):
        raise WeightSumInvalid(f"{what} weights sum to {total!r}, expected 1")


class HostRegistry:
    """Allocates host ids and globally unique addresses."""

    def __init__(self) -> None:
        self._hosts: dict[int, Host] = {}
        self._ips: dict[str, int] = {}
        self._by_endpoint: dict[Endpoint, int] = {}

    def __len__(self) -> int:
        return len(self._hosts)

    def __getitem__(self, host_id: int) -> Host:
        return self._hosts[host_id]

    def hosts(self) -> list[Host]:
        return list(self._hosts.values())

    def by_endpoint(self, endpoint: Endpoint) -> Optional[int]:
        return self._by_endpoint.get(endpoint)

    def by_ip(self, ip: str) -> Optional[Host]:
        """Geolocation lookup: the host behind a public address."""
        host_id = self._ips.get(ip)
        return self._hosts[host_id] if host_id is not None else None

    def fresh_ip(self, rng: np.random.Generator) -> str:
        while True:
            candidate = ipaddress.IPv4Address(int(rng.integers(_IP_LOW, _IP_HIGH + 1)))
            text = str(candidate)
            if text not in self._ips and candidate.is_global:
                return text

    def add(self, endpoint: Endpoint, country: str, asn: int) -> Host:
        if endpoint.ip in self._ips:
            raise ValueError(f"address already allocated: {endpoint.ip}")
        host = Host(id=len(self._hosts), endpoint=endpoint, country=country, asn=asn)
        self._hosts[host.id] = host
        self._ips[endpoint.ip] = host.id
        self._by_endpoint[endpoint] = host.id
        return host

    def add_random(self, rng: np.random.Generator, port: int, country: str = "ZZ", asn: int = 0) -> Host:
        return self.add(Endpoint(self.fresh_ip(rng), port), country, asn)


def sample_population(
    table: Sequence[PopulationEntry],
    n: int,
    rng: np.random.Generator,
    registry: Optional[HostRegistry] = None,
) -> list[Host]:
    """Sample ``n`` hosts: country/AS multinomial by weight, ports uniform on [1024, 65535]."""
    weights = [e.weight for e in table]
    check_weights(weights)
    registry = registry if registry is not None else HostRegistry()
    if n <= 0:
        return []
    p = np.asarray(weights, dtype=float)
    picks = rng.choice(len(table), size=n, p=p / p.sum())
    ports = rng.integers(PEER_PORT_MIN, PEER_PORT_MAX + 1, size=n)
    hosts = []
    for idx, port in zip(picks, ports):
        entry = table[int(idx)]
        hosts.append(registry.add_random(rng, int(port), entry.country, entry.asn))
    return hosts
