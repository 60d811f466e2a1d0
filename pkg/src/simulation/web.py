"""Synthetic websites visited over the overlay, each with a category label."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from src.shell.config import WebConfig
from src.shell.contract import Endpoint
from src.sim.population import HostRegistry

APP_BROWSER = "browser"
UNKNOWN_CATEGORY = "Unknown"


@dataclass(frozen=True)
class Site:
    ip: str
    name: str
    category: str


class WebDirectory:
    """Sites plus the category lookup an observer gets from a filtering service."""

    def __init__(self, sites: list[Site]) -> None:
        self.sites = sites
        self._by_ip = {s.ip: s for s in sites}

    def __len__(self) -> int:
        return len(self.sites)

    def category_of(self, destination: Endpoint) -> str:
        site = self._by_ip.get(destination.ip)
        return site.category if site else UNKNOWN_CATEGORY


def build_sites(config: WebConfig, registry: HostRegistry, rng: np.random.Generator) -> WebDirectory:
    sites = []
    for i in range(config.n_sites):
        category = config.categories[int(rng.integers(len(config.categories)))]
        host = registry.add_random(rng, port=80)
        sites.append(Site(ip=host.endpoint.ip, name=f"site{i}.example", category=category))
    return WebDirectory(sites)


def request_payload(site: Site, port: int, rng: np.random.Generator) -> bytes:
    """Opening bytes of a visit: a plain request line on 80, opaque bytes elsewhere."""
    if port == 80:
        path = f"/page/{int(rng.integers(1, 10_000))}"
        return f"GET {path} HTTP/1.1\r\nHost: {site.name}\r\nAccept: */*\r\n\r\n".encode("ascii")
    return rng.bytes(int(rng.integers(64, 512)))
