"""Synthetic content catalog: info_hashes labelled by ecosystem, tags, and popularity."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np
import structlog

from src.shell.config import CatalogConfig
from src.shell.contract import Ecosystem

log = structlog.get_logger()


@dataclass(frozen=True)
class ContentItem:
    info_hash: bytes
    ecosystem: Ecosystem
    tags: tuple[str, ...]
    popularity: float


class Catalog:
    def __init__(self, items: list[ContentItem]) -> None:
        self._items = list(items)
        self._by_hash = {item.info_hash: item for item in self._items}
        if len(self._by_hash) != len(self._items):
            raise ValueError("catalog info_hashes must be unique")
        weights = np.array([item.popularity for item in self._items], dtype=float)
        self._p = weights / weights.sum() if len(weights) else weights

    def __len__(self) -> int:
        return len(self._items)

    def __iter__(self) -> Iterator[ContentItem]:
        return iter(self._items)

    def __contains__(self, info_hash: bytes) -> bool:
        return info_hash in self._by_hash

    def get(self, info_hash: bytes) -> Optional[ContentItem]:
        return self._by_hash.get(info_hash)

    def sample(self, rng: np.random.Generator, k: int) -> list[bytes]:
        """``k`` distinct info_hashes drawn by popularity."""
        k = min(k, len(self._items))
        idx = rng.choice(len(self._items), size=k, replace=False, p=self._p)
        return [self._items[int(i)].info_hash for i in idx]

    def sample_downloads(self, rng: np.random.Generator, n: int) -> list[bytes]:
        """``n`` independent downloads, repeats allowed."""
        idx = rng.choice(len(self._items), size=n, replace=True, p=self._p)
        return [self._items[int(i)].info_hash for i in idx]

    def known_lists(self) -> dict[Ecosystem, frozenset[bytes]]:
        """Public and private index listings an outside observer can consult.

        Underground content is on neither list, which is all an observer can
        tell about it.
        """
        return {
            eco: frozenset(i.info_hash for i in self._items if i.ecosystem is eco)
            for eco in (Ecosystem.PUBLIC, Ecosystem.PRIVATE)
        }


def build_catalog(config: CatalogConfig, rng: np.random.Generator) -> Catalog:
    n = config.n_items
    ecosystems = [Ecosystem(name) for name in config.ecosystem_shares]
    shares = np.array(list(config.ecosystem_shares.values()), dtype=float)
    labels = rng.choice(len(ecosystems), size=n, p=shares / shares.sum())

    if config.popularity == "zipf":
        ranks = rng.permutation(n) + 1
        popularity = ranks.astype(float) ** -config.zipf_exponent
    else:
        popularity = np.ones(n)

    seen: set[bytes] = set()
    items = []
    for i in range(n):
        info_hash = rng.bytes(20)
        while info_hash in seen:
            info_hash = rng.bytes(20)
        seen.add(info_hash)
        tag_idx = rng.choice(len(config.tags), size=config.tags_per_item, replace=False)
        items.append(ContentItem(
            info_hash=info_hash,
            ecosystem=ecosystems[int(labels[i])],
            tags=tuple(config.tags[int(t)] for t in sorted(tag_idx)),
            popularity=float(popularity[i]),
        ))
    log.info("catalog.built", items=n, popularity=config.popularity)
    return Catalog(items)
