"""Relay directory and circuit construction."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable

import numpy as np
import structlog

from src.shell.contract import Endpoint, SimTime

log = structlog.get_logger()


class RelayRole(Enum):
    ENTRY = "entry"
    MIDDLE = "middle"
    EXIT = "exit"


class InsufficientRelays(RuntimeError):
    """The directory cannot supply a role-respecting path of the requested length."""


@dataclass(frozen=True)
class Relay:
    host_id: int
    endpoint: Endpoint
    roles: frozenset[RelayRole]

    def has(self, role: RelayRole) -> bool:
        return role in self.roles


@dataclass
class Circuit:
    """A client's path through the overlay.

    ``owner`` is ground truth. Adversary-facing code only ever receives the
    circuit id and the exit hop.
    """
    id: int
    hops: tuple[int, ...]               # relay host ids, entry first, exit last
    owner: int
    created_at: SimTime
    isolation_key: object = None        # policy-specific reuse key
    streams: list[int] = field(default_factory=list)

    @property
    def exit_hop(self) -> int:
        return self.hops[-1]


class Directory:
    """Public relay list. Exit addresses are published, which the malicious peer relies on."""

    def __init__(self, relays: Iterable[Relay]) -> None:
        self._relays: dict[int, Relay] = {}
        for relay in relays:
            self._relays[relay.host_id] = relay
        self._exits = [r for r in self._relays.values() if r.has(RelayRole.EXIT)]

    def __len__(self) -> int:
        return len(self._relays)

    def __getitem__(self, host_id: int) -> Relay:
        return self._relays[host_id]

    def relays(self, role: RelayRole | None = None) -> list[Relay]:
        if role is None:
            return list(self._relays.values())
        return [r for r in self._relays.values() if r.has(role)]

    @property
    def exits(self) -> list[Relay]:
        """Exit relays in directory order; ``instrumented_exits`` indices refer to this order."""
        return list(self._exits)

    def exit_addresses(self) -> frozenset[str]:
        return frozenset(r.endpoint.ip for r in self._exits)


def _pick(rng: np.random.Generator, pool: list[Relay], taken: set[int], k: int, role: str) -> list[Relay]:
    free = [r for r in pool if r.host_id not in taken]
    if len(free) < k:
        raise InsufficientRelays(f"need {k} {role} relay(s), {len(free)} available")
    idx = rng.choice(len(free), size=k, replace=False)
    return [free[int(i)] for i in idx]


def build_circuit(
    directory: Directory,
    client: int,
    rng: np.random.Generator,
    n_hops: int = 3,
    circuit_id: int = 0,
    at: SimTime = 0,
) -> Circuit:
    """Sample a role-respecting path without replacement: exit first (uniform over exits),
    then entry, then ``n_hops - 2`` middles."""
    if n_hops < 2:
        raise ValueError(f"n_hops must be >= 2, got {n_hops}")
    if len(directory) < n_hops:
        raise InsufficientRelays(f"need {n_hops} relays, directory has {len(directory)}")
    taken: set[int] = set()
    (exit_relay,) = _pick(rng, directory.exits, taken, 1, "exit")
    taken.add(exit_relay.host_id)
    (entry,) = _pick(rng, directory.relays(RelayRole.ENTRY), taken, 1, "entry")
    taken.add(entry.host_id)
    middles = _pick(rng, directory.relays(RelayRole.MIDDLE), taken, n_hops - 2, "middle")
    hops = (entry.host_id, *(m.host_id for m in middles), exit_relay.host_id)
    return Circuit(id=circuit_id, hops=hops, owner=client, created_at=at)
