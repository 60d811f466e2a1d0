"""The adversary's own record: traces, unions, hijacks, in emission order."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

from src.adversary.hijack import HijackRecord
from src.adversary.linkage import UnionRecord
from src.shell.contract import TraceResult

Entry = Union[TraceResult, UnionRecord, HijackRecord]


@dataclass
class TraceLog:
    entries: list[Entry] = field(default_factory=list)

    def add(self, entry: Entry) -> None:
        self.entries.append(entry)

    @property
    def traces(self) -> list[TraceResult]:
        return [e for e in self.entries if isinstance(e, TraceResult)]

    @property
    def unions(self) -> list[UnionRecord]:
        return [e for e in self.entries if isinstance(e, UnionRecord)]

    @property
    def hijacks(self) -> list[HijackRecord]:
        return [e for e in self.entries if isinstance(e, HijackRecord)]

    def records(self) -> list[dict]:
        return [e.to_record() for e in self.entries]

    def write(self, path: Path) -> None:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            for record in self.records():
                f.write(json.dumps(record, sort_keys=True) + "\n")
