"""Sequence-numbered event log.

Every observable thing the deployment does becomes one EventRecord. The log is
the replayable ground truth for a run: two runs are equivalent iff their logs
are byte-identical.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, Iterator

from .common import Clock, sha256_hex


@dataclass(frozen=True)
class EventRecord:
    seq: int
    tick: int
    source: str
    type: str
    payload: dict

    def to_line(self) -> str:
        # sort_keys gives a canonical byte form; payload must be JSON-native.
        return json.dumps(
            {"seq": self.seq, "tick": self.tick, "source": self.source,
             "type": self.type, "payload": self.payload},
            sort_keys=True, separators=(",", ":"), ensure_ascii=True)

    @staticmethod
    def from_line(line: str) -> "EventRecord":
        d = json.loads(line)
        return EventRecord(d["seq"], d["tick"], d["source"], d["type"], d["payload"])


class EventLog:
    def __init__(self, clock: Clock) -> None:
        self.clock = clock
        self.records: list[EventRecord] = []
        self._subscribers: list[Callable[[EventRecord], None]] = []

    def append(self, source: str, type_: str, payload: dict | None = None) -> EventRecord:
        rec = EventRecord(len(self.records), self.clock.now, source, type_, payload or {})
        self.records.append(rec)
        for fn in self._subscribers:
            fn(rec)
        return rec

    def subscribe(self, fn: Callable[[EventRecord], None]) -> None:
        self._subscribers.append(fn)

    def unsubscribe(self, fn: Callable[[EventRecord], None]) -> None:
        if fn in self._subscribers:
            self._subscribers.remove(fn)

    def of_type(self, type_: str) -> Iterator[EventRecord]:
        return (r for r in self.records if r.type == type_)

    def count_of(self, type_: str) -> int:
        return sum(1 for r in self.records if r.type == type_)

    def digest(self) -> str:
        return sha256_hex("\n".join(r.to_line() for r in self.records).encode())

    def write_jsonl(self, path: str) -> None:
        with open(path, "w") as fh:
            for rec in self.records:
                fh.write(rec.to_line() + "\n")

    @staticmethod
    def read_jsonl(path: str) -> list[EventRecord]:
        out = []
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if line:
                    out.append(EventRecord.from_line(line))
        return out
