"""Event-sequence data model, corpus serialization, and grounded fact queries.

A sequence stores occurrence times for body predicates (ids ``1..U``) plus the
occurrence times of the target event, all on a finite horizon ``[0, T]``.
Predicate id 0 is reserved for the dummy predicate: it never carries events and
its static fact is vacuously true, which is what lets a fixed-width rule
template represent shorter rules.

Fact queries are grounded against history strictly before the query time, so
an event occurring exactly at ``t`` does not influence facts evaluated at
``t``.  Temporal relations are judged on the earliest occurrence of each
predicate before ``t``, with a symmetric tolerance ``delta`` deciding ties.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator, Mapping

DUMMY_PREDICATE = 0


class Relation(Enum):
    """Temporal relation between the grounding times of two predicates."""

    BEFORE = "before"
    EQUAL = "equal"
    AFTER = "after"
    NONE = "none"


class CorpusError(ValueError):
    """A corpus file or sequence payload violates the data contract."""


def _check_times(times: tuple[float, ...], horizon: float, what: str) -> None:
    prev = -math.inf
    for t in times:
        if not (0.0 <= t <= horizon) or not math.isfinite(t):
            raise CorpusError(f"{what}: time {t} outside [0, {horizon}]")
        if t <= prev:
            raise CorpusError(f"{what}: times not strictly ascending ({prev} then {t})")
        prev = t


@dataclass(frozen=True)
class EventSequence:
    """Per-predicate occurrence times and target times over one horizon."""

    horizon: float
    events: Mapping[int, tuple[float, ...]] = field(default_factory=dict)
    target_times: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if not (isinstance(self.horizon, (int, float)) and math.isfinite(self.horizon)
                and self.horizon > 0):
            raise CorpusError(f"horizon must be positive and finite, got {self.horizon!r}")
        object.__setattr__(self, "horizon", float(self.horizon))
        clean: dict[int, tuple[float, ...]] = {}
        for pid in sorted(self.events):
            if not isinstance(pid, int) or pid < 1:
                raise CorpusError(
                    f"invalid predicate id {pid!r} (ids start at 1; the dummy id 0 carries no events)")
            times = tuple(float(t) for t in self.events[pid])
            if not times:
                continue  # absent and empty are the same thing
            _check_times(times, self.horizon, f"predicate {pid}")
            clean[pid] = times
        object.__setattr__(self, "events", clean)
        tgt = tuple(float(t) for t in self.target_times)
        _check_times(tgt, self.horizon, "target")
        object.__setattr__(self, "target_times", tgt)

    def times(self, pid: int) -> tuple[float, ...]:
        return self.events.get(pid, ())

    def first_occurrence(self, pid: int) -> float:
        """Earliest occurrence time of ``pid``, or +inf if it never fires."""
        ts = self.events.get(pid)
        return ts[0] if ts else math.inf

    @property
    def max_predicate(self) -> int:
        return max(self.events, default=0)


@dataclass(frozen=True)
class Dataset:
    """A corpus of sequences sharing one predicate vocabulary of size ``num_predicates``."""

    sequences: tuple[EventSequence, ...]
    num_predicates: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "sequences", tuple(self.sequences))
        if self.num_predicates < 0:
            raise CorpusError("num_predicates must be nonnegative")
        for i, seq in enumerate(self.sequences):
            if seq.max_predicate > self.num_predicates:
                raise CorpusError(
                    f"sequence {i}: predicate {seq.max_predicate} exceeds "
                    f"declared vocabulary size {self.num_predicates}")

    def __len__(self) -> int:
        return len(self.sequences)

    def __iter__(self) -> Iterator[EventSequence]:
        return iter(self.sequences)

    def __getitem__(self, i: int) -> EventSequence:
        return self.sequences[i]


def fact_static(seq: EventSequence, pid: int, t: float) -> int:
    """1 when ``pid`` has fired strictly before ``t``; the dummy is always true."""
    if pid == DUMMY_PREDICATE:
        return 1
    return 1 if seq.first_occurrence(pid) < t else 0


def fact_relation(seq: EventSequence, pid_a: int, pid_b: int, rel: Relation,
                  t: float, delta: float) -> int:
    """Grounded temporal-relation fact at tolerance ``delta`` and query time ``t``.

    Grounding uses the earliest occurrence of each predicate strictly before
    ``t``.  A non-NONE relation with a missing grounding, or with a dummy
    endpoint, is false; NONE holds unconditionally.
    """
    if rel is Relation.NONE:
        return 1
    if pid_a == DUMMY_PREDICATE or pid_b == DUMMY_PREDICATE:
        return 0
    ta = seq.first_occurrence(pid_a)
    tb = seq.first_occurrence(pid_b)
    if ta >= t or tb >= t:
        return 0
    diff = ta - tb
    if rel is Relation.BEFORE:
        return 1 if diff < -delta else 0
    if rel is Relation.EQUAL:
        return 1 if abs(diff) <= delta else 0
    if rel is Relation.AFTER:
        return 1 if diff > delta else 0
    raise ValueError(f"unknown relation {rel!r}")


def breakpoints(seq: EventSequence) -> list[float]:
    """Sorted times at which any grounded fact of ``seq`` can change value.

    Includes 0 and the horizon.  Between consecutive entries every static and
    relation fact is constant, so any intensity built from them is piecewise
    constant on the open segments.
    """
    pts = {0.0, seq.horizon}
    for times in seq.events.values():
        pts.update(times)
    pts.update(seq.target_times)
    return sorted(pts)


def save_corpus(dataset: Dataset, path: str) -> None:
    """Write a corpus as JSON lines: one header record, then one record per sequence."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"num_predicates": dataset.num_predicates,
                             "format_version": 1}) + "\n")
        for seq in dataset:
            rec = {
                "horizon": seq.horizon,
                "events": {str(p): list(ts) for p, ts in sorted(seq.events.items())},
                "target": list(seq.target_times),
            }
            fh.write(json.dumps(rec) + "\n")


def load_corpus(path: str) -> Dataset:
    """Read a JSON-lines corpus; errors carry the offending line number."""
    sequences: list[EventSequence] = []
    num_predicates: int | None = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"line {lineno}: malformed JSON ({exc})") from exc
            if num_predicates is None:
                if not isinstance(rec, dict) or "num_predicates" not in rec:
                    raise CorpusError(
                        f"line {lineno}: expected header with num_predicates and format_version")
                if rec.get("format_version") != 1:
                    raise CorpusError(
                        f"line {lineno}: unsupported format_version {rec.get('format_version')!r}")
                num_predicates = int(rec["num_predicates"])
                if num_predicates < 0:
                    raise CorpusError(f"line {lineno}: num_predicates must be nonnegative")
                continue
            try:
                events = {int(k): tuple(v) for k, v in rec.get("events", {}).items()}
                seq = EventSequence(horizon=rec["horizon"], events=events,
                                    target_times=tuple(rec.get("target", ())))
            except (CorpusError, KeyError, TypeError, ValueError) as exc:
                raise CorpusError(f"line {lineno}: {exc}") from exc
            if seq.max_predicate > num_predicates:
                raise CorpusError(
                    f"line {lineno}: predicate {seq.max_predicate} exceeds "
                    f"declared vocabulary size {num_predicates}")
            sequences.append(seq)
    if num_predicates is None:
        return Dataset((), 0)
    return Dataset(tuple(sequences), num_predicates)
