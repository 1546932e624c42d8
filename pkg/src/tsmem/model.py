"""Domain types shared across the memory pipeline.

Semantic time is kept at day resolution. ``TimePoint`` carries an optional
time-of-day for display, but ordering, equality and hashing look at the
calendar day only.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from datetime import date, datetime, time, timedelta, timezone
from enum import Enum
from typing import Iterable, Iterator, Optional

import numpy as np


class Speaker(str, Enum):
    USER = "user"
    ASSISTANT = "assistant"


class MemoryKind(str, Enum):
    TOPIC = "topic"
    PERSONA = "persona"
    RAW = "raw"


class DimensionMismatch(ValueError):
    """Raised when a vector does not match the store-wide embedding dimension."""


@dataclass(frozen=True, order=True)
class TimePoint:
    """A UTC calendar day with an optional seconds-within-day."""

    day: date
    seconds: Optional[int] = field(default=None, compare=False)

    def __post_init__(self):
        if isinstance(self.day, datetime):
            object.__setattr__(self, "day", self.day.date())
        if self.seconds is not None and not 0 <= self.seconds < 86400:
            raise ValueError(f"seconds out of range: {self.seconds}")

    @classmethod
    def parse(cls, text: str) -> "TimePoint":
        """Parse ``YYYY-MM-DD`` or a full ISO-8601 timestamp.

        Timestamps with an offset are converted to UTC before truncation.
        """
        text = text.strip()
        if len(text) == 10:
            return cls(date.fromisoformat(text))
        stamp = datetime.fromisoformat(text.replace("Z", "+00:00"))
        return cls.from_datetime(stamp)

    @classmethod
    def from_datetime(cls, stamp: datetime) -> "TimePoint":
        if stamp.tzinfo is not None:
            stamp = stamp.astimezone(timezone.utc).replace(tzinfo=None)
        secs = stamp.hour * 3600 + stamp.minute * 60 + stamp.second
        return cls(stamp.date(), secs)

    @classmethod
    def of(cls, year: int, month: int, day: int) -> "TimePoint":
        return cls(date(year, month, day))

    def isoformat(self) -> str:
        if self.seconds is None:
            return self.day.isoformat()
        clock = time(self.seconds // 3600, (self.seconds // 60) % 60, self.seconds % 60)
        return f"{self.day.isoformat()}T{clock.isoformat()}Z"

    def truncate(self) -> "TimePoint":
        return TimePoint(self.day)

    def shift(self, days: int) -> "TimePoint":
        return TimePoint(self.day + timedelta(days=days))

    def __str__(self) -> str:
        return self.isoformat()


@dataclass(frozen=True)
class TimeRange:
    """Half-open ``[start, end)`` interval of days, or the unconstrained range."""

    start: Optional[TimePoint] = None
    end: Optional[TimePoint] = None
    unconstrained: bool = False

    def __post_init__(self):
        if self.unconstrained:
            return
        if self.start is None or self.end is None:
            raise ValueError("bounded range needs start and end")
        if not self.start < self.end:
            raise ValueError(f"empty range [{self.start}, {self.end})")

    @classmethod
    def days(cls, start: date, end: date) -> "TimeRange":
        return cls(TimePoint(start), TimePoint(end))

    @classmethod
    def single_day(cls, day: date) -> "TimeRange":
        return cls(TimePoint(day), TimePoint(day + timedelta(days=1)))

    def contains(self, t: TimePoint) -> bool:
        return range_contains(self, t)

    def overlaps(self, other: "TimeRange") -> bool:
        return ranges_overlap(self, other)

    def shift(self, days: int) -> "TimeRange":
        if self.unconstrained:
            return self
        return TimeRange(self.start.shift(days), self.end.shift(days))

    def iter_days(self) -> Iterator[date]:
        if self.unconstrained:
            raise ValueError("cannot enumerate an unconstrained range")
        d = self.start.day
        while d < self.end.day:
            yield d
            d += timedelta(days=1)

    def label(self) -> str:
        """Human-readable inclusive form, used in context blocks."""
        if self.unconstrained:
            return "any time"
        last = self.end.day - timedelta(days=1)
        if last == self.start.day:
            return self.start.day.isoformat()
        return f"{self.start.day.isoformat()}..{last.isoformat()}"

    def to_json(self) -> dict:
        if self.unconstrained:
            return {"unconstrained": True, "start": None, "end": None}
        return {"unconstrained": False, "start": self.start.day.isoformat(), "end": self.end.day.isoformat()}

    @classmethod
    def from_json(cls, data: dict) -> "TimeRange":
        if data.get("unconstrained"):
            return UNCONSTRAINED
        return cls(TimePoint.parse(data["start"]), TimePoint.parse(data["end"]))


UNCONSTRAINED = TimeRange(unconstrained=True)


def range_contains(r: TimeRange, t: TimePoint) -> bool:
    if r.unconstrained:
        return True
    return r.start.day <= t.day < r.end.day


def ranges_overlap(a: TimeRange, b: TimeRange) -> bool:
    if a.unconstrained or b.unconstrained:
        return True
    return max(a.start.day, b.start.day) < min(a.end.day, b.end.day)


@dataclass(frozen=True)
class ChatTurn:
    turn_id: str
    session_id: str
    dialogue_time: TimePoint
    speaker: Speaker
    text: str

    def to_json(self) -> dict:
        return {
            "turn_id": self.turn_id,
            "session_id": self.session_id,
            "dialogue_time": self.dialogue_time.isoformat(),
            "speaker": self.speaker.value,
            "text": self.text,
        }

    @classmethod
    def from_json(cls, data: dict) -> "ChatTurn":
        return cls(
            turn_id=str(data["turn_id"]),
            session_id=str(data["session_id"]),
            dialogue_time=TimePoint.parse(data["dialogue_time"]),
            speaker=Speaker(data["speaker"]),
            text=str(data["text"]),
        )


@dataclass
class EntityNode:
    entity_id: str
    name: str
    summary: str
    name_embedding: np.ndarray
    mention_turn_ids: set[str] = field(default_factory=set)

    def __post_init__(self):
        if not self.name.strip():
            raise ValueError("entity name must be nonempty")


@dataclass
class TemporalFact:
    fact_id: str
    subject_id: str
    relation: str
    object_id: str
    valid_time: TimePoint
    invalid_time: Optional[TimePoint] = None
    source_turn_ids: set[str] = field(default_factory=set)

    def __post_init__(self):
        if self.invalid_time is not None and self.invalid_time < self.valid_time:
            raise ValueError("invalid_time precedes valid_time")

    @property
    def is_open(self) -> bool:
        return self.invalid_time is None


@dataclass
class DurativeMemory:
    memory_id: str
    kind: MemoryKind
    slice_start: TimePoint
    slice_end: TimePoint
    summary: str
    embedding: np.ndarray
    member_entity_ids: frozenset[str] = frozenset()

    def __post_init__(self):
        if self.kind not in (MemoryKind.TOPIC, MemoryKind.PERSONA):
            raise ValueError(f"durative kind must be topic or persona, got {self.kind}")
        if not self.slice_start < self.slice_end:
            raise ValueError("slice_start must precede slice_end")
        if not self.summary.strip():
            raise ValueError("summary must be nonempty")

    @property
    def span(self) -> TimeRange:
        return TimeRange(self.slice_start, self.slice_end)


@dataclass
class MemoryCandidate:
    """A retrievable item scored against one query.

    ``kind`` plus ``ref_id`` name exactly one topic, persona or raw turn.
    ``span`` is the slice for durative items and the dialogue day for raw turns.
    """

    kind: MemoryKind
    ref_id: str
    similarity: float
    span: TimeRange
    text: str = ""
    time_valid: bool = False
    tkg_promoted: bool = False

    def key(self) -> tuple[bool, float]:
        return (self.time_valid, self.similarity)

    def to_json(self) -> dict:
        return {
            "kind": self.kind.value,
            "ref_id": self.ref_id,
            "similarity": self.similarity,
            "span": self.span.to_json(),
            "text": self.text,
            "time_valid": self.time_valid,
            "tkg_promoted": self.tkg_promoted,
        }


@dataclass(frozen=True)
class Query:
    text: str
    issued_at: TimePoint

    def __post_init__(self):
        if not self.text.strip():
            raise ValueError("query text must be nonempty")


class TurnLog:
    """Append-only log of chat turns keyed by ``turn_id``."""

    def __init__(self, turns: Iterable[ChatTurn] = ()):
        self._turns: dict[str, ChatTurn] = {}
        self._last_in_session: dict[str, TimePoint] = {}
        for turn in turns:
            self.append(turn)

    def append(self, turn: ChatTurn) -> bool:
        """Append ``turn``; returns False if an identical turn is already logged."""
        existing = self._turns.get(turn.turn_id)
        if existing is not None:
            if existing != turn:
                raise ValueError(f"turn id {turn.turn_id!r} reused with different content")
            return False
        last = self._last_in_session.get(turn.session_id)
        if last is not None and turn.dialogue_time < last:
            raise ValueError(f"turn {turn.turn_id!r} goes back in time within session {turn.session_id!r}")
        self._turns[turn.turn_id] = turn
        self._last_in_session[turn.session_id] = turn.dialogue_time
        return True

    def __contains__(self, turn_id: str) -> bool:
        return turn_id in self._turns

    def __getitem__(self, turn_id: str) -> ChatTurn:
        return self._turns[turn_id]

    def get(self, turn_id: str) -> Optional[ChatTurn]:
        return self._turns.get(turn_id)

    def __len__(self) -> int:
        return len(self._turns)

    def __iter__(self) -> Iterator[ChatTurn]:
        return iter(self._turns.values())

    def preceding(self, turn: ChatTurn, n: int) -> list[ChatTurn]:
        """Up to ``n`` turns logged before ``turn`` in the same session, oldest first."""
        same = [t for t in self._turns.values() if t.session_id == turn.session_id]
        try:
            idx = next(i for i, t in enumerate(same) if t.turn_id == turn.turn_id)
        except StopIteration:
            idx = len(same)
        return same[max(0, idx - n):idx] if n > 0 else []


def normalize_name(name: str) -> str:
    return " ".join(name.strip().casefold().split())


def content_id(prefix: str, *parts: str) -> str:
    digest = hashlib.sha1("\x1f".join(parts).encode("utf-8")).hexdigest()[:16]
    return f"{prefix}_{digest}"


def unit(vec) -> np.ndarray:
    v = np.asarray(vec, dtype=np.float64)
    norm = np.linalg.norm(v)
    if norm == 0:
        raise ValueError("cannot normalize a zero vector")
    return v / norm
