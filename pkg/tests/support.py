"""Shared test helpers: scripted providers and a brute-force TKG reference."""

from __future__ import annotations

import fnmatch
import random
from dataclasses import dataclass, field
from datetime import date, timedelta
from typing import Optional

import numpy as np

from tsmem import prompts
from tsmem.consolidation import ConsolidationPolicy
from tsmem.extraction import CandidateEntity, CandidateFact
from tsmem.memory import Memory
from tsmem.model import TimePoint, TimeRange
from tsmem.providers import CompletionProvider, EmbeddingProvider, MockCompletion, MockEmbedding
from tsmem.providers import heuristic

FUNCTIONAL = ("lives_in", "works_at", "is_married_to", "favorite_*")


class RecordCompletion(CompletionProvider):
    """Extraction output looked up by message text; other tasks go to the mock."""

    def __init__(self, records: dict[str, str]):
        self.records = records
        self.mock = MockCompletion()

    def complete(self, req):
        if prompts.task_of(req.prompt) in ("extraction", "extraction_retry"):
            return self.records.get(heuristic.section(req.prompt), "NONE")
        return self.mock.complete(req)


class FailingCompletion(CompletionProvider):
    def __init__(self, exc: Exception, tasks: Optional[set[str]] = None):
        self.exc = exc
        self.tasks = tasks
        self.mock = MockCompletion()

    def complete(self, req):
        if self.tasks is None or prompts.task_of(req.prompt) in self.tasks:
            raise self.exc
        return self.mock.complete(req)


class BasisEmbedding(EmbeddingProvider):
    """Each distinct text gets its own standard basis vector, so nothing ever merges."""

    def __init__(self, dim: int = 64):
        self._dim = dim
        self.index: dict[str, int] = {}

    @property
    def dimension(self) -> int:
        return self._dim

    def embed(self, texts):
        out = []
        for t in texts:
            i = self.index.setdefault(" ".join(t.casefold().split()), len(self.index))
            if i >= self._dim:
                raise ValueError("basis exhausted")
            v = np.zeros(self._dim)
            v[i] = 1.0
            out.append(v)
        return out


# -- brute-force reference ---------------------------------------------------


@dataclass
class RefFact:
    s: str
    r: str
    o: str
    vt: date
    it: Optional[date] = None
    turns: set = field(default_factory=set)


class ReferenceTkg:
    """Rule-table oracle on plain names and dates: no ids, hashing or indexes."""

    def __init__(self, functional=FUNCTIONAL, merge_threshold: float = 0.9):
        self.functional = functional
        self.merge_threshold = merge_threshold
        self.facts: list[RefFact] = []
        # canonical name -> first name vector; surface key -> canonical name
        self.vectors: dict[str, np.ndarray] = {}
        self.canon: dict[str, str] = {}

    def resolve(self, name: str, vec) -> tuple[str, str]:
        """Canonical name and MERGE or ENTITY_ADD, by exact key then best cosine."""
        key = " ".join(name.casefold().split())
        if key in self.canon:
            return self.canon[key], "MERGE"
        scored = [(float(np.dot(v, vec)), c) for c, v in self.vectors.items()]
        best = max(scored, default=None)
        if best is not None and best[0] >= self.merge_threshold:
            self.canon[key] = best[1]
            return best[1], "MERGE"
        self.canon[key] = name
        self.vectors[name] = np.asarray(vec, dtype=np.float64)
        return name, "ENTITY_ADD"

    def is_functional(self, r: str) -> bool:
        return any(fnmatch.fnmatchcase(r, p) for p in self.functional)

    def apply(self, s: str, r: str, o: str, vt: date, turn: str) -> str:
        if s == o:
            return "REJECT"
        same = sorted((f for f in self.facts if (f.s, f.r, f.o) == (s, r, o)), key=lambda f: f.vt)
        for f in same:
            if f.vt == vt:
                f.turns.add(turn)
                return "DUPLICATE"
        for f in same:
            if turn in f.turns:
                return "DUPLICATE"
        for f in same:
            if f.it is None or f.it > vt:
                f.vt = vt
                f.turns.add(turn)
                return "UPDATE"
        new = RefFact(s, r, o, vt, None, {turn})
        action = "ADD"
        if self.is_functional(r):
            rivals = [f for f in self.facts if f.s == s and f.r == r and f.o != o and f.it is None]
            earlier = [f for f in rivals if f.vt <= vt]
            if earlier:
                for f in earlier:
                    f.it = vt
                action = "INVALIDATE"
            elif rivals:
                new.it = min(f.vt for f in rivals)
        self.facts.append(new)
        return action

    def holds_on(self, f: RefFact, day: date) -> bool:
        if f.it is not None:
            return f.vt <= day < f.it
        if self.is_functional(f.r):
            return f.vt <= day
        return f.vt == day

    def valid_in(self, lo: date, hi: date) -> set[tuple]:
        out = set()
        for f in self.facts:
            d = lo
            while d < hi:
                if self.holds_on(f, d):
                    out.add((f.s, f.r, f.o, f.vt))
                    break
                d += timedelta(days=1)
        return out

    def state(self) -> set[tuple]:
        return {(f.s, f.r, f.o, f.vt, f.it, frozenset(f.turns)) for f in self.facts}


def store_state(tkg) -> set[tuple]:
    name = {eid: e.name for eid, e in tkg.entities.items()}
    return {
        (name[f.subject_id], f.relation, name[f.object_id], f.valid_time.day,
         None if f.invalid_time is None else f.invalid_time.day, frozenset(f.source_turn_ids))
        for f in tkg.facts.values()
    }


def apply_event(tkg, event) -> str:
    s, r, o, day, turn = event
    for n in (s, o):
        tkg.upsert_entity(CandidateEntity(n, "", turn))
    _, action = tkg.apply_fact(CandidateFact(s, r, o, TimePoint(day), turn))
    return action.value


SUBJECTS = ("user", "alice")
OBJECTS = ("paris", "berlin", "tokyo", "acme", "globex", "jazz")
RELATIONS = ("lives_in", "works_at", "visited", "likes", "favorite_city")
BASE_DAY = date(2023, 1, 1)


def random_events(rng: random.Random, n: int, days: int = 60) -> list[tuple]:
    """Fact events; about one in six replays an earlier event verbatim."""
    events: list[tuple] = []
    for i in range(n):
        if events and rng.random() < 1 / 6:
            events.append(rng.choice(events))
            continue
        s = rng.choice(SUBJECTS)
        o = rng.choice(OBJECTS)
        events.append((s, rng.choice(RELATIONS), o, BASE_DAY + timedelta(days=rng.randrange(days)), f"turn-{i:03d}"))
    return events


def day_range(lo: date, hi: date) -> TimeRange:
    return TimeRange.days(lo, hi)


# -- store comparison ----------------------------------------------------------


def _vec(v) -> bytes:
    return np.asarray(v, dtype=np.float64).tobytes()


def memory_fingerprint(mem) -> dict:
    """Everything observable about a Memory, with vectors as raw float64 bytes."""
    tkg = mem.tkg
    return {
        "dim": mem.dim,
        "clock": None if mem.clock is None else mem.clock.isoformat(),
        "turns": [t.to_json() for t in mem.turns],
        "turn_vectors": {k: _vec(v) for k, v in mem.turn_vectors.items()},
        "entities": {
            k: (e.name, e.summary, _vec(e.name_embedding), frozenset(e.mention_turn_ids))
            for k, e in tkg.entities.items()
        },
        "name_index": dict(tkg.name_index),
        "aliases": dict(tkg.aliases),
        "facts": {
            k: (f.subject_id, f.relation, f.object_id, f.valid_time, f.invalid_time, frozenset(f.source_turn_ids))
            for k, f in tkg.facts.items()
        },
        "turn_index": {k: frozenset(v) for k, v in tkg.turn_index.items() if v},
        "day_versions": {k: v for k, v in tkg.day_versions.items() if v},
        "durative": [
            (m.memory_id, m.kind, m.slice_start, m.slice_end, m.summary, _vec(m.embedding),
             frozenset(m.member_entity_ids))
            for m in mem.durative.all()
        ],
        "sleep": mem.sleep.to_json(),
        "policy": mem.policy.to_json(),
        "registry": (tkg.registry.functional, tkg.registry.reflexive),
        "merge_threshold": tkg.merge_threshold,
        "window": mem.extractor.window,
    }


STATEMENTS = (
    "I visited {place} {when}.",
    "I moved to {place} {when}.",
    "I bought a {thing} {when}.",
    "I watched {thing} {when}.",
    "I started working at {org} {when}.",
    "My favorite color is {color}.",
    "hello there",
)
PLACES = ("Tokyo", "Paris", "Berlin", "Lisbon", "Oslo", "Kyoto")
THINGS = ("kayak", "guitar", "Dune", "lamp", "bike")
ORGS = ("Acme", "Globex", "Initech")
COLORS = ("red", "blue", "green")
WHENS = ("today", "yesterday", "last week", "on March 3", "")


def random_transcript(rng: random.Random, n_turns: int, start: date = date(2023, 1, 5)) -> list:
    from tsmem.model import ChatTurn, Speaker

    turns = []
    per_day: dict = {}
    day = start
    for i in range(n_turns):
        day += timedelta(days=rng.randrange(0, 9))
        session = f"s{(day - start).days // 7}"
        text = rng.choice(STATEMENTS).format(place=rng.choice(PLACES), thing=rng.choice(THINGS),
                                             org=rng.choice(ORGS), color=rng.choice(COLORS),
                                             when=rng.choice(WHENS)).replace(" .", ".")
        per_day[day] = per_day.get(day, 0) + 1
        stamp = TimePoint(day, 8 * 3600 + per_day[day] * 120)
        turns.append(ChatTurn(f"turn-{i:04d}", session, stamp, Speaker.USER, text))
        if rng.random() < 0.4:
            turns.append(ChatTurn(f"turn-{i:04d}-a", session, TimePoint(stamp.day, stamp.seconds + 30),
                                  Speaker.ASSISTANT, f"Tell me more about {text.split()[-1].strip('.')}"))
    return turns


# -- clustering -------------------------------------------------------------------


def adjusted_rand_index(a, b) -> float:
    """Pair-counting ARI, written out from the contingency table."""
    a, b = np.asarray(a), np.asarray(b)
    n = len(a)
    la, lb = np.unique(a), np.unique(b)
    table = np.array([[np.sum((a == x) & (b == y)) for y in lb] for x in la])
    comb = lambda m: m * (m - 1) / 2  # noqa: E731
    index = comb(table).sum()
    rows, cols = comb(table.sum(axis=1)).sum(), comb(table.sum(axis=0)).sum()
    expected = rows * cols / comb(n)
    top = (rows + cols) / 2
    if top == expected:
        return 1.0
    return float((index - expected) / (top - expected))


def two_blobs(seed: int, d: int = 16, per: int = 20, sep: float = 10.0):
    rng = np.random.default_rng(seed)
    u = rng.standard_normal(d)
    u /= np.linalg.norm(u)
    X = np.vstack([rng.standard_normal((per, d)), sep * u + rng.standard_normal((per, d))])
    return X, np.repeat([0, 1], per)


def random_memory(seed: int, min_turns: int = 0) -> Memory:
    rng = random.Random(seed)
    dim = rng.choice([8, 16, 32, 64])
    policy = ConsolidationPolicy(granularity=rng.choice(["week", "month", "quarter"]), seed=seed,
                                 turn_threshold=rng.randrange(5, 40))
    mem = Memory(MockCompletion(), MockEmbedding(dim, seed=seed), policy=policy,
                 merge_threshold=rng.choice([0.85, 0.9, 0.97]), window=rng.randrange(0, 5))
    turns = random_transcript(rng, rng.randrange(min_turns, 25))
    cut = len(turns) // 2
    mem.ingest(turns[:cut])
    if rng.random() < 0.5:
        mem.consolidate()
    mem.ingest(turns[cut:], sleep_check=rng.random() < 0.5)
    return mem
