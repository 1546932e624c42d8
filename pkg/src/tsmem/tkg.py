"""Episodic temporal knowledge graph.

Entities are nodes keyed by a canonical name; facts are edges carrying a
semantic ``valid_time`` and, once superseded, an ``invalid_time``. A
turn index maps every chat turn to the facts it supports.

Fact updates follow a four-way rule table, checked in order:

* DUPLICATE: same (subject, relation, object) and same valid day, or a
  same-triple fact already cites the reporting turn.
* UPDATE: same triple, different day, on a fact that is still open (or
  closed later than the new day); the valid day moves to the newly
  reported one. With several such facts the earliest-starting one moves.
* INVALIDATE: functional relation, an open fact with the same subject and
  relation but another object that started on or before the new day; it
  is closed at the new day and the new fact is inserted.
* ADD: anything else.
"""

from __future__ import annotations

import copy
import fnmatch
import logging
import threading
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import date, timedelta
from enum import Enum
from typing import Callable, Iterable, Optional

import numpy as np

from tsmem.extraction import CandidateEntity, CandidateFact
from tsmem.model import (
    DimensionMismatch,
    EntityNode,
    TemporalFact,
    TimePoint,
    TimeRange,
    content_id,
    normalize_name,
)

logger = logging.getLogger(__name__)

DEFAULT_MERGE_THRESHOLD = 0.90
DEFAULT_SUMMARY_BUDGET = 400
DEFAULT_FUNCTIONAL = ("lives_in", "works_at", "is_married_to", "favorite_*")


class StoreConsistencyError(ValueError):
    pass


class EntityAction(str, Enum):
    ADDED = "added"
    MERGED = "merged"


class FactAction(str, Enum):
    DUPLICATE = "DUPLICATE"
    ADD = "ADD"
    INVALIDATE = "INVALIDATE"
    UPDATE = "UPDATE"


@dataclass
class RelationRegistry:
    """Which relations are functional (one valid object per subject at a time).

    Entries are relation names or shell-style patterns such as ``favorite_*``.
    """

    functional: tuple[str, ...] = DEFAULT_FUNCTIONAL
    reflexive: tuple[str, ...] = ()

    def is_functional(self, relation: str) -> bool:
        return any(fnmatch.fnmatchcase(relation, pat) for pat in self.functional)

    def is_reflexive(self, relation: str) -> bool:
        return any(fnmatch.fnmatchcase(relation, pat) for pat in self.reflexive)

    @classmethod
    def from_mapping(cls, data: dict) -> "RelationRegistry":
        return cls(tuple(data.get("functional", DEFAULT_FUNCTIONAL)), tuple(data.get("reflexive", ())))


Embedder = Callable[[str], np.ndarray]
Summarizer = Callable[[str, str, int], str]


@dataclass
class TkgStore:
    dim: int
    embedder: Optional[Embedder] = None
    registry: RelationRegistry = field(default_factory=RelationRegistry)
    merge_threshold: float = DEFAULT_MERGE_THRESHOLD
    summarizer: Optional[Summarizer] = None
    summary_budget: int = DEFAULT_SUMMARY_BUDGET

    def __post_init__(self):
        self.entities: dict[str, EntityNode] = {}
        self.facts: dict[str, TemporalFact] = {}
        self.name_index: dict[str, str] = {}
        self.aliases: dict[str, str] = {}
        self.turn_index: dict[str, set[str]] = defaultdict(set)
        # bumped whenever a fact valid on that day is created or changed
        self.day_versions: dict[date, int] = defaultdict(int)
        self._lock = threading.RLock()

    # -- entities -----------------------------------------------------

    def _check_vector(self, vec: np.ndarray) -> np.ndarray:
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (self.dim,):
            raise DimensionMismatch(f"expected dimension {self.dim}, got {vec.shape}")
        norm = np.linalg.norm(vec)
        if abs(norm - 1.0) > 1e-6:
            raise ValueError(f"embedding is not unit-norm (|v|={norm:.6g})")
        return vec

    def resolve_name(self, name: str) -> Optional[str]:
        key = normalize_name(name)
        return self.name_index.get(key) or self.aliases.get(key)

    def upsert_entity(self, cand: CandidateEntity, embedding: Optional[np.ndarray] = None) -> tuple[str, EntityAction]:
        key = normalize_name(cand.name)
        if not key:
            raise ValueError("entity name must be nonempty")
        with self._lock:
            eid = self.resolve_name(key)
            if eid is None:
                if embedding is None:
                    if self.embedder is None:
                        raise StoreConsistencyError("no embedding given and no embedder configured")
                    embedding = self.embedder(cand.name)
                embedding = self._check_vector(embedding)
                eid = self._nearest(embedding)
                if eid is not None:
                    self.aliases[key] = eid
            if eid is None:
                eid = content_id("ent", key)
                self.entities[eid] = EntityNode(
                    entity_id=eid,
                    name=cand.name.strip(),
                    summary=cand.summary_fragment.strip(),
                    name_embedding=embedding,
                    mention_turn_ids={cand.source_turn_id},
                )
                self.name_index[key] = eid
                return eid, EntityAction.ADDED
            self._enrich(self.entities[eid], cand)
            return eid, EntityAction.MERGED

    def _nearest(self, embedding: np.ndarray) -> Optional[str]:
        best_id, best = None, -np.inf
        for eid in sorted(self.entities):
            sim = float(self.entities[eid].name_embedding @ embedding)
            if sim > best:
                best_id, best = eid, sim
        return best_id if best >= self.merge_threshold else None

    def _enrich(self, node: EntityNode, cand: CandidateEntity) -> None:
        node.mention_turn_ids.add(cand.source_turn_id)
        fragment = cand.summary_fragment.strip()
        if not fragment or fragment in node.summary:
            return
        node.summary = f"{node.summary}\n{fragment}" if node.summary else fragment
        if len(node.summary) > self.summary_budget and self.summarizer is not None:
            condensed = self.summarizer(node.name, node.summary, self.summary_budget).strip()
            if condensed:
                node.summary = condensed

    # -- facts --------------------------------------------------------

    def _entity_id(self, name: str) -> str:
        eid = self.resolve_name(name)
        if eid is None:
            raise StoreConsistencyError(f"unknown entity {name!r}; upsert it first")
        return eid

    def apply_fact(self, cand: CandidateFact) -> tuple[str, FactAction]:
        if cand.semantic_time is None:
            raise ValueError("apply_fact needs a resolved semantic_time")
        vt = cand.semantic_time.truncate()
        with self._lock:
            sid = self._entity_id(cand.subject_name)
            oid = self._entity_id(cand.object_name)
            if sid == oid and not self.registry.is_reflexive(cand.relation):
                raise StoreConsistencyError(f"{cand.relation!r} is not reflexive but subject == object")
            rel = cand.relation
            turn = cand.source_turn_id
            for eid in (sid, oid):
                self.entities[eid].mention_turn_ids.add(turn)

            same = sorted((f for f in self.facts.values() if (f.subject_id, f.relation, f.object_id) == (sid, rel, oid)),
                          key=lambda f: f.valid_time)
            for f in same:
                if f.valid_time == vt:
                    self._add_turn(f, turn)
                    return f.fact_id, FactAction.DUPLICATE
            for f in same:
                if turn in f.source_turn_ids:
                    # this turn's evidence is already in; a replay must not move the fact
                    return f.fact_id, FactAction.DUPLICATE
            for f in same:
                if f.invalid_time is None or f.invalid_time > vt:
                    logger.info("UPDATE %s valid_time %s -> %s", f.fact_id, f.valid_time, vt)
                    self._touch(f.valid_time)
                    f.valid_time = vt
                    self._touch(vt)
                    self._add_turn(f, turn)
                    return f.fact_id, FactAction.UPDATE

            new = TemporalFact(content_id("fact", sid, rel, oid, vt.isoformat(), turn), sid, rel, oid, vt,
                               None, {turn})
            if self.registry.is_functional(rel):
                rivals = [f for f in self._sorted_facts()
                          if f.subject_id == sid and f.relation == rel and f.object_id != oid and f.is_open]
                earlier = [f for f in rivals if f.valid_time <= vt]
                if earlier:
                    for f in earlier:
                        f.invalid_time = vt
                        self._touch(f.valid_time)
                    self._insert(new)
                    return new.fact_id, FactAction.INVALIDATE
                if rivals:
                    # late report of an older state: it already ended when the rival began
                    new.invalid_time = min(f.valid_time for f in rivals)
            self._insert(new)
            return new.fact_id, FactAction.ADD

    def _sorted_facts(self) -> list[TemporalFact]:
        return [self.facts[k] for k in sorted(self.facts)]

    def _add_turn(self, fact: TemporalFact, turn_id: str) -> None:
        if turn_id in fact.source_turn_ids:
            return
        fact.source_turn_ids.add(turn_id)
        self.turn_index[turn_id].add(fact.fact_id)
        self._touch(fact.valid_time)

    def _insert(self, fact: TemporalFact) -> None:
        if fact.fact_id in self.facts:
            raise StoreConsistencyError(f"fact id collision {fact.fact_id}")
        self.facts[fact.fact_id] = fact
        for turn in fact.source_turn_ids:
            self.turn_index[turn].add(fact.fact_id)
        self._touch(fact.valid_time)

    def _touch(self, t: TimePoint) -> None:
        self.day_versions[t.day] += 1

    # -- queries ------------------------------------------------------

    def validity(self, fact: TemporalFact) -> tuple[date, Optional[date]]:
        """``[start, end)`` days during which ``fact`` holds; ``end`` None means open.

        Facts on non-functional relations are point events and hold on their
        valid day only, unless explicitly invalidated.
        """
        if fact.invalid_time is not None:
            return fact.valid_time.day, fact.invalid_time.day
        if self.registry.is_functional(fact.relation):
            return fact.valid_time.day, None
        return fact.valid_time.day, fact.valid_time.day + timedelta(days=1)

    def fact_valid_in(self, fact: TemporalFact, r: TimeRange) -> bool:
        if r.unconstrained:
            return True
        start, end = self.validity(fact)
        hi = r.end.day if end is None else min(end, r.end.day)
        return max(start, r.start.day) < hi

    def facts_valid_in(self, r: TimeRange) -> list[TemporalFact]:
        with self._lock:
            hits = [_snapshot(f) for f in self.facts.values() if self.fact_valid_in(f, r)]
        return sorted(hits, key=lambda f: (f.valid_time, f.fact_id))

    def facts_for_turn(self, turn_id: str) -> list[TemporalFact]:
        with self._lock:
            ids = sorted(self.turn_index.get(turn_id, ()))
            return [_snapshot(self.facts[i]) for i in ids]

    @staticmethod
    def turns_for_facts(facts: Iterable[TemporalFact]) -> set[str]:
        out: set[str] = set()
        for f in facts:
            out |= f.source_turn_ids
        return out

    def slice(self, r: TimeRange) -> tuple[list[TemporalFact], list[EntityNode]]:
        """Facts whose valid day lies in ``r``, and the entities they touch."""
        with self._lock:
            facts = [_snapshot(f) for f in self.facts.values() if r.contains(f.valid_time)]
            ids = {f.subject_id for f in facts} | {f.object_id for f in facts}
            ents = [copy.deepcopy(self.entities[e]) for e in sorted(ids)]
        facts.sort(key=lambda f: (f.valid_time, f.fact_id))
        return facts, ents

    def slice_version(self, r: TimeRange) -> int:
        with self._lock:
            return sum(v for d, v in self.day_versions.items() if r.contains(TimePoint(d)))

    def fact_days(self) -> list[date]:
        with self._lock:
            return sorted({f.valid_time.day for f in self.facts.values()})

    def check_invariants(self) -> None:
        """Raise StoreConsistencyError if any structural invariant is broken."""
        with self._lock:
            if len(set(self.name_index.values())) != len(self.name_index):
                raise StoreConsistencyError("name_index is not injective")
            expected: dict[str, set[str]] = defaultdict(set)
            for f in self.facts.values():
                if f.subject_id not in self.entities or f.object_id not in self.entities:
                    raise StoreConsistencyError(f"fact {f.fact_id} references a missing entity")
                if not f.source_turn_ids:
                    raise StoreConsistencyError(f"fact {f.fact_id} has no provenance")
                for t in f.source_turn_ids:
                    expected[t].add(f.fact_id)
            actual = {t: ids for t, ids in self.turn_index.items() if ids}
            if actual != dict(expected):
                raise StoreConsistencyError("turn_index is not the inverse of fact provenance")
            open_keys: set[tuple[str, str]] = set()
            for f in self.facts.values():
                if f.is_open and self.registry.is_functional(f.relation):
                    key = (f.subject_id, f.relation)
                    if key in open_keys:
                        raise StoreConsistencyError(f"two open facts for functional {key}")
                    open_keys.add(key)


def _snapshot(fact: TemporalFact) -> TemporalFact:
    out = copy.copy(fact)
    out.source_turn_ids = set(fact.source_turn_ids)
    return out
