"""The memory engine: ingestion, sleep-time consolidation and querying."""

from __future__ import annotations

import logging
import threading
from collections import Counter
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional

import numpy as np

from tsmem import prompts
from tsmem.consolidation import ConsolidationPolicy, DurativeStore, SleepState, run_sleep_time
from tsmem.extraction import CandidateFact, ExtractionFormatError, Extractor, default_semantic_time
from tsmem.model import (
    ChatTurn,
    DimensionMismatch,
    DurativeMemory,
    MemoryKind,
    Query,
    Speaker,
    TimePoint,
    TimeRange,
    TurnLog,
    unit,
)
from tsmem.providers.base import CompletionProvider, CompletionRequest, EmbeddingProvider
from tsmem.retrieval import PoolItem, RetrievalConfig, RetrievalResult, answer
from tsmem.tkg import DEFAULT_MERGE_THRESHOLD, RelationRegistry, StoreConsistencyError, TkgStore

logger = logging.getLogger(__name__)

TALLY_KEYS = ("ADD", "MERGE", "DUPLICATE", "INVALIDATE", "UPDATE", "ENTITY_ADD")


class WriterBusy(RuntimeError):
    """Another writer holds the store and the wait timed out."""


@dataclass
class IngestReport:
    turns_seen: int = 0
    turns_new: int = 0
    entities: int = 0
    facts: int = 0
    actions: Counter = field(default_factory=Counter)
    extraction_errors: list[str] = field(default_factory=list)
    consolidated: int = 0

    def to_json(self) -> dict:
        return {
            "turns_seen": self.turns_seen,
            "turns_new": self.turns_new,
            "entities": self.entities,
            "facts": self.facts,
            "actions": {k: self.actions.get(k, 0) for k in TALLY_KEYS},
            "extraction_errors": list(self.extraction_errors),
            "consolidated": self.consolidated,
        }


class Memory:
    """One memory store: turn log, temporal knowledge graph and durative records.

    Mutations go through a single writer lock. Queries never take it; they
    read copies of the pools.
    """

    def __init__(
        self,
        completion: CompletionProvider,
        embedder: EmbeddingProvider,
        *,
        registry: Optional[RelationRegistry] = None,
        merge_threshold: float = DEFAULT_MERGE_THRESHOLD,
        window: int = 4,
        policy: Optional[ConsolidationPolicy] = None,
        retrieval: Optional[RetrievalConfig] = None,
        dim: Optional[int] = None,
    ):
        self.completion = completion
        self.embedder = embedder
        self.dim = int(dim if dim is not None else embedder.dimension)
        self.policy = policy or ConsolidationPolicy()
        self.retrieval = retrieval or RetrievalConfig()
        self.extractor = Extractor(completion, window)
        self.turns = TurnLog()
        self.turn_vectors: dict[str, np.ndarray] = {}
        self.tkg = TkgStore(
            self.dim,
            embedder=self._embed,
            registry=registry or RelationRegistry(),
            merge_threshold=merge_threshold,
            summarizer=self._summarize_entity,
        )
        self.durative = DurativeStore()
        self.sleep = SleepState()
        self.clock: Optional[TimePoint] = None
        self._writer = threading.Lock()
        self._state = threading.RLock()

    # -- helpers ------------------------------------------------------

    def _embed(self, text: str) -> np.ndarray:
        vec = np.asarray(self.embedder.embed_one(text), dtype=np.float64)
        if vec.shape != (self.dim,):
            raise DimensionMismatch(f"provider returned dimension {vec.shape}, store is {self.dim}")
        return unit(vec)

    def embed_query(self, text: str) -> np.ndarray:
        return self._embed(text)

    def _summarize_entity(self, name: str, notes: str, budget: int) -> str:
        prompt = prompts.render("entity_summary", name=name, budget=budget, notes=notes)
        return self.completion.complete(CompletionRequest(prompt))

    @contextmanager
    def writer(self, timeout: Optional[float] = None) -> Iterator[None]:
        if not self._writer.acquire(timeout=-1 if timeout is None else timeout):
            raise WriterBusy("store is locked by another writer")
        try:
            yield
        finally:
            self._writer.release()

    # -- construction -------------------------------------------------

    def ingest(self, turns: Iterable[ChatTurn], *, sleep_check: bool = True,
               lock_timeout: Optional[float] = None) -> IngestReport:
        """Log turns, extract and apply their facts, then run the sleep-time check.

        Turns already in the log are extracted again, so a replay shows up
        as DUPLICATE and MERGE actions without changing the graph.
        """
        report = IngestReport()
        with self.writer(lock_timeout):
            for turn in turns:
                self._ingest_one(turn, report)
            if sleep_check and report.turns_seen:
                report.consolidated = len(self._consolidate(force=False))
            report.entities = len(self.tkg.entities)
            report.facts = len(self.tkg.facts)
        return report

    def _ingest_one(self, turn: ChatTurn, report: IngestReport) -> None:
        report.turns_seen += 1
        # embed before logging so a provider failure leaves no vectorless turn behind
        vec = None if turn.turn_id in self.turns else self._embed(turn.text)
        with self._state:
            is_new = self.turns.append(turn)
            if is_new:
                self.turn_vectors[turn.turn_id] = vec
        if is_new:
            self.sleep.turns_since += 1
            report.turns_new += 1
            if self.clock is None or turn.dialogue_time > self.clock:
                self.clock = turn.dialogue_time
        if turn.speaker is not Speaker.USER:
            return
        context = self.turns.preceding(turn, self.extractor.window)
        try:
            entities, facts = self.extractor.extract_turn(turn, context)
        except ExtractionFormatError as exc:
            logger.warning("extraction failed for turn %s: %s", turn.turn_id, exc)
            report.extraction_errors.append(turn.turn_id)
            return
        for cand in entities:
            _, action = self.tkg.upsert_entity(cand)
            report.actions["MERGE" if action.value == "merged" else "ENTITY_ADD"] += 1
        for fact in facts:
            if fact.semantic_time is None:
                fact = CandidateFact(fact.subject_name, fact.relation, fact.object_name,
                                     default_semantic_time(fact, turn), fact.source_turn_id)
            try:
                _, action = self.tkg.apply_fact(fact)
            except StoreConsistencyError as exc:
                logger.warning("fact from turn %s rejected: %s", turn.turn_id, exc)
                report.extraction_errors.append(turn.turn_id)
                continue
            report.actions[action.value] += 1

    # -- consolidation ------------------------------------------------

    def _consolidate(self, force: bool) -> list[DurativeMemory]:
        if self.clock is None:
            return []
        with self._state:
            turns = {t.turn_id: t for t in self.turns}
        return run_sleep_time(self.tkg, turns, self.durative, self.sleep, self.policy,
                              self.completion, self.embedder, self.clock, force=force)

    def consolidate(self, force: bool = True, lock_timeout: Optional[float] = None) -> list[DurativeMemory]:
        with self.writer(lock_timeout):
            return self._consolidate(force)

    # -- retrieval ----------------------------------------------------

    def pool(self, include_durative: bool = True) -> list[PoolItem]:
        items = []
        if include_durative:
            for m in self.durative.all():
                items.append(PoolItem(m.kind, m.memory_id, m.embedding, m.span, m.summary))
        with self._state:
            ids = list(self.turn_vectors)
        items.extend(self.raw_items(ids))
        return items

    def raw_items(self, turn_ids: Iterable[str]) -> list[PoolItem]:
        out = []
        with self._state:
            for tid in turn_ids:
                turn, vec = self.turns.get(tid), self.turn_vectors.get(tid)
                if turn is None or vec is None:
                    continue
                text = f"{turn.speaker.value}: {turn.text}"
                out.append(PoolItem(MemoryKind.RAW, tid, vec, TimeRange.single_day(turn.dialogue_time.day), text))
        return out

    def query(self, text: str, issued_at: TimePoint, cfg: Optional[RetrievalConfig] = None) -> RetrievalResult:
        return answer(self, Query(text, issued_at), cfg or self.retrieval)

    def stats(self) -> dict:
        return {
            "turns": len(self.turns),
            "entities": len(self.tkg.entities),
            "facts": len(self.tkg.facts),
            "topics": sum(1 for m in self.durative.all() if m.kind is MemoryKind.TOPIC),
            "personas": sum(1 for m in self.durative.all() if m.kind is MemoryKind.PERSONA),
        }
