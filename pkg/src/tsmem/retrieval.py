"""Query answering over topics, personas and raw turns.

Pipeline: parse the query's semantic time, take the dense top-K over the
pools, drop durative items outside the time range, promote raw turns that
the graph links to facts valid in that range, sort by (time_valid,
similarity) and hand the head of the list to the answer model.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Callable, Iterable, Optional, Sequence

import numpy as np

from tsmem import prompts
from tsmem.model import (
    ChatTurn,
    MemoryCandidate,
    MemoryKind,
    Query,
    TimeRange,
)
from tsmem.providers.base import CompletionRequest, ProviderError
from tsmem.timeparse import parse_time
from tsmem.tkg import TkgStore

if TYPE_CHECKING:
    from tsmem.memory import Memory

logger = logging.getLogger(__name__)

NO_MEMORY_ANSWER = "I don't know; I don't have any memory of that."
ABLATIONS = ("none", "temporal", "summary", "naive")


@dataclass(frozen=True)
class RetrievalConfig:
    top_k: int = 25
    context_budget: int = 20
    disable_temporal: bool = False
    disable_durative: bool = False
    naive_rag: bool = False

    def __post_init__(self):
        if self.top_k < 1 or self.context_budget < 1:
            raise ValueError("top_k and context_budget must be >= 1")

    @property
    def temporal_off(self) -> bool:
        return self.disable_temporal or self.naive_rag

    @property
    def durative_off(self) -> bool:
        return self.disable_durative or self.naive_rag

    def with_ablation(self, name: str) -> "RetrievalConfig":
        """Copy with the flags of an ablation mode (none, temporal, summary, naive)."""
        if name not in ABLATIONS:
            raise ValueError(f"ablation must be one of {ABLATIONS}")
        return RetrievalConfig(
            top_k=self.top_k,
            context_budget=self.context_budget,
            disable_temporal=name == "temporal",
            disable_durative=name == "summary",
            naive_rag=name == "naive",
        )

    def to_json(self) -> dict:
        return {
            "top_k": self.top_k,
            "context_budget": self.context_budget,
            "disable_temporal": self.disable_temporal,
            "disable_durative": self.disable_durative,
            "naive_rag": self.naive_rag,
        }

    @classmethod
    def from_json(cls, data) -> "RetrievalConfig":
        return cls(**{k: data[k] for k in cls().to_json() if k in data})


@dataclass
class RetrievalResult:
    query: Query
    time_constraint: TimeRange
    ranked: list[MemoryCandidate]
    promoted_turns: set[str] = field(default_factory=set)
    answer: Optional[str] = None
    error: Optional[str] = None
    context: str = ""
    config: RetrievalConfig = field(default_factory=RetrievalConfig)

    def to_json(self) -> dict:
        return {
            "query": self.query.text,
            "issued_at": self.query.issued_at.isoformat(),
            "time_constraint": self.time_constraint.to_json(),
            "ranked": [c.to_json() for c in self.ranked],
            "promoted_turns": sorted(self.promoted_turns),
            "answer": self.answer,
            "error": self.error,
            "context": self.context,
            "config": self.config.to_json(),
        }


@dataclass(frozen=True)
class PoolItem:
    kind: MemoryKind
    ref_id: str
    vector: np.ndarray
    span: TimeRange
    text: str


def dense_topk(query_vec: np.ndarray, pool: Sequence[PoolItem], k: int) -> list[MemoryCandidate]:
    """The ``k`` most similar items; equal similarities are ordered by id."""
    if not pool:
        return []
    sims = np.vstack([p.vector for p in pool]) @ np.asarray(query_vec, dtype=np.float64)
    order = sorted(range(len(pool)), key=lambda i: (-sims[i], pool[i].ref_id))[:k]
    return [MemoryCandidate(pool[i].kind, pool[i].ref_id, float(sims[i]), pool[i].span, pool[i].text) for i in order]


def raw_time_valid(tkg: TkgStore, turn: ChatTurn, t: TimeRange) -> bool:
    """A turn holds in ``t`` if a fact it supports does.

    Turns the graph knows nothing about fall back to their dialogue day.
    """
    if t.unconstrained:
        return True
    facts = tkg.facts_for_turn(turn.turn_id)
    if facts:
        return any(tkg.fact_valid_in(f, t) for f in facts)
    return t.contains(turn.dialogue_time)


def temporal_filter(
    cands: Iterable[MemoryCandidate], t: TimeRange, raw_valid: Callable[[str], bool]
) -> list[MemoryCandidate]:
    out = []
    for c in cands:
        if c.kind is MemoryKind.RAW:
            c.time_valid = t.unconstrained or raw_valid(c.ref_id)
            out.append(c)
        elif c.span.overlaps(t):
            c.time_valid = True
            out.append(c)
    return out


def promote_evidence(
    tkg: TkgStore,
    t: TimeRange,
    cands: list[MemoryCandidate],
    raw_items: Callable[[Iterable[str]], list[PoolItem]],
    query_vec: np.ndarray,
) -> tuple[list[MemoryCandidate], set[str]]:
    """Mark raw candidates whose turns support facts valid in ``t``; append missing ones.

    Returns the new candidate list and the promoted turn set. Unconstrained
    ranges leave the list untouched.
    """
    if t.unconstrained:
        return list(cands), set()
    linked = tkg.turns_for_facts(tkg.facts_valid_in(t))
    present = set()
    for c in cands:
        if c.kind is MemoryKind.RAW and c.ref_id in linked:
            c.tkg_promoted = True
            c.time_valid = True
            present.add(c.ref_id)
    extra = dense_topk(query_vec, raw_items(sorted(linked - present)), len(linked))
    for c in extra:
        c.tkg_promoted = True
        c.time_valid = True
    return list(cands) + extra, linked


def rerank(cands: Iterable[MemoryCandidate]) -> list[MemoryCandidate]:
    """Stable sort: time-valid first, then similarity descending."""
    return sorted(cands, key=lambda c: (not c.time_valid, -c.similarity))


def block_label(c: MemoryCandidate, tkg: TkgStore, turns) -> str:
    if c.kind is not MemoryKind.RAW:
        return c.span.label()
    turn = turns.get(c.ref_id)
    said = f"said {turn.dialogue_time.day.isoformat()}" if turn else "said ?"
    days = sorted({f.valid_time.day for f in tkg.facts_for_turn(c.ref_id)})
    if days and (not turn or days != [turn.dialogue_time.day]):
        return f"happened {', '.join(d.isoformat() for d in days)}; {said}"
    return said


def assemble_context(ranked: Sequence[MemoryCandidate], tkg: TkgStore, turns) -> str:
    """Numbered ``[kind | time] text`` blocks, durative records before raw turns."""
    durative = [c for c in ranked if c.kind is not MemoryKind.RAW]
    raw = [c for c in ranked if c.kind is MemoryKind.RAW]
    lines = []
    for n, c in enumerate(durative + raw, 1):
        kind = "turn" if c.kind is MemoryKind.RAW else c.kind.value
        text = " ".join(c.text.split())
        lines.append(f"{n}. [{kind} | {block_label(c, tkg, turns)}] {text}")
    return "\n".join(lines)


def retrieve(memory: "Memory", query: Query, cfg: RetrievalConfig) -> RetrievalResult:
    """Everything up to and including the final ranking; no answer generation."""
    t = parse_time(query.text, query.issued_at)
    pool = memory.pool(include_durative=not cfg.durative_off)
    if not pool:
        return RetrievalResult(query, t, [], config=cfg)
    qvec = memory.embed_query(query.text)
    cands = dense_topk(qvec, pool, cfg.top_k)
    promoted: set[str] = set()
    if cfg.temporal_off:
        ranked = cands
    else:
        turns = memory.turns
        cands = temporal_filter(cands, t, lambda tid: raw_time_valid(memory.tkg, turns[tid], t))
        cands, promoted = promote_evidence(memory.tkg, t, cands, memory.raw_items, qvec)
        ranked = rerank(cands)
    ranked = ranked[: cfg.context_budget]
    return RetrievalResult(query, t, ranked, promoted, config=cfg,
                           context=assemble_context(ranked, memory.tkg, memory.turns))


def answer(memory: "Memory", query: Query, cfg: RetrievalConfig = RetrievalConfig()) -> RetrievalResult:
    result = retrieve(memory, query, cfg)
    if not result.ranked:
        result.answer = NO_MEMORY_ANSWER
        return result
    prompt = prompts.render("answer", context=result.context, today=query.issued_at.day.isoformat(),
                            question=query.text)
    try:
        result.answer = memory.completion.complete(CompletionRequest(prompt)).strip()
    except ProviderError as exc:
        logger.warning("answer generation failed: %s", exc)
        result.error = f"provider_error: {exc}"
    return result

