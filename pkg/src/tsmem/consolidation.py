"""Durative memory: temporal slicing, GMM clustering and topic/persona summaries.

The fact timeline is cut into calendar periods. Entities touched by a
period's facts are clustered on their name embeddings; every cluster then
yields one topic record (a summary of its entities) and one persona record
(a summary of the dialogue that mentions them).
"""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass, field
from datetime import date, timedelta
from typing import Iterable, Mapping, Optional

import numpy as np

from tsmem import gmm, prompts
from tsmem.model import (
    ChatTurn,
    DimensionMismatch,
    DurativeMemory,
    MemoryKind,
    Speaker,
    TimePoint,
    TimeRange,
    content_id,
    unit,
)
from tsmem.providers.base import (
    CompletionProvider,
    CompletionRequest,
    EmbeddingProvider,
    ProtocolError,
    ProviderError,
)
from tsmem.tkg import TkgStore

logger = logging.getLogger(__name__)

GRANULARITIES = ("week", "month", "quarter")


@dataclass
class ConsolidationPolicy:
    granularity: str = "month"
    period_trigger: bool = True
    turn_threshold: int = 200
    k_max: int = 8
    seed: int = 0
    persona_turn_cap: int = 50

    def __post_init__(self):
        if self.granularity not in GRANULARITIES:
            raise ValueError(f"granularity must be one of {GRANULARITIES}")
        if self.turn_threshold < 1 or self.k_max < 1 or self.persona_turn_cap < 1:
            raise ValueError("turn_threshold, k_max and persona_turn_cap must be >= 1")

    def to_json(self) -> dict:
        return {
            "granularity": self.granularity,
            "period_trigger": self.period_trigger,
            "turn_threshold": self.turn_threshold,
            "k_max": self.k_max,
            "seed": self.seed,
            "persona_turn_cap": self.persona_turn_cap,
        }

    @classmethod
    def from_json(cls, data: Mapping) -> "ConsolidationPolicy":
        return cls(**{k: data[k] for k in cls().to_json() if k in data})


def slice_for(day: date, granularity: str = "month") -> TimeRange:
    """The period ``[tau_k, tau_k+1)`` containing ``day``."""
    if granularity == "week":
        start = day - timedelta(days=day.weekday())
        return TimeRange.days(start, start + timedelta(days=7))
    if granularity == "month":
        start = day.replace(day=1)
    elif granularity == "quarter":
        start = date(day.year, 3 * ((day.month - 1) // 3) + 1, 1)
    else:
        raise ValueError(f"unknown granularity {granularity!r}")
    months = 1 if granularity == "month" else 3
    y, m = divmod(start.month - 1 + months, 12)
    return TimeRange.days(start, date(start.year + y, m + 1, 1))


def slices_covering(days: Iterable[date], granularity: str = "month") -> list[TimeRange]:
    found = {slice_for(d, granularity) for d in days}
    return sorted(found, key=lambda r: r.start)


def slice_key(r: TimeRange) -> str:
    return f"{r.start.day.isoformat()}/{r.end.day.isoformat()}"


@dataclass
class SliceClustering:
    slice: TimeRange
    assignments: dict[str, int]
    model: Optional[gmm.GmmModel]

    def clusters(self) -> dict[int, list[str]]:
        out: dict[int, list[str]] = {}
        for eid in sorted(self.assignments):
            out.setdefault(self.assignments[eid], []).append(eid)
        return dict(sorted(out.items()))


def cluster_slice(store: TkgStore, r: TimeRange, seed: int, k_max: int = 8) -> SliceClustering:
    _, entities = store.slice(r)
    if not entities:
        return SliceClustering(r, {}, None)
    ids = [e.entity_id for e in entities]
    X = np.vstack([e.name_embedding for e in entities])
    k = gmm.select_k(X, k_max, seed)
    model = gmm.fit_gmm(X, k, seed)
    labels = gmm.assign(model, X)
    return SliceClustering(r, {eid: int(z) for eid, z in zip(ids, labels)}, model)


def _summarize(completion: CompletionProvider, prompt: str) -> str:
    text = completion.complete(CompletionRequest(prompt)).strip()
    if not text:
        raise ProtocolError("provider returned an empty summary")
    return text


def _embed(embedder: EmbeddingProvider, text: str, dim: int) -> np.ndarray:
    vec = np.asarray(embedder.embed_one(text), dtype=np.float64)
    if vec.shape != (dim,):
        raise DimensionMismatch(f"summary embedding has shape {vec.shape}, store dimension is {dim}")
    return unit(vec)


def cluster_dialogue(
    store: TkgStore,
    r: TimeRange,
    members: set[str],
    turns: Mapping[str, ChatTurn],
    cap: int,
) -> list[ChatTurn]:
    """Turns that mention a cluster's entities, newest ``cap`` kept, oldest first.

    These are the provenance turns of the slice's facts touching a member,
    plus assistant turns from the same sessions that name a member.
    """
    facts, entities = store.slice(r)
    chosen: dict[str, ChatTurn] = {}
    sessions = set()
    for f in facts:
        if f.subject_id in members or f.object_id in members:
            for tid in f.source_turn_ids:
                turn = turns.get(tid)
                if turn is not None:
                    chosen[tid] = turn
                    sessions.add(turn.session_id)
    names = [e.name.casefold() for e in entities if e.entity_id in members and e.name.casefold() != "user"]
    if names:
        for turn in turns.values():
            if turn.speaker is Speaker.ASSISTANT and turn.session_id in sessions and turn.turn_id not in chosen:
                low = turn.text.casefold()
                if any(n in low for n in names):
                    chosen[turn.turn_id] = turn
    ordered = sorted(chosen.values(), key=lambda t: (t.dialogue_time, t.turn_id))
    return ordered[-cap:]


def consolidate_slice(
    store: TkgStore,
    r: TimeRange,
    turns: Mapping[str, ChatTurn],
    completion: CompletionProvider,
    embedder: EmbeddingProvider,
    seed: int = 0,
    k_max: int = 8,
    persona_turn_cap: int = 50,
) -> list[DurativeMemory]:
    """Build the topic and persona records of one slice.

    Provider errors propagate; the caller decides whether to retry.
    """
    clustering = cluster_slice(store, r, seed, k_max)
    if not clustering.assignments:
        return []
    _, entities = store.slice(r)
    by_id = {e.entity_id: e for e in entities}
    start, last = r.start.day.isoformat(), (r.end.day - timedelta(days=1)).isoformat()
    out: list[DurativeMemory] = []
    for members in clustering.clusters().values():
        member_set = frozenset(members)
        listing = "\n".join(
            f"- {by_id[e].name}: {' '.join(by_id[e].summary.split())}".rstrip(": ") for e in members
        )
        topic_text = _summarize(completion, prompts.render(
            "topic_summary", slice_start=start, slice_end=last, entities=listing))
        tag = "\x1f".join(members)
        out.append(DurativeMemory(
            memory_id=content_id("topic", slice_key(r), tag),
            kind=MemoryKind.TOPIC,
            slice_start=r.start,
            slice_end=r.end,
            summary=topic_text,
            embedding=_embed(embedder, topic_text, store.dim),
            member_entity_ids=member_set,
        ))
        dialogue = cluster_dialogue(store, r, set(members), turns, persona_turn_cap)
        if not dialogue:
            logger.info("no dialogue for cluster %s in %s; persona skipped", tag[:40], slice_key(r))
            continue
        lines = "\n".join(f"[{t.dialogue_time.day.isoformat()}] {t.speaker.value}: {t.text}" for t in dialogue)
        persona_text = _summarize(completion, prompts.render(
            "persona_summary", slice_start=start, slice_end=last, dialogue=lines))
        out.append(DurativeMemory(
            memory_id=content_id("persona", slice_key(r), tag),
            kind=MemoryKind.PERSONA,
            slice_start=r.start,
            slice_end=r.end,
            summary=persona_text,
            embedding=_embed(embedder, persona_text, store.dim),
            member_entity_ids=member_set,
        ))
    return out


class DurativeStore:
    """Durative memories grouped by slice.

    Replacing a slice swaps in a new mapping, so a reader holding the old
    mapping sees either all old or all new records for that slice.
    """

    def __init__(self):
        self._slices: dict[str, tuple[DurativeMemory, ...]] = {}
        self._lock = threading.Lock()

    def replace(self, r: TimeRange, memories: Iterable[DurativeMemory]) -> None:
        memories = tuple(sorted(memories, key=lambda m: m.memory_id))
        for m in memories:
            if m.span != r:
                raise ValueError(f"memory {m.memory_id} does not belong to slice {slice_key(r)}")
        with self._lock:
            updated = dict(self._slices)
            if memories:
                updated[slice_key(r)] = memories
            else:
                updated.pop(slice_key(r), None)
            self._slices = updated

    def view(self) -> dict[str, tuple[DurativeMemory, ...]]:
        return self._slices

    def all(self) -> list[DurativeMemory]:
        view = self._slices
        return [m for key in sorted(view) for m in view[key]]

    def slice_keys(self) -> list[str]:
        return sorted(self._slices)

    def __len__(self) -> int:
        return sum(len(v) for v in self._slices.values())


@dataclass
class SleepState:
    """Bookkeeping for sleep-time consolidation."""

    last_run: Optional[TimePoint] = None
    turns_since: int = 0
    built_versions: dict[str, int] = field(default_factory=dict)
    stale: set[str] = field(default_factory=set)

    def to_json(self) -> dict:
        return {
            "last_run": self.last_run.isoformat() if self.last_run else None,
            "turns_since": self.turns_since,
            "built_versions": dict(sorted(self.built_versions.items())),
            "stale": sorted(self.stale),
        }

    @classmethod
    def from_json(cls, data: Mapping) -> "SleepState":
        last = data.get("last_run")
        return cls(
            last_run=TimePoint.parse(last) if last else None,
            turns_since=int(data.get("turns_since", 0)),
            built_versions={str(k): int(v) for k, v in data.get("built_versions", {}).items()},
            stale=set(data.get("stale", [])),
        )


def is_triggered(state: SleepState, policy: ConsolidationPolicy, now: TimePoint) -> bool:
    if state.turns_since >= policy.turn_threshold:
        return True
    if not policy.period_trigger or state.turns_since == 0:
        return False
    if state.last_run is None:
        return True
    return slice_for(now.day, policy.granularity).start > slice_for(state.last_run.day, policy.granularity).start


def dirty_slices(store: TkgStore, state: SleepState, policy: ConsolidationPolicy) -> list[TimeRange]:
    """Slices whose facts changed since they were last built, plus stale ones."""
    candidates = {slice_key(r): r for r in slices_covering(store.fact_days(), policy.granularity)}
    for key in list(state.built_versions) + sorted(state.stale):
        if key not in candidates:
            s, e = key.split("/")
            candidates[key] = TimeRange.days(date.fromisoformat(s), date.fromisoformat(e))
    out = []
    for key in sorted(candidates):
        r = candidates[key]
        if key in state.stale or state.built_versions.get(key) != store.slice_version(r):
            out.append(r)
    return out


def run_sleep_time(
    store: TkgStore,
    turns: Mapping[str, ChatTurn],
    durative: DurativeStore,
    state: SleepState,
    policy: ConsolidationPolicy,
    completion: CompletionProvider,
    embedder: EmbeddingProvider,
    now: TimePoint,
    force: bool = False,
) -> list[DurativeMemory]:
    """Rebuild every dirty slice if the trigger fires; returns the installed records.

    A slice whose rebuild hits a provider error keeps its old records and is
    marked stale so the next run retries it.
    """
    if not force and not is_triggered(state, policy, now):
        return []
    installed: list[DurativeMemory] = []
    for r in dirty_slices(store, state, policy):
        key = slice_key(r)
        version = store.slice_version(r)
        try:
            memories = consolidate_slice(store, r, turns, completion, embedder, policy.seed, policy.k_max,
                                         policy.persona_turn_cap)
        except ProviderError as exc:
            logger.warning("consolidation of %s failed, marked stale: %s", key, exc)
            state.stale.add(key)
            continue
        durative.replace(r, memories)
        state.built_versions[key] = version
        state.stale.discard(key)
        installed.extend(memories)
    state.last_run = now
    state.turns_since = 0
    return installed
