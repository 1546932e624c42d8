"""Turn-level entity and fact extraction through a completion provider."""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from datetime import date
from typing import Optional, Sequence

from tsmem import prompts
from tsmem.model import ChatTurn, Speaker, TimePoint, normalize_name
from tsmem.providers.base import CompletionProvider, CompletionRequest
from tsmem.timeparse import parse_time

logger = logging.getLogger(__name__)

DEFAULT_WINDOW = 4
ISO_DAY = re.compile(r"^\d{4}-\d{2}-\d{2}$")


class ExtractionFormatError(ValueError):
    def __init__(self, message: str, raw: str):
        super().__init__(message)
        self.raw = raw


@dataclass(frozen=True)
class CandidateEntity:
    name: str
    summary_fragment: str
    source_turn_id: str

    def __post_init__(self):
        if not self.name.strip():
            raise ValueError("candidate entity name must be nonempty")


@dataclass(frozen=True)
class CandidateFact:
    subject_name: str
    relation: str
    object_name: str
    semantic_time: Optional[TimePoint]
    source_turn_id: str

    def __post_init__(self):
        if not self.relation.strip():
            raise ValueError("candidate fact relation must be nonempty")


def normalize_relation(relation: str) -> str:
    return "_".join(re.findall(r"[a-z0-9]+", relation.casefold()))


def parse_records(text: str) -> tuple[list[tuple[str, str]], list[tuple[str, str, str, str]]]:
    """Parse the delimited ENTITY/FACT block; raises ValueError on any bad line."""
    entities, facts = [], []
    lines = [ln.strip() for ln in text.strip().splitlines() if ln.strip()]
    if lines == ["NONE"]:
        return entities, facts
    for n, line in enumerate(lines, 1):
        fields = [f.strip() for f in line.split("|")]
        tag = fields[0].upper()
        if tag == "ENTITY" and len(fields) == 3 and fields[1]:
            entities.append((fields[1], fields[2]))
        elif tag == "FACT" and len(fields) == 5 and fields[1] and fields[3] and normalize_relation(fields[2]):
            facts.append((fields[1], fields[2], fields[3], fields[4]))
        else:
            raise ValueError(f"line {n} is not a valid record: {line!r}")
    return entities, facts


def resolve_semantic_time(expression: str, anchor: TimePoint) -> Optional[TimePoint]:
    expression = expression.strip()
    if not expression:
        return None
    if ISO_DAY.match(expression):
        try:
            return TimePoint(date.fromisoformat(expression))
        except ValueError:
            return None
    found = parse_time(expression, anchor)
    return None if found.unconstrained else found.start


def default_semantic_time(fact: CandidateFact, turn: ChatTurn) -> TimePoint:
    """Dialogue day of ``turn`` for a fact that carries no time of its own."""
    if fact.semantic_time is not None:
        raise ValueError("fact already has a semantic time")
    return turn.dialogue_time.truncate()


class Extractor:
    def __init__(self, completion: CompletionProvider, window: int = DEFAULT_WINDOW):
        if window < 0:
            raise ValueError("window must be >= 0")
        self.completion = completion
        self.window = window

    def extract_turn(
        self, turn: ChatTurn, context: Sequence[ChatTurn] = ()
    ) -> tuple[list[CandidateEntity], list[CandidateFact]]:
        """Extract candidates from one user turn.

        Assistant turns yield nothing. ``context`` is passed to the provider
        for disambiguation only; provenance always points at ``turn``.
        """
        if turn.speaker is not Speaker.USER or not turn.text.strip():
            return [], []
        context = [c for c in context if c.session_id == turn.session_id][-self.window:] if self.window else []
        prompt = prompts.render(
            "extraction",
            context="\n".join(f"{c.speaker.value}: {c.text}" for c in context) or "(none)",
            dialogue_date=turn.dialogue_time.day.isoformat(),
            message=turn.text,
        )
        raw = self.completion.complete(CompletionRequest(prompt))
        try:
            ents, facts = parse_records(raw)
        except ValueError as first:
            logger.info("re-prompting extraction for turn %s: %s", turn.turn_id, first)
            retry = prompts.render(
                "extraction_retry", previous=raw, dialogue_date=turn.dialogue_time.day.isoformat(), message=turn.text
            )
            raw = self.completion.complete(CompletionRequest(retry))
            try:
                ents, facts = parse_records(raw)
            except ValueError as second:
                raise ExtractionFormatError(str(second), raw) from second
        return self._build(turn, ents, facts)

    @staticmethod
    def _build(turn, ents, facts):
        entities: dict[str, CandidateEntity] = {}
        for name, fragment in ents:
            key = normalize_name(name)
            if key not in entities:
                entities[key] = CandidateEntity(name.strip(), fragment, turn.turn_id)
        out_facts = []
        for subj, rel, obj, when in facts:
            for name in (subj, obj):
                entities.setdefault(normalize_name(name), CandidateEntity(name.strip(), "", turn.turn_id))
            out_facts.append(CandidateFact(
                subject_name=subj.strip(),
                relation=normalize_relation(rel),
                object_name=obj.strip(),
                semantic_time=resolve_semantic_time(when, turn.dialogue_time),
                source_turn_id=turn.turn_id,
            ))
        return list(entities.values()), out_facts
