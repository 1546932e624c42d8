"""Evaluation cases and their JSON form."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

from tsmem.model import ChatTurn, TimePoint

CATEGORIES = (
    "temporal",
    "multi-session",
    "knowledge-update",
    "single-session-user",
    "single-session-assistant",
    "single-session-preference",
    "abstention",
    "single-hop",
    "multi-hop",
    "open-domain",
)

JUDGE_FOR = {
    "temporal": "judge_temporal",
    "knowledge-update": "judge_knowledge_update",
    "single-session-preference": "judge_preference",
    "abstention": "judge_abstention",
    "single-hop": "judge_locomo",
    "multi-hop": "judge_locomo",
    "open-domain": "judge_locomo",
}


def judge_template(category: str) -> str:
    return JUDGE_FOR.get(category, "judge_standard")


@dataclass
class EvalCase:
    case_id: str
    sessions: list[list[ChatTurn]]
    question: str
    question_time: TimePoint
    category: str
    gold: str
    target_turn_ids: list[str] = field(default_factory=list)
    embeddings: dict[str, list[float]] = field(default_factory=dict)

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise ValueError(f"unknown category {self.category!r}")

    def turns(self) -> list[ChatTurn]:
        return [t for s in self.sessions for t in s]

    def to_json(self) -> dict:
        out = {
            "case_id": self.case_id,
            "category": self.category,
            "question": self.question,
            "question_time": self.question_time.isoformat(),
            "gold": self.gold,
            "sessions": [[t.to_json() for t in s] for s in self.sessions],
        }
        if self.target_turn_ids:
            out["target_turn_ids"] = list(self.target_turn_ids)
        if self.embeddings:
            out["embeddings"] = self.embeddings
        return out

    @classmethod
    def from_json(cls, data: dict) -> "EvalCase":
        return cls(
            case_id=str(data["case_id"]),
            sessions=[[ChatTurn.from_json(t) for t in s] for s in data["sessions"]],
            question=data["question"],
            question_time=TimePoint.parse(data["question_time"]),
            category=data["category"],
            gold=str(data["gold"]),
            target_turn_ids=list(data.get("target_turn_ids", [])),
            embeddings={k: list(v) for k, v in data.get("embeddings", {}).items()},
        )


def load_cases(path) -> list[EvalCase]:
    """Read cases from a JSON list or a JSONL file.

    Raises ValueError naming the offending line on malformed input.
    """
    text = Path(path).read_text("utf-8")
    if text.lstrip().startswith("["):
        try:
            rows = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
        return [EvalCase.from_json(r) for r in rows]
    cases = []
    for n, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            cases.append(EvalCase.from_json(json.loads(line)))
        except (json.JSONDecodeError, KeyError, ValueError) as exc:
            raise ValueError(f"{path}: line {n}: {exc}") from exc
    return cases


def write_cases(cases: Iterable[EvalCase], path: Optional[str | Path]) -> str:
    text = "".join(json.dumps(c.to_json(), sort_keys=True) + "\n" for c in cases)
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text
