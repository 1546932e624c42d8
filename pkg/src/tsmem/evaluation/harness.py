"""Replay cases through a fresh engine each, judge the answers, aggregate."""

from __future__ import annotations

import hashlib
import json
import logging
import re
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

from tsmem import prompts
from tsmem.config import EngineConfig
from tsmem.evaluation.cases import EvalCase, judge_template
from tsmem.memory import Memory
from tsmem.model import MemoryKind
from tsmem.providers import FixtureEmbedding, completion_from_config, embedding_from_config
from tsmem.providers.base import CompletionProvider, CompletionRequest, ProviderError
from tsmem.retrieval import RetrievalResult

logger = logging.getLogger(__name__)

REPORT_VERSION = 1
LABEL_JSON = re.compile(r"\{[^{}]*\"label\"\s*:\s*\"(CORRECT|WRONG)\"[^{}]*\}", re.IGNORECASE)


@dataclass
class CaseRecord:
    case_id: str
    category: str
    answer: Optional[str]
    correct: Optional[bool]
    evidence: list[str]
    time_constraint: dict
    target_hit: Optional[bool] = None
    error: Optional[str] = None

    def to_json(self) -> dict:
        return {
            "case_id": self.case_id,
            "category": self.category,
            "answer": self.answer,
            "correct": self.correct,
            "evidence": self.evidence,
            "time_constraint": self.time_constraint,
            "target_hit": self.target_hit,
            "error": self.error,
        }


@dataclass
class EvalReport:
    ablation: str
    seed: int
    config_hash: str
    records: list[CaseRecord] = field(default_factory=list)

    @property
    def judged(self) -> list[CaseRecord]:
        return [r for r in self.records if r.error is None]

    def per_category(self) -> dict[str, dict]:
        groups: dict[str, list[CaseRecord]] = defaultdict(list)
        for r in self.judged:
            groups[r.category].append(r)
        out = {}
        for cat in sorted(groups):
            n, ok = len(groups[cat]), sum(bool(r.correct) for r in groups[cat])
            out[cat] = {"n": n, "correct": ok, "accuracy": ok / n}
        return out

    @property
    def overall(self) -> Optional[float]:
        judged = self.judged
        return sum(bool(r.correct) for r in judged) / len(judged) if judged else None

    @property
    def errored(self) -> int:
        return len(self.records) - len(self.judged)

    def target_retrieval(self) -> dict:
        hits = [r.target_hit for r in self.records if r.target_hit is not None]
        return {"cases": len(hits), "top1_hits": sum(hits), "rate": (sum(hits) / len(hits)) if hits else None}

    def to_json(self) -> dict:
        return {
            "report_version": REPORT_VERSION,
            "ablation": self.ablation,
            "seed": self.seed,
            "config_hash": self.config_hash,
            "cases": len(self.records),
            "errored": self.errored,
            "overall_accuracy": self.overall,
            "per_category": self.per_category(),
            "target_retrieval": self.target_retrieval(),
            "records": [r.to_json() for r in self.records],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, indent=2) + "\n"


def parse_verdict(template: str, output: str) -> bool:
    text = output.strip()
    if template == "judge_locomo":
        m = LABEL_JSON.search(text)
        if m:
            return m.group(1).upper() == "CORRECT"
        labels = re.findall(r"\b(CORRECT|WRONG)\b", text)
        return bool(labels) and labels[-1] == "CORRECT"
    first = re.findall(r"[a-z]+", text.casefold())
    return bool(first) and first[0] == "yes"


def judge(completion: CompletionProvider, case: EvalCase, response: str) -> bool:
    template = judge_template(case.category)
    prompt = prompts.render(template, question=case.question, answer=case.gold, response=response)
    return parse_verdict(template, completion.complete(CompletionRequest(prompt)))


def first_raw(result: RetrievalResult) -> Optional[str]:
    for c in result.ranked:
        if c.kind is MemoryKind.RAW:
            return c.ref_id
    return None


def config_hash(config: EngineConfig, ablation: str, seed: int, cases: Sequence[EvalCase]) -> str:
    blob = json.dumps({
        "completion": {"kind": config.completion.kind, "model": config.completion.model_name},
        "embedding": {"kind": config.embedding.kind, "model": config.embedding.model_name,
                      "dimension": config.embedding.dimension},
        "retrieval": config.retrieval.to_json(),
        "consolidation": config.consolidation.to_json(),
        "window": config.extraction_window,
        "merge_threshold": config.merge_threshold,
        "ablation": ablation,
        "seed": seed,
        "cases": [c.case_id for c in cases],
    }, sort_keys=True)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def build_case_memory(config: EngineConfig, case: EvalCase, seed: int) -> Memory:
    kwargs = config.memory_kwargs()
    if case.embeddings:
        kwargs["embedder"] = FixtureEmbedding(case.embeddings, fallback=embedding_from_config(config.embedding))
    policy = config.consolidation
    kwargs["policy"] = type(policy)(**{**policy.to_json(), "seed": seed})
    return Memory(**kwargs)


def run_case(config: EngineConfig, case: EvalCase, ablation: str, seed: int,
             judge_with: Optional[CompletionProvider] = None) -> CaseRecord:
    cfg = config.retrieval.with_ablation(ablation)
    try:
        memory = build_case_memory(config, case, seed)
        memory.ingest(case.turns(), sleep_check=False)
        memory.consolidate(force=True)
        result = memory.query(case.question, case.question_time, cfg)
        if result.error is not None:
            raise ProviderError(result.error)
        correct = judge(judge_with or memory.completion, case, result.answer or "")
    except ProviderError as exc:
        logger.warning("case %s errored: %s", case.case_id, exc)
        return CaseRecord(case.case_id, case.category, None, None, [], {}, error=str(exc))
    hit = None
    if case.target_turn_ids:
        hit = first_raw(result) in set(case.target_turn_ids)
    return CaseRecord(
        case_id=case.case_id,
        category=case.category,
        answer=result.answer,
        correct=correct,
        evidence=[c.ref_id for c in result.ranked[:5]],
        time_constraint=result.time_constraint.to_json(),
        target_hit=hit,
    )


def run_eval(cases: Iterable[EvalCase], config: Optional[EngineConfig] = None, ablation: str = "none",
             seed: int = 0) -> EvalReport:
    """Evaluate every case on its own fresh store.

    Cases whose provider calls fail are recorded as errored and left out of
    the accuracy figures.
    """
    cases = list(cases)
    config = config or EngineConfig()
    judge_with = completion_from_config(config.completion)
    report = EvalReport(ablation, seed, config_hash(config, ablation, seed, cases))
    for case in cases:
        report.records.append(run_case(config, case, ablation, seed, judge_with))
    return report


def render_figure(report: EvalReport, path, others: Sequence[EvalReport] = ()) -> Path:
    """Grouped bar chart of per-category accuracy, one bar group per report."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    reports = [report, *others]
    cats = sorted({c for r in reports for c in r.per_category()})
    fig, ax = plt.subplots(figsize=(max(4.0, 1.2 * len(cats) + 2), 3.2))
    width = 0.8 / max(1, len(reports))
    for i, r in enumerate(reports):
        acc = r.per_category()
        xs = [j + i * width for j in range(len(cats))]
        ax.bar(xs, [acc.get(c, {}).get("accuracy", 0.0) for c in cats], width, label=r.ablation)
    ax.set_xticks([j + width * (len(reports) - 1) / 2 for j in range(len(cats))])
    ax.set_xticklabels(cats, rotation=20, ha="right")
    ax.set_ylim(0, 1)
    ax.set_ylabel("accuracy")
    ax.legend(title="ablation", fontsize="small")
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
