"""Converters from public benchmark JSON layouts to EvalCase lists.

LongMemEval items carry ``question_type``, ``question_date``,
``haystack_dates`` and ``haystack_sessions`` (lists of ``{role, content}``);
question ids ending in ``_abs`` are abstention questions.

LoCoMo samples carry a ``conversation`` with ``session_<n>`` turn lists and
``session_<n>_date_time`` stamps, plus a ``qa`` list. Questions have no
timestamp, so the start time of the session holding the first evidence turn
(or of the last session) is used as the question time.
"""

from __future__ import annotations

import re
from datetime import datetime, timezone

from tsmem.evaluation.cases import EvalCase
from tsmem.model import ChatTurn, Speaker, TimePoint

LME_CATEGORY = {
    "temporal-reasoning": "temporal",
    "multi-session": "multi-session",
    "knowledge-update": "knowledge-update",
    "single-session-user": "single-session-user",
    "single-session-assistant": "single-session-assistant",
    "single-session-preference": "single-session-preference",
}
LOCOMO_CATEGORY = {1: "multi-hop", 2: "temporal", 3: "open-domain", 4: "single-hop", 5: "abstention"}


def _utc(stamp: datetime) -> TimePoint:
    return TimePoint.from_datetime(stamp.replace(tzinfo=timezone.utc))


def parse_lme_date(text: str) -> TimePoint:
    """``2023/05/30 (Tue) 14:46`` -> TimePoint."""
    cleaned = re.sub(r"\s*\([A-Za-z]+\)\s*", " ", text.strip())
    return _utc(datetime.strptime(cleaned, "%Y/%m/%d %H:%M"))


def parse_locomo_date(text: str) -> TimePoint:
    """``1:56 pm on 8 May, 2023`` -> TimePoint."""
    return _utc(datetime.strptime(text.strip().upper().replace(" ON ", " on "), "%I:%M %p on %d %B, %Y"))


def from_longmemeval(items: list[dict]) -> list[EvalCase]:
    cases = []
    for item in items:
        qid = str(item["question_id"])
        category = "abstention" if qid.endswith("_abs") else LME_CATEGORY[item["question_type"]]
        sessions = []
        for j, (sid, stamp, turns) in enumerate(zip(item["haystack_session_ids"], item["haystack_dates"],
                                                   item["haystack_sessions"])):
            start = parse_lme_date(stamp)
            sessions.append([
                ChatTurn(f"{qid}:{sid}:{k}", f"{qid}:{sid}", start, Speaker(t["role"]), t["content"])
                for k, t in enumerate(turns)
            ])
        sessions.sort(key=lambda s: s[0].dialogue_time if s else TimePoint.of(1, 1, 1))
        cases.append(EvalCase(qid, sessions, item["question"], parse_lme_date(item["question_date"]), category,
                              str(item.get("answer", ""))))
    return cases


def from_locomo(samples: list[dict]) -> list[EvalCase]:
    cases = []
    for sample in samples:
        sample_id = str(sample["sample_id"])
        conv = sample["conversation"]
        user = conv.get("speaker_a")
        numbers = sorted(int(m.group(1)) for k in conv if (m := re.fullmatch(r"session_(\d+)", k)))
        starts: dict[int, TimePoint] = {}
        sessions = []
        for n in numbers:
            start = parse_locomo_date(conv[f"session_{n}_date_time"])
            starts[n] = start
            sid = f"{sample_id}:s{n}"
            sessions.append([
                ChatTurn(f"{sample_id}:{t.get('dia_id', f'D{n}:{k}')}", sid, start,
                         Speaker.USER if t["speaker"] == user else Speaker.ASSISTANT, t["text"])
                for k, t in enumerate(conv[f"session_{n}"])
            ])
        for i, qa in enumerate(sample.get("qa", [])):
            category = LOCOMO_CATEGORY.get(int(qa.get("category", 4)), "single-hop")
            evidence = [e for e in qa.get("evidence", []) if re.match(r"D\d+:", e)]
            n = int(evidence[0][1:].split(":")[0]) if evidence else (numbers[-1] if numbers else None)
            asked = starts.get(n) or (starts[numbers[-1]] if numbers else TimePoint.of(1970, 1, 1))
            gold = qa.get("answer", qa.get("adversarial_answer", "Not mentioned in the conversation"))
            cases.append(EvalCase(f"{sample_id}:q{i}", sessions, qa["question"], asked, category, str(gold)))
    return cases
