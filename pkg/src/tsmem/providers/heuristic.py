"""Rule-based stand-ins for the LLM tasks, used by the offline mock provider.

These are deliberately simple. They let the whole pipeline run without a
network while keeping every output a pure function of the prompt.
"""

from __future__ import annotations

import json
import re

from tsmem.timeparse import extract_expressions

SECTION = re.compile(r"<<<\n(.*?)\n>>>", re.DOTALL)

# (pattern that ends right before the object phrase, relation)
VERB_PATTERNS = [
    (r"\b(?:i|we)\s+(?:just\s+|recently\s+|finally\s+)?(?:moved|relocated)\s+(?:back\s+)?to\s+", "lives_in"),
    (r"\bi\s+(?:now\s+|currently\s+|still\s+)?live\s+in\s+", "lives_in"),
    (r"\bi\s+(?:now\s+|currently\s+)?work\s+(?:at|for)\s+", "works_at"),
    (r"\bi\s+(?:started|began)\s+working\s+(?:at|for)\s+", "works_at"),
    (r"\bi\s+(?:got\s+)?married\s+to\s+", "is_married_to"),
    (r"\b(?:i|we)\s+(?:visited|toured)\s+", "visited"),
    (r"\b(?:i|we)\s+(?:went|flew|traveled|travelled)\s+to\s+", "visited"),
    (r"\b(?:i'?m|i\s+am|we'?re|we\s+are)\s+(?:flying|traveling|travelling|going|heading)\s+to\s+", "travels_to"),
    (r"\b(?:i|we)\s+(?:made|cooked|baked|mixed|prepared)\s+", "made"),
    (r"\b(?:i|we)\s+(?:bought|purchased|ordered)\s+", "bought"),
    (r"\bi\s+(?:finished\s+reading|read)\s+", "read"),
    (r"\bi\s+(?:watched)\s+", "watched"),
    (r"\bi\s+met\s+", "met"),
    (r"\bi\s+adopted\s+", "adopted"),
    (r"\bi\s+(?:started|began|took\s+up)\s+", "started"),
    (r"\bi\s+(?:really\s+)?(?:love|like|enjoy|prefer)\s+", "likes"),
    (r"\bmy\s+favou?rite\s+(?P<what>[a-z]+)\s+is\s+", "favorite_{what}"),
]
VERB_RES = [(re.compile(p, re.IGNORECASE), rel) for p, rel in VERB_PATTERNS]
# events named before their verb: "the trip starts tomorrow"
EVENT_RE = re.compile(
    r"\b(?:my|our|the)\s+(?P<obj>[a-z][a-z -]{0,30}?)\s+(?:starts|begins|ends|started|began|ended|is\s+scheduled)\b",
    re.IGNORECASE,
)

STOP = re.compile(
    r"\s+(?:with|for|at|in|on|from|to|because|and|but|since|during|after|before|when|while|which|that|who|"
    r"last|this|these|next|yesterday|today|tomorrow|tonight|now|nowadays|currently|recently|again|there|here|so|as)\b|[,.;:!?()\"]",
    re.IGNORECASE,
)
ARTICLES = re.compile(r"^(?:a|an|the|some|my|our|his|her|their|this|that)\s+", re.IGNORECASE)
SENTENCE = re.compile(r"[^.!?;]+[.!?;]?")

REFUSAL = ("i don't know", "i do not know", "not in my memory", "no information", "not mentioned",
           "unanswerable", "cannot answer", "can't answer", "don't have any memory")


def section(prompt: str, index: int = 0) -> str:
    found = SECTION.findall(prompt)
    return found[index] if len(found) > index else ""


def _object_phrase(rest: str) -> str:
    exprs = extract_expressions(rest)
    cut = len(rest)
    if exprs:
        cut = exprs[0].start
    m = STOP.search(rest)
    if m:
        cut = min(cut, m.start())
    phrase = rest[:cut].strip()
    while True:
        stripped = ARTICLES.sub("", phrase)
        if stripped == phrase:
            break
        phrase = stripped
    return " ".join(phrase.split()[:4])


def extract_records(message: str) -> list[str]:
    """Heuristic extraction in the ENTITY/FACT line format."""
    records: list[str] = []
    seen_entities: set[str] = set()
    for sentence in SENTENCE.findall(message):
        sentence = sentence.strip()
        if not sentence:
            continue
        for regex, relation in VERB_RES + [(EVENT_RE, "has_event")]:
            m = regex.search(sentence)
            if not m:
                continue
            if regex is EVENT_RE:
                obj = m.group("obj").strip()
            else:
                obj = _object_phrase(sentence[m.end():])
            if not obj:
                continue
            if "{what}" in relation:
                relation = relation.format(what=m.group("what").lower())
            exprs = extract_expressions(sentence)
            when = exprs[0].surface if exprs else ""
            for name, summary in (("user", "The person talking to the assistant."), (obj, sentence)):
                if name.casefold() not in seen_entities:
                    seen_entities.add(name.casefold())
                    records.append(f"ENTITY | {name} | {summary}")
            records.append(f"FACT | user | {relation} | {obj} | {when}")
            break
    return records


def summarize_entity(notes: str, budget: int) -> str:
    parts = [p.strip() for p in notes.split("\n") if p.strip()]
    if not parts:
        return ""
    text = parts[0] if len(parts) == 1 else f"{parts[0]} Latest: {parts[-1]}"
    return text[:budget]


def summarize_topic(entities: str) -> str:
    names, details = [], []
    for line in entities.splitlines():
        line = line.strip().lstrip("- ")
        if not line:
            continue
        name, _, summary = line.partition(":")
        names.append(name.strip())
        if summary.strip():
            details.append(summary.strip())
    text = "Topic about " + ", ".join(names) + "."
    if details:
        text += " " + " ".join(details)
    return text[:600]


def summarize_persona(dialogue: str) -> str:
    said = []
    for line in dialogue.splitlines():
        if "] user:" in line:
            said.append(line.split("] user:", 1)[1].strip())
    if not said:
        said = [line.strip() for line in dialogue.splitlines() if line.strip()]
    return ("The user mentioned: " + " ".join(said))[:600]


CONTEXT_BLOCK = re.compile(r"^\d+\.\s+\[(?P<kind>[a-z]+)\s*\|[^\]]*\]\s*(?P<text>.*)$")
QUESTION_LINE = re.compile(r"^Question \(asked on [^)]*\):\s*(.*)$", re.MULTILINE)
FUNCTION_WORDS = frozenset(
    "the and for are was were did does what which when where who whom whose how why have has had you your "
    "with that this these those from into about any all can could would should will shall may might must "
    "not but our out its his her their they them there here been being yes some such than then too very "
    "just also more most much many now currently today".split()
)
NO_MEMORY = "I don't know; I don't have any memory of that."


def content_stems(text: str) -> set[str]:
    """Lowercase 4-letter prefixes of the non-function words in ``text``."""
    words = re.findall(r"[a-z0-9]+", text.casefold())
    return {w[:4] for w in words if len(w) >= 3 and w not in FUNCTION_WORDS}


def answer_from_context(context: str, question: str = "") -> str:
    """Echo the best-ranked raw turn that shares a content word with the question.

    Falls back to the first block when the question has no content words,
    and refuses when no block shares any.
    """
    blocks = []
    for line in context.splitlines():
        m = CONTEXT_BLOCK.match(line.strip())
        if m:
            blocks.append((m.group("kind"), m.group("text")))
    if not blocks:
        return NO_MEMORY
    wanted = content_stems(question)
    if not wanted:
        turns = [text for kind, text in blocks if kind == "turn"]
        return turns[0] if turns else blocks[0][1]
    related = [(kind, text) for kind, text in blocks if content_stems(text) & wanted]
    for kind, text in related:
        if kind == "turn":
            return text
    return related[0][1] if related else NO_MEMORY


def _field(prompt: str, *labels: str) -> str:
    # last occurrence wins; templates may quote an example first
    for label in labels:
        found = re.findall(rf"^{re.escape(label)}:[ \t]*(.*)$", prompt, re.MULTILINE)
        if found:
            return found[-1].strip()
    return ""


def _norm(text: str) -> str:
    return " ".join(re.findall(r"[a-z0-9]+", text.casefold()))


def contains_answer(gold: str, response: str) -> bool:
    g, r = _norm(gold), _norm(response)
    return bool(g) and f" {g} " in f" {r} "


def _off_by_one(gold: str, response: str) -> bool:
    gold_nums = [int(x) for x in re.findall(r"\d+", gold)]
    resp_nums = [int(x) for x in re.findall(r"\d+", response)]
    return len(gold_nums) == 1 and any(abs(gold_nums[0] - n) <= 1 for n in resp_nums)


def judge(task: str, prompt: str) -> str:
    gold = _field(prompt, "Correct Answer", "Rubric", "Explanation", "Gold answer")
    response = _field(prompt, "Model Response", "Generated answer")
    if task == "judge_abstention":
        ok = any(marker in response.casefold() for marker in REFUSAL)
    elif task == "judge_temporal":
        ok = contains_answer(gold, response) or _off_by_one(gold, response)
    else:
        ok = contains_answer(gold, response)
    if task == "judge_locomo":
        return "Containment check.\n" + json.dumps({"label": "CORRECT" if ok else "WRONG"})
    return "yes" if ok else "no"
