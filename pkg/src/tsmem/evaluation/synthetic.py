"""Seeded synthetic evaluation suites with known answers.

Temporal cases plant two wrong-time decoys next to the right-time target.
The decoys get fixture embeddings closer to the question than the target's,
so pure dense retrieval prefers them by construction:

* an outdated decoy, said and valid well before the asked period;
* a recalled decoy, said inside the asked period but about an earlier month.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from datetime import date, datetime, time, timedelta, timezone
from typing import Optional

import numpy as np

from tsmem.evaluation.cases import EvalCase
from tsmem.model import ChatTurn, Speaker, TimePoint, TimeRange
from tsmem.timeparse import parse_time

DIM = 256
MONTHS = ("January", "February", "March", "April", "May", "June", "July", "August", "September",
          "October", "November", "December")
SUITE_CATEGORIES = ("temporal", "multi-session", "knowledge-update", "single-session-user", "abstention")


@dataclass(frozen=True)
class Activity:
    statement: str  # "{when}" and "{item}" are filled in
    question: str  # "{expr}" is filled in
    items: tuple[str, ...]


ACTIVITIES = (
    Activity("{when} I made a {item} cocktail at home.", "What cocktail did I make {expr}?",
             ("mojito", "margarita", "negroni", "daiquiri", "paloma", "sidecar", "gimlet", "spritz")),
    Activity("{when} I visited {item} for the day.", "Which city did I visit {expr}?",
             ("Lyon", "Porto", "Ghent", "Bergen", "Kyoto", "Seville", "Krakow", "Tallinn")),
    Activity("{when} I watched the movie {item}.", "What movie did I watch {expr}?",
             ("Arrival", "Heat", "Amelie", "Rashomon", "Alien", "Vertigo", "Memento", "Up")),
    Activity("{when} I bought a new {item}.", "What new item did I buy {expr}?",
             ("bicycle", "camera", "kettle", "guitar", "kayak", "telescope", "backpack", "lamp")),
    Activity("{when} I met my old friend {item} for coffee.", "Which old friend did I meet {expr}?",
             ("Alice", "Marco", "Priya", "Tomas", "Yuki", "Omar", "Greta", "Kofi")),
)

FILLER_USER = (
    "I have been feeling a bit tired lately.",
    "Work has been pretty hectic overall.",
    "Any tips for sleeping better?",
    "The weather keeps changing all the time.",
    "I should drink more water honestly.",
)
FILLER_ASSISTANT = (
    "Thanks for sharing that with me.",
    "That sounds lovely, glad to hear it.",
    "Happy to help whenever you need.",
    "Good to know, I will keep that in mind.",
)

CITIES = ("Paris", "Berlin", "Madrid", "Vienna", "Oslo", "Dublin", "Prague", "Lisbon", "Zurich", "Athens",
          "Warsaw", "Helsinki", "Budapest", "Riga", "Sofia", "Milan")
EMPLOYERS = ("Acme", "Globex", "Initech", "Umbrella", "Hooli", "Vandelay", "Stark", "Wonka", "Tyrell", "Cyberdyne")
GENRES = ("jazz", "blues", "reggae", "techno", "flamenco", "opera", "salsa", "bluegrass")
COLORS = ("red", "blue", "green", "yellow", "black", "white", "orange", "purple")
OBJECTS = ("bicycle", "scooter", "raincoat", "sofa", "backpack", "kettle", "umbrella", "notebook")


def _stamp(day: date, minute: int, hour: int = 18) -> TimePoint:
    return TimePoint.from_datetime(datetime.combine(day, time(hour, minute), tzinfo=timezone.utc))


class _Builder:
    def __init__(self, case_id: str):
        self.case_id = case_id
        self.sessions: list[tuple[date, list[tuple[Speaker, str]]]] = []

    def session(self, day: date, *lines: tuple[Speaker, str]) -> None:
        self.sessions.append((day, list(lines)))

    def build(self) -> tuple[list[list[ChatTurn]], dict[str, str]]:
        """Sessions in chronological order, plus text -> turn id."""
        out, ids = [], {}
        ordered = sorted(enumerate(self.sessions), key=lambda p: (p[1][0], p[0]))
        for j, (_, (day, lines)) in enumerate(ordered):
            sid = f"{self.case_id}-s{j}"
            turns = []
            for k, (speaker, text) in enumerate(lines):
                tid = f"{sid}-t{k}"
                turns.append(ChatTurn(tid, sid, _stamp(day, k), speaker, text))
                ids.setdefault(text, tid)
            out.append(turns)
        return out, ids


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def _at_cosine(q: np.ndarray, cos: float, rng: np.random.Generator) -> np.ndarray:
    w = rng.standard_normal(q.shape[0])
    w = _unit(w - (w @ q) * q)
    return cos * q + np.sqrt(1.0 - cos * cos) * w


def _when_phrase(fact_day: date, said: date) -> str:
    if said == fact_day:
        return "Today"
    if said - fact_day == timedelta(days=1):
        return "Yesterday"
    return f"On {MONTHS[fact_day.month - 1]} {fact_day.day}"


def _question_expr(rng: random.Random, now: date) -> str:
    kind = rng.choice(("last weekend", "last week", "yesterday", "on_day", "in_month", "ago", "last month"))
    if kind == "on_day":
        d = now - timedelta(days=rng.randint(2, 20))
        return f"on {MONTHS[d.month - 1]} {d.day}"
    if kind == "in_month":
        return f"in {MONTHS[now.month - 1 - rng.randint(1, 2)]}"
    if kind == "ago":
        return f"{rng.choice(('two', 'three', 'four', 'five'))} days ago"
    return kind


def temporal_case(case_id: str, seed: int) -> EvalCase:
    rng = random.Random(seed)
    vrng = np.random.default_rng(seed)
    now = date(2023, rng.randint(4, 12), rng.randint(1, 28))
    activity = rng.choice(ACTIVITIES)
    target_item, outdated_item, recalled_item = rng.sample(activity.items, 3)
    expr = _question_expr(rng, now)
    question = activity.question.format(expr=expr)
    t_q = parse_time(question, TimePoint(now))
    if t_q.unconstrained:
        raise AssertionError(f"generator produced an unparseable question: {question!r}")
    in_range = [d for d in t_q.iter_days() if d < now]
    target_day = rng.choice(in_range)
    target_said = min(target_day + timedelta(days=rng.randint(0, 3)), now)
    target_text = activity.statement.format(when=_when_phrase(target_day, target_said), item=target_item)

    outdated_day = t_q.start.day - timedelta(days=rng.randint(20, 60))
    outdated_text = activity.statement.format(when="Yesterday", item=outdated_item)

    b = _Builder(case_id)
    b.session(target_said, (Speaker.USER, rng.choice(FILLER_USER)), (Speaker.USER, target_text),
              (Speaker.ASSISTANT, rng.choice(FILLER_ASSISTANT)))
    b.session(outdated_day + timedelta(days=1), (Speaker.USER, outdated_text),
              (Speaker.ASSISTANT, rng.choice(FILLER_ASSISTANT)))
    recalled_text: Optional[str] = None
    recalled_month = (t_q.start.day - timedelta(days=rng.randint(45, 75))).month
    said_options = [d for d in in_range if d.month > recalled_month and d != target_said]
    if said_options:
        recalled_text = activity.statement.format(when=f"Back in {MONTHS[recalled_month - 1]}", item=recalled_item)
        b.session(rng.choice(said_options), (Speaker.USER, recalled_text),
                  (Speaker.ASSISTANT, rng.choice(FILLER_ASSISTANT)))
    b.session(now - timedelta(days=rng.randint(30, 90)), (Speaker.USER, rng.choice(FILLER_USER)),
              (Speaker.ASSISTANT, rng.choice(FILLER_ASSISTANT)))
    sessions, ids = b.build()

    q = _unit(vrng.standard_normal(DIM))
    target_cos = rng.uniform(0.45, 0.65)
    vectors = {question: q, target_text: _at_cosine(q, target_cos, vrng),
               outdated_text: _at_cosine(q, target_cos + rng.uniform(0.15, 0.3), vrng)}
    if recalled_text is not None:
        vectors[recalled_text] = _at_cosine(q, target_cos + rng.uniform(0.1, 0.25), vrng)
    return EvalCase(
        case_id=case_id,
        sessions=sessions,
        question=question,
        question_time=_stamp(now, 0, hour=12),
        category="temporal",
        gold=target_item,
        target_turn_ids=[ids[target_text]],
        embeddings={k: [float(x) for x in v] for k, v in vectors.items()},
    )


def supersession_case(case_id: str, seed: int) -> EvalCase:
    """A functional fact stated, then replaced months later; the question asks for the current one."""
    rng = random.Random(seed)
    year = 2023
    first_day = date(year, rng.randint(1, 3), rng.randint(1, 28))
    second_day = date(year, rng.randint(5, 8), rng.randint(1, 28))
    now = second_day + timedelta(days=rng.randint(10, 90))
    if rng.random() < 0.5:
        old, new = rng.sample(CITIES, 2)
        first = f"I live in {old} with my partner."
        second = f"I moved to {new} last week, so now I live in {new}."
        question = "Where do I live now?"
    else:
        old, new = rng.sample(EMPLOYERS, 2)
        first = f"I work at {old} as an engineer."
        second = f"I started working at {new} last month, so now I work at {new}."
        question = "Where do I work now?"
    b = _Builder(case_id)
    b.session(first_day, (Speaker.USER, first), (Speaker.ASSISTANT, rng.choice(FILLER_ASSISTANT)))
    b.session(second_day, (Speaker.USER, rng.choice(FILLER_USER)), (Speaker.USER, second),
              (Speaker.ASSISTANT, rng.choice(FILLER_ASSISTANT)))
    sessions, ids = b.build()
    return EvalCase(case_id, sessions, question, _stamp(now, 0, hour=12), "knowledge-update", new,
                    target_turn_ids=[ids[second]])


def multi_session_case(case_id: str, seed: int) -> EvalCase:
    rng = random.Random(seed)
    genre = rng.choice(GENRES)
    d1 = date(2023, rng.randint(1, 5), rng.randint(1, 28))
    d2 = d1 + timedelta(days=rng.randint(20, 120))
    b = _Builder(case_id)
    b.session(d1, (Speaker.USER, f"I really love {genre} music."), (Speaker.ASSISTANT, rng.choice(FILLER_ASSISTANT)))
    b.session(d2, (Speaker.USER, f"Yesterday I went to a {genre} concert downtown."),
              (Speaker.ASSISTANT, rng.choice(FILLER_ASSISTANT)))
    sessions, _ = b.build()
    return EvalCase(case_id, sessions, "What kind of music do I enjoy the most?",
                    _stamp(d2 + timedelta(days=rng.randint(5, 40)), 0, hour=12), "multi-session", genre)


def single_session_case(case_id: str, seed: int) -> EvalCase:
    rng = random.Random(seed)
    color, obj = rng.choice(COLORS), rng.choice(OBJECTS)
    d = date(2023, rng.randint(1, 11), rng.randint(1, 28))
    b = _Builder(case_id)
    b.session(d, (Speaker.USER, rng.choice(FILLER_USER)), (Speaker.USER, f"I bought a {color} {obj} yesterday."),
              (Speaker.ASSISTANT, rng.choice(FILLER_ASSISTANT)))
    sessions, _ = b.build()
    return EvalCase(case_id, sessions, f"What color is the {obj} I bought?",
                    _stamp(d + timedelta(days=rng.randint(3, 30)), 0, hour=12), "single-session-user", color)


def abstention_case(case_id: str, seed: int) -> EvalCase:
    rng = random.Random(seed)
    d = date(2023, rng.randint(1, 11), rng.randint(1, 28))
    b = _Builder(case_id)
    b.session(d, *[(Speaker.USER if k % 2 == 0 else Speaker.ASSISTANT,
                    rng.choice(FILLER_USER if k % 2 == 0 else FILLER_ASSISTANT)) for k in range(4)])
    sessions, _ = b.build()
    pet = rng.choice(("dog", "cat", "parrot", "rabbit"))
    relative = rng.choice(("sister", "brother", "cousin", "neighbor"))
    return EvalCase(case_id, sessions, f"What is the name of my {relative}'s {pet}?",
                    _stamp(d + timedelta(days=10), 0, hour=12), "abstention",
                    f"Unanswerable: the user never mentioned a {relative} or a {pet}.")


GENERATORS = {
    "temporal": temporal_case,
    "multi-session": multi_session_case,
    "knowledge-update": supersession_case,
    "single-session-user": single_session_case,
    "abstention": abstention_case,
}


def _case_seed(seed: int, i: int) -> int:
    return seed * 1_000_003 + i


def generate_synthetic_suite(seed: int, size: int, categories=SUITE_CATEGORIES) -> list[EvalCase]:
    """``size`` cases cycling through ``categories``; identical for identical arguments."""
    if size < 1:
        raise ValueError("size must be >= 1")
    out = []
    for i in range(size):
        category = categories[i % len(categories)]
        out.append(GENERATORS[category](f"{category}-{seed}-{i:03d}", _case_seed(seed, i)))
    return out


def generate_temporal_suite(seed: int, size: int) -> list[EvalCase]:
    return generate_synthetic_suite(seed, size, ("temporal",))


def generate_supersession_suite(seed: int, size: int) -> list[EvalCase]:
    return generate_synthetic_suite(seed, size, ("knowledge-update",))


def time_range_of(case: EvalCase) -> TimeRange:
    return parse_time(case.question, case.question_time)
