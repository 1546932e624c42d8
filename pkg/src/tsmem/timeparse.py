"""Rule-table resolution of temporal expressions into day ranges.

The rule inventory lives in ``data/time_rules.json``; this module compiles
it, finds non-overlapping matches (leftmost, then longest) and resolves the
winning match into a half-open :class:`~tsmem.model.TimeRange` with calendar
arithmetic anchored at the query's issue time.
"""

from __future__ import annotations

import calendar
import json
import logging
import re
from dataclasses import dataclass
from datetime import date, timedelta
from functools import lru_cache
from importlib import resources
from typing import Optional

from tsmem.model import UNCONSTRAINED, TimePoint, TimeRange

logger = logging.getLogger(__name__)

KINDS = (
    "absolute_date",
    "month_year",
    "year",
    "relative_day",
    "relative_week",
    "relative_weekend",
    "relative_month",
    "relative_year",
    "duration_ago",
    "none",
)

MONTHS = {
    name: i
    for i, names in enumerate(
        [(), ("january", "jan"), ("february", "feb"), ("march", "mar"), ("april", "apr"), ("may",),
         ("june", "jun"), ("july", "jul"), ("august", "aug"), ("september", "sep", "sept"),
         ("october", "oct"), ("november", "nov"), ("december", "dec")]
    )
    for name in names
}
WEEKDAYS = ["monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday"]
COUNTS = {
    "a": 1, "an": 1, "one": 1, "a couple of": 2, "two": 2, "three": 3, "four": 4, "five": 5,
    "six": 6, "seven": 7, "eight": 8, "nine": 9, "ten": 10, "eleven": 11, "twelve": 12,
}
REL_OFFSET = {"last": -1, "previous": -1, "this": 0, "next": 1}

# sanity window for resolved ranges relative to the anchor
MAX_FUTURE_DAYS = 400
MAX_PAST_YEARS = 200


@dataclass(frozen=True)
class TemporalExpression:
    surface: str
    kind: str
    start: int = 0
    end: int = 0
    rule: str = ""
    groups: tuple = ()

    def group(self, name: str) -> Optional[str]:
        return dict(self.groups).get(name)


@dataclass(frozen=True)
class _Rule:
    name: str
    kind: str
    regex: re.Pattern


@lru_cache(maxsize=1)
def load_rules() -> tuple[int, tuple[_Rule, ...]]:
    raw = json.loads(resources.files("tsmem.data").joinpath("time_rules.json").read_text("utf-8"))
    macros = raw["macros"]
    rules = []
    for spec in raw["rules"]:
        if spec["kind"] not in KINDS:
            raise ValueError(f"unknown kind {spec['kind']!r} in rule {spec['name']!r}")
        pattern = spec["pattern"]
        for key, value in macros.items():
            pattern = pattern.replace("{" + key + "}", f"(?:{value})")
        rules.append(_Rule(spec["name"], spec["kind"], re.compile(pattern, re.IGNORECASE)))
    return raw["version"], tuple(rules)


def extract_expressions(query_text: str) -> list[TemporalExpression]:
    """All non-overlapping temporal expressions in left-to-right order.

    Overlaps are settled leftmost-first, then longest, then by rule order.
    """
    _, rules = load_rules()
    found = []
    for order, rule in enumerate(rules):
        for m in rule.regex.finditer(query_text):
            groups = tuple(sorted((k, v.lower()) for k, v in m.groupdict().items() if v is not None))
            found.append((m.start(), -(m.end() - m.start()), order,
                          TemporalExpression(m.group(0), rule.kind, m.start(), m.end(), rule.name, groups)))
    found.sort(key=lambda item: item[:3])
    picked: list[TemporalExpression] = []
    cursor = 0
    for start, _, _, expr in found:
        if start >= cursor:
            picked.append(expr)
            cursor = expr.end
    return picked


def parse_time(query_text: str, now: TimePoint) -> TimeRange:
    """Resolve the semantic-time constraint of ``query_text`` anchored at ``now``.

    Returns ``UNCONSTRAINED`` when no expression resolves.
    """
    for expr in extract_expressions(query_text):
        resolved = resolve(expr, now.day)
        if resolved is not None:
            return resolved
    return UNCONSTRAINED


def resolve(expr: TemporalExpression, today: date) -> Optional[TimeRange]:
    """Resolve one expression, or None when it is invalid or out of bounds."""
    try:
        start, end = _RESOLVERS[expr.rule](expr, today)
    except (ValueError, OverflowError) as exc:
        logger.info("unresolvable temporal expression %r: %s", expr.surface, exc)
        return None
    if end > today + timedelta(days=MAX_FUTURE_DAYS) or start.year < today.year - MAX_PAST_YEARS:
        logger.info("temporal expression %r resolves outside the sanity window", expr.surface)
        return None
    return TimeRange.days(start, end)


def _month_bounds(year: int, month: int) -> tuple[date, date]:
    start = date(year, month, 1)
    return start, _add_months(start, 1)


def _add_months(d: date, n: int) -> date:
    idx = d.year * 12 + (d.month - 1) + n
    year, month = divmod(idx, 12)
    day = min(d.day, calendar.monthrange(year, month + 1)[1])
    return date(year, month + 1, day)


def _week_start(d: date) -> date:
    return d - timedelta(days=d.weekday())


def _one_day(d: date) -> tuple[date, date]:
    return d, d + timedelta(days=1)


def _year(expr, today):
    return int(expr.group("y")) if expr.group("y") else today.year


def _absolute(expr, today):
    month = int(expr.group("m")) if expr.group("m") else MONTHS[expr.group("month")]
    return _one_day(date(_year(expr, today), month, int(expr.group("d"))))


def _month_year(expr, today):
    return _month_bounds(_year(expr, today), MONTHS[expr.group("month")])


def _relative_named_month(expr, today):
    month = MONTHS[expr.group("month")]
    year = today.year
    if expr.group("rel") == "last" and month >= today.month:
        year -= 1
    elif expr.group("rel") == "next" and month <= today.month:
        year += 1
    return _month_bounds(year, month)


def _whole_year(expr, today):
    year = _year(expr, today)
    return date(year, 1, 1), date(year + 1, 1, 1)


def _offset_day(days):
    return lambda expr, today: _one_day(today + timedelta(days=days))


def _relative_weekday(expr, today):
    monday = _week_start(today) + timedelta(weeks=REL_OFFSET[expr.group("rel")])
    return _one_day(monday + timedelta(days=WEEKDAYS.index(expr.group("weekday"))))


def _relative_week(expr, today):
    offset = -2 if expr.rule == "week_before_last" else REL_OFFSET[expr.group("rel")]
    monday = _week_start(today) + timedelta(weeks=offset)
    return monday, monday + timedelta(weeks=1)


def _relative_weekend(expr, today):
    offset = REL_OFFSET[expr.group("rel")]
    monday = _week_start(today) + timedelta(weeks=offset)
    if offset < 0:
        # whole preceding ISO week, Monday through Sunday
        return monday, monday + timedelta(weeks=1)
    return monday + timedelta(days=5), monday + timedelta(weeks=1)


def _relative_month(expr, today):
    first = _add_months(today.replace(day=1), REL_OFFSET[expr.group("rel")])
    return _month_bounds(first.year, first.month)


def _relative_year(expr, today):
    year = today.year + REL_OFFSET[expr.group("rel")]
    return date(year, 1, 1), date(year + 1, 1, 1)


def _ago(expr, today):
    raw = expr.group("n")
    n = int(raw) if raw.isdigit() else COUNTS[" ".join(raw.split())]
    unit = expr.group("unit")
    if unit == "day":
        return _one_day(today - timedelta(days=n))
    if unit == "week":
        monday = _week_start(today - timedelta(weeks=n))
        return monday, monday + timedelta(weeks=1)
    if unit == "month":
        first = _add_months(today.replace(day=1), -n)
        return _month_bounds(first.year, first.month)
    return date(today.year - n, 1, 1), date(today.year - n + 1, 1, 1)


_RESOLVERS = {
    "iso_date": _absolute,
    "slash_date": _absolute,
    "month_day": _absolute,
    "day_month": _absolute,
    "month_year": _month_year,
    "in_month": _month_year,
    "relative_named_month": _relative_named_month,
    "year_prep": _whole_year,
    "bare_year": _whole_year,
    "day_before_yesterday": _offset_day(-2),
    "day_after_tomorrow": _offset_day(2),
    "yesterday": _offset_day(-1),
    "tomorrow": _offset_day(1),
    "today": _offset_day(0),
    "relative_weekday": _relative_weekday,
    "week_before_last": _relative_week,
    "relative_week": _relative_week,
    "relative_weekend": _relative_weekend,
    "relative_month": _relative_month,
    "relative_year": _relative_year,
    "ago": _ago,
}
