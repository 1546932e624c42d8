"""Temporal-semantic memory for conversational agents."""

from tsmem.model import (
    UNCONSTRAINED,
    ChatTurn,
    DurativeMemory,
    EntityNode,
    MemoryCandidate,
    MemoryKind,
    Query,
    Speaker,
    TemporalFact,
    TimePoint,
    TimeRange,
    range_contains,
    ranges_overlap,
)
from tsmem.timeparse import extract_expressions, parse_time

__version__ = "0.1.0"
