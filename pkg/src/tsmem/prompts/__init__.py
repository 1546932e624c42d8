"""Versioned prompt templates.

The first line of every template is a ``# task: <name> | v<N> | <origin>``
header. It is kept in the rendered prompt so offline providers can route
on it.
"""

from functools import lru_cache
from importlib import resources

TEMPLATES = (
    "extraction",
    "extraction_retry",
    "entity_summary",
    "topic_summary",
    "persona_summary",
    "answer",
    "judge_standard",
    "judge_temporal",
    "judge_knowledge_update",
    "judge_preference",
    "judge_abstention",
    "judge_locomo",
)


@lru_cache(maxsize=None)
def load(name: str) -> str:
    if name not in TEMPLATES:
        raise KeyError(f"unknown prompt template {name!r}")
    return resources.files(__name__).joinpath(f"{name}.txt").read_text("utf-8")


def render(name: str, **fields) -> str:
    return load(name).format(**fields)


def task_of(prompt: str) -> str | None:
    """The task name from a rendered prompt's header line, if present."""
    first = prompt.split("\n", 1)[0]
    if not first.startswith("# task:"):
        return None
    return first[len("# task:"):].split("|", 1)[0].strip()
