"""Deterministic offline providers."""

from __future__ import annotations

import hashlib
import re
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from tsmem import prompts
from tsmem.providers import heuristic
from tsmem.providers.base import CompletionProvider, CompletionRequest, EmbeddingProvider

TOKEN = re.compile(r"[a-z0-9]+")


def prompt_key(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


def normalize_text(text: str) -> str:
    return " ".join(text.casefold().split())


class MockCompletion(CompletionProvider):
    """Offline completion provider.

    Lookup order: fixture table (keyed by sha256 of the prompt, or the raw
    prompt), then a rule-based handler chosen by the template's task header,
    then an echo-digest of the prompt.
    """

    def __init__(self, fixtures: Optional[Mapping[str, str]] = None):
        self.fixtures = dict(fixtures or {})
        self.calls = 0
        self._handlers: dict[str, Callable[[str], str]] = {
            "extraction": self._extract,
            "extraction_retry": self._extract,
            "entity_summary": self._entity_summary,
            "topic_summary": lambda p: heuristic.summarize_topic(heuristic.section(p)),
            "persona_summary": lambda p: heuristic.summarize_persona(heuristic.section(p)),
            "answer": self._answer,
        }

    def complete(self, req: CompletionRequest) -> str:
        self.calls += 1
        key = prompt_key(req.prompt)
        if key in self.fixtures:
            return self.fixtures[key]
        if req.prompt in self.fixtures:
            return self.fixtures[req.prompt]
        task = prompts.task_of(req.prompt)
        if task in self._handlers:
            return self._handlers[task](req.prompt)
        if task is not None and task.startswith("judge_"):
            return heuristic.judge(task, req.prompt)
        return f"echo:{key[:16]}"

    @staticmethod
    def _extract(prompt: str) -> str:
        records = heuristic.extract_records(heuristic.section(prompt))
        return "\n".join(records) if records else "NONE"

    @staticmethod
    def _answer(prompt: str) -> str:
        m = heuristic.QUESTION_LINE.search(prompt)
        return heuristic.answer_from_context(heuristic.section(prompt), m.group(1) if m else "")

    @staticmethod
    def _entity_summary(prompt: str) -> str:
        m = re.search(r"at most (\d+) characters", prompt)
        budget = int(m.group(1)) if m else 400
        return heuristic.summarize_entity(heuristic.section(prompt), budget)


class MockEmbedding(EmbeddingProvider):
    """Hash-seeded unit vectors.

    Each normalized token maps to a pseudo-random Gaussian vector seeded from
    its hash; a text embeds as the normalized sum of its token vectors, so
    texts sharing words land close together. Texts without tokens fall back
    to a vector seeded by the whole string.
    """

    def __init__(self, dim: int = 256, seed: int = 0):
        if dim < 1:
            raise ValueError("dimension must be positive")
        self._dim = dim
        self.seed = seed
        self._cache: dict[str, np.ndarray] = {}

    @property
    def dimension(self) -> int:
        return self._dim

    def _seeded(self, key: str) -> np.ndarray:
        vec = self._cache.get(key)
        if vec is None:
            digest = hashlib.blake2b(f"{self.seed}\x1f{key}".encode("utf-8"), digest_size=8).digest()
            rng = np.random.default_rng(int.from_bytes(digest, "little"))
            vec = rng.standard_normal(self._dim)
            self._cache[key] = vec
        return vec

    def embed_text(self, text: str) -> np.ndarray:
        norm = normalize_text(text)
        tokens = TOKEN.findall(norm)
        if tokens:
            total = np.sum([self._seeded("tok:" + t) for t in tokens], axis=0)
        else:
            total = self._seeded("txt:" + norm)
        n = np.linalg.norm(total)
        if n == 0:
            total = self._seeded("txt:" + norm)
            n = np.linalg.norm(total)
        return total / n

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]:
        if not texts:
            raise ValueError("embed needs at least one text")
        return [self.embed_text(t) for t in texts]


class FixtureEmbedding(EmbeddingProvider):
    """Exact vectors declared per text, with a fallback for everything else."""

    def __init__(self, vectors: Mapping[str, Sequence[float]], fallback: Optional[EmbeddingProvider] = None):
        self.vectors: dict[str, np.ndarray] = {}
        dims = set()
        for text, vec in vectors.items():
            v = np.asarray(vec, dtype=np.float64)
            n = np.linalg.norm(v)
            if n == 0:
                raise ValueError(f"zero fixture vector for {text!r}")
            self.vectors[normalize_text(text)] = v / n
            dims.add(v.shape[0])
        if fallback is not None:
            dims.add(fallback.dimension)
        if len(dims) > 1:
            raise ValueError(f"fixture dimensions disagree: {sorted(dims)}")
        if not dims:
            raise ValueError("fixture embedding needs vectors or a fallback")
        self._dim = dims.pop()
        self.fallback = fallback

    @property
    def dimension(self) -> int:
        return self._dim

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]:
        if not texts:
            raise ValueError("embed needs at least one text")
        out = []
        for text in texts:
            vec = self.vectors.get(normalize_text(text))
            if vec is None:
                if self.fallback is None:
                    raise KeyError(f"no fixture vector for {text!r}")
                vec = self.fallback.embed([text])[0]
            out.append(vec)
        return out
