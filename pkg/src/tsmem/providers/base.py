from __future__ import annotations

import abc
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np


class ProviderError(RuntimeError):
    pass


class Unavailable(ProviderError):
    """Backend unreachable after the configured number of retries."""


class ProtocolError(ProviderError):
    """Backend answered with something that is not the expected wire format."""


@dataclass(frozen=True)
class CompletionRequest:
    prompt: str
    temperature: float = 0.0
    max_tokens: int = 8192

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be > 0")


@dataclass
class ProviderConfig:
    kind: str = "mock"  # mock | http
    endpoint: str = ""
    model_name: str = ""
    api_key_env: str = "OPENAI_API_KEY"
    request_timeout: float = 60.0
    retry_limit: int = 2
    dimension: Optional[int] = None
    seed: int = 0
    fixtures: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.retry_limit < 0:
            raise ValueError("retry_limit must be >= 0")
        if self.kind not in ("mock", "http"):
            raise ValueError(f"unknown provider kind {self.kind!r}")


class CompletionProvider(abc.ABC):
    @abc.abstractmethod
    def complete(self, req: CompletionRequest) -> str:
        ...

    def __call__(self, prompt: str) -> str:
        return self.complete(CompletionRequest(prompt))


class EmbeddingProvider(abc.ABC):
    @property
    @abc.abstractmethod
    def dimension(self) -> int:
        ...

    @abc.abstractmethod
    def embed(self, texts: Sequence[str]) -> list[np.ndarray]:
        ...

    def embed_one(self, text: str) -> np.ndarray:
        return self.embed([text])[0]
