"""OpenAI-compatible HTTP providers (chat completions and embeddings)."""

from __future__ import annotations

import logging
import os
from typing import Optional, Sequence

import httpx
import numpy as np

from tsmem.providers.base import (
    CompletionProvider,
    CompletionRequest,
    EmbeddingProvider,
    ProtocolError,
    ProviderConfig,
    Unavailable,
)

logger = logging.getLogger(__name__)

RETRYABLE_STATUS = {408, 429, 500, 502, 503, 504}


class _HttpBackend:
    def __init__(self, config: ProviderConfig, transport: Optional[httpx.BaseTransport] = None):
        if not config.endpoint:
            raise ValueError("http provider needs an endpoint")
        self.config = config
        headers = {}
        key = os.environ.get(config.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        self.client = httpx.Client(
            base_url=config.endpoint.rstrip("/"),
            headers=headers,
            timeout=config.request_timeout,
            transport=transport,
        )

    def post(self, path: str, payload: dict) -> dict:
        last_error: Exception | None = None
        for attempt in range(self.config.retry_limit + 1):
            try:
                resp = self.client.post(path, json=payload)
            except httpx.TransportError as exc:
                last_error = exc
                logger.warning("POST %s failed (attempt %d): %s", path, attempt + 1, exc)
                continue
            if resp.status_code in RETRYABLE_STATUS:
                last_error = RuntimeError(f"HTTP {resp.status_code}")
                logger.warning("POST %s returned %d (attempt %d)", path, resp.status_code, attempt + 1)
                continue
            if resp.status_code >= 400:
                raise ProtocolError(f"POST {path} returned HTTP {resp.status_code}: {resp.text[:200]}")
            try:
                return resp.json()
            except ValueError as exc:
                raise ProtocolError(f"POST {path} returned non-JSON body") from exc
        raise Unavailable(f"POST {path} failed after {self.config.retry_limit + 1} attempts: {last_error}")


class HttpCompletion(CompletionProvider):
    def __init__(self, config: ProviderConfig, transport: Optional[httpx.BaseTransport] = None):
        self.backend = _HttpBackend(config, transport)

    def complete(self, req: CompletionRequest) -> str:
        body = self.backend.post("/chat/completions", {
            "model": self.backend.config.model_name,
            "messages": [{"role": "user", "content": req.prompt}],
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        })
        try:
            content = body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ProtocolError("chat completion response lacks choices[0].message.content") from exc
        if not isinstance(content, str):
            raise ProtocolError("chat completion content is not a string")
        return content


class HttpEmbedding(EmbeddingProvider):
    def __init__(self, config: ProviderConfig, transport: Optional[httpx.BaseTransport] = None):
        self.backend = _HttpBackend(config, transport)
        self._dim = config.dimension

    @property
    def dimension(self) -> int:
        if self._dim is None:
            self._dim = len(self.embed(["dimension probe"])[0])
        return self._dim

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]:
        if not texts:
            raise ValueError("embed needs at least one text")
        body = self.backend.post("/embeddings", {"model": self.backend.config.model_name, "input": list(texts)})
        try:
            rows = sorted(body["data"], key=lambda r: r["index"])
            vectors = [np.asarray(r["embedding"], dtype=np.float64) for r in rows]
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError("embedding response lacks data[].embedding") from exc
        if len(vectors) != len(texts):
            raise ProtocolError(f"asked for {len(texts)} embeddings, got {len(vectors)}")
        out = []
        for v in vectors:
            if v.ndim != 1 or (self._dim is not None and v.shape[0] != self._dim):
                raise ProtocolError(f"embedding has shape {v.shape}, expected ({self._dim},)")
            n = np.linalg.norm(v)
            if n == 0:
                raise ProtocolError("backend returned a zero embedding")
            out.append(v / n)
        return out
