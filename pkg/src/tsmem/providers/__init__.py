"""Text-generation and embedding providers."""

from tsmem.providers.base import (
    CompletionProvider,
    CompletionRequest,
    EmbeddingProvider,
    ProtocolError,
    ProviderConfig,
    ProviderError,
    Unavailable,
)
from tsmem.providers.mock import FixtureEmbedding, MockCompletion, MockEmbedding


def completion_from_config(config: ProviderConfig) -> CompletionProvider:
    if config.kind == "mock":
        return MockCompletion(config.fixtures)
    from tsmem.providers.http import HttpCompletion

    return HttpCompletion(config)


def embedding_from_config(config: ProviderConfig) -> EmbeddingProvider:
    if config.kind == "mock":
        base = MockEmbedding(config.dimension or 256, seed=config.seed)
        if config.fixtures:
            return FixtureEmbedding(config.fixtures, fallback=base)
        return base
    from tsmem.providers.http import HttpEmbedding

    return HttpEmbedding(config)
