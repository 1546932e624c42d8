"""Engine configuration: one YAML file plus ``TSMEM_*`` environment overrides.

Example::

    store_path: ./memory-store
    extraction_window: 4
    merge_threshold: 0.9
    relation_registry: relations.yaml   # optional
    completion: {kind: http, endpoint: https://api.openai.com/v1, model_name: gpt-4o-mini}
    embedding: {kind: http, endpoint: https://api.openai.com/v1, model_name: text-embedding-3-small}
    retrieval: {top_k: 25, context_budget: 20}
    consolidation: {granularity: month, turn_threshold: 200, k_max: 8, seed: 0}

Scalar keys can be overridden from the environment as ``TSMEM_<KEY>`` for
top-level keys and ``TSMEM_<SECTION>__<KEY>`` for section keys, e.g.
``TSMEM_COMPLETION__ENDPOINT``. API keys are never stored in the file; the
provider reads the variable named by ``api_key_env``.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Mapping, Optional

import yaml

from tsmem.consolidation import ConsolidationPolicy
from tsmem.providers import ProviderConfig, completion_from_config, embedding_from_config
from tsmem.retrieval import RetrievalConfig
from tsmem.tkg import DEFAULT_MERGE_THRESHOLD, RelationRegistry

ENV_PREFIX = "TSMEM_"
SECTIONS = ("completion", "embedding", "retrieval", "consolidation")
# read by the CLI, not config keys
RESERVED_ENV = ("TSMEM_CONFIG",)


class ConfigError(ValueError):
    pass


@dataclass
class EngineConfig:
    completion: ProviderConfig = field(default_factory=ProviderConfig)
    embedding: ProviderConfig = field(default_factory=lambda: ProviderConfig(dimension=256))
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    consolidation: ConsolidationPolicy = field(default_factory=ConsolidationPolicy)
    store_path: str = "memory-store"
    extraction_window: int = 4
    merge_threshold: float = DEFAULT_MERGE_THRESHOLD
    relation_registry: Optional[str] = None

    def __post_init__(self):
        if self.extraction_window < 0:
            raise ConfigError("extraction_window must be >= 0")
        if not -1.0 <= self.merge_threshold <= 1.0:
            raise ConfigError("merge_threshold must be a cosine in [-1, 1]")
        if self.relation_registry and not Path(self.relation_registry).is_file():
            raise ConfigError(f"relation registry {self.relation_registry} does not exist")

    @classmethod
    def from_mapping(cls, data: Mapping, base_dir: Path = Path("."), env: Optional[Mapping[str, str]] = None):
        data = _apply_env(dict(data or {}), os.environ if env is None else env)
        unknown = set(data) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            kwargs = {
                "completion": _provider(data.get("completion", {}), base_dir),
                "embedding": _provider({"dimension": 256, **data.get("embedding", {})}, base_dir),
                "retrieval": RetrievalConfig.from_json(data.get("retrieval", {})),
                "consolidation": ConsolidationPolicy.from_json(data.get("consolidation", {})),
            }
            for key in ("store_path", "relation_registry"):
                if data.get(key):
                    kwargs[key] = str(_rel(data[key], base_dir))
            if "extraction_window" in data:
                kwargs["extraction_window"] = int(data["extraction_window"])
            if "merge_threshold" in data:
                kwargs["merge_threshold"] = float(data["merge_threshold"])
            return cls(**kwargs)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path=None, env: Optional[Mapping[str, str]] = None) -> "EngineConfig":
        """Read ``path`` (YAML); no path means defaults plus environment."""
        if path is None:
            return cls.from_mapping({}, env=env)
        path = Path(path)
        try:
            data = yaml.safe_load(path.read_text("utf-8")) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"config {path} must be a mapping")
        return cls.from_mapping(data, path.parent, env)

    def registry(self) -> RelationRegistry:
        if not self.relation_registry:
            return RelationRegistry()
        with open(self.relation_registry, encoding="utf-8") as fh:
            return RelationRegistry.from_mapping(yaml.safe_load(fh) or {})

    def build_memory(self):
        from tsmem.memory import Memory

        return Memory(**self.memory_kwargs())

    def memory_kwargs(self) -> dict:
        return {
            "completion": completion_from_config(self.completion),
            "embedder": embedding_from_config(self.embedding),
            "registry": self.registry(),
            "merge_threshold": self.merge_threshold,
            "window": self.extraction_window,
            "policy": self.consolidation,
            "retrieval": self.retrieval,
        }


def _rel(value: str, base_dir: Path) -> Path:
    p = Path(os.path.expanduser(str(value)))
    return p if p.is_absolute() else base_dir / p


def _provider(data: Mapping, base_dir: Path) -> ProviderConfig:
    data = dict(data)
    fixtures_path = data.pop("fixtures_path", None)
    if fixtures_path:
        path = _rel(fixtures_path, base_dir)
        try:
            data["fixtures"] = json.loads(path.read_text("utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read fixtures {path}: {exc}") from exc
    known = {f.name for f in fields(ProviderConfig)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown provider keys: {sorted(unknown)}")
    return ProviderConfig(**data)


def _coerce(raw: str):
    parsed = yaml.safe_load(raw)
    return raw if isinstance(parsed, (dict, list)) or parsed is None else parsed


def _apply_env(data: dict, env: Mapping[str, str]) -> dict:
    for name, raw in env.items():
        if not name.startswith(ENV_PREFIX) or name in RESERVED_ENV:
            continue
        key = name[len(ENV_PREFIX):].lower()
        if "__" in key:
            section, sub = key.split("__", 1)
            if section in SECTIONS:
                data[section] = {**data.get(section, {}), sub: _coerce(raw)}
        elif key not in SECTIONS:
            data[key] = _coerce(raw)
    return data
