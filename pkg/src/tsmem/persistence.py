"""Snapshot directories: canonical JSONL payloads plus a manifest.

Layout::

    manifest.json     schema version, embedding dimension, counts
    turns.jsonl       one ChatTurn per line with its embedding and log position
    entities.jsonl    EntityNode records with name embeddings and aliases
    facts.jsonl       TemporalFact records
    durative.jsonl    topic and persona records
    policy.json       consolidation policy, sleep-time state, relation registry

Every file is written with sorted keys and records sorted by id, so equal
stores serialize to identical bytes. Vectors are stored as hex of
big-endian IEEE-754 doubles, which round-trips exactly.
"""

from __future__ import annotations

import json
import logging
import os
import shutil
from datetime import date
from pathlib import Path
from typing import Optional

import numpy as np

from tsmem.consolidation import ConsolidationPolicy, SleepState
from tsmem.model import (
    ChatTurn,
    DurativeMemory,
    EntityNode,
    MemoryKind,
    TemporalFact,
    TimePoint,
    normalize_name,
)
from tsmem.providers.base import CompletionProvider, EmbeddingProvider
from tsmem.tkg import RelationRegistry

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
PAYLOADS = ("turns", "entities", "facts", "durative")


class SaveError(OSError):
    pass


class MigrationRequired(RuntimeError):
    pass


class CorruptSnapshot(ValueError):
    pass


def encode_vector(vec: np.ndarray) -> str:
    return np.asarray(vec, dtype=">f8").tobytes().hex()


def decode_vector(text: str) -> np.ndarray:
    return np.frombuffer(bytes.fromhex(text), dtype=">f8").astype(np.float64)


def canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def _time(t: Optional[TimePoint]) -> Optional[str]:
    return None if t is None else t.isoformat()


def dump_state(memory) -> dict:
    """Canonical record lists for every part of a store; the payload of a snapshot."""
    tkg = memory.tkg
    aliases: dict[str, list[str]] = {}
    for alias, eid in tkg.aliases.items():
        aliases.setdefault(eid, []).append(alias)
    order = {t.turn_id: i for i, t in enumerate(memory.turns)}
    turns = [
        {**t.to_json(), "seq": order[t.turn_id], "embedding": encode_vector(memory.turn_vectors[t.turn_id])}
        for t in sorted(memory.turns, key=lambda t: t.turn_id)
    ]
    entities = [
        {
            "entity_id": e.entity_id,
            "name": e.name,
            "name_key": normalize_name(e.name),
            "summary": e.summary,
            "name_embedding": encode_vector(e.name_embedding),
            "mention_turn_ids": sorted(e.mention_turn_ids),
            "aliases": sorted(aliases.get(e.entity_id, [])),
        }
        for e in (tkg.entities[k] for k in sorted(tkg.entities))
    ]
    facts = [
        {
            "fact_id": f.fact_id,
            "subject_id": f.subject_id,
            "relation": f.relation,
            "object_id": f.object_id,
            "valid_time": _time(f.valid_time),
            "invalid_time": _time(f.invalid_time),
            "source_turn_ids": sorted(f.source_turn_ids),
        }
        for f in (tkg.facts[k] for k in sorted(tkg.facts))
    ]
    durative = [
        {
            "memory_id": m.memory_id,
            "kind": m.kind.value,
            "slice_start": _time(m.slice_start),
            "slice_end": _time(m.slice_end),
            "summary": m.summary,
            "embedding": encode_vector(m.embedding),
            "member_entity_ids": sorted(m.member_entity_ids),
        }
        for m in sorted(memory.durative.all(), key=lambda m: m.memory_id)
    ]
    policy = {
        "consolidation": memory.policy.to_json(),
        "sleep": memory.sleep.to_json(),
        "day_versions": {d.isoformat(): v for d, v in sorted(tkg.day_versions.items()) if v},
        "registry": {"functional": list(tkg.registry.functional), "reflexive": list(tkg.registry.reflexive)},
        "merge_threshold": tkg.merge_threshold,
        "window": memory.extractor.window,
    }
    return {"turns": turns, "entities": entities, "facts": facts, "durative": durative, "policy": policy}


def manifest_for(memory, state: dict) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "embedding_dim": memory.dim,
        "created_at": _time(memory.clock),
        "turn_count": len(state["turns"]),
        "entity_count": len(state["entities"]),
        "fact_count": len(state["facts"]),
        "durative_count": len(state["durative"]),
        "last_consolidation": _time(memory.sleep.last_run),
    }


def _write(path: Path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
        fh.flush()
        os.fsync(fh.fileno())


def _prev(path: Path) -> Path:
    return path.with_name(path.name + ".prev")


def save(memory, path) -> dict:
    """Write a snapshot of ``memory`` to directory ``path`` atomically.

    The new snapshot is built in a sibling temp directory and renamed into
    place; the previous one is parked at ``<path>.prev`` until the swap is
    done. Any failure raises SaveError and leaves the old snapshot in place.
    """
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp-{os.getpid()}")
    with memory.writer():
        state = dump_state(memory)
        manifest = manifest_for(memory, state)
    try:
        if tmp.exists():
            shutil.rmtree(tmp)
        tmp.mkdir(parents=True)
        for name in PAYLOADS:
            _write(tmp / f"{name}.jsonl", "".join(canonical(rec) + "\n" for rec in state[name]))
        _write(tmp / "policy.json", canonical(state["policy"]) + "\n")
        _write(tmp / "manifest.json", canonical(manifest) + "\n")
        prev = _prev(path)
        if path.exists():
            if prev.exists():
                shutil.rmtree(prev)
            os.replace(path, prev)
        os.replace(tmp, path)
        if prev.exists():
            shutil.rmtree(prev)
    except OSError as exc:
        shutil.rmtree(tmp, ignore_errors=True)
        prev = _prev(path)
        if not path.exists() and prev.exists():
            os.replace(prev, path)
        raise SaveError(f"could not save snapshot to {path}: {exc}") from exc
    return manifest


def read_manifest(path) -> dict:
    path = _resolve(Path(path))
    try:
        return json.loads((path / "manifest.json").read_text("utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise CorruptSnapshot(f"unreadable manifest in {path}: {exc}") from exc


def _resolve(path: Path) -> Path:
    if (path / "manifest.json").exists():
        return path
    prev = _prev(path)
    if (prev / "manifest.json").exists():
        logger.warning("snapshot %s missing, recovering from %s", path, prev)
        return prev
    raise FileNotFoundError(f"no snapshot at {path}")


def _read_jsonl(path: Path) -> list[dict]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise CorruptSnapshot(f"{path.name} line {n}: {exc}") from exc
    return out


def load(path, completion: CompletionProvider, embedder: EmbeddingProvider, **memory_kwargs):
    """Rebuild a Memory from a snapshot directory.

    Derived indexes are recomputed and checked against the payload. Raises
    MigrationRequired for an unknown schema version and CorruptSnapshot when
    counts or cross-references disagree.
    """
    from tsmem.memory import Memory

    path = _resolve(Path(path))
    manifest = read_manifest(path)
    if manifest.get("schema_version") != SCHEMA_VERSION:
        raise MigrationRequired(f"snapshot schema {manifest.get('schema_version')!r}, expected {SCHEMA_VERSION}")
    records = {}
    for name in PAYLOADS:
        try:
            records[name] = _read_jsonl(path / f"{name}.jsonl")
        except OSError as exc:
            raise CorruptSnapshot(f"missing payload {name}.jsonl") from exc
    for name, key in (("turns", "turn_count"), ("entities", "entity_count"), ("facts", "fact_count"),
                      ("durative", "durative_count")):
        if len(records[name]) != manifest.get(key):
            raise CorruptSnapshot(f"{name}.jsonl has {len(records[name])} records, manifest says {manifest.get(key)}")
    try:
        policy = json.loads((path / "policy.json").read_text("utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise CorruptSnapshot(f"unreadable policy.json: {exc}") from exc

    dim = int(manifest["embedding_dim"])
    kwargs = {
        "registry": RelationRegistry.from_mapping(policy.get("registry", {})),
        "merge_threshold": policy.get("merge_threshold", 0.9),
        "window": policy.get("window", 4),
        "policy": ConsolidationPolicy.from_json(policy.get("consolidation", {})),
    }
    kwargs.update(memory_kwargs)
    memory = Memory(completion, embedder, dim=dim, **kwargs)
    try:
        _populate(memory, records, policy, dim)
    except (KeyError, ValueError, TypeError) as exc:
        raise CorruptSnapshot(f"invalid snapshot payload: {exc}") from exc
    created = manifest.get("created_at")
    memory.clock = TimePoint.parse(created) if created else None
    return memory


def _vector(text: str, dim: int) -> np.ndarray:
    vec = decode_vector(text)
    if vec.shape != (dim,):
        raise CorruptSnapshot(f"vector of dimension {vec.shape[0]} in a dimension-{dim} snapshot")
    return vec


def _populate(memory, records: dict, policy: dict, dim: int) -> None:
    for rec in sorted(records["turns"], key=lambda r: r["seq"]):
        turn = ChatTurn.from_json(rec)
        memory.turns.append(turn)
        memory.turn_vectors[turn.turn_id] = _vector(rec["embedding"], dim)
    tkg = memory.tkg
    for rec in records["entities"]:
        node = EntityNode(rec["entity_id"], rec["name"], rec["summary"], _vector(rec["name_embedding"], dim),
                          set(rec["mention_turn_ids"]))
        key = normalize_name(node.name)
        if key != rec["name_key"] or key in tkg.name_index:
            raise CorruptSnapshot(f"name index mismatch for entity {node.entity_id}")
        tkg.entities[node.entity_id] = node
        tkg.name_index[key] = node.entity_id
        for alias in rec["aliases"]:
            tkg.aliases[alias] = node.entity_id
    for rec in records["facts"]:
        fact = TemporalFact(
            rec["fact_id"], rec["subject_id"], rec["relation"], rec["object_id"],
            TimePoint.parse(rec["valid_time"]),
            TimePoint.parse(rec["invalid_time"]) if rec["invalid_time"] else None,
            set(rec["source_turn_ids"]),
        )
        tkg.facts[fact.fact_id] = fact
        for tid in fact.source_turn_ids:
            tkg.turn_index[tid].add(fact.fact_id)
    for d, v in policy.get("day_versions", {}).items():
        tkg.day_versions[date.fromisoformat(d)] = int(v)
    by_slice: dict = {}
    for rec in records["durative"]:
        m = DurativeMemory(rec["memory_id"], MemoryKind(rec["kind"]), TimePoint.parse(rec["slice_start"]),
                           TimePoint.parse(rec["slice_end"]), rec["summary"], _vector(rec["embedding"], dim),
                           frozenset(rec["member_entity_ids"]))
        by_slice.setdefault(m.span, []).append(m)
    for span, mems in by_slice.items():
        memory.durative.replace(span, mems)
    memory.sleep = SleepState.from_json(policy.get("sleep", {}))
    _verify(memory)


def _verify(memory) -> None:
    from tsmem.tkg import StoreConsistencyError

    try:
        memory.tkg.check_invariants()
    except StoreConsistencyError as exc:
        raise CorruptSnapshot(str(exc)) from exc
    known = set(memory.turn_vectors)
    for e in memory.tkg.entities.values():
        if not e.mention_turn_ids <= known:
            raise CorruptSnapshot(f"entity {e.entity_id} mentions unknown turns")
    for f in memory.tkg.facts.values():
        if not f.source_turn_ids <= known:
            raise CorruptSnapshot(f"fact {f.fact_id} cites unknown turns")
