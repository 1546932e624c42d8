"""Acceptance suite: one test per criterion, each at its stated tolerance.

Run ``pytest tests/test_acceptance.py`` and read the "acceptance criteria"
section of the terminal summary for the PASS/FAIL lines.
"""

import itertools
import json
import random
import time
from collections import Counter
from datetime import date, timedelta
from pathlib import Path

import numpy as np
import pytest
from fastapi.testclient import TestClient

from support import (
    ReferenceTkg,
    RecordCompletion,
    adjusted_rand_index,
    memory_fingerprint,
    random_memory,
    store_state,
    two_blobs,
)
from tsmem import persistence
from tsmem.cli import main
from tsmem.config import EngineConfig
from tsmem.consolidation import DurativeStore, slice_for, slice_key
from tsmem.evaluation import generate_supersession_suite, generate_temporal_suite, run_eval
from tsmem.gmm import assign, fit_gmm, select_k
from tsmem.memory import Memory
from tsmem.model import ChatTurn, DurativeMemory, MemoryCandidate, MemoryKind, Speaker, TimePoint, TimeRange, unit
from tsmem.providers import FixtureEmbedding, MockCompletion, MockEmbedding
from tsmem.retrieval import PoolItem, RetrievalConfig, dense_topk, rerank
from tsmem.service import create_app
from tsmem.timeparse import parse_time

FIXTURES = Path(__file__).parent / "fixtures"


def tree_bytes(path: Path) -> dict:
    return {p.name: p.read_bytes() for p in sorted(path.iterdir())}


# -- 1. temporal parser ---------------------------------------------------------


@pytest.mark.criterion(1, "temporal parser corpus")
def test_criterion_1_parser_corpus(record_property):
    rows = []
    for line in (FIXTURES / "timeparse_corpus.tsv").read_text("utf-8").splitlines():
        if line.strip() and not line.startswith("#"):
            rows.append(line.split("\t"))
    assert ("last weekend" in " ".join(r[0] for r in rows))
    started = time.perf_counter()
    failures = []
    for query, now, start, end in rows:
        got = parse_time(query, TimePoint.parse(now))
        want_unbounded = start == "-"
        if want_unbounded != got.unconstrained or (
                not want_unbounded and got != TimeRange(TimePoint.parse(start), TimePoint.parse(end))):
            failures.append(query)
    anchor = parse_time("What cocktail did I make last weekend?", TimePoint.of(2023, 5, 30))
    elapsed = time.perf_counter() - started
    record_property("detail", f"{len(rows) - len(failures)}/{len(rows)} cases, {elapsed:.3f}s")
    assert len(rows) >= 50
    assert failures == []
    assert anchor == TimeRange.days(date(2023, 5, 22), date(2023, 5, 29))
    assert elapsed < 1.0


# -- 2. scripted fact stream against the reference --------------------------------

DIM = 16


def _e(i: int) -> np.ndarray:
    v = np.zeros(DIM)
    v[i] = 1.0
    return v


NAME_VECTORS = {
    "user": _e(0), "alice": _e(1), "Paris": _e(2), "Berlin": _e(3), "Acme": _e(4), "Globex": _e(5),
    "NYC": _e(6),
    # cosine 0.95 with NYC merges; 0.85 stays a separate entity
    "New York City": 0.95 * _e(6) + np.sqrt(1 - 0.95 ** 2) * _e(7),
    "Big Apple": 0.85 * _e(6) + np.sqrt(1 - 0.85 ** 2) * _e(8),
    "jazz": _e(9), "Tokyo": _e(10), "Lisbon": _e(11), "blue": _e(12), "green": _e(13),
}

D = date
STREAM = [
    ("user", "lives_in", "Paris", D(2023, 1, 10), "t01"),
    ("user", "works_at", "Acme", D(2023, 1, 15), "t02"),
    ("alice", "lives_in", "NYC", D(2023, 1, 20), "t03"),
    ("user", "likes", "jazz", D(2023, 1, 22), "t04"),
    ("user", "lives_in", "Paris", D(2023, 1, 10), "t05"),
    ("alice", "lives_in", "New York City", D(2023, 1, 20), "t06"),
    ("user", "works_at", "Acme", D(2023, 1, 5), "t07"),
    ("user", "lives_in", "Berlin", D(2023, 3, 1), "t08"),
    ("user", "visited", "Tokyo", D(2023, 3, 15), "t09"),
    ("user", "visited", "Tokyo", D(2023, 3, 15), "t10"),
    ("alice", "visited", "Big Apple", D(2023, 4, 1), "t11"),
    ("user", "works_at", "Globex", D(2023, 4, 10), "t12"),
    ("user", "lives_in", "Paris", D(2023, 1, 10), "t01"),
    ("alice", "works_at", "Acme", D(2023, 2, 1), "t14"),
    ("user", "visited", "Tokyo", D(2023, 3, 15), "t09"),
    ("user", "lives_in", "Lisbon", D(2023, 2, 1), "t16"),
    ("alice", "lives_in", "Berlin", D(2023, 5, 1), "t17"),
    ("user", "favorite_color", "blue", D(2023, 5, 5), "t18"),
    ("user", "favorite_color", "green", D(2023, 6, 1), "t19"),
    ("user", "likes", "jazz", D(2023, 2, 10), "t20"),
    ("alice", "works_at", "Acme", D(2023, 1, 25), "t21"),
    ("user", "visited", "NYC", D(2023, 6, 10), "t22"),
    ("user", "visited", "New York City", D(2023, 6, 10), "t23"),
    ("alice", "lives_in", "Berlin", D(2023, 5, 1), "t17"),
    ("user", "lives_in", "Paris", D(2023, 7, 1), "t25"),
    ("user", "works_at", "Globex", D(2023, 4, 10), "t26"),
    ("alice", "likes", "jazz", D(2023, 7, 4), "t27"),
    ("alice", "likes", "jazz", D(2023, 7, 4), "t28"),
    ("user", "favorite_color", "blue", D(2023, 7, 10), "t29"),
    ("user", "visited", "Lisbon", D(2023, 7, 15), "t30"),
]


def _stream_turns() -> tuple[dict[str, ChatTurn], dict[str, str]]:
    """One turn per distinct turn id; replayed events reuse the same turn."""
    turns, records = {}, {}
    for s, r, o, day, tid in STREAM:
        if tid in turns:
            continue
        text = f"note {tid}: {s} {r} {o}"
        turns[tid] = ChatTurn(tid, f"s-{tid}", TimePoint.of(2023, 8, 1), Speaker.USER, text)
        records[text] = f"ENTITY | {s} | seen in {tid}\nENTITY | {o} | seen in {tid}\n" \
                        f"FACT | {s} | {r} | {o} | {day.isoformat()}"
    return turns, records


def _stream_memory() -> tuple[Memory, dict[str, ChatTurn]]:
    turns, records = _stream_turns()
    embedder = FixtureEmbedding({k: list(v) for k, v in NAME_VECTORS.items()}, fallback=MockEmbedding(DIM))
    return Memory(RecordCompletion(records), embedder, window=0), turns


@pytest.mark.criterion(2, "scripted fact stream matches the reference; replay is deterministic")
def test_criterion_2_fact_stream(record_property, tmp_path):
    mem, turns = _stream_memory()
    ref = ReferenceTkg()
    seen = Counter()
    for step, (s, r, o, day, tid) in enumerate(STREAM):
        want = Counter()
        cs, a = ref.resolve(s, unit(NAME_VECTORS[s]))
        want[a] += 1
        co, a = ref.resolve(o, unit(NAME_VECTORS[o]))
        want[a] += 1
        want[ref.apply(cs, r, co, day, tid)] += 1
        report = mem.ingest([turns[tid]], sleep_check=False)
        got = +report.actions
        assert got == want, f"event {step}: {got} != {want}"
        assert store_state(mem.tkg) == ref.state(), f"event {step}"
        mem.tkg.check_invariants()
        seen += got
    for lo in range(0, 220, 7):
        start = date(2023, 1, 1) + timedelta(days=lo)
        for width in (1, 10, 45):
            end = start + timedelta(days=width)
            name = {eid: e.name for eid, e in mem.tkg.entities.items()}
            got = {(name[f.subject_id], f.relation, name[f.object_id], f.valid_time.day)
                   for f in mem.tkg.facts_valid_in(TimeRange.days(start, end))}
            assert got == ref.valid_in(start, end)
    assert {"ADD", "MERGE", "DUPLICATE", "UPDATE", "INVALIDATE"} <= set(seen)

    persistence.save(mem, tmp_path / "a")
    second, turns2 = _stream_memory()
    for s, r, o, day, tid in STREAM:
        second.ingest([turns2[tid]], sleep_check=False)
    persistence.save(second, tmp_path / "b")
    identical = tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "b")

    state = store_state(mem.tkg)
    replay = mem.ingest([turns[tid] for *_, tid in STREAM], sleep_check=False)
    record_property("detail", f"{len(STREAM)} events, actions {dict(sorted(seen.items()))}")
    assert identical
    assert set(+replay.actions) <= {"MERGE", "DUPLICATE"}
    assert store_state(mem.tkg) == state


# -- 3. supersession ------------------------------------------------------------


@pytest.mark.criterion(3, "superseded facts are not current")
def test_criterion_3_supersession(record_property):
    mem = Memory(MockCompletion(), MockEmbedding(64))
    mem.ingest([
        ChatTurn("p1", "jan", TimePoint.parse("2023-01-12T10:00:00"), Speaker.USER, "I live in Paris with my partner."),
        ChatTurn("b1", "jun", TimePoint.parse("2023-06-08T10:00:00"), Speaker.USER,
                 "I moved to Berlin last week, so now I live in Berlin."),
    ])
    today = TimePoint.of(2023, 7, 15)
    current = {mem.tkg.entities[f.object_id].name for f in mem.tkg.facts_valid_in(TimeRange.single_day(today.day))
               if f.relation == "lives_in"}
    answer = mem.query("Where do I live now?", today).answer or ""

    cases = generate_supersession_suite(0, 20)
    report = run_eval(cases)
    record_property("detail", f"today={sorted(current)}, answer contains Berlin={'Berlin' in answer}, "
                              f"suite {report.overall:.0%} over {len(report.judged)} cases")
    assert current == {"Berlin"}
    assert "Berlin" in answer and "Paris" not in answer
    assert len(cases) == 20 and report.errored == 0
    assert report.overall == 1.0


# -- 4. clustering ----------------------------------------------------------------


@pytest.mark.criterion(4, "GMM monotone EM, planted-blob recovery and BIC choice")
def test_criterion_4_gmm(record_property):
    started = time.perf_counter()
    for seed in range(100):
        rng = np.random.default_rng(seed)
        n, d, k = int(rng.integers(5, 40)), int(rng.integers(1, 8)), int(rng.integers(1, 5))
        X = rng.standard_normal((n, d)) * rng.uniform(0.1, 3.0, size=d)
        trace = np.array(fit_gmm(X, min(k, n), seed=seed).log_likelihoods)
        assert np.all(np.diff(trace) >= -1e-8 * np.maximum(1.0, np.abs(trace[:-1]))), seed
    aris = []
    for seed in range(5):
        X, labels = two_blobs(seed, d=16, per=20, sep=10.0)
        aris.append(adjusted_rand_index(labels, assign(fit_gmm(X, 2, seed=seed), X)))
        assert select_k(X, 4, seed=seed) == 2
        single = np.random.default_rng(100 + seed).standard_normal((40, 16))
        assert select_k(single, 4, seed=seed) == 1
    elapsed = time.perf_counter() - started
    record_property("detail", f"min ARI {min(aris):.3f}, {elapsed:.2f}s")
    assert min(aris) >= 0.9
    assert elapsed < 5.0


# -- 5. reranker ------------------------------------------------------------------


def _oracle(cands):
    """Insertion sort on (valid first, then higher similarity); equal keys keep input order."""
    out = []
    for c in cands:
        i = len(out)
        while i > 0 and (out[i - 1].time_valid, out[i - 1].similarity) < (c.time_valid, c.similarity):
            i -= 1
        out.insert(i, c)
    return out


def _cand(ref, sim, valid):
    return MemoryCandidate(MemoryKind.RAW, ref, sim, TimeRange.single_day(date(2023, 5, 1)), time_valid=valid)


@pytest.mark.criterion(5, "reranker order and positive-scaling invariance")
def test_criterion_5_rerank(record_property):
    rng = random.Random(5)
    perms = 0
    for n in range(0, 7):
        for _ in range(6):
            # a small value pool forces ties on both keys
            cands = [_cand(f"c{i}", rng.choice((-0.4, 0.1, 0.1, 0.7, 0.9)), rng.random() < 0.5) for i in range(n)]
            for perm in itertools.permutations(cands):
                perms += 1
                assert [c.ref_id for c in rerank(perm)] == [c.ref_id for c in _oracle(perm)]

    nprng = np.random.default_rng(5)
    for trial in range(1000):
        n, d = int(nprng.integers(1, 20)), int(nprng.integers(2, 12))
        pool = [PoolItem(MemoryKind.RAW, f"i{j}", unit(nprng.normal(size=d)),
                         TimeRange.single_day(date(2023, 5, 1)), "") for j in range(n)]
        q = nprng.normal(size=d)
        scale = float(10.0 ** nprng.uniform(-6, 6))
        assert dense_topk(q * scale, pool, 1)[0].ref_id == dense_topk(q, pool, 1)[0].ref_id, trial
        cands = [_cand(f"c{j}", float(nprng.uniform(-1, 1)), bool(nprng.random() < 0.4)) for j in range(n)]
        scaled = [_cand(c.ref_id, c.similarity * scale, c.time_valid) for c in cands]
        assert rerank(scaled)[0].ref_id == rerank(cands)[0].ref_id, trial
    record_property("detail", f"{perms} permutations, 1000 scaled sets")


# -- 6. temporal suite ----------------------------------------------------------------


@pytest.mark.criterion(6, "temporal suite: full vs. temporal stage disabled")
def test_criterion_6_temporal_suite(record_property):
    started = time.perf_counter()
    cases = generate_temporal_suite(0, 100)
    full = run_eval(cases)
    ablated = run_eval(cases, ablation="temporal")
    elapsed = time.perf_counter() - started
    full_top1 = full.target_retrieval()["rate"]
    abl_top1 = ablated.target_retrieval()["rate"]
    record_property("detail", f"top-1 full {full_top1:.0%} vs ablated {abl_top1:.0%}; judged "
                              f"{full.overall:.0%} vs {ablated.overall:.0%}; {elapsed:.1f}s")
    assert full.target_retrieval()["cases"] == 100
    assert full_top1 >= 0.95
    assert abl_top1 <= 0.50
    assert full.overall > ablated.overall
    assert elapsed < 60.0


# -- 7. keep-filter ---------------------------------------------------------------------

QUESTIONS = (
    "What did I do last week?", "Where did I travel in March?", "What did I buy yesterday?",
    "What happened last month?", "What did I watch last weekend?", "Who did I meet two weeks ago?",
    "What did I do in 2023?", "What did I do on May 3?", "What did I cook this week?",
    "What did I buy in April 2023?", "What did I do three days ago?", "What is my favorite color?",
)


@pytest.mark.criterion(7, "no durative item disjoint from a bounded query range is ranked")
def test_criterion_7_keep_filter(record_property):
    rng = random.Random(7)
    bounded = would_leak = 0
    for store_seed in range(100):
        mem = random_memory(store_seed)
        for _ in range(10):
            mem.durative = DurativeStore()
            now = TimePoint(date(2023, 1, 1) + timedelta(days=rng.randrange(0, 300)), 12 * 3600)
            question = rng.choice(QUESTIONS)
            q = mem.embed_query(question)
            for j in range(rng.randrange(1, 6)):
                day = date(2023, 1, 1) + timedelta(days=rng.randrange(-30, 330))
                span = slice_for(day, rng.choice(("week", "month", "quarter")))
                noise = unit(np.random.default_rng(rng.randrange(10 ** 9)).normal(size=mem.dim))
                kind = rng.choice((MemoryKind.TOPIC, MemoryKind.PERSONA))
                record = DurativeMemory(f"{kind.value}-{slice_key(span)}-{j}", kind, span.start, span.end,
                                        f"summary {j}", unit(q + rng.uniform(0.0, 1.5) * noise))
                mem.durative.replace(span, [*mem.durative.view().get(slice_key(span), ()), record])
            result = mem.query(question, now)
            tq = result.time_constraint
            if tq.unconstrained:
                continue
            bounded += 1
            for c in result.ranked:
                if c.kind is not MemoryKind.RAW:
                    assert c.span.overlaps(tq), (store_seed, question, c.ref_id)
            plain = mem.query(question, now, RetrievalConfig().with_ablation("temporal"))
            would_leak += any(c.kind is not MemoryKind.RAW and not c.span.overlaps(tq) for c in plain.ranked)
    record_property("detail", f"1000 store/query pairs, {bounded} bounded, "
                              f"{would_leak} would leak without the filter")
    assert bounded > 0 and would_leak > 0


# -- 8. persistence -------------------------------------------------------------------------


def _reload(path):
    dim = persistence.read_manifest(path)["embedding_dim"]
    return persistence.load(path, MockCompletion(), MockEmbedding(dim))


@pytest.mark.criterion(8, "snapshot round trip and interrupted save")
def test_criterion_8_persistence(record_property, tmp_path, monkeypatch):
    for seed in range(50):
        mem = random_memory(seed)
        persistence.save(mem, tmp_path / f"s{seed}")
        back = _reload(tmp_path / f"s{seed}")
        assert memory_fingerprint(back) == memory_fingerprint(mem), seed

    store = tmp_path / "live"
    old = random_memory(3, min_turns=5)
    persistence.save(old, store)
    real = persistence.os.replace
    calls = []

    class Crash(BaseException):
        pass

    def dying(src, dst):
        calls.append(dst)
        if len(calls) == 2:
            raise Crash()
        return real(src, dst)

    monkeypatch.setattr(persistence.os, "replace", dying)
    with pytest.raises(Crash):
        persistence.save(random_memory(4, min_turns=5), store)
    monkeypatch.setattr(persistence.os, "replace", real)
    recovered = memory_fingerprint(_reload(store)) == memory_fingerprint(old)
    record_property("detail", "50 round trips bit-exact, prior snapshot loadable after interruption")
    assert recovered


# -- 9. CLI and HTTP parity --------------------------------------------------------------------


@pytest.mark.criterion(9, "CLI and HTTP return identical retrieval results")
def test_criterion_9_cli_http_parity(record_property, tmp_path, capsys, monkeypatch):
    monkeypatch.delenv("TSMEM_CONFIG", raising=False)
    store = tmp_path / "store"

    def cli(*args):
        with pytest.raises(SystemExit) as info:
            main(["--store", str(store), *args])
        out = capsys.readouterr()
        assert info.value.code == 0, out.err
        return out.out

    cli("ingest", str(FIXTURES / "transcript.jsonl"))
    cli("consolidate")
    config = EngineConfig()
    kwargs = config.memory_kwargs()
    memory = persistence.load(store, kwargs["completion"], kwargs["embedder"])
    client = TestClient(create_app(memory))
    queries = json.loads((FIXTURES / "parity_queries.json").read_text())
    mismatched = []
    for q in queries:
        via_cli = json.loads(cli("query", "--json", "--now", q["issued_at"], q["text"]))
        response = client.post("/v1/query", json={"text": q["text"], "issued_at": q["issued_at"]})
        assert response.status_code == 200
        if json.dumps(via_cli, sort_keys=True) != json.dumps(response.json(), sort_keys=True):
            mismatched.append(q["text"])
    record_property("detail", f"{len(queries) - len(mismatched)}/{len(queries)} identical")
    assert len(queries) == 20
    assert mismatched == []
