import threading
from datetime import date

import numpy as np
import pytest

from support import FailingCompletion, RecordCompletion, memory_fingerprint, random_transcript
from tsmem.memory import Memory, WriterBusy
from tsmem.model import ChatTurn, DimensionMismatch, Speaker, TimePoint, TimeRange
from tsmem.providers import EmbeddingProvider, MockCompletion, MockEmbedding, Unavailable


def user(tid, when, text, session="s1"):
    return ChatTurn(tid, session, TimePoint.parse(when), Speaker.USER, text)


TRANSCRIPT = [
    user("t1", "2023-01-10T09:00:00", "I live in Paris with my partner."),
    ChatTurn("t1a", "s1", TimePoint.parse("2023-01-10T09:01:00"), Speaker.ASSISTANT, "Paris is lovely."),
    user("t2", "2023-05-28T10:00:00", "I visited Tokyo on May 23."),
    user("t3", "2023-06-02T10:00:00", "I moved to Berlin last week, so now I live in Berlin.", session="s2"),
]


def test_ingest_report_and_state():
    mem = Memory(MockCompletion(), MockEmbedding(64))
    report = mem.ingest(TRANSCRIPT, sleep_check=False).to_json()
    assert report["turns_seen"] == 4 and report["turns_new"] == 4
    assert report["actions"]["INVALIDATE"] == 1
    assert report["actions"]["ADD"] >= 2
    assert report["extraction_errors"] == []
    assert mem.clock == TimePoint.of(2023, 6, 2)
    lives = [f for f in mem.tkg.facts_valid_in(TimeRange.single_day(date(2023, 6, 10)))
             if f.relation == "lives_in"]
    assert [mem.tkg.entities[f.object_id].name for f in lives] == ["Berlin"]
    assert mem.stats()["turns"] == 4


def test_replay_changes_nothing():
    mem = Memory(MockCompletion(), MockEmbedding(64))
    mem.ingest(TRANSCRIPT, sleep_check=False)
    before = memory_fingerprint(mem)
    report = mem.ingest(TRANSCRIPT, sleep_check=False).to_json()
    assert report["turns_new"] == 0
    assert report["actions"]["ADD"] == report["actions"]["INVALIDATE"] == report["actions"]["ENTITY_ADD"] == 0
    assert report["actions"]["UPDATE"] == 0
    assert report["actions"]["DUPLICATE"] >= 3
    assert memory_fingerprint(mem) == before


def test_reused_turn_id_with_new_text_is_rejected():
    mem = Memory(MockCompletion(), MockEmbedding(16))
    mem.ingest(TRANSCRIPT[:1], sleep_check=False)
    with pytest.raises(ValueError):
        mem.ingest([user("t1", "2023-01-10T09:00:00", "different")], sleep_check=False)


def test_timeless_fact_defaults_to_dialogue_day():
    mem = Memory(RecordCompletion({"I like jazz.": "FACT | user | likes | jazz |"}), MockEmbedding(16))
    mem.ingest([user("t1", "2023-03-04T12:00:00", "I like jazz.")], sleep_check=False)
    (fact,) = mem.tkg.facts.values()
    assert fact.valid_time == TimePoint.of(2023, 3, 4)


def test_bad_extraction_is_reported_not_fatal():
    mem = Memory(RecordCompletion({"x": "garbage", "I like jazz.": "FACT | user | likes | user |"}),
                 MockEmbedding(16))
    report = mem.ingest([user("t1", "2023-03-04T12:00:00", "x"),
                         user("t2", "2023-03-04T12:01:00", "I like jazz.")], sleep_check=False)
    assert report.extraction_errors == ["t1", "t2"]
    assert report.turns_new == 2 and len(mem.tkg.facts) == 0


def test_embedding_failure_leaves_no_turn():
    class Down(EmbeddingProvider):
        dimension = 16

        def embed(self, texts):
            raise Unavailable("embedding backend down")

    mem = Memory(MockCompletion(), Down())
    with pytest.raises(Unavailable):
        mem.ingest(TRANSCRIPT[:1])
    assert len(mem.turns) == 0 and mem.turn_vectors == {}


def test_dimension_mismatch():
    mem = Memory(MockCompletion(), MockEmbedding(16), dim=32)
    with pytest.raises(DimensionMismatch):
        mem.ingest(TRANSCRIPT[:1])


def test_completion_failure_during_ingest_propagates():
    mem = Memory(FailingCompletion(Unavailable("down"), tasks={"extraction"}), MockEmbedding(16))
    with pytest.raises(Unavailable):
        mem.ingest(TRANSCRIPT[:1])


def test_writer_lock_times_out():
    mem = Memory(MockCompletion(), MockEmbedding(16))
    with mem.writer():
        with pytest.raises(WriterBusy):
            mem.ingest(TRANSCRIPT, lock_timeout=0.05)
        with pytest.raises(WriterBusy):
            mem.consolidate(lock_timeout=0.05)


def test_queries_run_during_ingestion():
    import random

    mem = Memory(MockCompletion(), MockEmbedding(32))
    turns = random_transcript(random.Random(3), 60)
    mem.ingest(turns[:10], sleep_check=False)
    errors = []
    done = threading.Event()

    def reader():
        while not done.is_set():
            try:
                mem.query("Where did I travel last week?", TimePoint.of(2023, 6, 1))
            except Exception as exc:  # noqa: BLE001 - any failure is the finding
                errors.append(exc)
                return

    threads = [threading.Thread(target=reader) for _ in range(3)]
    for t in threads:
        t.start()
    for i in range(10, 60, 5):
        mem.ingest(turns[i:i + 5])
    done.set()
    for t in threads:
        t.join()
    assert errors == []
    mem.tkg.check_invariants()


def test_ingest_is_deterministic():
    import random

    turns = random_transcript(random.Random(5), 30)
    a, b = Memory(MockCompletion(), MockEmbedding(32)), Memory(MockCompletion(), MockEmbedding(32))
    a.ingest(turns)
    b.ingest(turns)
    assert memory_fingerprint(a) == memory_fingerprint(b)


def test_pool_contents():
    mem = Memory(MockCompletion(), MockEmbedding(16))
    mem.ingest(TRANSCRIPT, sleep_check=False)
    mem.consolidate()
    raw = mem.pool(include_durative=False)
    assert {p.ref_id for p in raw} == {"t1", "t1a", "t2", "t3"}
    assert next(p for p in raw if p.ref_id == "t1a").text == "assistant: Paris is lovely."
    assert len(mem.pool()) == len(raw) + len(mem.durative)
    assert all(abs(np.linalg.norm(p.vector) - 1) < 1e-9 for p in mem.pool())
