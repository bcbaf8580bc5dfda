import numpy as np
import pytest

from coneboot.frames import DatasetManifest, ManifestEntry
from coneboot.review import (
    ReviewQueue,
    UnknownSequence,
    UnresolvedQueue,
    Verdict,
    append_verdict,
    build_queue,
    partition,
    read_verdict_log,
    record_verdict,
    sample_testsets,
    verdict_log_path,
)


def _manifest(n=6, split="unsorted"):
    return DatasetManifest(
        entries=[ManifestEntry(f"seq_{i:02d}", f"seq_{i:02d}", 4, split) for i in range(n)]
    )


def _verdict(sid, decision, t=0):
    return Verdict(sequence_id=sid, decision=decision, timestamp_ms=1000 + t, elapsed_ms=250)


class TestVerdict:
    def test_rejects_unknown_decision(self):
        with pytest.raises(ValueError):
            Verdict("a", "maybe", 0)

    def test_log_roundtrip(self, tmp_path):
        path = verdict_log_path(tmp_path)
        v1 = _verdict("seq_00", "good", 1)
        v2 = _verdict("seq_01", "bad", 2)
        append_verdict(path, v1)
        append_verdict(path, v2)
        assert read_verdict_log(path) == [v1, v2]

    def test_missing_log_is_empty(self, tmp_path):
        assert read_verdict_log(tmp_path / "verdicts.log") == []

    def test_malformed_log_raises(self, tmp_path):
        p = tmp_path / "verdicts.log"
        p.write_text("{broken\n")
        with pytest.raises(ValueError):
            read_verdict_log(p)


class TestBuildQueue:
    def test_empty_log_all_pending(self):
        q = build_queue(_manifest(), [])
        assert len(q.pending) == 6
        assert q.done == {}

    def test_full_log_empties_pending(self):
        m = _manifest(3)
        verdicts = [_verdict(f"seq_{i:02d}", "good", i) for i in range(3)]
        q = build_queue(m, verdicts)
        assert q.pending == []
        assert len(q.done) == 3

    def test_last_verdict_wins(self):
        m = _manifest(2)
        q = build_queue(m, [_verdict("seq_00", "good", 1), _verdict("seq_00", "bad", 2)])
        assert q.done["seq_00"].decision == "bad"
        assert q.pending == ["seq_01"]

    def test_unknown_ids_skipped(self):
        q = build_queue(_manifest(2), [_verdict("ghost", "good")])
        assert len(q.pending) == 2
        assert q.done == {}

    def test_replay_determinism(self):
        m = _manifest(5)
        verdicts = [_verdict(f"seq_{i:02d}", "good" if i % 2 else "bad", i) for i in range(4)]
        q1 = build_queue(m, verdicts)
        q2 = build_queue(m, list(verdicts))
        assert q1 == q2

    def test_test_sets_not_reviewable(self):
        m = _manifest(4)
        m.entries[0].split = "representative_test"
        q = build_queue(m, [])
        assert "seq_00" not in q.pending


class TestRecordVerdict:
    def test_moves_to_done(self):
        q = build_queue(_manifest(2), [])
        q2 = record_verdict(q, _verdict("seq_00", "good"))
        assert q2.pending == ["seq_01"]
        assert q2.done["seq_00"].decision == "good"
        # original untouched
        assert "seq_00" in q.pending

    def test_unknown_id_rejected(self):
        q = build_queue(_manifest(2), [])
        with pytest.raises(UnknownSequence):
            record_verdict(q, _verdict("ghost", "good"))

    def test_re_verdict_overwrites(self):
        q = build_queue(_manifest(1), [])
        q = record_verdict(q, _verdict("seq_00", "good", 1))
        q = record_verdict(q, _verdict("seq_00", "bad", 2))
        assert q.done["seq_00"].decision == "bad"
        assert q.pending == []


class TestPartition:
    def test_counts_and_splits(self):
        m = _manifest(10)
        q = build_queue(m, [])
        for i in range(10):
            q = record_verdict(q, _verdict(f"seq_{i:02d}", "good" if i < 4 else "bad", i))
        m2, good, rejected = partition(m, q)
        assert len(good) == 4 and len(rejected) == 6
        assert set(m2.ids_in_split("train_good")) == set(good)
        assert set(m2.ids_in_split("rejected")) == set(rejected)

    def test_all_good(self):
        m = _manifest(3)
        q = build_queue(m, [])
        for i in range(3):
            q = record_verdict(q, _verdict(f"seq_{i:02d}", "good", i))
        _, good, rejected = partition(m, q)
        assert rejected == []

    def test_partition_is_exhaustive_and_disjoint(self):
        m = _manifest(8)
        q = build_queue(m, [])
        rng = np.random.default_rng(0)
        for i in range(8):
            q = record_verdict(q, _verdict(f"seq_{i:02d}", str(rng.choice(["good", "bad"])), i))
        _, good, rejected = partition(m, q)
        assert set(good) | set(rejected) == {f"seq_{i:02d}" for i in range(8)}
        assert set(good) & set(rejected) == set()

    def test_unresolved_queue_blocks(self):
        m = _manifest(2)
        q = record_verdict(build_queue(m, []), _verdict("seq_00", "good"))
        with pytest.raises(UnresolvedQueue):
            partition(m, q)
        m2, good, rejected = partition(m, q, allow_partial=True)
        assert good == ["seq_00"] and rejected == []


class TestSampleTestsets:
    def _reviewed_manifest(self, n=30, good_every=3):
        m = _manifest(n)
        q = build_queue(m, [])
        for i in range(n):
            decision = "good" if i % good_every == 0 else "bad"
            q = record_verdict(q, _verdict(f"seq_{i:02d}", decision, i))
        m2, _, _ = partition(m, q)
        return m2

    def test_sampling_counts_and_disjointness(self):
        m = self._reviewed_manifest()
        m2 = sample_testsets(m, 5, seed=3, n_bad=4)
        rep = m2.ids_in_split("representative_test")
        bad = m2.ids_in_split("bad_mask_test")
        assert len(rep) == 5 and len(bad) == 4
        assert not set(rep) & set(bad)
        assert not set(rep) & set(m2.ids_in_split("train_good"))

    def test_bad_set_from_rejected_only(self):
        m = self._reviewed_manifest()
        rejected_before = set(m.ids_in_split("rejected"))
        m2 = sample_testsets(m, 5, seed=3, n_bad=4)
        assert set(m2.ids_in_split("bad_mask_test")) <= rejected_before

    def test_same_seed_same_selection(self):
        m = self._reviewed_manifest()
        a = sample_testsets(m, 5, seed=9, n_bad=4)
        b = sample_testsets(m, 5, seed=9, n_bad=4)
        assert a.ids_in_split("representative_test") == b.ids_in_split("representative_test")
        assert a.ids_in_split("bad_mask_test") == b.ids_in_split("bad_mask_test")

    def test_whole_pool_when_exact(self):
        m = _manifest(33)
        m2 = sample_testsets(m, 33, seed=1, n_bad=0)
        assert len(m2.ids_in_split("representative_test")) == 33
        assert m2.ids_in_split("bad_mask_test") == []

    def test_pool_too_small(self):
        m = self._reviewed_manifest(n=6)
        with pytest.raises(ValueError):
            sample_testsets(m, 33, seed=1)
        with pytest.raises(ValueError):
            sample_testsets(m, 2, seed=1, n_bad=33)

    def test_seed_recorded(self):
        m = self._reviewed_manifest()
        m2 = sample_testsets(m, 5, seed=42, n_bad=4)
        assert m2.seed_log["sample_testsets"] == 42


def test_queue_invariant():
    with pytest.raises(ValueError):
        ReviewQueue(pending=["a"], done={"a": _verdict("a", "good")})
