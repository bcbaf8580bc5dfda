"""Backend state for the fast in/out mask sorting step.

Verdicts are append-only JSON lines at ``<root>/verdicts.log``; replaying
the log with last-verdict-wins semantics reconstructs the review state, so
undo is just a correcting append and restarts are free. Partitioning writes
the good/rejected splits back into the manifest, and the two hand-labeled
test sets are sampled seeded and reproducibly.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .frames import DatasetManifest, ManifestError

log = logging.getLogger(__name__)

DECISIONS = ("good", "bad")
LOG_NAME = "verdicts.log"


class UnknownSequence(KeyError):
    pass


class UnresolvedQueue(RuntimeError):
    pass


@dataclass
class Verdict:
    sequence_id: str
    decision: str
    timestamp_ms: int
    elapsed_ms: int = 0
    reviewer: str = "local"

    def __post_init__(self) -> None:
        if self.decision not in DECISIONS:
            raise ValueError(f"decision must be one of {DECISIONS}, got {self.decision!r}")


@dataclass
class ReviewQueue:
    pending: list[str] = field(default_factory=list)
    done: dict[str, Verdict] = field(default_factory=dict)

    def __post_init__(self) -> None:
        overlap = set(self.pending) & set(self.done)
        if overlap:
            raise ValueError(f"sequences both pending and done: {sorted(overlap)}")

    @property
    def total(self) -> int:
        return len(self.pending) + len(self.done)


def verdict_log_path(root: str | os.PathLike) -> Path:
    return Path(root) / LOG_NAME


def append_verdict(path: str | os.PathLike, verdict: Verdict) -> None:
    """Durable append: the line is flushed and fsynced before returning."""
    record = {
        "sequence_id": verdict.sequence_id,
        "decision": verdict.decision,
        "timestamp_ms": verdict.timestamp_ms,
        "elapsed_ms": verdict.elapsed_ms,
        "reviewer": verdict.reviewer,
    }
    with open(path, "a") as fh:
        fh.write(json.dumps(record) + "\n")
        fh.flush()
        os.fsync(fh.fileno())


def read_verdict_log(path: str | os.PathLike) -> list[Verdict]:
    path = Path(path)
    if not path.exists():
        return []
    verdicts = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            doc = json.loads(line)
            verdicts.append(
                Verdict(
                    sequence_id=str(doc["sequence_id"]),
                    decision=str(doc["decision"]),
                    timestamp_ms=int(doc["timestamp_ms"]),
                    elapsed_ms=int(doc.get("elapsed_ms", 0)),
                    reviewer=str(doc.get("reviewer", "local")),
                )
            )
        except (json.JSONDecodeError, KeyError, ValueError) as exc:
            raise ValueError(f"malformed verdict at {path}:{lineno}: {exc}") from exc
    return verdicts


def reviewable_ids(manifest: DatasetManifest) -> list[str]:
    """Everything that is not already held out as a test set."""
    return [
        e.sequence_id
        for e in manifest.entries
        if e.split not in ("representative_test", "bad_mask_test")
    ]


def build_queue(manifest: DatasetManifest, verdicts: list[Verdict]) -> ReviewQueue:
    """Replay a verdict log; last verdict per sequence wins. Verdicts for
    ids outside the manifest are reported and skipped."""
    under_review = reviewable_ids(manifest)
    known = set(under_review)
    done: dict[str, Verdict] = {}
    for v in verdicts:
        if v.sequence_id not in known:
            log.warning("verdict for unknown sequence %r skipped", v.sequence_id)
            continue
        done[v.sequence_id] = v
    pending = [sid for sid in under_review if sid not in done]
    return ReviewQueue(pending=pending, done=done)


def record_verdict(queue: ReviewQueue, verdict: Verdict) -> ReviewQueue:
    """Pure queue update; durability is the caller's job (append first)."""
    if verdict.sequence_id not in queue.pending and verdict.sequence_id not in queue.done:
        raise UnknownSequence(verdict.sequence_id)
    done = dict(queue.done)
    done[verdict.sequence_id] = verdict
    pending = [sid for sid in queue.pending if sid != verdict.sequence_id]
    return ReviewQueue(pending=pending, done=done)


def partition(
    manifest: DatasetManifest, queue: ReviewQueue, allow_partial: bool = False
) -> tuple[DatasetManifest, list[str], list[str]]:
    """Split reviewed sequences into train_good/rejected in the manifest."""
    if queue.pending and not allow_partial:
        raise UnresolvedQueue(f"{len(queue.pending)} sequences still pending (use allow_partial)")
    good = sorted(sid for sid, v in queue.done.items() if v.decision == "good")
    rejected = sorted(sid for sid, v in queue.done.items() if v.decision == "bad")
    entries = []
    for e in manifest.entries:
        if e.sequence_id in queue.done:
            split = "train_good" if queue.done[e.sequence_id].decision == "good" else "rejected"
            entries.append(replace(e, split=split))
        else:
            entries.append(e)
    reviewed = len(good) + len(rejected)
    fraction = len(good) / reviewed if reviewed else 0.0
    log.info("partition: %d good / %d rejected (good fraction %.3f)", len(good), len(rejected), fraction)
    return DatasetManifest(entries=entries, seed_log=dict(manifest.seed_log)), good, rejected


def sample_testsets(
    manifest: DatasetManifest, n: int, seed: int, n_bad: int | None = None
) -> DatasetManifest:
    """Draw the representative test set from the whole dataset and the
    bad-mask test set from the rejected pool, seeded and disjoint. Sampled
    sequences leave train_good/rejected."""
    n_bad = n if n_bad is None else n_bad
    rng = np.random.default_rng(seed)
    all_ids = sorted(
        e.sequence_id for e in manifest.entries
        if e.split not in ("representative_test", "bad_mask_test")
    )
    if len(all_ids) < n:
        raise ValueError(f"dataset pool of {len(all_ids)} sequences is smaller than n={n}")
    representative = set(np.asarray(all_ids, dtype=object)[rng.choice(len(all_ids), n, replace=False)])
    rejected_pool = sorted(
        e.sequence_id for e in manifest.entries
        if e.split == "rejected" and e.sequence_id not in representative
    )
    if len(rejected_pool) < n_bad:
        raise ValueError(f"rejected pool of {len(rejected_pool)} sequences is smaller than n={n_bad}")
    bad = set(np.asarray(rejected_pool, dtype=object)[rng.choice(len(rejected_pool), n_bad, replace=False)])

    entries = []
    for e in manifest.entries:
        if e.sequence_id in representative:
            entries.append(replace(e, split="representative_test"))
        elif e.sequence_id in bad:
            entries.append(replace(e, split="bad_mask_test"))
        else:
            entries.append(e)
    seed_log = dict(manifest.seed_log)
    seed_log["sample_testsets"] = seed
    out = DatasetManifest(entries=entries, seed_log=seed_log)
    # manifest construction re-checks test-set disjointness
    if set(out.ids_in_split("representative_test")) & set(out.ids_in_split("bad_mask_test")):
        raise ManifestError("sampled test sets overlap")
    return out
