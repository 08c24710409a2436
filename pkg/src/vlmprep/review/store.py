"""Persistent review-queue state with optimistic concurrency.

Items move pending -> claimed -> accepted | corrected | discarded. Claiming
and deciding bump an item's version; a decision must present the version it
saw, and loses with a conflict error if anything mutated in between. All
mutations are serialized through an append-only event log (replayed on open,
optionally compacted into a snapshot), which doubles as the audit trail for
every human decision.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

from ..corpus import ConversationSample, DatasetManifest, Turn, write_corpus

STATUSES = ("pending", "claimed", "accepted", "corrected", "discarded")
ACTIONS = ("accept", "correct", "discard")
FINAL_STATUSES = ("accepted", "corrected", "discarded")


class ReviewError(Exception):
    pass


class NotFoundError(ReviewError):
    pass


class ValidationError(ReviewError):
    pass


class VersionConflictError(ReviewError):
    pass


class NothingToExportError(ReviewError):
    pass


@dataclass
class ReviewItem:
    id: str
    queue: str
    image_ref: str
    question: str
    annotation: str
    status: str = "pending"
    corrected_text: str | None = None
    labeler: str | None = None
    version: int = 0
    created_at: float = 0.0
    updated_at: float = 0.0

    def validate(self) -> None:
        if self.status not in STATUSES:
            raise ValidationError(f"unknown status {self.status!r}")
        if (self.corrected_text is not None) != (self.status == "corrected"):
            raise ValidationError(
                f"item {self.id}: corrected_text must be present iff status is corrected"
            )
        if self.status == "claimed" and not self.labeler:
            raise ValidationError(f"item {self.id}: claimed without a labeler")

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "queue": self.queue,
            "image_ref": self.image_ref,
            "question": self.question,
            "annotation": self.annotation,
            "status": self.status,
            "corrected_text": self.corrected_text,
            "labeler": self.labeler,
            "version": self.version,
            "created_at": self.created_at,
            "updated_at": self.updated_at,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ReviewItem":
        return cls(**data)


@dataclass
class EnqueueResult:
    added: int = 0
    duplicates: list[str] = field(default_factory=list)
    rejected: list[tuple[str, str]] = field(default_factory=list)


class ReviewStore:
    """Event-sourced queue state; safe for many concurrent callers."""

    def __init__(
        self,
        state_dir: str | Path,
        claim_timeout: float | None = None,
        clock: Callable[[], float] = time.time,
        snapshot_every: int = 200,
    ):
        self.state_dir = Path(state_dir)
        self.state_dir.mkdir(parents=True, exist_ok=True)
        self.claim_timeout = claim_timeout
        self.clock = clock
        self.snapshot_every = snapshot_every
        self._lock = threading.RLock()
        self._items: dict[str, ReviewItem] = {}
        self._queue_order: dict[str, list[str]] = {}
        self._events_applied = 0
        self._load()

    @property
    def _events_path(self) -> Path:
        return self.state_dir / "events.log"

    @property
    def _snapshot_path(self) -> Path:
        return self.state_dir / "snapshot.json"

    # -- persistence ------------------------------------------------------

    def _load(self) -> None:
        if self._snapshot_path.exists():
            snap = json.loads(self._snapshot_path.read_text(encoding="utf-8"))
            self._items = {k: ReviewItem.from_dict(v) for k, v in snap["items"].items()}
            self._queue_order = {k: list(v) for k, v in snap["queue_order"].items()}
            self._events_applied = int(snap["events_applied"])
        skip = self._events_applied
        if self._events_path.exists():
            seen = 0
            with self._events_path.open("r", encoding="utf-8") as fh:
                for line in fh:
                    if not line.strip():
                        continue
                    seen += 1
                    if seen <= skip:
                        continue
                    self._apply(json.loads(line))
                    self._events_applied += 1

    def _record(self, event: dict) -> None:
        # Caller holds the lock: append then apply, so disk state never lags memory.
        with self._events_path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(event, ensure_ascii=False, sort_keys=True) + "\n")
            fh.flush()
        self._apply(event)
        self._events_applied += 1
        if self.snapshot_every and self._events_applied % self.snapshot_every == 0:
            self.write_snapshot()

    def write_snapshot(self) -> None:
        with self._lock:
            snap = {
                "events_applied": self._events_applied,
                "items": {k: v.to_dict() for k, v in self._items.items()},
                "queue_order": self._queue_order,
            }
            tmp = self._snapshot_path.with_suffix(".tmp")
            tmp.write_text(json.dumps(snap, ensure_ascii=False, sort_keys=True), encoding="utf-8")
            tmp.replace(self._snapshot_path)

    def _apply(self, event: dict) -> None:
        op = event["op"]
        if op == "enqueue":
            item = ReviewItem.from_dict(event["item"])
            self._items[item.id] = item
            self._queue_order.setdefault(item.queue, []).append(item.id)
        elif op == "claim":
            item = self._items[event["id"]]
            item.status = "claimed"
            item.labeler = event["labeler"]
            item.version += 1
            item.updated_at = event["ts"]
        elif op == "decide":
            item = self._items[event["id"]]
            action = event["action"]
            item.status = {"accept": "accepted", "correct": "corrected", "discard": "discarded"}[action]
            item.corrected_text = event.get("corrected_text")
            item.version += 1
            item.updated_at = event["ts"]
        elif op == "expire":
            item = self._items[event["id"]]
            item.status = "pending"
            item.labeler = None
            item.version += 1
            item.updated_at = event["ts"]
        else:
            raise ReviewError(f"unknown event op {op!r}")

    # -- operations ---------------------------------------------------------

    def enqueue(self, queue: str, tasks: Iterable) -> EnqueueResult:
        """Persist tasks as pending items; idempotent by task id."""
        result = EnqueueResult()
        with self._lock:
            for task in tasks:
                task_id = task.id
                if not getattr(task, "vlm_answer", None):
                    result.rejected.append((task_id, "task has no vlm_answer"))
                    continue
                if task_id in self._items:
                    result.duplicates.append(task_id)
                    continue
                now = self.clock()
                item = ReviewItem(
                    id=task_id,
                    queue=queue,
                    image_ref=task.image_ref,
                    question=task.question,
                    annotation=task.vlm_answer,
                    created_at=now,
                    updated_at=now,
                )
                self._record({"op": "enqueue", "item": item.to_dict(), "ts": now})
                result.added += 1
        return result

    def _expire_stale(self, queue: str) -> None:
        if self.claim_timeout is None:
            return
        now = self.clock()
        for item_id in self._queue_order.get(queue, []):
            item = self._items[item_id]
            if item.status == "claimed" and now - item.updated_at > self.claim_timeout:
                self._record({"op": "expire", "id": item_id, "ts": now})

    def claim_next(self, queue: str, labeler: str) -> ReviewItem | None:
        """Atomically claim the oldest pending item for this labeler."""
        if not labeler:
            raise ValidationError("labeler id must not be empty")
        with self._lock:
            self._expire_stale(queue)
            for item_id in self._queue_order.get(queue, []):
                item = self._items[item_id]
                if item.status == "pending":
                    self._record({"op": "claim", "id": item_id, "labeler": labeler, "ts": self.clock()})
                    return self.get(item_id)
            return None

    def decide(
        self,
        item_id: str,
        action: str,
        expected_version: int,
        labeler: str,
        corrected_text: str | None = None,
    ) -> ReviewItem:
        """Finalize a claimed item; decisions are immutable afterwards."""
        with self._lock:
            item = self._items.get(item_id)
            if item is None:
                raise NotFoundError(f"no item {item_id!r}")
            if action not in ACTIONS:
                raise ValidationError(f"unknown action {action!r}")
            if action == "correct" and not corrected_text:
                raise ValidationError("correct requires corrected_text")
            if action != "correct" and corrected_text is not None:
                raise ValidationError(f"corrected_text is only allowed with correct, not {action!r}")
            if item.status in FINAL_STATUSES:
                raise ValidationError(f"item {item_id} already decided ({item.status})")
            if item.status != "claimed":
                raise ValidationError(f"item {item_id} is {item.status}, not claimed")
            if item.labeler != labeler:
                raise ValidationError(
                    f"item {item_id} is claimed by {item.labeler!r}, not {labeler!r}"
                )
            if item.version != expected_version:
                raise VersionConflictError(
                    f"item {item_id} is at version {item.version}, caller expected {expected_version}"
                )
            self._record(
                {
                    "op": "decide",
                    "id": item_id,
                    "action": action,
                    "corrected_text": corrected_text,
                    "ts": self.clock(),
                }
            )
            decided = self.get(item_id)
            decided.validate()
            return decided

    def get(self, item_id: str) -> ReviewItem:
        with self._lock:
            item = self._items.get(item_id)
            if item is None:
                raise NotFoundError(f"no item {item_id!r}")
            return ReviewItem.from_dict(item.to_dict())

    def stats(self, queue: str) -> dict[str, int]:
        with self._lock:
            counts = {status: 0 for status in STATUSES}
            for item_id in self._queue_order.get(queue, []):
                counts[self._items[item_id].status] += 1
            counts["total"] = len(self._queue_order.get(queue, []))
            return counts

    def queues(self) -> list[str]:
        with self._lock:
            return sorted(self._queue_order)

    def items(self, queue: str) -> list[ReviewItem]:
        with self._lock:
            return [self.get(i) for i in self._queue_order.get(queue, [])]

    # -- export -------------------------------------------------------------

    def export_verified(self, queue: str) -> list[ConversationSample]:
        """Accepted and corrected items as human-verified conversation samples.

        Enqueue order is preserved, so repeated exports of the same state are
        byte-identical.
        """
        with self._lock:
            samples = []
            for item_id in self._queue_order.get(queue, []):
                item = self._items[item_id]
                if item.status == "accepted":
                    answer = item.annotation
                elif item.status == "corrected":
                    answer = item.corrected_text or ""
                else:
                    continue
                samples.append(
                    ConversationSample(
                        id=item.id,
                        image_refs=[item.image_ref],
                        turns=[Turn("user", item.question), Turn("assistant", answer)],
                        dataset=f"review-{queue}",
                        category="ocr",
                        language="zh",
                        provenance="human_verified",
                    )
                )
            if not samples:
                raise NothingToExportError(f"queue {queue!r} has no accepted or corrected items")
            return samples

    def export_to_files(
        self, queue: str, records_out: str | Path, manifest_out: str | Path
    ) -> DatasetManifest:
        samples = self.export_verified(queue)
        return write_corpus(
            samples,
            name=f"review-{queue}-verified",
            records_path=records_out,
            manifest_path=manifest_out,
            kind="conversation",
            strategy="vlm_human_check",
        )
