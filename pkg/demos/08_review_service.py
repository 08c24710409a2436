#!/usr/bin/env python3
"""Human-verification queue walkthrough, exercising the real HTTP API.

The review service holds VLM-generated OCR annotations until a labeler
accepts, corrects, or discards each one. Claims and decisions are guarded by
optimistic versioning: a decision must present the version it saw, and a
concurrent mutation turns into a 409 instead of a silent overwrite.
"""

import tempfile
from pathlib import Path

from fastapi.testclient import TestClient

from vlmprep.builder import OcrTask
from vlmprep.review.service import create_app
from vlmprep.review.store import ReviewStore

with tempfile.TemporaryDirectory() as tmp:
    store = ReviewStore(Path(tmp) / "state")
    app = create_app(store, tokens={"tok-alice": "alice", "tok-bo": "bo"})
    http = TestClient(app)
    alice = {"Authorization": "Bearer tok-alice"}
    bo = {"Authorization": "Bearer tok-bo"}

    tasks = [
        OcrTask(id=f"ocr-{i}", image_ref=f"images/sign{i}.jpg", question="图中写了什么？",
                vlm_answer=f"第{i}块招牌的文字", review_status="queued").to_dict()
        for i in range(3)
    ]
    r = http.post("/queues/ocr/items", json={"tasks": tasks}, headers=alice)
    print("enqueue:", r.json())

    item = http.get("/queues/ocr/next", headers=alice).json()["item"]
    print(f"\nalice claimed {item['id']} v{item['version']}: {item['annotation']!r}")
    r = http.post(
        f"/items/{item['id']}/decision",
        json={"action": "accept", "expected_version": item["version"]},
        headers=alice,
    )
    print("accept ->", r.json()["item"]["status"])

    item = http.get("/queues/ocr/next", headers=bo).json()["item"]
    print(f"\nbo claimed {item['id']} v{item['version']}")
    stale = http.post(
        f"/items/{item['id']}/decision",
        json={"action": "accept", "expected_version": item["version"] + 1},
        headers=bo,
    )
    print(f"stale decision -> HTTP {stale.status_code} (no change, labeler re-syncs)")
    r = http.post(
        f"/items/{item['id']}/decision",
        json={"action": "correct", "expected_version": item["version"], "corrected_text": "修正后的文字"},
        headers=bo,
    )
    print("correct ->", r.json()["item"]["status"])

    item = http.get("/queues/ocr/next", headers=alice).json()["item"]
    http.post(
        f"/items/{item['id']}/decision",
        json={"action": "discard", "expected_version": item["version"]},
        headers=alice,
    )
    print(f"\nalice discarded {item['id']}")

    print("\nstats:", http.get("/queues/ocr/stats", headers=alice).json())
    export = http.get("/queues/ocr/export", headers=alice).json()
    print(f"export ({export['manifest']['counts']} verified):")
    for record in export["records"]:
        print(f"  {record['id']}: {record['turns'][-1]['content']!r} [{record['provenance']}]")
