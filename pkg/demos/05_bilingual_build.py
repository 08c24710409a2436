#!/usr/bin/env python3
"""Bilingual dataset construction walkthrough.

Three strategies: translate a dataset wholesale, translate only the
questions and let a strong VLM answer them fresh, or collect images, ask a
pooled question per image, and queue the VLM's answers for human review.
"""

import tempfile
from pathlib import Path

from vlmprep.builder import DEFAULT_OCR_QUESTIONS, build_ocr_tasks, translate_samples, vlm_answer_samples
from vlmprep.clients import ChatClient, StubBackend
from vlmprep.corpus import ConversationSample, Turn, write_corpus
from vlmprep.review.store import ReviewStore

samples = [
    ConversationSample(
        id="s1", image_refs=["images/s1.jpg"],
        turns=[Turn("user", "What color is the car?"), Turn("assistant", "Red")],
        dataset="demo", category="general_qa",
    ),
    ConversationSample(
        id="s2", image_refs=["images/s2.jpg"],
        turns=[Turn("user", "How many birds are there?"), Turn("assistant", "Three")],
        dataset="demo", category="grounding",
    ),
]

translator = ChatClient(StubBackend(template="[zh]{tail}"))
vlm = ChatClient(StubBackend(template="看图回答：{image_ref}"))

with tempfile.TemporaryDirectory() as tmp:
    tmp = Path(tmp)
    manifest = write_corpus(samples, "demo", tmp / "en.jsonl", tmp / "en.manifest.json", kind="conversation")

    full, _ = translate_samples(manifest, translator, tmp / "zh.jsonl", tmp / "zh.manifest.json", scope="full")
    print("strategy i — full translation:")
    from vlmprep.corpus import load_samples

    for sample in load_samples(full):
        print(f"  {sample.id}: " + " / ".join(t.content for t in sample.turns))

    q_only, _ = translate_samples(
        manifest, translator, tmp / "q.jsonl", tmp / "q.manifest.json", scope="questions_only"
    )
    answered, _ = vlm_answer_samples(q_only, vlm, tmp / "a.jsonl", tmp / "a.manifest.json")
    print("\nstrategy ii — question translation + VLM answers:")
    for sample in load_samples(answered):
        print(f"  {sample.id} ({sample.provenance}): " + " / ".join(t.content for t in sample.turns))

    print("\nstrategy iii — internet OCR images + pooled questions + human review queue:")
    store = ReviewStore(tmp / "review")
    tasks, _ = build_ocr_tasks(
        ["images/street1.jpg", "images/menu2.jpg", "images/sign3.jpg"],
        list(DEFAULT_OCR_QUESTIONS),
        ChatClient(StubBackend(template="识别出的文字（{image_ref}）")),
        seed=42,
        store=store,
        queue="ocr",
    )
    for task in tasks:
        print(f"  {task.id}: Q={task.question!r} A={task.vlm_answer!r}")
    print("  queue stats:", store.stats("ocr"))
