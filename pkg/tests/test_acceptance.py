"""Acceptance suite: one test per release criterion, at its stated tolerance.

Each test prints a single `[ACCEPT] <criterion>: PASS` line on success
(visible with `pytest -s` / in the captured output otherwise), so a full run
doubles as the acceptance report.
"""

from __future__ import annotations

import heapq
import json
import math
import random
import threading
import time

import numpy as np
import pytest

from vlmprep.clients import load_client
from vlmprep.corpus import CaptionRecord, load_manifest, load_samples
from vlmprep.filters import RefusalError, apply_grammar_policy, filter_text_answerable
from vlmprep.packing import (
    OversizedImageError,
    attention_equiv_check,
    block_mask,
    pack,
    projection_weights,
)
from vlmprep.perplexity import (
    NgramScorer,
    UniformScorer,
    filter_by_perplexity,
    perplexity,
    train_ngram,
)
from vlmprep.pipeline import PipelineConfig, run_pipeline
from vlmprep.review.store import ReviewStore, VersionConflictError
from vlmprep.soup import ParameterMap, SoupError, average
from vlmprep.templates import PromptPool, TemplateConfig, parse_rendered, render
from vlmprep.builder import OcrTask

from .conftest import FIXTURES, make_caption
from .test_pipeline import copy_fixture_tree, output_hashes


def report(name: str) -> None:
    print(f"[ACCEPT] {name}: PASS", flush=True)


def brute_force_perplexity(tokens: list[str], scorer: NgramScorer) -> float:
    product = 1.0
    for i, token in enumerate(tokens):
        ctx_len = min(i, scorer.order - 1)
        product *= scorer.token_prob(tokens[i - ctx_len:i], token)
    return product ** (-1.0 / len(tokens))


def test_perplexity_oracle():
    start = time.perf_counter()
    rng = random.Random(1)
    for vocab_size in (2, 4, 10):
        scorer = UniformScorer(vocab_size)
        for _ in range(100):
            tokens = [f"w{rng.randrange(vocab_size)}" for _ in range(rng.randint(1, 40))]
            assert abs(perplexity(tokens, scorer) - vocab_size) < 1e-12

    bigram = train_ngram([["a", "b", "a", "b"]], order=2)
    for seq in (["a", "b"], ["b", "a"], ["a", "a", "b"], ["b", "b", "a", "a"]):
        assert perplexity(seq, bigram) == pytest.approx(brute_force_perplexity(seq, bigram), abs=1e-9)
    # Hand-derived anchors: P(a|()) = 3/6, P(b|a) = 3/4.
    assert perplexity(["a", "b"], bigram) == pytest.approx(
        math.exp(-(math.log(3 / 6) + math.log(3 / 4)) / 2), abs=1e-9
    )

    elapsed = time.perf_counter() - start
    assert elapsed < 1.0, f"perplexity oracle took {elapsed:.2f}s"
    report("perplexity-oracle")


def test_twenty_percent_selection():
    rng = np.random.default_rng(2)
    scores = rng.permutation(10_000).astype(float) + 1.0  # distinct, positive
    records = [make_caption(i, perplexity=float(s)) for i, s in enumerate(scores)]
    kept = filter_by_perplexity(records, 0.2)
    assert len(kept) == math.ceil(0.2 * 10_000) == 2000
    # Independent oracle: heap-select the 2000 lowest scores.
    expected = {r.id for _, r in heapq.nsmallest(2000, ((r.perplexity, r) for r in records))}
    assert {r.id for r in kept} == expected

    fractions = [round(0.1 + 0.1 * k, 1) for k in range(10)]  # 0.1 .. 1.0
    for case in range(50):
        case_rng = np.random.default_rng(100 + case)
        n = int(case_rng.integers(1, 400))
        case_records = [
            make_caption(i, perplexity=float(s))
            for i, s in enumerate(case_rng.uniform(0.1, 50.0, size=n))
        ]
        previous: set[str] = set()
        for fraction in fractions:
            current = {r.id for r in filter_by_perplexity(case_records, fraction)}
            assert previous <= current
            previous = current
        assert previous == {r.id for r in case_records}
    report("twenty-percent-selection")


def test_packed_attention_equivalence():
    start = time.perf_counter()
    rng = np.random.default_rng(3)
    worst = 0.0
    controls = 0
    for batch in range(200):
        n_images = int(rng.integers(1, 9))
        counts = [(f"b{batch}-i{k}", int(rng.integers(1, 65))) for k in range(n_images)]
        dim = int(rng.choice([4, 8, 16, 32]))
        seq = pack(counts, capacity=8 * 64)[0]
        embeddings = [rng.standard_normal((count, dim)) for _, count in counts]
        diff = attention_equiv_check(embeddings, seq, seed=batch)
        worst = max(worst, diff)
        assert diff < 1e-6

        if n_images >= 2:
            # Corrupt the single most attractive cross-block position, so the
            # leak is not drowned by the softmax.
            wq, wk, _ = projection_weights(dim, seed=batch)
            packed = np.vstack(embeddings)
            scores = (packed @ wq) @ (packed @ wk).T / math.sqrt(dim)
            good = block_mask(seq)
            scores[good] = -np.inf
            i, j = np.unravel_index(np.argmax(scores), scores.shape)
            bad = good.copy()
            bad[i, j] = True
            corrupted = attention_equiv_check(embeddings, seq, seed=batch, mask=bad)
            assert corrupted > 1e-3, f"negative control too small: {corrupted}"
            controls += 1

    elapsed = time.perf_counter() - start
    assert controls > 100
    assert elapsed < 30.0, f"attention equivalence took {elapsed:.1f}s"
    report(f"packed-attention-equivalence (max diff {worst:.2e}, {elapsed:.1f}s)")


def test_packing_conservation():
    rng = random.Random(4)
    oversized_seen = 0
    boundary_seen = 0
    for case in range(1000):
        capacity = rng.randint(8, 256)
        n = rng.randint(1, 40)
        counts = [(f"c{case}-i{k}", rng.randint(1, capacity)) for k in range(n)]
        if case % 7 == 0:
            # Force an exact capacity fill at the front.
            counts[0] = (counts[0][0], capacity)
            boundary_seen += 1
        if case % 11 == 0:
            counts.insert(rng.randrange(len(counts) + 1), (f"c{case}-big", capacity + rng.randint(1, 50)))
            with pytest.raises(OversizedImageError):
                pack(counts, capacity)
            oversized_seen += 1
            continue
        seqs = pack(counts, capacity)
        assert sum(s.total for s in seqs) == sum(c for _, c in counts)
        assert [i for s in seqs for i, _ in s.entries] == [i for i, _ in counts]
        for s in seqs:
            s.validate()
            assert s.total <= capacity
            bounds = s.boundaries
            assert bounds[0] == 0 and bounds[-1] == s.total
            assert all(b > a for a, b in zip(bounds, bounds[1:]))
            assert len(bounds) == len(s.entries) + 1
    assert oversized_seen >= 90 and boundary_seen >= 140
    report("packing-conservation")


def test_grammar_filter_retention(tmp_path):
    manifest = load_manifest(FIXTURES / "grammar100.manifest.json")
    judge = load_client(FIXTURES / "clients" / "stub_judge.json")
    out, stats, decisions = apply_grammar_policy(
        manifest, judge,
        tmp_path / "accept_grammar.jsonl", tmp_path / "accept_grammar.manifest.json",
        policy="drop",
    )
    assert stats.total == 100
    assert out.counts == 85, f"expected exactly 85 retained, got {out.counts}"
    assert stats.retention == pytest.approx(0.85)
    assert len(decisions) == 100
    report("grammar-filter-retention (85/100)")


def test_answerability_filter(tmp_path):
    manifest = load_manifest(FIXTURES / "answerable20.manifest.json")
    judge = load_client(FIXTURES / "clients" / "stub_judge.json")
    expected_matches = {f"ans-{i:03d}" for i in range(7)}  # built to match the stub

    labeled_manifest, stats, _ = filter_text_answerable(
        manifest, judge, tmp_path / "l.jsonl", tmp_path / "l.manifest.json", action="label"
    )
    labeled = {
        s.id for s in load_samples(labeled_manifest) if "answerable-without-image" in s.labels
    }
    assert labeled == expected_matches
    assert labeled_manifest.counts == 20

    dropped_manifest, stats, _ = filter_text_answerable(
        manifest, judge, tmp_path / "d.jsonl", tmp_path / "d.manifest.json", action="drop"
    )
    surviving = {s.id for s in load_samples(dropped_manifest)}
    assert surviving == {f"ans-{i:03d}" for i in range(20)} - expected_matches

    open_manifest = load_manifest(FIXTURES / "grammar100.manifest.json")  # fixed_answers=false
    with pytest.raises(RefusalError):
        filter_text_answerable(open_manifest, judge, tmp_path / "x.jsonl", tmp_path / "x.manifest.json")
    report("answerability-filter (7 labeled = 7 dropped, refusal enforced)")


def test_soup_criteria():
    exact = average(
        [
            ParameterMap({"w": np.array([1.0, 3.0])}, source_id="a"),
            ParameterMap({"w": np.array([3.0, 5.0])}, source_id="b"),
        ]
    )
    assert exact.entries["w"].tolist() == [2.0, 4.0]

    rng = np.random.default_rng(6)
    for case in range(100):
        k = int(rng.integers(2, 6))
        shape = tuple(rng.integers(1, 5, size=int(rng.integers(1, 3))))
        maps = [
            ParameterMap({"w": rng.standard_normal(shape), "b": rng.standard_normal(3)}, source_id=f"m{i}")
            for i in range(k)
        ]
        forward = average(maps)
        backward = average(list(reversed(maps)))
        for name in forward.entries:
            assert (forward.entries[name] == backward.entries[name]).all()
        doubled = average([forward, ParameterMap(dict(forward.entries), source_id="dup")])
        for name in forward.entries:
            assert (doubled.entries[name] == forward.entries[name]).all()

    with pytest.raises(SoupError, match="'w'"):
        average(
            [
                ParameterMap({"w": np.zeros(2)}, source_id="a"),
                ParameterMap({"w": np.zeros(3)}, source_id="b"),
            ]
        )
    report("soup (exact mean, permutation, idempotence, named mismatch)")


def test_template_round_trip():
    rng = random.Random(8)
    alphabet = (
        "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789 .,!?:;-'\"()"
        "你好图中文字猫狗桥山海"
    )
    pool = PromptPool()
    configs = (TemplateConfig(kind="conversation"), TemplateConfig(kind="continuation"))
    for i in range(1000):
        caption = "".join(rng.choice(alphabet) for _ in range(rng.randint(1, 120))).strip() or "x"
        record = CaptionRecord(
            id=f"r{i}", image_ref=f"images/{i}.jpg", original_caption=caption
        )
        for config in configs:
            text = render(record, config, pool, seed=17, index=i)
            assert text.count(config.image_prefix_token) == 1
            assert text.count(config.image_suffix_token) == 1
            parsed = parse_rendered(text, config)
            assert parsed.caption == caption
            if config.kind == "conversation":
                assert parsed.prompt in pool.prompts
    report("template-round-trip (1000 records x 2 kinds)")


def test_end_to_end_stub_pipeline(tmp_path):
    start = time.perf_counter()
    work = copy_fixture_tree(tmp_path)
    config = PipelineConfig.load(work / "pipeline.json")
    summary = run_pipeline(config)
    by_name = {s.name: s for s in summary.stages}
    assert by_name["capfuse"].in_count == 50
    assert by_name["ppl"].out_count == 2000 // 200  # ceil(0.2 * 50) = 10
    assert by_name["filter"].in_count == 60
    first_hashes = output_hashes(work / "out")
    assert first_hashes

    rerun = run_pipeline(config)
    assert all(s.cache_hit for s in rerun.stages)
    assert output_hashes(work / "out") == first_hashes

    # A fresh directory reproduces the same bytes.
    work2 = copy_fixture_tree(tmp_path / "again")
    run_pipeline(PipelineConfig.load(work2 / "pipeline.json"))
    assert output_hashes(work2 / "out") == first_hashes

    elapsed = time.perf_counter() - start
    assert elapsed < 60.0, f"end-to-end took {elapsed:.1f}s"
    report(f"end-to-end-stub-pipeline ({elapsed:.1f}s, byte-identical rerun)")


def test_review_service_state_machine(tmp_path):
    store = ReviewStore(tmp_path / "state")
    tasks = [
        OcrTask(id=f"t-{i:03d}", image_ref=f"i{i}.jpg", question="q?", vlm_answer=f"a{i}",
                review_status="queued")
        for i in range(200)
    ]
    assert store.enqueue("q", tasks).added == 200

    decisions: list[tuple[str, int]] = []
    conflicts = [0]
    lock = threading.Lock()

    def labeler(name: str, seed: int):
        rng = random.Random(seed)
        while True:
            item = store.claim_next("q", name)
            if item is None:
                return
            action = rng.choice(["accept", "correct", "discard"])
            text = "corrected" if action == "correct" else None
            if rng.random() < 0.25:
                # Deliberately stale version: must conflict and change nothing.
                try:
                    store.decide(item.id, action, item.version + 3, name, corrected_text=text)
                    raise AssertionError("stale decide must conflict")
                except VersionConflictError:
                    with lock:
                        conflicts[0] += 1
            decided = store.decide(item.id, action, item.version, name, corrected_text=text)
            with lock:
                decisions.append((decided.id, decided.version))

    threads = [
        threading.Thread(target=labeler, args=(name, 1000 + i))
        for i, name in enumerate(["alice", "bo", "carol", "dan"])
    ]
    for t in threads:
        t.start()
    for t in threads:
        t.join()

    # No lost decisions, no double decisions, unique (item, version) pairs.
    assert len(decisions) == 200
    assert len({item_id for item_id, _ in decisions}) == 200
    assert len(set(decisions)) == 200
    assert conflicts[0] > 0

    # Only legal transitions in the event log.
    legal = {
        ("pending", "claimed"),
        ("claimed", "accepted"),
        ("claimed", "corrected"),
        ("claimed", "discarded"),
    }
    state: dict[str, str] = {}
    for line in (tmp_path / "state" / "events.log").read_text().splitlines():
        event = json.loads(line)
        if event["op"] == "enqueue":
            state[event["item"]["id"]] = "pending"
            continue
        target = (
            "claimed"
            if event["op"] == "claim"
            else {"accept": "accepted", "correct": "corrected", "discard": "discarded"}[event["action"]]
        )
        assert (state[event["id"]], target) in legal, (state[event["id"]], target)
        state[event["id"]] = target

    stats = store.stats("q")
    exported = store.export_verified("q")
    assert len(exported) == stats["accepted"] + stats["corrected"]
    report(
        f"review-state-machine (200 items, 4 labelers, {conflicts[0]} injected conflicts, "
        f"export {len(exported)} = accepted {stats['accepted']} + corrected {stats['corrected']})"
    )
