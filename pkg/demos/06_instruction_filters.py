#!/usr/bin/env python3
"""Instruction-set filtering walkthrough, on the shipped fixtures.

Filter one: a judge flags samples with grammatical errors; flagged samples
are dropped (default, the stronger option) or rewritten. Filter two: a judge
answers each fixed-answer question with the image withheld; correct answers
mean the sample degenerates to pure text, so it is labeled (default) or
dropped.
"""

import tempfile
from pathlib import Path

from vlmprep.clients import ChatClient, StubBackend, load_client
from vlmprep.corpus import load_manifest, load_samples
from vlmprep.filters import apply_grammar_policy, filter_text_answerable

FIXTURES = Path(__file__).parent.parent / "fixtures"

judge = load_client(FIXTURES / "clients" / "stub_judge.json")


def correcting_judge(request):
    """Flags 'teh' and also rewrites the turns, so fix mode has material."""
    body = request.last_user_content().split("\n\n", 1)[-1]
    if "teh" not in body.lower():
        return "PASS"
    fixed_lines = [
        line.replace("teh", "the").replace("Teh", "The")
        for line in body.splitlines()
        if line.startswith(("user:", "assistant:"))
    ]
    return "FLAG\n" + "\n".join(fixed_lines)


with tempfile.TemporaryDirectory() as tmp:
    tmp = Path(tmp)

    grammar = load_manifest(FIXTURES / "grammar100.manifest.json")
    dropped, stats, decisions = apply_grammar_policy(
        grammar, judge, tmp / "g.jsonl", tmp / "g.manifest.json", policy="drop"
    )
    print(f"grammar drop: kept {stats.kept}/{stats.total} (retention {stats.retention:.0%})")

    fixed, stats, _ = apply_grammar_policy(
        grammar, ChatClient(StubBackend(responder=correcting_judge)),
        tmp / "f.jsonl", tmp / "f.manifest.json", policy="fix",
    )
    print(f"grammar fix:  kept {stats.kept}/{stats.total}, rewrote {stats.fixed}")

    answerable = load_manifest(FIXTURES / "answerable20.manifest.json")
    labeled, stats, _ = filter_text_answerable(
        answerable, judge, tmp / "l.jsonl", tmp / "l.manifest.json", action="label"
    )
    print(f"\nanswerable-without-image: labeled {stats.labeled}/{stats.total}")
    for sample in load_samples(labeled):
        if "answerable-without-image" in sample.labels:
            print(f"  labeled {sample.id}: {sample.turns[0].content}")

    print("\nsample audit decisions:")
    for decision in decisions[:3]:
        print(f"  {decision.sample_id}: {decision.filter} -> {decision.verdict}/{decision.action_taken}")
