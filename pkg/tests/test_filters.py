from __future__ import annotations

import json

import pytest

from vlmprep.clients import ChatClient, StubBackend
from vlmprep.corpus import load_manifest, load_samples
from vlmprep.filters import (
    FilterError,
    RefusalError,
    answer_without_image,
    answers_match,
    apply_grammar_policy,
    detect_grammar,
    filter_text_answerable,
    normalize_answer,
)

from .conftest import FIXTURES, corpus_on_disk, make_conversation


def teh_judge() -> ChatClient:
    """Flags any conversation containing 'teh'; corrections fix the typo."""

    def responder(request):
        content = request.last_user_content()
        body = content.split("\n\n", 1)[1] if "\n\n" in content else content
        if "teh" not in body.lower():
            return "PASS"
        fixed = [
            line.replace("teh", "the").replace("Teh", "The")
            for line in body.splitlines()
            if line.startswith(("user:", "assistant:"))
        ]
        return "FLAG\n" + "\n".join(fixed)

    return ChatClient(StubBackend(responder=responder))


def answer_judge(table: dict[str, str], default: str = "no idea") -> ChatClient:
    def responder(request):
        question = request.last_user_content().split("\n\n", 1)[-1]
        for needle, reply in table.items():
            if needle in question:
                return reply
        return default

    return ChatClient(StubBackend(responder=responder))


class TestDetectGrammar:
    def test_flagging(self):
        sample = make_conversation(0, question="Where is teh cat?", answer="On the mat.")
        verdict = detect_grammar(sample, teh_judge())
        assert verdict.verdict == "flagged"
        assert verdict.corrected_turns is not None
        assert verdict.corrected_turns[0].content == "Where is the cat?"

    def test_clean_pass(self):
        verdict = detect_grammar(make_conversation(0), teh_judge())
        assert verdict.verdict == "pass"

    def test_garbage_output_keeps_sample(self):
        judge = ChatClient(StubBackend(template="well, maybe?"))
        verdict = detect_grammar(make_conversation(0), judge)
        assert verdict.verdict == "pass"
        assert not verdict.parse_ok


class TestGrammarPolicy:
    def test_drop_on_shipped_fixture_retains_85(self, tmp_path):
        manifest = load_manifest(FIXTURES / "grammar100.manifest.json")
        out, stats, decisions = apply_grammar_policy(
            manifest, teh_judge(), tmp_path / "g.jsonl", tmp_path / "g.manifest.json", policy="drop"
        )
        assert stats.total == 100
        assert stats.kept == 85
        assert stats.retention == pytest.approx(0.85)
        assert out.counts == 85
        assert len(decisions) == 100

    def test_fix_keeps_everything_with_corrections(self, tmp_path):
        manifest = load_manifest(FIXTURES / "grammar100.manifest.json")
        out, stats, _ = apply_grammar_policy(
            manifest, teh_judge(), tmp_path / "g.jsonl", tmp_path / "g.manifest.json", policy="fix"
        )
        assert out.counts == 100
        assert stats.fixed == 15
        for sample in load_samples(out):
            for turn in sample.turns:
                assert "teh" not in turn.content.lower()

    def test_zero_flagged_full_retention(self, tmp_path):
        manifest = corpus_on_disk(tmp_path, [make_conversation(i) for i in range(4)], "conversation")
        _, stats, _ = apply_grammar_policy(
            manifest, teh_judge(), tmp_path / "o.jsonl", tmp_path / "o.manifest.json"
        )
        assert stats.retention == 1.0

    def test_decision_log_written(self, tmp_path):
        manifest = corpus_on_disk(
            tmp_path,
            [make_conversation(0, question="teh?"), make_conversation(1)],
            "conversation",
        )
        log_path = tmp_path / "decisions.jsonl"
        apply_grammar_policy(
            manifest, teh_judge(), tmp_path / "o.jsonl", tmp_path / "o.manifest.json",
            decisions_path=log_path,
        )
        rows = [json.loads(l) for l in log_path.read_text().splitlines()]
        assert len(rows) == 2
        assert {r["action_taken"] for r in rows} == {"dropped", "kept"}
        assert all(r["judge_output"] for r in rows)


class TestNormalization:
    @pytest.mark.parametrize(
        "gold,predicted,expected",
        [
            ("2", "2", True),
            ("B", "b.", True),
            ("B", "B", True),
            ("C", "(c) rivers flow downhill", True),
            ("blue", "Blue.", True),
            ("blue", "red", False),
            ("Paris", "  paris ", True),
            ("7", "7!", True),
            ("A", "banana", False),
            ("rome", "Rome", True),
            ("meeting at noon", "Meeting  at noon.", True),
        ],
    )
    def test_answers_match(self, gold, predicted, expected):
        assert answers_match(gold, predicted) is expected

    def test_normalize(self):
        assert normalize_answer("  The  Answer.  ") == "the answer"


class TestAnswerWithoutImage:
    def test_judge_sees_text_only(self, tmp_path):
        sample = make_conversation(0, question="1+1=?", answer="2")
        manifest = corpus_on_disk(tmp_path, [sample], "conversation", fixed_answers=True)
        captured = []

        def responder(request):
            captured.append(request)
            return "2"

        judge = ChatClient(StubBackend(responder=responder))
        assert answer_without_image(sample, judge, manifest) == "2"
        assert captured[0].image_ref() is None

    def test_refusal_on_open_ended_manifest(self, tmp_path):
        sample = make_conversation(0)
        manifest = corpus_on_disk(tmp_path, [sample], "conversation", fixed_answers=False)
        with pytest.raises(RefusalError, match="fixed_answers"):
            answer_without_image(sample, ChatClient(StubBackend(template="x")), manifest)

    def test_multi_choice_answer(self, tmp_path):
        sample = make_conversation(0, question="Pick one: (A) or (B)", answer="B")
        manifest = corpus_on_disk(tmp_path, [sample], "conversation", fixed_answers=True)
        judge = ChatClient(StubBackend(template="B"))
        assert answer_without_image(sample, judge, manifest) == "B"


class TestFilterTextAnswerable:
    def _judge(self):
        return answer_judge({"one plus one": "2", "capital of France": "paris"})

    def _manifest(self, tmp_path):
        samples = [
            make_conversation(0, question="What is one plus one?", answer="2"),
            make_conversation(1, question="What is the capital of France?", answer="Paris"),
            make_conversation(2, question="What is on the sign?", answer="STOP"),
        ]
        return corpus_on_disk(tmp_path, samples, "conversation", fixed_answers=True)

    def test_label_mode(self, tmp_path):
        manifest = self._manifest(tmp_path)
        out, stats, _ = filter_text_answerable(
            manifest, self._judge(), tmp_path / "o.jsonl", tmp_path / "o.manifest.json", action="label"
        )
        samples = {s.id: s for s in load_samples(out)}
        assert stats.labeled == 2
        assert "answerable-without-image" in samples["conv-000"].labels
        assert "answerable-without-image" in samples["conv-001"].labels
        assert samples["conv-002"].labels == set()
        assert out.counts == 3

    def test_drop_mode_removes_same_set(self, tmp_path):
        manifest = self._manifest(tmp_path)
        out, stats, _ = filter_text_answerable(
            manifest, self._judge(), tmp_path / "o.jsonl", tmp_path / "o.manifest.json", action="drop"
        )
        assert stats.dropped == 2
        assert [s.id for s in load_samples(out)] == ["conv-002"]

    def test_refused_without_fixed_answers(self, tmp_path):
        manifest = corpus_on_disk(tmp_path, [make_conversation(0)], "conversation", fixed_answers=False)
        with pytest.raises(RefusalError):
            filter_text_answerable(
                manifest, self._judge(), tmp_path / "o.jsonl", tmp_path / "o.manifest.json"
            )

    def test_sample_without_gold_skipped(self, tmp_path):
        no_gold = make_conversation(5, question="Hm?")
        no_gold.turns = no_gold.turns[:1]  # user turn only
        manifest = corpus_on_disk(tmp_path, [no_gold], "conversation", fixed_answers=True)
        out, stats, _ = filter_text_answerable(
            manifest, self._judge(), tmp_path / "o.jsonl", tmp_path / "o.manifest.json"
        )
        assert stats.skipped == [("conv-005", "no gold answer")]
        assert out.counts == 1


class TestOrderIndependence:
    def test_grammar_drop_then_label_equals_label_then_drop(self, tmp_path):
        samples = [
            make_conversation(0, question="What is one plus one?", answer="2"),
            make_conversation(1, question="Where is teh dog?", answer="There."),
            make_conversation(2, question="What is on the sign?", answer="STOP"),
            make_conversation(3, question="What is the capital of France?", answer="Paris"),
            make_conversation(4, question="Is teh sky grey?", answer="Yes."),
        ]
        judge_table = {"one plus one": "2", "capital of France": "Paris"}

        def run(first: str, base):
            judge_g = teh_judge()
            judge_a = answer_judge(judge_table)
            if first == "grammar":
                mid, _, _ = apply_grammar_policy(
                    base, judge_g, tmp_path / f"{first}-1.jsonl", tmp_path / f"{first}-1.m.json", policy="drop"
                )
                out, _, _ = filter_text_answerable(
                    mid, judge_a, tmp_path / f"{first}-2.jsonl", tmp_path / f"{first}-2.m.json", action="label"
                )
            else:
                mid, _, _ = filter_text_answerable(
                    base, judge_a, tmp_path / f"{first}-1.jsonl", tmp_path / f"{first}-1.m.json", action="label"
                )
                out, _, _ = apply_grammar_policy(
                    mid, judge_g, tmp_path / f"{first}-2.jsonl", tmp_path / f"{first}-2.m.json", policy="drop"
                )
            return {(s.id, tuple(sorted(s.labels))) for s in load_samples(out)}

        base = corpus_on_disk(tmp_path, samples, "conversation", fixed_answers=True)
        assert run("grammar", base) == run("answerable", base)


class TestAuditCompleteness:
    def test_every_judged_sample_has_a_decision(self, tmp_path):
        manifest = corpus_on_disk(
            tmp_path,
            [make_conversation(i, question=f"q {i} teh" if i % 3 == 0 else f"q {i}") for i in range(9)],
            "conversation",
        )
        _, stats, decisions = apply_grammar_policy(
            manifest, teh_judge(), tmp_path / "o.jsonl", tmp_path / "o.manifest.json"
        )
        assert len(decisions) == stats.total == 9
        assert stats.kept + stats.dropped == stats.total
