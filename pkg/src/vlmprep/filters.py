"""Instruction-set quality filters.

Two judge-backed filters over conversation corpora: grammar-error filtering
with a drop-or-fix policy, and answerable-without-image detection for
datasets with fixed, definite answers. Judges return a machine-readable
verdict token on the first line so parsing stays deterministic; anything
unparseable keeps the sample (bias toward data retention). Every judged
sample leaves an audit record.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

from .clients import ChatClient, ClientError, user_request
from .corpus import (
    ConversationSample,
    DatasetManifest,
    Turn,
    load_samples,
    replace,
    write_corpus,
)

GRAMMAR_JUDGE_PROMPT = (
    "You are a strict grammar reviewer. Check the conversation below for "
    "grammatical errors.\n"
    "Reply PASS on the first line if every turn is grammatical.\n"
    "Reply FLAG on the first line if any turn has a grammatical error, then "
    "rewrite every user and assistant turn correctly, one per line, each "
    "formatted as 'role: corrected text'.\n\n{conversation}"
)

ANSWER_JUDGE_PROMPT = (
    "Answer the question below. Reply with only the answer, nothing else.\n\n{question}"
)


class FilterError(Exception):
    pass


class RefusalError(FilterError):
    """Raised when a filter is applied to a manifest outside its scope."""


@dataclass
class FilterDecision:
    sample_id: str
    filter: str  # "grammar" | "answerable_without_image"
    verdict: str  # "pass" | "flagged"
    action_taken: str  # "kept" | "dropped" | "fixed" | "labeled"
    judge_output: str

    def to_dict(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "filter": self.filter,
            "verdict": self.verdict,
            "action_taken": self.action_taken,
            "judge_output": self.judge_output,
        }


class DecisionLog:
    """Append-only record-per-line audit file; single writer."""

    def __init__(self, path: str | Path | None):
        self.path = Path(path) if path else None
        self.decisions: list[FilterDecision] = []
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)

    def append(self, decision: FilterDecision) -> None:
        self.decisions.append(decision)
        if self.path:
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(decision.to_dict(), ensure_ascii=False, sort_keys=True) + "\n")


def _format_conversation(sample: ConversationSample) -> str:
    return "\n".join(f"{t.role}: {t.content}" for t in sample.turns if t.role != "system")


@dataclass
class GrammarVerdict:
    verdict: str  # "pass" | "flagged"
    corrected_turns: list[Turn] | None
    raw: str
    parse_ok: bool = True


def detect_grammar(sample: ConversationSample, judge: ChatClient) -> GrammarVerdict:
    """Ask the judge for a PASS/FLAG verdict plus corrections when flagged.

    Garbage output (no recognizable verdict) conservatively keeps the sample.
    """
    raw = judge.complete(user_request(GRAMMAR_JUDGE_PROMPT.format(conversation=_format_conversation(sample))))
    lines = raw.strip().splitlines()
    head = lines[0].strip().upper() if lines else ""
    if head == "PASS":
        return GrammarVerdict(verdict="pass", corrected_turns=None, raw=raw)
    if head != "FLAG":
        return GrammarVerdict(verdict="pass", corrected_turns=None, raw=raw, parse_ok=False)

    non_system = [t for t in sample.turns if t.role != "system"]
    corrected: list[Turn] = []
    for line in lines[1:]:
        match = re.match(r"^(user|assistant):\s?(.*)$", line.strip())
        if match:
            corrected.append(Turn(match.group(1), match.group(2)))
    if len(corrected) != len(non_system) or any(
        c.role != t.role for c, t in zip(corrected, non_system)
    ):
        # Flagged but the rewrite is unusable; fix mode will keep the original.
        return GrammarVerdict(verdict="flagged", corrected_turns=None, raw=raw)
    system = [t for t in sample.turns if t.role == "system"]
    return GrammarVerdict(verdict="flagged", corrected_turns=system + corrected, raw=raw)


@dataclass
class FilterStats:
    total: int = 0
    kept: int = 0
    dropped: int = 0
    fixed: int = 0
    labeled: int = 0
    skipped: list[tuple[str, str]] = field(default_factory=list)
    judge_failures: list[tuple[str, str]] = field(default_factory=list)

    @property
    def retention(self) -> float:
        return self.kept / self.total if self.total else 1.0


def apply_grammar_policy(
    manifest: DatasetManifest,
    judge: ChatClient,
    records_out: str | Path,
    manifest_out: str | Path,
    policy: str = "drop",
    decisions_path: str | Path | None = None,
) -> tuple[DatasetManifest, FilterStats, list[FilterDecision]]:
    """Drop or fix flagged samples across a manifest; reports retention.

    Dropping flagged samples is the default policy; fix mode replaces their
    turns with the judge's rewrite and keeps everything.
    """
    if manifest.kind != "conversation":
        raise FilterError(f"grammar filtering needs a conversation manifest, got {manifest.kind!r}")
    if policy not in ("drop", "fix"):
        raise FilterError(f"unknown grammar policy {policy!r}")

    log = DecisionLog(decisions_path)
    stats = FilterStats()
    out: list[ConversationSample] = []
    for sample in load_samples(manifest):
        stats.total += 1
        try:
            verdict = detect_grammar(sample, judge)
        except ClientError as exc:
            stats.judge_failures.append((sample.id, str(exc)))
            out.append(sample)
            stats.kept += 1
            log.append(FilterDecision(sample.id, "grammar", "pass", "kept", f"judge error: {exc}"))
            continue
        if verdict.verdict == "pass":
            out.append(sample)
            stats.kept += 1
            log.append(FilterDecision(sample.id, "grammar", "pass", "kept", verdict.raw))
        elif policy == "drop":
            stats.dropped += 1
            log.append(FilterDecision(sample.id, "grammar", "flagged", "dropped", verdict.raw))
        else:  # fix
            if verdict.corrected_turns is not None:
                out.append(replace(sample, turns=verdict.corrected_turns))
                stats.fixed += 1
                stats.kept += 1
                log.append(FilterDecision(sample.id, "grammar", "flagged", "fixed", verdict.raw))
            else:
                out.append(sample)
                stats.kept += 1
                log.append(FilterDecision(sample.id, "grammar", "flagged", "kept", verdict.raw))

    new_manifest = write_corpus(
        out,
        name=f"{manifest.name}-grammar-{policy}",
        records_path=records_out,
        manifest_path=manifest_out,
        kind="conversation",
        strategy=manifest.strategy,
        fixed_answers=manifest.fixed_answers,
    )
    return new_manifest, stats, log.decisions


def normalize_answer(text: str) -> str:
    """Lowercase, trim, strip terminal punctuation, collapse whitespace."""
    out = text.strip().lower()
    out = re.sub(r"[\s]+", " ", out)
    out = re.sub(r"[.。!！?？;；:：,，]+$", "", out).strip()
    return out


_OPTION_RE = re.compile(r"^\(?([a-z])[\].):，,]?(?:\s|$)")


def answers_match(gold: str, predicted: str) -> bool:
    """Normalized exact match; multiple-choice compares by option letter."""
    g = normalize_answer(gold)
    p = normalize_answer(predicted)
    if len(g) == 1 and g.isalpha():
        if p == g:
            return True
        match = _OPTION_RE.match(p)
        return bool(match and match.group(1) == g)
    return g == p


def answer_without_image(
    sample: ConversationSample,
    judge: ChatClient,
    manifest: DatasetManifest,
    prompt: str = ANSWER_JUDGE_PROMPT,
) -> str:
    """Let the judge answer the question text with the image withheld."""
    if not manifest.fixed_answers:
        raise RefusalError(
            f"manifest {manifest.name!r} has fixed_answers=false; answerability "
            "filtering only applies to datasets with fixed and definite answers"
        )
    question = "\n".join(t.content for t in sample.user_turns())
    # No image_ref on purpose: the judge must answer from text alone.
    return judge.complete(user_request(prompt.format(question=question)))


def filter_text_answerable(
    manifest: DatasetManifest,
    judge: ChatClient,
    records_out: str | Path,
    manifest_out: str | Path,
    action: str = "label",
    decisions_path: str | Path | None = None,
) -> tuple[DatasetManifest, FilterStats, list[FilterDecision]]:
    """Label or drop samples the judge answers correctly without the image.

    Default action is label: dropping this data measurably hurts, since
    pure-text samples still help preserve the base LLM's ability.
    """
    if manifest.kind != "conversation":
        raise FilterError(f"answerability filtering needs a conversation manifest, got {manifest.kind!r}")
    if action not in ("label", "drop"):
        raise FilterError(f"unknown answerability action {action!r}")
    if not manifest.fixed_answers:
        raise RefusalError(
            f"manifest {manifest.name!r} has fixed_answers=false; answerability "
            "filtering only applies to datasets with fixed and definite answers"
        )

    log = DecisionLog(decisions_path)
    stats = FilterStats()
    out: list[ConversationSample] = []
    for sample in load_samples(manifest):
        stats.total += 1
        gold_turn = sample.last_assistant()
        if gold_turn is None or not gold_turn.content.strip():
            stats.skipped.append((sample.id, "no gold answer"))
            out.append(sample)
            stats.kept += 1
            continue
        try:
            predicted = answer_without_image(sample, judge, manifest)
        except ClientError as exc:
            stats.judge_failures.append((sample.id, str(exc)))
            out.append(sample)
            stats.kept += 1
            log.append(
                FilterDecision(sample.id, "answerable_without_image", "pass", "kept", f"judge error: {exc}")
            )
            continue
        if answers_match(gold_turn.content, predicted):
            if action == "label":
                labels = set(sample.labels) | {"answerable-without-image"}
                out.append(replace(sample, labels=labels))
                stats.labeled += 1
                stats.kept += 1
                log.append(
                    FilterDecision(sample.id, "answerable_without_image", "flagged", "labeled", predicted)
                )
            else:
                stats.dropped += 1
                log.append(
                    FilterDecision(sample.id, "answerable_without_image", "flagged", "dropped", predicted)
                )
        else:
            out.append(sample)
            stats.kept += 1
            log.append(FilterDecision(sample.id, "answerable_without_image", "pass", "kept", predicted))

    new_manifest = write_corpus(
        out,
        name=f"{manifest.name}-answerable-{action}",
        records_path=records_out,
        manifest_path=manifest_out,
        kind="conversation",
        strategy=manifest.strategy,
        fixed_answers=manifest.fixed_answers,
    )
    return new_manifest, stats, log.decisions
