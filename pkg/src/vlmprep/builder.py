"""Bilingual dataset construction.

Three strategies, matched one-to-one with the construction table the
pipeline follows: (i) translate an existing conversation dataset wholesale,
(ii) translate questions only and have a strong VLM write fresh answers,
(iii) collect images, draw a question per image from an editable pool, have
a VLM answer, and queue everything for human verification. Strategy tags on
output manifests make the mapping assertable downstream.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .clients import ChatClient, ClientError, user_request
from .corpus import (
    ConversationSample,
    DatasetManifest,
    Turn,
    load_samples,
    replace,
    write_corpus,
)

LANGUAGE_NAMES = {"en": "English", "zh": "Chinese"}

# Answer options and numeric literals must survive translation verbatim:
# the translated QA datasets keep their fixed options.
DEFAULT_TRANSLATION_PROMPT = (
    "Translate the following text into {language}. Keep any answer option "
    "letters (A/B/C/D), numbers, and proper nouns exactly as they are. "
    "Reply with the translation only.\n\n{text}"
)

DEFAULT_VLM_ANSWER_PROMPT = "{question}"

# Placeholder OCR question pool. These defaults are editable stand-ins, not
# verbatim production prompts; ship your own pool file for real runs.
DEFAULT_OCR_QUESTIONS = (
    "请识别图中的所有文字。",
    "请把图片中的文字逐行转写出来。",
    "图中写了什么？请完整输出。",
    "请提取这张图片里的全部文本内容。",
)


class BuilderError(Exception):
    pass


class StrategyError(BuilderError):
    pass


@dataclass
class OcrTask:
    id: str
    image_ref: str
    question: str
    vlm_answer: str | None = None
    review_status: str = "unreviewed"

    def validate(self) -> None:
        if not self.question:
            raise BuilderError(f"OCR task {self.id} has an empty question")
        if self.review_status == "queued" and not self.vlm_answer:
            raise BuilderError(f"OCR task {self.id} queued without a VLM answer")

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "image_ref": self.image_ref,
            "question": self.question,
            "vlm_answer": self.vlm_answer,
            "review_status": self.review_status,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "OcrTask":
        return cls(
            id=data["id"],
            image_ref=data["image_ref"],
            question=data["question"],
            vlm_answer=data.get("vlm_answer"),
            review_status=data.get("review_status", "unreviewed"),
        )


@dataclass
class BuildReport:
    converted: int = 0
    skipped: list[tuple[str, str]] = field(default_factory=list)  # (id, notice)
    failures: list[tuple[str, str]] = field(default_factory=list)  # (id, error)


def _strategy_for(scope: str) -> str:
    return "translate" if scope == "full" else "question_translate_vlm"


def _check_strategy(manifest: DatasetManifest, wanted: str) -> None:
    if manifest.strategy is not None and manifest.strategy != wanted:
        raise StrategyError(
            f"manifest {manifest.name!r} declares strategy {manifest.strategy!r}; "
            f"this operation implements {wanted!r}"
        )


def _translate_text(llm: ChatClient, text: str, target_language: str, prompt: str) -> str:
    language = LANGUAGE_NAMES.get(target_language, target_language)
    return llm.complete(user_request(prompt.format(language=language, text=text)))


def translate_samples(
    manifest: DatasetManifest,
    llm: ChatClient,
    records_out: str | Path,
    manifest_out: str | Path,
    target_language: str = "zh",
    scope: str = "full",
    prompt: str = DEFAULT_TRANSLATION_PROMPT,
) -> tuple[DatasetManifest, BuildReport]:
    """Replace scoped turn contents with LLM translations.

    scope="full" translates user and assistant turns; scope="questions_only"
    translates user turns only (the VLM-answer step supplies answers later).
    Samples already in the target language are skipped with a notice.
    """
    if manifest.kind != "conversation":
        raise BuilderError(f"translation needs a conversation manifest, got {manifest.kind!r}")
    if scope not in ("full", "questions_only"):
        raise BuilderError(f"unknown translation scope {scope!r}")
    strategy = _strategy_for(scope)
    _check_strategy(manifest, strategy)

    report = BuildReport()
    out: list[ConversationSample] = []
    for sample in load_samples(manifest):
        if sample.language == target_language:
            report.skipped.append((sample.id, f"already language={target_language}"))
            out.append(sample)
            continue
        try:
            turns = []
            for turn in sample.turns:
                translate = turn.role == "user" or (scope == "full" and turn.role == "assistant")
                if translate:
                    turns.append(Turn(turn.role, _translate_text(llm, turn.content, target_language, prompt)))
                else:
                    turns.append(turn)
        except ClientError as exc:
            report.failures.append((sample.id, str(exc)))
            continue
        out.append(replace(sample, turns=turns, language=target_language, provenance="translated"))
        report.converted += 1

    new_manifest = write_corpus(
        out,
        name=f"{manifest.name}-{target_language}",
        records_path=records_out,
        manifest_path=manifest_out,
        kind="conversation",
        strategy=strategy,
        fixed_answers=manifest.fixed_answers,
    )
    return new_manifest, report


def vlm_answer_samples(
    manifest: DatasetManifest,
    vlm: ChatClient,
    records_out: str | Path,
    manifest_out: str | Path,
    prompt: str = DEFAULT_VLM_ANSWER_PROMPT,
) -> tuple[DatasetManifest, BuildReport]:
    """Write a fresh VLM answer for every sample's final user question."""
    if manifest.kind != "conversation":
        raise BuilderError(f"VLM answering needs a conversation manifest, got {manifest.kind!r}")
    _check_strategy(manifest, "question_translate_vlm")

    report = BuildReport()
    out: list[ConversationSample] = []
    for sample in load_samples(manifest):
        if not sample.image_refs:
            report.failures.append((sample.id, "sample has no image to answer about"))
            continue
        question = None
        for turn in reversed(sample.turns):
            if turn.role == "user":
                question = turn.content
                break
        if question is None:
            report.failures.append((sample.id, "sample has no user turn"))
            continue
        try:
            answer = vlm.complete(
                user_request(prompt.format(question=question), image_ref=sample.image_refs[0])
            )
        except ClientError as exc:
            report.failures.append((sample.id, str(exc)))
            continue
        turns = [t for t in sample.turns]
        if turns and turns[-1].role == "assistant":
            turns[-1] = Turn("assistant", answer)
        else:
            turns.append(Turn("assistant", answer))
        out.append(replace(sample, turns=turns, provenance="vlm_generated"))
        report.converted += 1

    new_manifest = write_corpus(
        out,
        name=f"{manifest.name}-vlm",
        records_path=records_out,
        manifest_path=manifest_out,
        kind="conversation",
        strategy="question_translate_vlm",
        fixed_answers=manifest.fixed_answers,
    )
    return new_manifest, report


def sample_question(pool: Sequence[str], seed: int, index: int) -> str:
    """Deterministic uniform question draw keyed on (seed, index)."""
    if not pool:
        raise BuilderError("question pool must not be empty")
    digest = hashlib.blake2b(f"ocr:{seed}:{index}".encode("utf-8"), digest_size=8).digest()
    return pool[int.from_bytes(digest, "big") % len(pool)]


def load_question_pool(path: str | Path) -> list[str]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(data, list) or not all(isinstance(q, str) for q in data):
        raise BuilderError(f"question pool file {path} must hold a JSON list of strings")
    return data


def build_ocr_tasks(
    image_list: Sequence[str],
    question_pool: Sequence[str],
    vlm: ChatClient,
    seed: int,
    store=None,
    queue: str = "ocr",
) -> tuple[list[OcrTask], BuildReport]:
    """Pair each image with a pooled question and a VLM answer, ready for review.

    Passing a review store enqueues every answered task; ``store`` stays
    duck-typed so the review service module is only imported when used.
    """
    if not question_pool:
        raise BuilderError("question pool must not be empty")
    report = BuildReport()
    tasks: list[OcrTask] = []
    for index, image_ref in enumerate(image_list):
        question = sample_question(question_pool, seed, index)
        ref_hash = hashlib.sha256(image_ref.encode("utf-8")).hexdigest()[:10]
        task = OcrTask(id=f"ocr-{index:05d}-{ref_hash}", image_ref=image_ref, question=question)
        try:
            answer = vlm.complete(user_request(question, image_ref=image_ref))
        except ClientError as exc:
            report.failures.append((task.id, str(exc)))
            continue
        task.vlm_answer = answer
        task.review_status = "queued"
        task.validate()
        tasks.append(task)
        report.converted += 1
    if store is not None and tasks:
        store.enqueue(queue, tasks)
    return tasks, report


def write_tasks(tasks: Sequence[OcrTask], path: str | Path) -> int:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for task in tasks:
            fh.write(json.dumps(task.to_dict(), ensure_ascii=False, sort_keys=True) + "\n")
    return len(tasks)


def load_tasks(path: str | Path) -> list[OcrTask]:
    tasks = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                tasks.append(OcrTask.from_dict(json.loads(line)))
    return tasks
