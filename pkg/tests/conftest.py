from __future__ import annotations

from pathlib import Path

import pytest

from vlmprep.corpus import CaptionRecord, ConversationSample, Turn, write_corpus

FIXTURES = Path(__file__).parent.parent / "fixtures"


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


def make_caption(i: int, **overrides) -> CaptionRecord:
    record = CaptionRecord(
        id=f"cap-{i:03d}",
        image_ref=f"images/cap-{i:03d}.jpg",
        original_caption=f"caption number {i}",
    )
    for key, value in overrides.items():
        setattr(record, key, value)
    return record


def make_conversation(i: int, question: str = "What is shown?", answer: str = "A scene.", **overrides) -> ConversationSample:
    sample = ConversationSample(
        id=f"conv-{i:03d}",
        image_refs=[f"images/conv-{i:03d}.jpg"],
        turns=[Turn("user", question), Turn("assistant", answer)],
        dataset="test",
        category="general_qa",
    )
    for key, value in overrides.items():
        setattr(sample, key, value)
    return sample


def corpus_on_disk(tmp_path: Path, records: list, kind: str, name: str = "test", **manifest_kwargs):
    """Write records + manifest into tmp_path and return the manifest."""
    return write_corpus(
        records,
        name=name,
        records_path=tmp_path / f"{name}.jsonl",
        manifest_path=tmp_path / f"{name}.manifest.json",
        kind=kind,
        **manifest_kwargs,
    )
