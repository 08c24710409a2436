"""Caption fusion: merge each image's web caption with a VLM caption via an LLM.

Two steps per record: a VLM describes the image, then an LLM merges that
description with the original web caption into one fused caption. Prompts
are data, not code; the defaults below are editable config. Per-record
failures never abort a run, because web-scale caption corpora always contain
records that fail.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .clients import BackendError, ChatClient, ClientError, user_request
from .corpus import (
    CaptionRecord,
    DatasetManifest,
    load_samples,
    replace,
    write_corpus,
)

DEFAULT_VLM_CAPTION_PROMPT = "Describe this image in one detailed sentence."

DEFAULT_FUSION_PROMPT = (
    "Merge the two image captions below into a single fluent caption. Keep every "
    "factual detail that appears in either caption, drop noise and repetition, "
    "and reply with the merged caption only.\n"
    "Web caption: {original_caption}\n"
    "Model caption: {vlm_caption}"
)


class FusionError(Exception):
    pass


class EmptyResponseError(FusionError):
    pass


@dataclass(frozen=True)
class FusionPrompts:
    vlm_caption_prompt: str = DEFAULT_VLM_CAPTION_PROMPT
    fusion_prompt: str = DEFAULT_FUSION_PROMPT

    def __post_init__(self):
        for slot in ("{original_caption}", "{vlm_caption}"):
            if self.fusion_prompt.count(slot) != 1:
                raise FusionError(f"fusion_prompt must contain {slot} exactly once")

    @classmethod
    def load(cls, path: str | Path) -> "FusionPrompts":
        import json

        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(
            vlm_caption_prompt=data.get("vlm_caption_prompt", DEFAULT_VLM_CAPTION_PROMPT),
            fusion_prompt=data.get("fusion_prompt", DEFAULT_FUSION_PROMPT),
        )


def generate_vlm_caption(
    record: CaptionRecord,
    vlm: ChatClient,
    prompts: FusionPrompts,
    overwrite: bool = False,
) -> CaptionRecord:
    """Ask the VLM to describe the record's image; other fields stay untouched."""
    if record.vlm_caption is not None and not overwrite:
        return record
    text = vlm.complete(user_request(prompts.vlm_caption_prompt, image_ref=record.image_ref))
    if not text.strip():
        raise EmptyResponseError(f"VLM returned an empty caption for record {record.id}")
    return replace(record, vlm_caption=text)


def fuse_captions(record: CaptionRecord, llm: ChatClient, prompts: FusionPrompts) -> CaptionRecord:
    """Merge original and VLM captions; the LLM sees the two texts, not the image."""
    if record.vlm_caption is None:
        raise FusionError(f"record {record.id} has no vlm_caption to fuse")
    prompt = prompts.fusion_prompt.format(
        original_caption=record.original_caption, vlm_caption=record.vlm_caption
    )
    text = llm.complete(user_request(prompt))
    if not text.strip():
        raise EmptyResponseError(f"LLM returned an empty fusion for record {record.id}")
    return replace(record, fused_caption=text)


@dataclass
class FusionReport:
    fused: int = 0
    failures: list[tuple[str, str]] = field(default_factory=list)  # (record id, message)

    def failed_ids(self) -> list[str]:
        return [record_id for record_id, _ in self.failures]


def fuse_records(
    records: Iterable[CaptionRecord],
    vlm: ChatClient,
    llm: ChatClient,
    prompts: FusionPrompts = FusionPrompts(),
) -> tuple[list[CaptionRecord], FusionReport]:
    """Run both fusion steps over records, collecting per-record failures."""
    report = FusionReport()
    fused: list[CaptionRecord] = []
    for record in records:
        try:
            with_vlm = generate_vlm_caption(record, vlm, prompts)
            result = fuse_captions(with_vlm, llm, prompts)
        except (ClientError, FusionError, BackendError) as exc:
            report.failures.append((record.id, str(exc)))
            continue
        fused.append(result)
    report.fused = len(fused)
    return fused, report


def run_capfusion(
    manifest: DatasetManifest,
    vlm: ChatClient,
    llm: ChatClient,
    prompts: FusionPrompts,
    records_out: str | Path,
    manifest_out: str | Path,
    resume: bool = False,
) -> tuple[DatasetManifest, FusionReport]:
    """Fuse a whole caption manifest into a new one; ordering is preserved.

    In resume mode, records already present in the output file are kept and
    skipped, so an interrupted run picks up where it stopped.
    """
    if manifest.kind != "caption":
        raise FusionError(f"capfusion needs a caption manifest, got kind {manifest.kind!r}")
    records = load_samples(manifest)

    done: dict[str, CaptionRecord] = {}
    records_out = Path(records_out)
    if resume and records_out.exists():
        import json

        with records_out.open("r", encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    prev = CaptionRecord.from_dict(json.loads(line))
                    done[prev.id] = prev

    todo = [r for r in records if r.id not in done]
    fused, report = fuse_records(todo, vlm, llm, prompts)
    by_id = {r.id: r for r in fused}
    by_id.update(done)
    ordered = [by_id[r.id] for r in records if r.id in by_id]
    report.fused = len(ordered)

    out = write_corpus(
        ordered,
        name=f"{manifest.name}-fused",
        records_path=records_out,
        manifest_path=manifest_out,
        kind="caption",
    )
    return out, report
