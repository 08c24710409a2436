"""Render caption records into pre-training text sequences.

Two template kinds: the legacy continuation form (image tokens followed
directly by the caption) and the conversation form (system / user /
assistant turns with a caption-request prompt sampled from a pool). Image
prefix and suffix tokens bracket a visual-token placeholder so the language
model can distinguish modalities; this module renders text scaffolding only
and never expands the placeholder into actual image tokens.

Every rendered conversation parses back losslessly into its parts, which is
the correctness contract the tests lean on.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from .corpus import CaptionRecord, DatasetManifest, load_samples

TEMPLATE_KINDS = ("continuation", "conversation")

DEFAULT_SYSTEM_TEXT = "You are a helpful assistant."

DEFAULT_PROMPT_POOL = (
    "Please describe this image.",
    "Describe this image.",
    "What does this image show?",
    "Give a short description of the image.",
    "Summarize the content of this image.",
    "Tell me what you see in this image.",
    "Provide a caption for this image.",
    "Write a description of this image.",
)


class TemplateError(Exception):
    pass


class TemplateParseError(TemplateError):
    pass


@dataclass(frozen=True)
class TemplateConfig:
    kind: str = "conversation"
    system_text: str = DEFAULT_SYSTEM_TEXT
    image_prefix_token: str = "<img>"
    image_suffix_token: str = "</img>"
    image_placeholder: str = "<image>"
    turn_begin: str = "<|im_start|>{role}\n"
    turn_end: str = "<|im_end|>\n"

    def __post_init__(self):
        if self.kind not in TEMPLATE_KINDS:
            raise TemplateError(f"unknown template kind {self.kind!r}")
        if self.image_prefix_token == self.image_suffix_token:
            raise TemplateError("image prefix and suffix tokens must differ")
        if "{role}" not in self.turn_begin:
            raise TemplateError("turn_begin must contain a {role} slot")

    def image_block(self) -> str:
        return self.image_prefix_token + self.image_placeholder + self.image_suffix_token

    @classmethod
    def from_dict(cls, data: dict) -> "TemplateConfig":
        return cls(**{k: v for k, v in data.items() if k in cls.__dataclass_fields__})


@dataclass(frozen=True)
class PromptPool:
    prompts: tuple[str, ...] = DEFAULT_PROMPT_POOL

    def __post_init__(self):
        if not self.prompts:
            raise TemplateError("prompt pool must not be empty")
        if len(set(self.prompts)) != len(self.prompts):
            raise TemplateError("prompt pool has duplicate entries")

    def __len__(self) -> int:
        return len(self.prompts)

    @classmethod
    def load(cls, path: str | Path) -> "PromptPool":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(prompts=tuple(data))


def sample_prompt(pool: PromptPool, seed: int, index: int) -> str:
    """Deterministic uniform draw from the pool keyed on (seed, index)."""
    digest = hashlib.blake2b(f"prompt:{seed}:{index}".encode("utf-8"), digest_size=8).digest()
    return pool.prompts[int.from_bytes(digest, "big") % len(pool.prompts)]


def _caption_source(record: CaptionRecord, source: str) -> str:
    if source == "fused":
        text = record.fused_caption
    elif source == "original":
        text = record.original_caption
    elif source == "auto":
        text = record.fused_caption if record.fused_caption is not None else record.original_caption
    else:
        raise TemplateError(f"unknown caption source {source!r}")
    if not text:
        raise TemplateError(f"record {record.id} has no {source} caption to render")
    return text


def render(
    record: CaptionRecord,
    config: TemplateConfig,
    pool: PromptPool | None = None,
    seed: int = 0,
    index: int = 0,
    source: str = "auto",
) -> str:
    """Render one caption record; deterministic given (record, config, pool, seed, index)."""
    caption = _caption_source(record, source)
    image_block = config.image_block()
    if config.kind == "continuation":
        return image_block + caption
    prompt = sample_prompt(pool or PromptPool(), seed, index)
    parts = [
        config.turn_begin.format(role="system"),
        config.system_text,
        config.turn_end,
        config.turn_begin.format(role="user"),
        image_block,
        prompt,
        config.turn_end,
        config.turn_begin.format(role="assistant"),
        caption,
        config.turn_end,
    ]
    return "".join(parts)


@dataclass
class ParsedRender:
    kind: str
    caption: str
    prompt: str | None = None
    system: str | None = None
    image_blocks: int = 1


def _split_once(text: str, marker: str, what: str) -> tuple[str, str]:
    idx = text.find(marker)
    if idx < 0:
        raise TemplateParseError(f"missing {what} marker {marker!r}")
    return text[:idx], text[idx + len(marker):]


def parse_rendered(text: str, config: TemplateConfig) -> ParsedRender:
    """Invert render(); raises TemplateParseError on any structural mismatch."""
    image_block = config.image_block()
    if config.kind == "continuation":
        if not text.startswith(image_block):
            raise TemplateParseError("continuation text does not start with the image block")
        caption = text[len(image_block):]
        if image_block in caption:
            raise TemplateParseError("more than one image block in continuation render")
        return ParsedRender(kind="continuation", caption=caption)

    remainder = text
    contents = {}
    for role in ("system", "user", "assistant"):
        begin = config.turn_begin.format(role=role)
        head, remainder = _split_once(remainder, begin, f"{role} begin")
        if head:
            raise TemplateParseError(f"unexpected text before {role} turn: {head!r}")
        contents[role], remainder = _split_once(remainder, config.turn_end, f"{role} end")
    if remainder:
        raise TemplateParseError(f"trailing text after assistant turn: {remainder!r}")

    user = contents["user"]
    if user.count(image_block) != 1:
        raise TemplateParseError("user turn must contain exactly one image block")
    if not user.startswith(image_block):
        raise TemplateParseError("user turn must start with the image block")
    prompt = user[len(image_block):]
    return ParsedRender(
        kind="conversation",
        caption=contents["assistant"],
        prompt=prompt,
        system=contents["system"],
    )


def render_manifest(
    manifest: DatasetManifest,
    config: TemplateConfig,
    pool: PromptPool,
    seed: int,
    out_path: str | Path,
    source: str = "auto",
) -> int:
    """Render every record to a JSONL file of {"id", "text"}; returns the count."""
    if manifest.kind != "caption":
        raise TemplateError(f"template rendering needs a caption manifest, got {manifest.kind!r}")
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    records = load_samples(manifest)
    lines = []
    for index, record in enumerate(records):
        text = render(record, config, pool, seed=seed, index=index, source=source)
        lines.append(json.dumps({"id": record.id, "text": text}, ensure_ascii=False, sort_keys=True))
    out_path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
    return len(lines)
