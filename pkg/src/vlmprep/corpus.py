"""Data model, ingestion, persistence, and distribution reporting.

Every corpus flowing through the pipeline is a JSONL record file described by
a small JSON manifest (name, kind, record count, construction strategy). Two
record kinds exist: image-caption pre-training records and multi-turn
conversation samples.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

LANGUAGES = ("en", "zh")

# Closed category set for conversation samples. Configurable: pass your own
# set to validate()/distribution_report() if your taxonomy differs.
DEFAULT_CATEGORIES = frozenset(
    {
        "general_qa",
        "ocr",
        "caption",
        "chart",
        "math",
        "science",
        "grounding",
        "knowledge",
        "conversation",
    }
)

PROVENANCES = ("original", "translated", "vlm_generated", "human_verified")
MANIFEST_KINDS = ("caption", "conversation")
STRATEGIES = ("translate", "question_translate_vlm", "vlm_human_check")

ROLES = ("system", "user", "assistant")


class CorpusError(Exception):
    """Base error for manifest and record problems."""


class ManifestError(CorpusError):
    pass


class RecordError(CorpusError):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


@dataclass
class CaptionRecord:
    """One image-caption pre-training sample.

    ``original_caption`` is the raw web caption, ``vlm_caption`` the
    model-generated description of the referenced image, and
    ``fused_caption`` the merged result of the two.
    """

    id: str
    image_ref: str
    original_caption: str
    vlm_caption: str | None = None
    fused_caption: str | None = None
    perplexity: float | None = None
    language: str = "en"

    def validate(self) -> None:
        if not self.id:
            raise RecordError("caption record has empty id")
        if self.language not in LANGUAGES:
            raise RecordError(f"unknown language {self.language!r} on record {self.id}")
        if self.perplexity is not None:
            if not math.isfinite(self.perplexity) or self.perplexity <= 0:
                raise RecordError(
                    f"perplexity must be finite and > 0, got {self.perplexity!r} on record {self.id}"
                )
        if self.fused_caption is not None and self.vlm_caption is None:
            raise RecordError(f"record {self.id} has fused_caption but no vlm_caption")

    def to_dict(self) -> dict:
        out = {"id": self.id, "image_ref": self.image_ref, "original_caption": self.original_caption}
        if self.vlm_caption is not None:
            out["vlm_caption"] = self.vlm_caption
        if self.fused_caption is not None:
            out["fused_caption"] = self.fused_caption
        if self.perplexity is not None:
            out["perplexity"] = self.perplexity
        out["language"] = self.language
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "CaptionRecord":
        try:
            rec = cls(
                id=data["id"],
                image_ref=data["image_ref"],
                original_caption=data["original_caption"],
                vlm_caption=data.get("vlm_caption"),
                fused_caption=data.get("fused_caption"),
                perplexity=data.get("perplexity"),
                language=data.get("language", "en"),
            )
        except KeyError as exc:
            raise RecordError(f"caption record missing field {exc.args[0]!r}") from exc
        rec.validate()
        return rec


@dataclass(frozen=True)
class Turn:
    role: str
    content: str

    def to_dict(self) -> dict:
        return {"role": self.role, "content": self.content}

    @classmethod
    def from_dict(cls, data: dict) -> "Turn":
        return cls(role=data["role"], content=data["content"])


@dataclass
class ConversationSample:
    """A multi-turn instruction-tuning sample with image references."""

    id: str
    image_refs: list[str]
    turns: list[Turn]
    dataset: str
    category: str
    language: str = "en"
    labels: set[str] = field(default_factory=set)
    provenance: str = "original"

    def validate(self, categories: frozenset[str] = DEFAULT_CATEGORIES) -> None:
        if not self.id:
            raise RecordError("conversation sample has empty id")
        if self.category not in categories:
            raise RecordError(f"unknown category {self.category!r} on sample {self.id}")
        if self.language not in LANGUAGES:
            raise RecordError(f"unknown language {self.language!r} on sample {self.id}")
        if self.provenance not in PROVENANCES:
            raise RecordError(f"unknown provenance {self.provenance!r} on sample {self.id}")
        self._validate_turns()

    def _validate_turns(self) -> None:
        turns = list(self.turns)
        if turns and turns[0].role == "system":
            turns = turns[1:]
        # After the optional system turn, roles must alternate user/assistant.
        for i, turn in enumerate(turns):
            if turn.role not in ROLES:
                raise RecordError(f"unknown role {turn.role!r} on sample {self.id}")
            expected = "user" if i % 2 == 0 else "assistant"
            if turn.role != expected:
                raise RecordError(
                    f"sample {self.id}: turn {i} has role {turn.role!r}, expected {expected!r}"
                )

    def user_turns(self) -> list[Turn]:
        return [t for t in self.turns if t.role == "user"]

    def last_assistant(self) -> Turn | None:
        for turn in reversed(self.turns):
            if turn.role == "assistant":
                return turn
        return None

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "image_refs": list(self.image_refs),
            "turns": [t.to_dict() for t in self.turns],
            "dataset": self.dataset,
            "category": self.category,
            "language": self.language,
            "labels": sorted(self.labels),
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, data: dict, categories: frozenset[str] = DEFAULT_CATEGORIES) -> "ConversationSample":
        try:
            sample = cls(
                id=data["id"],
                image_refs=list(data.get("image_refs", [])),
                turns=[Turn.from_dict(t) for t in data["turns"]],
                dataset=data.get("dataset", ""),
                category=data["category"],
                language=data.get("language", "en"),
                labels=set(data.get("labels", [])),
                provenance=data.get("provenance", "original"),
            )
        except KeyError as exc:
            raise RecordError(f"conversation sample missing field {exc.args[0]!r}") from exc
        sample.validate(categories)
        return sample


@dataclass
class DatasetManifest:
    """Descriptor binding a record file to its kind, strategy, and count."""

    name: str
    records_path: str
    kind: str
    counts: int
    strategy: str | None = None
    fixed_answers: bool = False
    # Directory the manifest was loaded from; resolves a relative records_path.
    base_dir: Path | None = None

    def resolve_records_path(self) -> Path:
        path = Path(self.records_path)
        if not path.is_absolute() and self.base_dir is not None:
            path = self.base_dir / path
        return path

    def validate(self) -> None:
        if self.kind not in MANIFEST_KINDS:
            raise ManifestError(f"unknown manifest kind {self.kind!r}")
        if self.strategy is not None and self.strategy not in STRATEGIES:
            raise ManifestError(f"unknown strategy {self.strategy!r}")
        if self.counts < 0:
            raise ManifestError(f"negative count {self.counts}")

    def to_dict(self) -> dict:
        out = {
            "name": self.name,
            "records_path": self.records_path,
            "kind": self.kind,
            "counts": self.counts,
            "fixed_answers": self.fixed_answers,
        }
        if self.strategy is not None:
            out["strategy"] = self.strategy
        return out


def _record_from_dict(kind: str, data: dict, categories: frozenset[str] = DEFAULT_CATEGORIES):
    if kind == "caption":
        return CaptionRecord.from_dict(data)
    return ConversationSample.from_dict(data, categories)


def load_manifest(path: str | Path, verify_counts: bool = True) -> DatasetManifest:
    """Load and validate a manifest file, checking its record count on disk."""
    path = Path(path)
    if not path.exists():
        raise ManifestError(f"manifest file not found: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ManifestError(f"manifest {path} is not valid JSON: {exc}") from exc
    try:
        manifest = DatasetManifest(
            name=data["name"],
            records_path=data["records_path"],
            kind=data["kind"],
            counts=int(data["counts"]),
            strategy=data.get("strategy"),
            fixed_answers=bool(data.get("fixed_answers", False)),
            base_dir=path.parent,
        )
    except KeyError as exc:
        raise ManifestError(f"manifest {path} missing field {exc.args[0]!r}") from exc
    manifest.validate()
    records_path = manifest.resolve_records_path()
    if not records_path.exists():
        raise ManifestError(f"records file not found: {records_path}")
    if verify_counts:
        actual = _count_lines(records_path)
        if actual != manifest.counts:
            raise ManifestError(
                f"manifest {path} declares {manifest.counts} records "
                f"but {records_path} holds {actual}"
            )
    return manifest


def _count_lines(path: Path) -> int:
    count = 0
    with path.open("r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                count += 1
    return count


def stream_samples(
    manifest: DatasetManifest,
    strict: bool = True,
    skipped: list[tuple[int, str]] | None = None,
    categories: frozenset[str] = DEFAULT_CATEGORIES,
) -> Iterator[CaptionRecord | ConversationSample]:
    """Yield records in file order.

    A malformed line raises in strict mode; in lenient mode it is appended to
    ``skipped`` as ``(line_number, message)`` and the stream continues.
    """
    path = manifest.resolve_records_path()
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                data = json.loads(line)
                record = _record_from_dict(manifest.kind, data, categories)
            except (json.JSONDecodeError, RecordError, TypeError) as exc:
                if strict:
                    raise RecordError(str(exc), line=line_no) from exc
                if skipped is not None:
                    skipped.append((line_no, str(exc)))
                continue
            yield record


def load_samples(manifest: DatasetManifest, **kwargs) -> list:
    return list(stream_samples(manifest, **kwargs))


def write_samples(records: Iterable, path: str | Path) -> int:
    """Write records to a JSONL file atomically. Returns the record count."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            for record in records:
                fh.write(json.dumps(record.to_dict(), ensure_ascii=False, sort_keys=True))
                fh.write("\n")
                count += 1
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise
    return count


def write_manifest(manifest: DatasetManifest, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(
        json.dumps(manifest.to_dict(), ensure_ascii=False, indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    return path


def write_corpus(
    records: list,
    name: str,
    records_path: str | Path,
    manifest_path: str | Path,
    kind: str,
    strategy: str | None = None,
    fixed_answers: bool = False,
) -> DatasetManifest:
    """Write a record file plus its manifest and return the loaded manifest."""
    count = write_samples(records, records_path)
    manifest = DatasetManifest(
        name=name,
        records_path=str(Path(records_path).name),
        kind=kind,
        counts=count,
        strategy=strategy,
        fixed_answers=fixed_answers,
        base_dir=Path(records_path).parent,
    )
    manifest.validate()
    write_manifest(manifest, manifest_path)
    return manifest


@dataclass
class DistributionReport:
    """Per-category and per-language sample counts with percentages."""

    total: int
    category_counts: dict[str, int]
    language_counts: dict[str, int]

    def category_percentages(self) -> dict[str, float]:
        return self._percentages(self.category_counts)

    def language_percentages(self) -> dict[str, float]:
        return self._percentages(self.language_counts)

    def _percentages(self, counts: dict[str, int]) -> dict[str, float]:
        if self.total == 0:
            return {k: 0.0 for k in counts}
        return {k: 100.0 * v / self.total for k, v in counts.items()}

    def render(self) -> str:
        lines = [f"total samples: {self.total}", "", "by category:"]
        cat_pct = self.category_percentages()
        for name in sorted(self.category_counts):
            lines.append(f"  {name:<12} {self.category_counts[name]:>8}  {cat_pct[name]:6.2f}%")
        lines.append("")
        lines.append("by language:")
        lang_pct = self.language_percentages()
        for name in sorted(self.language_counts):
            lines.append(f"  {name:<12} {self.language_counts[name]:>8}  {lang_pct[name]:6.2f}%")
        return "\n".join(lines)


def missing_image_refs(manifest: DatasetManifest) -> list[str]:
    """Image refs that do not resolve to files, relative to the manifest dir.

    Missing images are a warning, not an error: images are referenced, never
    embedded, and text-only pipelines run without the assets.
    """
    base = manifest.base_dir or Path(".")
    missing = []
    for record in stream_samples(manifest):
        refs = [record.image_ref] if manifest.kind == "caption" else record.image_refs
        for ref in refs:
            path = Path(ref)
            if not (path if path.is_absolute() else base / path).exists():
                missing.append(ref)
    return missing


def distribution_report(
    manifests: list[DatasetManifest],
    categories: frozenset[str] = DEFAULT_CATEGORIES,
) -> DistributionReport:
    """Count every conversation sample exactly once across manifests."""
    category_counts: dict[str, int] = {}
    language_counts: dict[str, int] = {}
    total = 0
    for manifest in manifests:
        if manifest.kind != "conversation":
            raise ManifestError(
                f"distribution_report requires conversation manifests, got kind "
                f"{manifest.kind!r} from {manifest.name!r}"
            )
        for sample in stream_samples(manifest, categories=categories):
            total += 1
            category_counts[sample.category] = category_counts.get(sample.category, 0) + 1
            language_counts[sample.language] = language_counts.get(sample.language, 0) + 1
    return DistributionReport(total=total, category_counts=category_counts, language_counts=language_counts)


def replace(record, **changes):
    """dataclasses.replace that keeps our record types' mutable fields safe."""
    return dataclasses.replace(record, **changes)
