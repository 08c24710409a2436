"""End-to-end pipeline orchestration from one configuration file.

Stages run in dependency order over the caption and conversation corpora:
caption fusion -> perplexity scoring and selection -> optional bilingual
construction -> instruction filters -> template rendering and packing.
Each stage is resumable: when its outputs exist and the recorded input
fingerprint still matches, the stage is skipped and reported as a cache hit,
so a rerun of a finished pipeline touches no backend and reproduces
byte-identical artifacts.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from . import builder, capfusion, filters, packing, perplexity, templates
from .clients import ChatClient, load_client
from .corpus import load_manifest, load_samples, write_corpus


class PipelineError(Exception):
    pass


class StageError(PipelineError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"stage {stage!r} failed: {message}")
        self.stage = stage


@dataclass
class PipelineConfig:
    caption_manifest: str
    conversation_manifest: str
    output_root: str
    seeds: dict[str, int]
    clients: dict[str, str]  # role -> client config path
    image_sizes: str | None = None
    ppl: dict = field(default_factory=lambda: {"fraction": 0.2, "order": 2, "smoothing": 1.0})
    filters: dict = field(default_factory=lambda: {"grammar_policy": "drop", "answerable_action": "label"})
    template: dict = field(default_factory=dict)
    packer: dict = field(default_factory=lambda: {"patch_size": 14, "merge": 2, "capacity": 4096})
    prompts: dict = field(default_factory=dict)
    build: dict | None = None  # {"scope": "full"|"questions_only", "target_language": "zh"}
    base_dir: Path = Path(".")

    @classmethod
    def load(cls, path: str | Path) -> "PipelineConfig":
        path = Path(path)
        if not path.exists():
            raise PipelineError(f"pipeline config not found: {path}")
        data = json.loads(path.read_text(encoding="utf-8"))
        known = {f for f in cls.__dataclass_fields__ if f != "base_dir"}
        unknown = set(data) - known
        if unknown:
            raise PipelineError(f"unknown config keys: {', '.join(sorted(unknown))}")
        try:
            config = cls(**data, base_dir=path.parent)
        except TypeError as exc:
            raise PipelineError(f"bad pipeline config: {exc}") from exc
        config.validate()
        return config

    def resolve(self, p: str) -> Path:
        path = Path(p)
        return path if path.is_absolute() else self.base_dir / path

    def validate(self) -> None:
        for name in ("caption_manifest", "conversation_manifest"):
            ref = getattr(self, name)
            if not self.resolve(ref).exists():
                raise PipelineError(f"{name} does not exist: {ref}")
        for role, ref in self.clients.items():
            if not self.resolve(ref).exists():
                raise PipelineError(f"client config for {role!r} does not exist: {ref}")
        if self.image_sizes and not self.resolve(self.image_sizes).exists():
            raise PipelineError(f"image_sizes file does not exist: {self.image_sizes}")
        for key in ("prompt", "pack"):
            if key not in self.seeds:
                raise PipelineError(f"seeds.{key} must be set explicitly (no wall-clock defaults)")

    def config_hash(self) -> str:
        payload = {
            f: getattr(self, f)
            for f in sorted(self.__dataclass_fields__)
            if f != "base_dir"
        }
        blob = json.dumps(payload, sort_keys=True, ensure_ascii=False).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()


@dataclass
class StageResult:
    name: str
    in_count: int
    out_count: int
    cache_hit: bool
    outputs: list[str]
    notes: str = ""


@dataclass
class PipelineSummary:
    config_hash: str
    stages: list[StageResult] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "config_hash": self.config_hash,
            "stages": [
                {
                    "name": s.name,
                    "in": s.in_count,
                    "out": s.out_count,
                    "cache_hit": s.cache_hit,
                    "outputs": s.outputs,
                    "notes": s.notes,
                }
                for s in self.stages
            ],
        }

    def render(self) -> str:
        lines = [f"pipeline summary (config {self.config_hash[:12]})"]
        for s in self.stages:
            hit = " (cache hit)" if s.cache_hit else ""
            lines.append(f"  {s.name:<12} in={s.in_count:<6} out={s.out_count:<6}{hit}")
        return "\n".join(lines)


def _sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _relative_to(p: str, root: Path) -> str:
    try:
        return str(Path(p).relative_to(root))
    except ValueError:
        return p


class _StageRunner:
    """Fingerprint bookkeeping shared by all stages."""

    def __init__(self, config: PipelineConfig, out_root: Path):
        self.config = config
        self.out_root = out_root
        self.fingerprint_dir = out_root / ".fingerprints"
        self.fingerprint_dir.mkdir(parents=True, exist_ok=True)

    def fingerprint(self, inputs: list[Path]) -> str:
        parts = [self.config.config_hash()] + [_sha256_file(p) for p in sorted(inputs)]
        return hashlib.sha256("|".join(parts).encode("utf-8")).hexdigest()

    def is_fresh(self, stage: str, inputs: list[Path], outputs: list[Path]) -> bool:
        record = self.fingerprint_dir / f"{stage}.json"
        if not record.exists() or not all(p.exists() for p in outputs):
            return False
        saved = json.loads(record.read_text(encoding="utf-8"))
        return saved.get("fingerprint") == self.fingerprint(inputs)

    def mark(self, stage: str, inputs: list[Path]) -> None:
        record = self.fingerprint_dir / f"{stage}.json"
        record.write_text(
            json.dumps({"fingerprint": self.fingerprint(inputs)}) + "\n", encoding="utf-8"
        )


def _client(config: PipelineConfig, role: str) -> ChatClient:
    ref = config.clients.get(role)
    if ref is None:
        raise PipelineError(f"pipeline config has no client for role {role!r}")
    return load_client(config.resolve(ref))


def run_pipeline(config: PipelineConfig, stages: list[str] | None = None) -> PipelineSummary:
    """Run the configured stages in dependency order; halt downstream on failure."""
    out_root = config.resolve(config.output_root)
    out_root.mkdir(parents=True, exist_ok=True)
    runner = _StageRunner(config, out_root)
    summary = PipelineSummary(config_hash=config.config_hash())

    order = ["capfuse", "ppl", "build", "filter", "template", "pack"]
    wanted = [s for s in order if stages is None or s in stages]
    if config.build is None and "build" in wanted:
        wanted.remove("build")

    caption_manifest_path = config.resolve(config.caption_manifest)
    conversation_manifest_path = config.resolve(config.conversation_manifest)
    fused_manifest_path = out_root / "captions_fused.manifest.json"
    kept_manifest_path = out_root / "captions_kept.manifest.json"
    built_manifest_path = out_root / "conversations_built.manifest.json"
    grammar_manifest_path = out_root / "conversations_grammar.manifest.json"
    answerable_manifest_path = out_root / "conversations_filtered.manifest.json"
    rendered_path = out_root / "rendered.jsonl"
    plan_path = out_root / "pack_plan.json"

    for stage in wanted:
        try:
            if stage == "capfuse":
                result = _stage_capfuse(config, runner, caption_manifest_path, fused_manifest_path)
            elif stage == "ppl":
                result = _stage_ppl(config, runner, fused_manifest_path, kept_manifest_path)
            elif stage == "build":
                result = _stage_build(config, runner, conversation_manifest_path, built_manifest_path)
            elif stage == "filter":
                source = built_manifest_path if config.build is not None else conversation_manifest_path
                result = _stage_filter(
                    config, runner, source, grammar_manifest_path, answerable_manifest_path
                )
            elif stage == "template":
                result = _stage_template(config, runner, kept_manifest_path, rendered_path)
            else:
                result = _stage_pack(config, runner, kept_manifest_path, plan_path)
        except PipelineError:
            raise
        except Exception as exc:
            raise StageError(stage, str(exc)) from exc
        result.outputs = [_relative_to(p, out_root) for p in result.outputs]
        summary.stages.append(result)

    (out_root / "summary.json").write_text(
        json.dumps(summary.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return summary


def _stage_capfuse(config, runner, manifest_path: Path, out_manifest: Path) -> StageResult:
    manifest = load_manifest(manifest_path)
    records_out = out_manifest.parent / "captions_fused.jsonl"
    outputs = [records_out, out_manifest]
    if runner.is_fresh("capfuse", [manifest_path], outputs):
        out = load_manifest(out_manifest)
        return StageResult("capfuse", manifest.counts, out.counts, True, [str(p) for p in outputs])
    prompts = capfusion.FusionPrompts(**config.prompts.get("fusion", {}))
    out, report = capfusion.run_capfusion(
        manifest, _client(config, "vlm"), _client(config, "llm"), prompts, records_out, out_manifest
    )
    runner.mark("capfuse", [manifest_path])
    notes = f"{len(report.failures)} failures" if report.failures else ""
    return StageResult("capfuse", manifest.counts, out.counts, False, [str(p) for p in outputs], notes)


def _stage_ppl(config, runner, fused_manifest: Path, out_manifest: Path) -> StageResult:
    manifest = load_manifest(fused_manifest)
    records_out = out_manifest.parent / "captions_kept.jsonl"
    outputs = [records_out, out_manifest]
    if runner.is_fresh("ppl", [fused_manifest], outputs):
        out = load_manifest(out_manifest)
        return StageResult("ppl", manifest.counts, out.counts, True, [str(p) for p in outputs])
    options = config.ppl
    scorer = perplexity.train_scorer_on_manifest(
        manifest, order=int(options.get("order", 2)), smoothing=float(options.get("smoothing", 1.0))
    )
    records = perplexity.score_records(load_samples(manifest), scorer)
    kept = perplexity.filter_by_perplexity(records, float(options.get("fraction", 0.2)))
    out = write_corpus(kept, f"{manifest.name}-kept", records_out, out_manifest, kind="caption")
    runner.mark("ppl", [fused_manifest])
    return StageResult("ppl", manifest.counts, out.counts, False, [str(p) for p in outputs])


def _stage_build(config, runner, manifest_path: Path, out_manifest: Path) -> StageResult:
    manifest = load_manifest(manifest_path)
    records_out = out_manifest.parent / "conversations_built.jsonl"
    outputs = [records_out, out_manifest]
    if runner.is_fresh("build", [manifest_path], outputs):
        out = load_manifest(out_manifest)
        return StageResult("build", manifest.counts, out.counts, True, [str(p) for p in outputs])
    options = config.build or {}
    out, report = builder.translate_samples(
        manifest,
        _client(config, "llm"),
        records_out,
        out_manifest,
        target_language=options.get("target_language", "zh"),
        scope=options.get("scope", "full"),
    )
    runner.mark("build", [manifest_path])
    notes = f"{len(report.failures)} failures" if report.failures else ""
    return StageResult("build", manifest.counts, out.counts, False, [str(p) for p in outputs], notes)


def _stage_filter(
    config, runner, manifest_path: Path, grammar_manifest: Path, answerable_manifest: Path
) -> StageResult:
    manifest = load_manifest(manifest_path)
    grammar_records = grammar_manifest.parent / "conversations_grammar.jsonl"
    answer_records = answerable_manifest.parent / "conversations_filtered.jsonl"
    decisions = grammar_manifest.parent / "filter_decisions.jsonl"
    outputs = [grammar_records, grammar_manifest, answer_records, answerable_manifest]
    if runner.is_fresh("filter", [manifest_path], outputs):
        out = load_manifest(answerable_manifest)
        return StageResult("filter", manifest.counts, out.counts, True, [str(p) for p in outputs])
    policy = config.filters.get("grammar_policy", "drop")
    action = config.filters.get("answerable_action", "label")
    judge = _client(config, "judge")
    decisions.unlink(missing_ok=True)
    after_grammar, _, _ = filters.apply_grammar_policy(
        manifest, judge, grammar_records, grammar_manifest, policy=policy, decisions_path=decisions
    )
    if after_grammar.fixed_answers:
        out, _, _ = filters.filter_text_answerable(
            after_grammar, judge, answer_records, answerable_manifest,
            action=action, decisions_path=decisions,
        )
    else:
        # No fixed answers, answerability labeling does not apply; pass through.
        out = write_corpus(
            load_samples(after_grammar),
            after_grammar.name,
            answer_records,
            answerable_manifest,
            kind="conversation",
            strategy=after_grammar.strategy,
            fixed_answers=False,
        )
    runner.mark("filter", [manifest_path])
    return StageResult("filter", manifest.counts, out.counts, False, [str(p) for p in outputs])


def _stage_template(config, runner, kept_manifest: Path, rendered_path: Path) -> StageResult:
    manifest = load_manifest(kept_manifest)
    outputs = [rendered_path]
    if runner.is_fresh("template", [kept_manifest], outputs):
        return StageResult("template", manifest.counts, manifest.counts, True, [str(rendered_path)])
    template_config = templates.TemplateConfig.from_dict(config.template)
    pool_prompts = config.prompts.get("pool")
    pool = templates.PromptPool(tuple(pool_prompts)) if pool_prompts else templates.PromptPool()
    count = templates.render_manifest(
        manifest, template_config, pool, seed=config.seeds["prompt"], out_path=rendered_path
    )
    runner.mark("template", [kept_manifest])
    return StageResult("template", manifest.counts, count, False, [str(rendered_path)])


def _stage_pack(config, runner, kept_manifest: Path, plan_path: Path) -> StageResult:
    manifest = load_manifest(kept_manifest)
    if not config.image_sizes:
        raise PipelineError("pack stage requires an image_sizes file in the pipeline config")
    sizes_path = config.resolve(config.image_sizes)
    outputs = [plan_path]
    if runner.is_fresh("pack", [kept_manifest, sizes_path], outputs):
        plan = json.loads(plan_path.read_text(encoding="utf-8"))
        return StageResult("pack", manifest.counts, plan["sequence_count"], True, [str(plan_path)])
    sizes = {image_id: (w, h) for image_id, w, h in packing.load_sizes(sizes_path)}
    kept = load_samples(manifest)
    missing = [r.id for r in kept if r.image_ref not in sizes]
    if missing:
        raise PipelineError(f"image_sizes file lacks entries for: {', '.join(missing[:5])}")
    triples = [(r.image_ref, *sizes[r.image_ref]) for r in kept]
    packer = config.packer
    plan = packing.plan_from_sizes(
        triples,
        capacity=int(packer.get("capacity", 4096)),
        patch_size=int(packer.get("patch_size", 14)),
        merge=int(packer.get("merge", 2)),
    )
    packing.write_plan(plan, plan_path)
    runner.mark("pack", [kept_manifest, sizes_path])
    return StageResult("pack", manifest.counts, len(plan.sequences), False, [str(plan_path)])
