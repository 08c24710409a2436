"""Single command-line entrypoint for every pipeline capability."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import builder, capfusion, packing, perplexity, soup, templates, training_plan
from .clients import load_client
from .corpus import distribution_report, load_manifest, missing_image_refs, stream_samples
from .filters import apply_grammar_policy, filter_text_answerable
from .pipeline import PipelineConfig, StageError, run_pipeline


def _out_paths(out: str) -> tuple[Path, Path]:
    """An --out prefix X produces X.jsonl and X.manifest.json."""
    base = Path(out)
    return base.with_suffix(".jsonl"), base.with_suffix(".manifest.json")


def cmd_corpus_validate(args) -> int:
    manifest = load_manifest(args.manifest)
    skipped: list[tuple[int, str]] = []
    count = 0
    for _ in stream_samples(manifest, strict=args.strict, skipped=skipped):
        count += 1
    print(f"{manifest.name}: {count} valid records ({manifest.kind})")
    for line_no, message in skipped:
        print(f"  skipped line {line_no}: {message}")
    missing = missing_image_refs(manifest)
    if missing:
        shown = ", ".join(missing[:5])
        print(f"  warning: {len(missing)} image refs not found on disk (e.g. {shown})")
    return 1 if skipped else 0


def cmd_corpus_report(args) -> int:
    manifests = [load_manifest(p) for p in args.manifests]
    print(distribution_report(manifests).render())
    return 0


def cmd_capfuse_run(args) -> int:
    manifest = load_manifest(args.manifest)
    vlm = load_client(args.vlm_config)
    llm = load_client(args.llm_config)
    prompts = capfusion.FusionPrompts.load(args.prompts) if args.prompts else capfusion.FusionPrompts()
    records_out, manifest_out = _out_paths(args.out)
    out, report = capfusion.run_capfusion(
        manifest, vlm, llm, prompts, records_out, manifest_out, resume=args.resume
    )
    print(f"fused {out.counts}/{manifest.counts} records -> {manifest_out}")
    for record_id, message in report.failures:
        print(f"  failed {record_id}: {message}")
    return 0


def cmd_ppl_score(args) -> int:
    manifest = load_manifest(args.manifest)
    scorer = perplexity.train_scorer_on_manifest(
        manifest, order=args.order, smoothing=args.smoothing, source=args.source
    )
    records_out, manifest_out = _out_paths(args.out)
    out = perplexity.score_manifest(manifest, scorer, records_out, manifest_out, source=args.source)
    print(f"scored {out.counts} records -> {manifest_out}")
    return 0


def cmd_ppl_filter(args) -> int:
    manifest = load_manifest(args.manifest)
    records_out, manifest_out = _out_paths(args.out)
    out = perplexity.filter_manifest(manifest, args.fraction, records_out, manifest_out)
    print(f"kept {out.counts}/{manifest.counts} records (fraction {args.fraction}) -> {manifest_out}")
    return 0


def cmd_build_translate(args) -> int:
    manifest = load_manifest(args.manifest)
    llm = load_client(args.llm_config)
    records_out, manifest_out = _out_paths(args.out)
    out, report = builder.translate_samples(
        manifest, llm, records_out, manifest_out,
        target_language=args.language, scope=args.scope,
    )
    print(f"translated {report.converted} samples ({len(report.skipped)} skipped) -> {manifest_out}")
    return 0


def cmd_build_vlm_answer(args) -> int:
    manifest = load_manifest(args.manifest)
    vlm = load_client(args.vlm_config)
    records_out, manifest_out = _out_paths(args.out)
    out, report = builder.vlm_answer_samples(manifest, vlm, records_out, manifest_out)
    print(f"answered {report.converted} samples ({len(report.failures)} failures) -> {manifest_out}")
    return 0


def cmd_build_ocr_collect(args) -> int:
    from .review.store import ReviewStore

    images = [line.strip() for line in Path(args.images).read_text(encoding="utf-8").splitlines() if line.strip()]
    pool = builder.load_question_pool(args.questions) if args.questions else list(builder.DEFAULT_OCR_QUESTIONS)
    vlm = load_client(args.vlm_config)
    store = ReviewStore(args.state) if args.state else None
    tasks, report = builder.build_ocr_tasks(images, pool, vlm, seed=args.seed, store=store, queue=args.queue)
    if args.out:
        builder.write_tasks(tasks, args.out)
    where = f" (queued to {args.queue!r})" if store else ""
    print(f"built {len(tasks)} OCR tasks, {len(report.failures)} failures{where}")
    return 0


def cmd_filter_grammar(args) -> int:
    manifest = load_manifest(args.manifest)
    judge = load_client(args.judge_config)
    records_out, manifest_out = _out_paths(args.out)
    out, stats, _ = apply_grammar_policy(
        manifest, judge, records_out, manifest_out,
        policy=args.policy, decisions_path=args.decisions,
    )
    print(
        f"grammar[{args.policy}]: kept {stats.kept}/{stats.total} "
        f"(retention {stats.retention:.2f}) -> {manifest_out}"
    )
    return 0


def cmd_filter_answerable(args) -> int:
    manifest = load_manifest(args.manifest)
    judge = load_client(args.judge_config)
    records_out, manifest_out = _out_paths(args.out)
    out, stats, _ = filter_text_answerable(
        manifest, judge, records_out, manifest_out,
        action=args.action, decisions_path=args.decisions,
    )
    print(
        f"answerable[{args.action}]: labeled {stats.labeled}, dropped {stats.dropped}, "
        f"kept {stats.kept}/{stats.total} -> {manifest_out}"
    )
    return 0


def cmd_template_render(args) -> int:
    manifest = load_manifest(args.manifest)
    config_data = json.loads(Path(args.config).read_text(encoding="utf-8")) if args.config else {}
    config_data["kind"] = args.kind
    config = templates.TemplateConfig.from_dict(config_data)
    pool = templates.PromptPool.load(args.pool) if args.pool else templates.PromptPool()
    count = templates.render_manifest(manifest, config, pool, seed=args.seed, out_path=args.out)
    print(f"rendered {count} records ({args.kind}) -> {args.out}")
    return 0


def cmd_pack_plan(args) -> int:
    sizes = packing.load_sizes(args.sizes)
    plan = packing.plan_from_sizes(
        sizes, capacity=args.capacity, patch_size=args.patch_size, merge=args.merge
    )
    packing.write_plan(plan, args.out)
    print(
        f"packed {len(sizes)} images into {len(plan.sequences)} sequences "
        f"({plan.total_tokens} tokens, capacity {args.capacity}) -> {args.out}"
    )
    return 0


def cmd_pack_verify(args) -> int:
    import numpy as np

    rng = np.random.default_rng(args.seed)
    counts = [(f"img{i}", int(rng.integers(1, 65))) for i in range(args.images)]
    seqs = packing.pack(counts, capacity=args.capacity)
    worst = 0.0
    for seq in seqs:
        embeddings = [rng.standard_normal((count, args.dim)) for _, count in seq.entries]
        diff = packing.attention_equiv_check(embeddings, seq, seed=args.seed)
        worst = max(worst, diff)
    print(f"max |packed - per-image| over {len(seqs)} sequences: {worst:.3e}")
    return 0 if worst < 1e-6 else 1


def cmd_soup(args) -> int:
    scores = json.loads(Path(args.scores).read_text(encoding="utf-8"))
    candidates = []
    for member in args.members:
        name = Path(member).name
        if name not in scores:
            print(f"error: no score for {name} in {args.scores}", file=sys.stderr)
            return 1
        candidates.append((member, float(scores[name])))
    chosen = soup.select_members([(ref, s) for ref, s in candidates], k=args.k)
    maps = [soup.load_checkpoint(ref) for ref in chosen]
    result = soup.average(maps)
    soup.save_checkpoint(result, args.out)
    print(soup.soup_report([(ref, dict(candidates)[ref]) for ref in chosen], result))
    print(f"wrote {args.out}")
    return 0


def cmd_review_serve(args) -> int:
    from .review.service import load_tokens, serve
    from .review.store import ReviewStore

    store = ReviewStore(args.state, claim_timeout=args.claim_timeout)
    serve(store, load_tokens(args.tokens), host=args.host, port=args.port)
    return 0


def cmd_review_enqueue(args) -> int:
    from .review.store import ReviewStore

    store = ReviewStore(args.state)
    tasks = builder.load_tasks(args.tasks)
    result = store.enqueue(args.queue, tasks)
    print(f"enqueued {result.added}, {len(result.duplicates)} duplicates, {len(result.rejected)} rejected")
    return 0


def cmd_review_export(args) -> int:
    from .review.store import ReviewStore

    store = ReviewStore(args.state)
    records_out, manifest_out = _out_paths(args.out)
    manifest = store.export_to_files(args.queue, records_out, manifest_out)
    print(f"exported {manifest.counts} verified samples -> {manifest_out}")
    return 0


def cmd_validate(args) -> int:
    config = PipelineConfig.load(args.config)
    print(f"config OK (hash {config.config_hash()[:12]})")
    return 0


def cmd_run(args) -> int:
    config = PipelineConfig.load(args.config)
    try:
        summary = run_pipeline(config, stages=args.stages)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(summary.render())
    return 0


def cmd_plan(args) -> int:
    plan = training_plan.emit_training_plan(args.stage, packer_capacity=args.capacity)
    text = json.dumps(plan.to_dict(), indent=2, sort_keys=True)
    if args.out:
        training_plan.write_plan(plan, args.out)
        print(f"wrote {args.out}")
    else:
        print(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vlmprep", description="VLM data curation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="validate a pipeline config")
    p.add_argument("config")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("run", help="run the configured pipeline")
    p.add_argument("config")
    p.add_argument("--stages", nargs="*", default=None)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("plan", help="emit a training-plan manifest")
    p.add_argument("--stage", required=True, choices=["pretrain", "sft", "instruction_tune"])
    p.add_argument("--capacity", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_plan)

    corpus = sub.add_parser("corpus", help="manifest validation and reporting").add_subparsers(
        dest="subcommand", required=True
    )
    p = corpus.add_parser("validate")
    p.add_argument("manifest")
    p.add_argument("--lenient", dest="strict", action="store_false")
    p.set_defaults(func=cmd_corpus_validate)
    p = corpus.add_parser("report")
    p.add_argument("manifests", nargs="+")
    p.set_defaults(func=cmd_corpus_report)

    capfuse = sub.add_parser("capfuse", help="caption fusion").add_subparsers(
        dest="subcommand", required=True
    )
    p = capfuse.add_parser("run")
    p.add_argument("--manifest", required=True)
    p.add_argument("--vlm-config", required=True)
    p.add_argument("--llm-config", required=True)
    p.add_argument("--prompts", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--resume", action="store_true")
    p.set_defaults(func=cmd_capfuse_run)

    ppl = sub.add_parser("ppl", help="perplexity scoring and selection").add_subparsers(
        dest="subcommand", required=True
    )
    p = ppl.add_parser("score")
    p.add_argument("--manifest", required=True)
    p.add_argument("--scorer", default="ngram", choices=["ngram"])
    p.add_argument("--order", type=int, default=2)
    p.add_argument("--smoothing", type=float, default=1.0)
    p.add_argument("--source", default="fused_caption")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ppl_score)
    p = ppl.add_parser("filter")
    p.add_argument("--manifest", required=True)
    p.add_argument("--fraction", type=float, default=0.2)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ppl_filter)

    build = sub.add_parser("build", help="bilingual dataset construction").add_subparsers(
        dest="subcommand", required=True
    )
    p = build.add_parser("translate")
    p.add_argument("--manifest", required=True)
    p.add_argument("--llm-config", required=True)
    p.add_argument("--language", default="zh")
    p.add_argument("--scope", default="full", choices=["full", "questions_only"])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_translate)
    p = build.add_parser("vlm-answer")
    p.add_argument("--manifest", required=True)
    p.add_argument("--vlm-config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_vlm_answer)
    p = build.add_parser("ocr-collect")
    p.add_argument("--images", required=True, help="text file with one image ref per line")
    p.add_argument("--questions", default=None, help="JSON list of pool questions")
    p.add_argument("--vlm-config", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--state", default=None, help="review store directory to enqueue into")
    p.add_argument("--queue", default="ocr")
    p.add_argument("--out", default=None, help="also write tasks to this JSONL file")
    p.set_defaults(func=cmd_build_ocr_collect)

    filt = sub.add_parser("filter", help="instruction-set filters").add_subparsers(
        dest="subcommand", required=True
    )
    p = filt.add_parser("grammar")
    p.add_argument("--manifest", required=True)
    p.add_argument("--judge-config", required=True)
    p.add_argument("--policy", default="drop", choices=["drop", "fix"])
    p.add_argument("--decisions", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_filter_grammar)
    p = filt.add_parser("answerable")
    p.add_argument("--manifest", required=True)
    p.add_argument("--judge-config", required=True)
    p.add_argument("--action", default="label", choices=["label", "drop"])
    p.add_argument("--decisions", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_filter_answerable)

    template = sub.add_parser("template", help="chat template rendering").add_subparsers(
        dest="subcommand", required=True
    )
    p = template.add_parser("render")
    p.add_argument("--manifest", required=True)
    p.add_argument("--kind", required=True, choices=["conversation", "continuation"])
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--config", default=None, help="template config JSON")
    p.add_argument("--pool", default=None, help="prompt pool JSON list")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_template_render)

    pk = sub.add_parser("pack", help="sequence packing").add_subparsers(
        dest="subcommand", required=True
    )
    p = pk.add_parser("plan")
    p.add_argument("--sizes", required=True)
    p.add_argument("--capacity", type=int, default=4096)
    p.add_argument("--patch-size", type=int, default=14)
    p.add_argument("--merge", type=int, default=2)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pack_plan)
    p = pk.add_parser("verify")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--images", type=int, default=16)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--capacity", type=int, default=128)
    p.set_defaults(func=cmd_pack_verify)

    p = sub.add_parser("soup", help="checkpoint weight averaging")
    p.add_argument("--members", nargs="+", required=True)
    p.add_argument("--scores", required=True, help="JSON map of checkpoint filename -> score")
    p.add_argument("-k", "--k", dest="k", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_soup)

    review = sub.add_parser("review", help="human verification queue").add_subparsers(
        dest="subcommand", required=True
    )
    p = review.add_parser("serve")
    p.add_argument("--state", required=True)
    p.add_argument("--tokens", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8765)
    p.add_argument("--claim-timeout", type=float, default=None)
    p.set_defaults(func=cmd_review_serve)
    p = review.add_parser("enqueue")
    p.add_argument("--state", required=True)
    p.add_argument("--tasks", required=True)
    p.add_argument("--queue", default="ocr")
    p.set_defaults(func=cmd_review_enqueue)
    p = review.add_parser("export")
    p.add_argument("--state", required=True)
    p.add_argument("--queue", default="ocr")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_review_export)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # surface module errors as clean CLI failures
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
