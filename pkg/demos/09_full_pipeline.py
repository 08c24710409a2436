#!/usr/bin/env python3
"""Whole-pipeline walkthrough on the shipped fixture corpus.

One config file drives caption fusion -> perplexity selection ->
instruction filters -> template rendering -> packing, all on stubs. Stages
are fingerprinted, so the second run is pure cache hits with byte-identical
artifacts.
"""

import hashlib
import shutil
import tempfile
from pathlib import Path

from vlmprep.pipeline import PipelineConfig, run_pipeline

FIXTURES = Path(__file__).parent.parent / "fixtures"


def digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()[:12]


with tempfile.TemporaryDirectory() as tmp:
    work = Path(tmp) / "run"
    shutil.copytree(FIXTURES, work, ignore=shutil.ignore_patterns("out", "__pycache__"))
    config = PipelineConfig.load(work / "pipeline.json")

    print("first run:")
    print(run_pipeline(config).render())

    print("\nsecond run:")
    print(run_pipeline(config).render())

    print("\nartifacts:")
    for name in ["captions_kept.jsonl", "conversations_filtered.jsonl", "rendered.jsonl", "pack_plan.json"]:
        print(f"  {name:<30} sha256 {digest(work / 'out' / name)}")
