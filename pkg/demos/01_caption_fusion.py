#!/usr/bin/env python3
"""Caption fusion walkthrough.

Each pre-training record starts with a noisy web caption. A VLM describes
the image, then an LLM merges both texts into one fused caption. Everything
below runs on deterministic stubs, exactly the way the tests do, so there is
no network and no GPU anywhere.
"""

from vlmprep.capfusion import FusionPrompts, fuse_records, run_capfusion
from vlmprep.clients import ChatClient, StubBackend
from vlmprep.corpus import CaptionRecord, write_corpus

records = [
    CaptionRecord(id="r1", image_ref="images/r1.jpg",
                  original_caption="red cat BUY NOW cheap stock photo"),
    CaptionRecord(id="r2", image_ref="images/r2.jpg",
                  original_caption="bridge at dawn"),
]

# The VLM stub answers per image; the LLM stub merges the two labelled lines
# the default fusion prompt carries.
vlm = ChatClient(StubBackend(table={}, template="a photo of {image_ref} in soft light"))


def merge(request):
    lines = request.last_user_content().splitlines()
    original = next(l.split(": ", 1)[1] for l in lines if l.startswith("Web caption: "))
    vlm_text = next(l.split(": ", 1)[1] for l in lines if l.startswith("Model caption: "))
    return f"{original.split(' BUY')[0].strip()} — {vlm_text}"


llm = ChatClient(StubBackend(responder=merge))

fused, report = fuse_records(records, vlm, llm, FusionPrompts())
for record in fused:
    print(f"{record.id}:")
    print(f"  web caption:   {record.original_caption}")
    print(f"  model caption: {record.vlm_caption}")
    print(f"  fused caption: {record.fused_caption}")
print(f"fused {report.fused}, failed {len(report.failures)}")

# Whole-manifest runs work the same way and survive reruns via the cache.
import tempfile
from pathlib import Path

with tempfile.TemporaryDirectory() as tmp:
    tmp = Path(tmp)
    manifest = write_corpus(records, "demo", tmp / "caps.jsonl", tmp / "caps.manifest.json", kind="caption")
    vlm_stub = StubBackend(template="a photo of {image_ref}")
    cached_vlm = ChatClient(vlm_stub, cache_dir=tmp / "cache")
    run_capfusion(manifest, cached_vlm, llm, FusionPrompts(), tmp / "f.jsonl", tmp / "f.manifest.json")
    before = vlm_stub.call_count
    run_capfusion(manifest, cached_vlm, llm, FusionPrompts(), tmp / "f2.jsonl", tmp / "f2.manifest.json")
    print(f"backend calls: first run {before}, rerun {vlm_stub.call_count - before} (served from cache)")
