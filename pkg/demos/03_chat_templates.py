#!/usr/bin/env python3
"""Chat template walkthrough.

Pre-training caption records render either as a bare continuation (image
tokens followed by the caption) or as a full conversation with a sampled
caption-request prompt. Image prefix/suffix tokens bracket the visual-token
placeholder; rendering is deterministic given (seed, index) and parses back
losslessly.
"""

from collections import Counter

from vlmprep.corpus import CaptionRecord
from vlmprep.templates import (
    PromptPool,
    TemplateConfig,
    parse_rendered,
    render,
    sample_prompt,
)

record = CaptionRecord(id="r1", image_ref="images/r1.jpg", original_caption="a cat on a sunlit mat")

continuation = TemplateConfig(kind="continuation")
conversation = TemplateConfig(kind="conversation")
pool = PromptPool()

print("continuation render:")
print(repr(render(record, continuation)))

print("\nconversation render:")
print(render(record, conversation, pool, seed=7, index=0))

parsed = parse_rendered(render(record, conversation, pool, seed=7, index=0), conversation)
print("parse-back recovers caption:", repr(parsed.caption))
print("parse-back recovers prompt: ", repr(parsed.prompt))

# Prompt sampling is uniform across indices and reproducible for a given seed.
counts = Counter(sample_prompt(pool, seed=7, index=i) for i in range(8000))
print("\nprompt pool usage over 8000 draws:")
for prompt, n in sorted(counts.items(), key=lambda kv: -kv[1]):
    print(f"  {n:5d}  {prompt}")
