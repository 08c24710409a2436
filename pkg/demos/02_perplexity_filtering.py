#!/usr/bin/env python3
"""Perplexity filtering walkthrough.

Perplexity(s) = exp(-(1/N) * sum log P(w_i | context)). Lower means the
scorer finds the text more fluent. The built-in scorer is a deterministic
add-one n-gram model; the selection step sorts ascending and keeps the
lowest fraction (default 20%).
"""

from vlmprep.corpus import CaptionRecord
from vlmprep.perplexity import (
    TokenSequence,
    UniformScorer,
    filter_by_perplexity,
    perplexity,
    tokenize,
    train_ngram,
)

# A uniform scorer over V tokens gives perplexity exactly V, a handy sanity anchor.
print("uniform V=4 ->", perplexity(["any", "tokens", "at", "all"], UniformScorer(4)))

corpus = [
    "a red cat sits on the mat",
    "a small dog runs in the park",
    "the cat and the dog play in the park",
    "a cat sleeps on the red mat",
]
scorer = train_ngram([tokenize(s) for s in corpus], order=2)

candidates = [
    "a red cat sits on the mat",        # in-distribution, fluent
    "the dog runs in the park",         # close to training text
    "cat park the on mat red a",        # scrambled
    "zebra quantum discount voucher",   # out of vocabulary
]
print("\nscores (ascending is better):")
scored = []
for text in candidates:
    score = perplexity(TokenSequence.from_text(text), scorer)
    scored.append((score, text))
    print(f"  {score:8.2f}  {text}")

records = [
    CaptionRecord(id=f"c{i}", image_ref=f"i{i}.jpg", original_caption=text, perplexity=score)
    for i, (score, text) in enumerate(scored)
]
kept = filter_by_perplexity(records, fraction=0.5)
print("\nkeep lowest 50%:")
for record in kept:
    print(f"  kept {record.id}: {record.original_caption}")
