"""Perplexity scoring and keep-lowest-fraction corpus selection.

Perplexity of a token sequence is exp of the negative mean token
log-likelihood: exp(-(1/N) * sum_i log P(w_i | w_1..w_{i-1})). The scorer
behind P is pluggable; the built-in deterministic add-one n-gram scorer is
the desk-scale stand-in for a large language model, and a remote log-prob
backend can implement the same protocol.

Accumulation happens in log space so long sequences cannot underflow.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Protocol, Sequence

from .corpus import CaptionRecord, DatasetManifest, load_samples, replace, write_corpus


class PerplexityError(Exception):
    pass


# Words, per-character CJK fallback, then any other non-space symbol.
_TOKEN_RE = re.compile(r"[A-Za-z0-9]+(?:'[A-Za-z0-9]+)?|[一-鿿]|[^\sA-Za-z0-9一-鿿]")


def tokenize(text: str) -> list[str]:
    """Whitespace + punctuation split with Chinese handled per character."""
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class TokenSequence:
    tokens: tuple[str, ...]

    def __len__(self) -> int:
        return len(self.tokens)

    @classmethod
    def from_text(cls, text: str, tokenizer: Callable[[str], list[str]] = tokenize) -> "TokenSequence":
        return cls(tokens=tuple(tokenizer(text)))


def _as_tokens(s: TokenSequence | Sequence[str]) -> tuple[str, ...]:
    if isinstance(s, TokenSequence):
        return s.tokens
    return tuple(s)


class Scorer(Protocol):
    """Anything that can assign a log-probability to each token in context."""

    def sequence_logprobs(self, tokens: Sequence[str]) -> list[float]: ...


@dataclass(frozen=True)
class UniformScorer:
    """Assigns P = 1/vocab_size to every token; perplexity is exactly vocab_size."""

    vocab_size: int

    def sequence_logprobs(self, tokens: Sequence[str]) -> list[float]:
        if self.vocab_size < 1:
            raise PerplexityError("vocab_size must be >= 1")
        lp = -math.log(self.vocab_size)
        return [lp for _ in tokens]


@dataclass
class NgramScorer:
    """Add-one smoothed n-gram model with hierarchical context counts.

    The token at position i is conditioned on the last min(i, order-1)
    preceding tokens, so the leading tokens of a sequence fall back to
    shorter contexts down to the unigram distribution. Counts for every
    context length are accumulated over the whole training corpus, which
    keeps each conditional distribution properly normalised over the vocab.
    """

    order: int
    smoothing: float = 1.0
    vocab: frozenset[str] = frozenset()
    context_counts: dict[tuple[str, ...], Counter] = field(default_factory=dict)
    context_totals: dict[tuple[str, ...], int] = field(default_factory=dict)

    def token_logprob(self, context: Sequence[str], token: str) -> float:
        if not self.vocab:
            raise PerplexityError("scorer is untrained")
        ctx = tuple(context)[-(self.order - 1):] if self.order > 1 else ()
        # Truncate further if the position is earlier than the full context.
        counts = self.context_counts.get(ctx)
        count = counts[token] if counts else 0
        total = self.context_totals.get(ctx, 0)
        v = len(self.vocab)
        prob = (count + self.smoothing) / (total + self.smoothing * v)
        # Add-one smoothing guarantees prob > 0 for any token.
        assert prob > 0.0
        return math.log(prob)

    def token_prob(self, context: Sequence[str], token: str) -> float:
        return math.exp(self.token_logprob(context, token))

    def sequence_logprobs(self, tokens: Sequence[str]) -> list[float]:
        out = []
        for i, token in enumerate(tokens):
            ctx_len = min(i, self.order - 1)
            out.append(self.token_logprob(tokens[i - ctx_len:i], token))
        return out


def train_ngram(
    corpus: Iterable[TokenSequence | Sequence[str]],
    order: int = 2,
    smoothing: float = 1.0,
) -> NgramScorer:
    """Count n-grams of every context length up to order-1 over the corpus."""
    if order < 1:
        raise PerplexityError("order must be >= 1")
    if smoothing <= 0:
        raise PerplexityError("smoothing must be > 0 to keep probabilities positive")
    context_counts: dict[tuple[str, ...], Counter] = {}
    context_totals: dict[tuple[str, ...], int] = {}
    vocab: set[str] = set()
    seen_any = False
    for seq in corpus:
        tokens = _as_tokens(seq)
        if not tokens:
            continue
        seen_any = True
        vocab.update(tokens)
        for i, token in enumerate(tokens):
            for ctx_len in range(min(i, order - 1) + 1):
                ctx = tokens[i - ctx_len:i]
                counts = context_counts.get(ctx)
                if counts is None:
                    counts = context_counts[ctx] = Counter()
                    context_totals[ctx] = 0
                counts[token] += 1
                context_totals[ctx] += 1
    if not seen_any:
        raise PerplexityError("cannot train an n-gram scorer on an empty corpus")
    return NgramScorer(
        order=order,
        smoothing=smoothing,
        vocab=frozenset(vocab),
        context_counts=context_counts,
        context_totals=context_totals,
    )


def perplexity(s: TokenSequence | Sequence[str], scorer: Scorer) -> float:
    """exp of the negative mean token log-probability of s under the scorer."""
    tokens = _as_tokens(s)
    if not tokens:
        raise PerplexityError("perplexity of an empty sequence is undefined")
    logprobs = scorer.sequence_logprobs(tokens)
    return math.exp(-sum(logprobs) / len(tokens))


def score_records(
    records: list[CaptionRecord],
    scorer: Scorer,
    source: str = "fused_caption",
    tokenizer: Callable[[str], list[str]] = tokenize,
) -> list[CaptionRecord]:
    """Return records with perplexity set, scored on the chosen caption field."""
    out = []
    for record in records:
        text = getattr(record, source)
        if text is None:
            raise PerplexityError(f"record {record.id} has no {source} to score")
        seq = TokenSequence.from_text(text, tokenizer)
        if len(seq) == 0:
            raise PerplexityError(f"record {record.id}: {source} tokenizes to nothing")
        out.append(replace(record, perplexity=perplexity(seq, scorer)))
    return out


def filter_by_perplexity(records: list[CaptionRecord], fraction: float = 0.2) -> list[CaptionRecord]:
    """Keep the ceil(fraction * n) lowest-perplexity records.

    Ties break on record id, and survivors come back in their original
    relative order.
    """
    if not 0.0 < fraction <= 1.0:
        raise PerplexityError(f"fraction must be in (0, 1], got {fraction}")
    unscored = [r.id for r in records if r.perplexity is None]
    if unscored:
        raise PerplexityError(f"unscored records present: {', '.join(unscored[:5])}")
    if not records:
        return []
    keep = math.ceil(fraction * len(records))
    ranked = sorted(records, key=lambda r: (r.perplexity, r.id))
    kept_ids = {r.id for r in ranked[:keep]}
    return [r for r in records if r.id in kept_ids]


def score_manifest(
    manifest: DatasetManifest,
    scorer: Scorer,
    records_out: str | Path,
    manifest_out: str | Path,
    source: str = "fused_caption",
) -> DatasetManifest:
    if manifest.kind != "caption":
        raise PerplexityError(f"perplexity scoring needs a caption manifest, got {manifest.kind!r}")
    records = load_samples(manifest)
    scored = score_records(records, scorer, source=source)
    return write_corpus(scored, f"{manifest.name}-scored", records_out, manifest_out, kind="caption")


def filter_manifest(
    manifest: DatasetManifest,
    fraction: float,
    records_out: str | Path,
    manifest_out: str | Path,
) -> DatasetManifest:
    if manifest.kind != "caption":
        raise PerplexityError(f"perplexity filtering needs a caption manifest, got {manifest.kind!r}")
    records = load_samples(manifest)
    kept = filter_by_perplexity(records, fraction)
    return write_corpus(kept, f"{manifest.name}-kept", records_out, manifest_out, kind="caption")


def train_scorer_on_manifest(
    manifest: DatasetManifest,
    order: int = 2,
    smoothing: float = 1.0,
    source: str = "fused_caption",
) -> NgramScorer:
    """Self-train an n-gram scorer on the corpus that is about to be scored."""
    sequences = []
    for record in load_samples(manifest):
        text = getattr(record, source, None)
        if text:
            sequences.append(TokenSequence.from_text(text))
    return train_ngram(sequences, order=order, smoothing=smoothing)
