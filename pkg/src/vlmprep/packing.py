"""Variable-resolution sequence packing with block-diagonal attention.

Images are consumed at native resolution, so each one patchifies to a
different token count. Multiple image token runs are packed into one long
sequence; cumulative boundary offsets record where each image starts and
ends, and a block-diagonal mask restricts self-attention to within each
image's own run. The dense masked-attention reference here is a correctness
oracle in double precision, not a performance kernel.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np


class PackingError(Exception):
    pass


class OversizedImageError(PackingError):
    def __init__(self, image_id: str, count: int, capacity: int):
        super().__init__(
            f"image {image_id!r} needs {count} tokens but capacity is {capacity}"
        )
        self.image_id = image_id


@dataclass(frozen=True)
class ImageGeometry:
    width: int
    height: int
    patch_size: int = 14
    merge: int = 2

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise PackingError(f"non-positive image dimensions {self.width}x{self.height}")
        if self.patch_size < 1 or self.merge < 1:
            raise PackingError("patch_size and merge must be >= 1")


def _round_to_unit(value: int, unit: int) -> int:
    # Nearest multiple of unit, halves up, never below one unit.
    return max(unit, int(value / unit + 0.5) * unit)


def patch_count(geom: ImageGeometry) -> int:
    """Token count after resizing each side to the nearest patch*merge multiple."""
    unit = geom.patch_size * geom.merge
    w = _round_to_unit(geom.width, unit)
    h = _round_to_unit(geom.height, unit)
    return (w // unit) * (h // unit)


@dataclass
class PackedSequence:
    """Ordered image token runs packed into one sequence with boundary offsets."""

    entries: list[tuple[str, int]]
    capacity: int

    @property
    def boundaries(self) -> list[int]:
        offsets = [0]
        for _, count in self.entries:
            offsets.append(offsets[-1] + count)
        return offsets

    @property
    def total(self) -> int:
        return sum(count for _, count in self.entries)

    def validate(self) -> None:
        if self.total > self.capacity:
            raise PackingError(f"total {self.total} exceeds capacity {self.capacity}")
        bounds = self.boundaries
        if len(bounds) != len(self.entries) + 1:
            raise PackingError("boundary count must be entry count + 1")
        for a, b in zip(bounds, bounds[1:]):
            if b <= a:
                raise PackingError("boundaries must be strictly increasing")
        if bounds[-1] != self.total:
            raise PackingError("last boundary must equal total token count")

    def to_dict(self) -> dict:
        return {
            "entries": [{"image_id": i, "token_count": c} for i, c in self.entries],
            "boundaries": self.boundaries,
            "capacity": self.capacity,
            "total": self.total,
        }


def pack(counts: Sequence[tuple[str, int]], capacity: int) -> list[PackedSequence]:
    """Greedy first-fit in arrival order: start a new sequence on overflow."""
    if capacity < 1:
        raise PackingError("capacity must be >= 1")
    sequences: list[PackedSequence] = []
    current: list[tuple[str, int]] = []
    used = 0
    for image_id, count in counts:
        if count < 1:
            raise PackingError(f"image {image_id!r} has non-positive token count {count}")
        if count > capacity:
            raise OversizedImageError(image_id, count, capacity)
        if used + count > capacity:
            sequences.append(PackedSequence(entries=current, capacity=capacity))
            current, used = [], 0
        current.append((image_id, count))
        used += count
    if current:
        sequences.append(PackedSequence(entries=current, capacity=capacity))
    for seq in sequences:
        seq.validate()
    return sequences


def block_mask(seq: PackedSequence) -> np.ndarray:
    """total x total boolean mask, True iff i and j share a boundary interval."""
    n = seq.total
    mask = np.zeros((n, n), dtype=bool)
    bounds = seq.boundaries
    for start, end in zip(bounds, bounds[1:]):
        mask[start:end, start:end] = True
    return mask


def _softmax_rows(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=-1, keepdims=True)
    weights = np.exp(shifted)
    return weights / weights.sum(axis=-1, keepdims=True)


def masked_attention(
    x: np.ndarray,
    mask: np.ndarray | None,
    wq: np.ndarray,
    wk: np.ndarray,
    wv: np.ndarray,
    heads: int = 1,
) -> np.ndarray:
    """Dense single- or multi-head attention with an optional boolean mask.

    Masked positions receive -inf scores before the softmax, so they
    contribute exactly zero weight. All arithmetic is float64.
    """
    x = np.asarray(x, dtype=np.float64)
    n, dim = x.shape
    if dim % heads != 0:
        raise PackingError(f"dim {dim} not divisible by heads {heads}")
    if mask is not None and mask.shape != (n, n):
        raise PackingError(f"mask shape {mask.shape} does not match {n} tokens")
    head_dim = dim // heads
    q = (x @ wq).reshape(n, heads, head_dim)
    k = (x @ wk).reshape(n, heads, head_dim)
    v = (x @ wv).reshape(n, heads, head_dim)
    out = np.empty((n, heads, head_dim), dtype=np.float64)
    scale = 1.0 / math.sqrt(head_dim)
    for h in range(heads):
        scores = (q[:, h, :] @ k[:, h, :].T) * scale
        if mask is not None:
            scores = np.where(mask, scores, -np.inf)
        out[:, h, :] = _softmax_rows(scores) @ v[:, h, :]
    return out.reshape(n, dim)


def projection_weights(dim: int, seed: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Seeded shared q/k/v projections for the equivalence oracle."""
    rng = np.random.default_rng(seed)
    scale = 1.0 / math.sqrt(dim)
    wq = rng.standard_normal((dim, dim)) * scale
    wk = rng.standard_normal((dim, dim)) * scale
    wv = rng.standard_normal((dim, dim)) * scale
    return wq, wk, wv


def attention_equiv_check(
    embeddings: Sequence[np.ndarray],
    seq: PackedSequence,
    seed: int = 0,
    heads: int = 1,
    mask: np.ndarray | None = None,
) -> float:
    """Max |packed masked attention - per-image attention| over all tokens.

    The per-image side runs each image's tokens through the same projections
    independently, which is the brute-force reference the packed computation
    must match. ``mask`` overrides the block mask (used as a corrupted-mask
    negative control in tests).
    """
    if len(embeddings) != len(seq.entries):
        raise PackingError(
            f"{len(embeddings)} embedding blocks for {len(seq.entries)} packed entries"
        )
    for emb, (image_id, count) in zip(embeddings, seq.entries):
        if emb.ndim != 2:
            raise PackingError(f"embeddings for {image_id!r} must be 2-D")
        if emb.shape[0] != count:
            raise PackingError(
                f"image {image_id!r}: {emb.shape[0]} embedding rows for {count} tokens"
            )
    dim = embeddings[0].shape[1]
    for emb in embeddings:
        if emb.shape[1] != dim:
            raise PackingError("all embeddings must share the same dim")

    wq, wk, wv = projection_weights(dim, seed)
    packed_x = np.vstack([np.asarray(e, dtype=np.float64) for e in embeddings])
    packed_out = masked_attention(packed_x, mask if mask is not None else block_mask(seq), wq, wk, wv, heads)
    reference = np.vstack([masked_attention(e, None, wq, wk, wv, heads) for e in embeddings])
    return float(np.max(np.abs(packed_out - reference)))


@dataclass
class PackPlan:
    sequences: list[PackedSequence]
    capacity: int

    @property
    def total_tokens(self) -> int:
        return sum(seq.total for seq in self.sequences)

    def to_dict(self) -> dict:
        return {
            "capacity": self.capacity,
            "sequence_count": len(self.sequences),
            "total_tokens": self.total_tokens,
            "sequences": [seq.to_dict() for seq in self.sequences],
        }


def plan_from_sizes(
    sizes: Sequence[tuple[str, int, int]],
    capacity: int = 4096,
    patch_size: int = 14,
    merge: int = 2,
) -> PackPlan:
    """Turn (id, width, height) triples into a full packing plan."""
    counts = [
        (image_id, patch_count(ImageGeometry(width, height, patch_size, merge)))
        for image_id, width, height in sizes
    ]
    return PackPlan(sequences=pack(counts, capacity), capacity=capacity)


def load_sizes(path: str | Path) -> list[tuple[str, int, int]]:
    """Sizes file: JSON list of {"id", "width", "height"} objects."""
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    return [(entry["id"], int(entry["width"]), int(entry["height"])) for entry in data]


def write_plan(plan: PackPlan, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(plan.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path
