"""Model soup: select the best-scoring checkpoints and average their weights.

Checkpoints are named-tensor maps stored in a flat binary layout: an 8-byte
magic, a little-endian uint32 header length, a JSON header (source id, score,
tensor names + shapes in order), then the tensors' float32 little-endian
data back to back. A sidecar text manifest makes files hash-checkable.
Averaging always accumulates in float64 regardless of storage precision.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

MAGIC = b"PMAPCKPT"


class SoupError(Exception):
    pass


@dataclass
class ParameterMap:
    """Named tensors representing one checkpoint."""

    entries: dict[str, np.ndarray]
    source_id: str
    score: float | None = None
    sources: list[str] = field(default_factory=list)

    def validate(self) -> None:
        if len(self.entries) == 0:
            raise SoupError(f"parameter map {self.source_id!r} has no tensors")
        for name, values in self.entries.items():
            if not name:
                raise SoupError("tensor with empty name")
            if values.size != int(np.prod(values.shape)):
                raise SoupError(f"tensor {name!r} value count does not match its shape")


def save_checkpoint(pmap: ParameterMap, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = list(pmap.entries)
    header = {
        "version": 1,
        "source_id": pmap.source_id,
        "score": pmap.score,
        "sources": pmap.sources,
        "tensors": [{"name": n, "shape": list(pmap.entries[n].shape)} for n in names],
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with path.open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        for name in names:
            fh.write(np.ascontiguousarray(pmap.entries[name], dtype="<f4").tobytes())
    _write_sidecar(pmap, path)
    return path


def _write_sidecar(pmap: ParameterMap, path: Path) -> None:
    digest = hashlib.sha256(path.read_bytes()).hexdigest()
    manifest = {
        "checkpoint": path.name,
        "sha256": digest,
        "source_id": pmap.source_id,
        "score": pmap.score,
        "tensors": {n: {"shape": list(v.shape), "count": int(v.size)} for n, v in pmap.entries.items()},
    }
    sidecar = path.with_suffix(path.suffix + ".json")
    sidecar.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_checkpoint(path: str | Path) -> ParameterMap:
    path = Path(path)
    blob = path.read_bytes()
    if blob[: len(MAGIC)] != MAGIC:
        raise SoupError(f"{path} is not a checkpoint file (bad magic)")
    (header_len,) = struct.unpack_from("<I", blob, len(MAGIC))
    header_start = len(MAGIC) + 4
    header = json.loads(blob[header_start : header_start + header_len].decode("utf-8"))
    offset = header_start + header_len
    entries: dict[str, np.ndarray] = {}
    for tensor in header["tensors"]:
        shape = tuple(tensor["shape"])
        count = int(np.prod(shape)) if shape else 1
        values = np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
        entries[tensor["name"]] = values.reshape(shape).astype(np.float64)
        offset += count * 4
    return ParameterMap(
        entries=entries,
        source_id=header["source_id"],
        score=header.get("score"),
        sources=list(header.get("sources", [])),
    )


def select_members(candidates: Sequence[tuple[str, float]], k: int) -> list[str]:
    """Top-k candidate refs by score, ties broken by lexicographically smaller ref."""
    if k < 2:
        raise SoupError("a soup needs at least k=2 members")
    if k > len(candidates):
        raise SoupError(f"asked for k={k} members but only {len(candidates)} candidates")
    for ref, score in candidates:
        if score is None:
            raise SoupError(f"candidate {ref!r} has no score")
    ranked = sorted(candidates, key=lambda item: (-item[1], item[0]))
    return [ref for ref, _ in ranked[:k]]


def average(maps: Sequence[ParameterMap]) -> ParameterMap:
    """Uniform arithmetic mean of the maps, tensor by tensor.

    Inputs are sorted by source id before summing, so the result is exactly
    permutation-invariant. Each averaged tensor is clamped to the member-wise
    [min, max] envelope, which pins the mean-bounds invariant against float
    rounding.
    """
    if len(maps) < 2:
        raise SoupError("averaging needs at least two parameter maps")
    ordered = sorted(maps, key=lambda m: m.source_id)
    reference = ordered[0]
    ref_names = set(reference.entries)
    for other in ordered[1:]:
        names = set(other.entries)
        if names != ref_names:
            missing = sorted(ref_names.symmetric_difference(names))
            raise SoupError(f"tensor name sets differ between members: {', '.join(missing[:5])}")
        for name in ref_names:
            if other.entries[name].shape != reference.entries[name].shape:
                raise SoupError(
                    f"shape mismatch on tensor {name!r}: "
                    f"{reference.entries[name].shape} vs {other.entries[name].shape}"
                )
    entries: dict[str, np.ndarray] = {}
    for name in reference.entries:
        stack = np.stack([m.entries[name].astype(np.float64) for m in ordered])
        mean = stack.sum(axis=0) / len(ordered)
        entries[name] = np.clip(mean, stack.min(axis=0), stack.max(axis=0))
    sources = sorted(m.source_id for m in maps)
    return ParameterMap(entries=entries, source_id="soup:" + "+".join(sources), sources=sources)


def soup_report(selected: Sequence[tuple[str, float]], result: ParameterMap) -> str:
    """Human-readable summary of a completed soup."""
    lines = ["model soup report", "members:"]
    for ref, score in selected:
        lines.append(f"  {ref}  score={score}")
    lines.append(f"tensors averaged: {len(result.entries)}")
    lines.append(f"result id: {result.source_id}")
    lines.append(
        "note: the souped model is unscored here; re-scoring requires external "
        "benchmark evaluation."
    )
    lines.append(
        "reference point: uniform souping over best-performing checkpoints has "
        "been reported to lift a 66.5 benchmark score to 67.4 (cited context, "
        "not a computed claim)."
    )
    return "\n".join(lines)
