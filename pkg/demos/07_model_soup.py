#!/usr/bin/env python3
"""Model soup walkthrough.

Pick the best-scoring checkpoints and average their parameters uniformly.
Checkpoints live in a flat binary format (JSON header + float32 tensors)
with a hash-checkable sidecar manifest; averaging runs in double precision.
"""

import tempfile
from pathlib import Path

import numpy as np

from vlmprep.soup import (
    ParameterMap,
    average,
    load_checkpoint,
    save_checkpoint,
    select_members,
    soup_report,
)

rng = np.random.default_rng(1)
shapes = {"proj.weight": (4, 3), "proj.bias": (4,)}

candidates = []
with tempfile.TemporaryDirectory() as tmp:
    tmp = Path(tmp)
    for name, score in [("ckpt-epoch2", 66.1), ("ckpt-epoch3", 66.5), ("ckpt-mix", 65.0)]:
        pmap = ParameterMap(
            entries={k: rng.standard_normal(shape) for k, shape in shapes.items()},
            source_id=name,
            score=score,
        )
        save_checkpoint(pmap, tmp / f"{name}.ckpt")
        candidates.append((str(tmp / f"{name}.ckpt"), score))

    chosen = select_members(candidates, k=2)
    print("selected members:")
    for ref in chosen:
        print(f"  {Path(ref).name}")

    maps = [load_checkpoint(ref) for ref in chosen]
    souped = average(maps)
    save_checkpoint(souped, tmp / "souped.ckpt")

    print()
    print(soup_report([(Path(r).name, dict(candidates)[r]) for r in chosen], souped))

    print("\nspot check — souped value is the member mean:")
    name = "proj.bias"
    for m in maps:
        print(f"  {m.source_id:>12}: {np.round(m.entries[name], 3)}")
    print(f"  {'souped':>12}: {np.round(souped.entries[name], 3)}")
