from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vlmprep.soup import (
    ParameterMap,
    SoupError,
    average,
    load_checkpoint,
    save_checkpoint,
    select_members,
    soup_report,
)


def pmap(source_id: str, entries: dict[str, list], score=None) -> ParameterMap:
    return ParameterMap(
        entries={k: np.asarray(v, dtype=np.float64) for k, v in entries.items()},
        source_id=source_id,
        score=score,
    )


class TestSelect:
    def test_top_k_by_score(self):
        chosen = select_members([("A", 66.5), ("B", 66.1), ("C", 65.0)], k=2)
        assert set(chosen) == {"A", "B"}

    def test_k_too_large(self):
        with pytest.raises(SoupError, match="k=3"):
            select_members([("A", 1.0), ("B", 2.0)], k=3)

    def test_tie_breaks_lexicographically(self):
        chosen = select_members([("b", 66.0), ("a", 66.0)], k=2)
        assert chosen == ["a", "b"]

    def test_needs_two(self):
        with pytest.raises(SoupError, match="k=2"):
            select_members([("A", 1.0)], k=1)


class TestAverage:
    def test_simple_mean(self):
        result = average([pmap("m1", {"w": [1.0, 3.0]}), pmap("m2", {"w": [3.0, 5.0]})])
        assert result.entries["w"].tolist() == [2.0, 4.0]

    def test_identity_on_identical_maps(self):
        maps = [pmap(f"m{i}", {"w": [0.25, -1.5, 7.0]}) for i in range(4)]
        result = average(maps)
        assert result.entries["w"].tolist() == [0.25, -1.5, 7.0]

    def test_shape_mismatch_names_tensor(self):
        a = pmap("a", {"w": [1.0, 2.0], "b": [0.0]})
        b = pmap("b", {"w": [1.0, 2.0, 3.0], "b": [0.0]})
        with pytest.raises(SoupError, match="'w'"):
            average([a, b])

    def test_name_mismatch(self):
        with pytest.raises(SoupError, match="name sets differ"):
            average([pmap("a", {"w": [1.0]}), pmap("b", {"v": [1.0]})])

    def test_needs_two_maps(self):
        with pytest.raises(SoupError, match="two"):
            average([pmap("a", {"w": [1.0]})])

    def test_permutation_invariant_exactly(self):
        rng = np.random.default_rng(5)
        maps = [
            pmap(f"ck{i}", {"w": rng.standard_normal(17).tolist(), "b": rng.standard_normal(3).tolist()})
            for i in range(5)
        ]
        forward = average(maps)
        backward = average(list(reversed(maps)))
        for name in forward.entries:
            assert (forward.entries[name] == backward.entries[name]).all()

    def test_idempotent_exactly(self):
        a = pmap("a", {"w": [1.0, 3.0, -2.5]})
        b = pmap("b", {"w": [3.0, 5.0, 0.5]})
        once = average([a, b])
        twice = average([once, ParameterMap(dict(once.entries), source_id="copy")])
        assert (once.entries["w"] == twice.entries["w"]).all()

    def test_mean_within_bounds(self):
        rng = np.random.default_rng(9)
        maps = [pmap(f"m{i}", {"w": rng.standard_normal(64).tolist()}) for i in range(7)]
        result = average(maps)
        stack = np.stack([m.entries["w"] for m in maps])
        assert (result.entries["w"] >= stack.min(axis=0)).all()
        assert (result.entries["w"] <= stack.max(axis=0)).all()

    def test_sources_recorded(self):
        result = average([pmap("b", {"w": [1.0]}), pmap("a", {"w": [3.0]})])
        assert result.sources == ["a", "b"]


class TestCheckpointIO:
    def test_round_trip(self, tmp_path):
        original = pmap("ck1", {"w": [[1.5, -2.0], [0.0, 4.25]], "b": [7.0]}, score=66.5)
        path = save_checkpoint(original, tmp_path / "ck1.ckpt")
        loaded = load_checkpoint(path)
        assert loaded.source_id == "ck1"
        assert loaded.score == 66.5
        for name in original.entries:
            assert loaded.entries[name].shape == original.entries[name].shape
            assert np.allclose(loaded.entries[name], original.entries[name])

    def test_sidecar_manifest(self, tmp_path):
        import json

        path = save_checkpoint(pmap("ck", {"w": [1.0, 2.0]}), tmp_path / "ck.ckpt")
        sidecar = json.loads((tmp_path / "ck.ckpt.json").read_text())
        assert sidecar["tensors"]["w"]["count"] == 2
        assert len(sidecar["sha256"]) == 64

    def test_bad_magic(self, tmp_path):
        bad = tmp_path / "junk.ckpt"
        bad.write_bytes(b"NOTACKPT plus trailing")
        with pytest.raises(SoupError, match="magic"):
            load_checkpoint(bad)


class TestReport:
    def test_lists_members_and_reference(self):
        result = average([pmap("a", {"w": [1.0]}), pmap("b", {"w": [2.0]}), pmap("c", {"w": [3.0]})])
        text = soup_report([("a", 66.5), ("b", 66.1), ("c", 65.9)], result)
        assert text.count("score=") == 3
        assert "66.5" in text and "67.4" in text
        assert "external" in text


shape_strategy = st.sampled_from([(3,), (2, 2), (4,), (1, 5)])


@st.composite
def random_soup_inputs(draw):
    names = draw(st.lists(st.sampled_from(["w1", "w2", "b", "g"]), min_size=1, max_size=3, unique=True))
    shapes = {name: draw(shape_strategy) for name in names}
    n_maps = draw(st.integers(min_value=2, max_value=5))
    seed = draw(st.integers(min_value=0, max_value=2**31))
    rng = np.random.default_rng(seed)
    maps = []
    for i in range(n_maps):
        entries = {name: rng.standard_normal(shapes[name]) for name in names}
        maps.append(ParameterMap(entries=entries, source_id=f"m{i:02d}"))
    return maps


@given(maps=random_soup_inputs())
@settings(max_examples=100, deadline=None)
def test_average_properties(maps):
    result = average(maps)
    shuffled = average(list(reversed(maps)))
    for name in result.entries:
        assert (result.entries[name] == shuffled.entries[name]).all()
        stack = np.stack([m.entries[name] for m in maps])
        assert (result.entries[name] >= stack.min(axis=0)).all()
        assert (result.entries[name] <= stack.max(axis=0)).all()
    again = average([result, ParameterMap(dict(result.entries), source_id="twin")])
    for name in result.entries:
        assert (again.entries[name] == result.entries[name]).all()
