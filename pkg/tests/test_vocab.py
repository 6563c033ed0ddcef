import numpy as np
import pytest

from copyseq.vocab import BOS, EOS, PAD, UNK, Vocabulary, build_extended, map_target


@pytest.fixture
def ab():
    return Vocabulary(["a", "b"])


def test_reserved_ids_fixed(ab):
    assert (PAD, BOS, EOS, UNK) == (0, 1, 2, 3)
    assert ab.id("a") == 4 and ab.id("b") == 5
    assert ab.n_regular == 2 and len(ab) == 6


def test_unknown_lookup_is_unk(ab):
    assert ab.id("zzz") == UNK
    assert "zzz" not in ab and "<unk>" not in ab


def test_duplicates_rejected():
    with pytest.raises(ValueError):
        Vocabulary(["a", "a"])


def test_bijection():
    v = Vocabulary([f"s{i}" for i in range(50)])
    assert all(v.id(v.token(i)) == i for i in range(len(v)))


def test_first_occurrence_ordering(ab):
    ext = build_extended(ab, ["a", "q", "a", "r", "q"])
    n = len(ab)
    assert ext.oov_symbols == ("q", "r")
    assert ext.source_ext_ids == (4, n, 4, n + 1, n)
    assert ext.source_base_ids == (4, UNK, 4, UNK, UNK)
    assert ext.size == n + 2


def test_in_vocab_source_has_no_oov(ab):
    ext = build_extended(ab, ["b", "a", "b"])
    assert ext.oov_symbols == ()
    assert ext.source_ext_ids == ext.source_base_ids


def test_empty_source_rejected(ab):
    with pytest.raises(ValueError):
        build_extended(ab, [])


def test_oov_count_matches_set_difference():
    rng = np.random.default_rng(7)
    v = Vocabulary([f"t{i}" for i in range(50)])
    source = [f"t{i}" for i in rng.integers(0, 200, size=1000)]
    ext = build_extended(v, source)
    unseen = {s for s in source} - set(v.symbols)
    assert set(ext.oov_symbols) == unseen
    assert len(ext.oov_symbols) == len(unseen)
    seen_order = list(dict.fromkeys(s for s in source if s in unseen))
    assert list(ext.oov_symbols) == seen_order


def test_map_target_cases(ab):
    ext = build_extended(ab, ["a", "q"])
    assert map_target(ext, ["a"]) == [4]
    assert map_target(ext, ["q"]) == [len(ab)]
    assert map_target(ext, ["z"]) == [UNK]


def test_render_round_trip(ab):
    ext = build_extended(ab, ["a", "q", "r", "b"])
    ids = list(ext.source_ext_ids)
    assert ext.render(ids) == ["a", "q", "r", "b"]
    assert ext.render([4, UNK, EOS, 5]) == ["a", "<unk>"]
    assert ext.render([BOS, 4, PAD]) == ["a"]


def test_build_extended_is_pure(ab):
    assert build_extended(ab, ["q", "a"]) == build_extended(ab, ["q", "a"])


def test_file_round_trip(tmp_path):
    v = Vocabulary(["w0001", "w0002", "x"])
    v.save(tmp_path / "v.txt")
    assert (tmp_path / "v.txt").read_text().splitlines() == ["w0001", "w0002", "x"]
    assert Vocabulary.load(tmp_path / "v.txt").symbols == v.symbols


def test_truncated():
    v = Vocabulary(["a", "b", "c"]).truncated(2)
    assert v.symbols[4:] == ["a", "b"] and "c" not in v
