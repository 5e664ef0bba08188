import os

import numpy as np
import pytest

from kbcv2.kb import DatasetError, build_filter_index, build_kb, load_kb, load_split


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def test_load_split_single_line(tmp_path):
    f = write(tmp_path / "train.txt", "paris \t capital_of \t france\n")
    assert load_split(f) == [("paris", "capital_of", "france")]


def test_load_split_keeps_file_order_and_skips_blank_lines(tmp_path):
    f = write(tmp_path / "t.txt", "a\tr\tb\n\nc\tr\td\na\tr\tb\n")
    assert load_split(f) == [("a", "r", "b"), ("c", "r", "d"), ("a", "r", "b")]


@pytest.mark.parametrize("text, line", [("a\tb\n", 1), ("a\tr\tb\nx\ty\tz\tw\n", 2), ("a\tr\tb\n\t\t\n", 2)])
def test_load_split_malformed_line(tmp_path, text, line):
    f = write(tmp_path / "t.txt", text)
    with pytest.raises(DatasetError, match=f"line {line}: expected 3 tab-separated fields"):
        load_split(f)


def test_load_split_empty_and_missing(tmp_path):
    with pytest.raises(DatasetError, match="empty"):
        load_split(write(tmp_path / "t.txt", "\n\n"))
    with pytest.raises(DatasetError, match="no such file"):
        load_split(tmp_path / "missing.txt")


def test_build_kb_first_appearance_ids():
    kb = build_kb([("a", "r", "b")], [("b", "r", "c")], [])
    assert kb.entities == ("a", "b", "c")
    assert kb.relations == ("r",)
    assert kb.train.tolist() == [[0, 0, 1]]
    assert kb.valid.tolist() == [[1, 0, 2]]
    assert kb.test.shape == (0, 3)


def test_build_kb_empty():
    kb = build_kb([], [], [])
    assert kb.n_entities == 0 and kb.n_relations == 0


def test_build_kb_vocabulary_spans_all_splits_and_round_trips():
    train = [("a", "likes", "b"), ("b", "likes", "a")]
    valid = [("c", "knows", "a")]
    test = [("d", "likes", "c"), ("d", "likes", "c")]
    kb = build_kb(train, valid, test)
    assert set(kb.entities) == {"a", "b", "c", "d"}
    assert kb.decode(kb.train) == train
    assert kb.decode(kb.valid) == valid
    assert kb.decode(kb.test) == test  # duplicates kept
    for split in ("train", "valid", "test"):
        t = kb.split(split)
        assert t.min(initial=0) >= 0
        assert (t[:, [0, 2]] < kb.n_entities).all() and (t[:, 1] < kb.n_relations).all()


def test_load_kb_is_deterministic(tmp_path):
    write(tmp_path / "train.txt", "x\tr\ty\ny\ts\tz\n")
    write(tmp_path / "valid.txt", "z\tr\tx\n")
    write(tmp_path / "test.txt", "w\ts\tx\n")
    a, b = load_kb(tmp_path), load_kb(tmp_path)
    assert a.entities == b.entities == ("x", "y", "z", "w")
    for split in ("train", "valid", "test"):
        np.testing.assert_array_equal(a.split(split), b.split(split))


def test_filter_index_small_cases():
    kb = build_kb([("x", "r", "y"), ("x", "r", "z")], [], [])
    index = build_filter_index(kb)
    assert index.tail_true[(0, 0)] == {1, 2}
    kb = build_kb([("x", "r", "y")], [], [])
    assert build_filter_index(kb).head_true[(0, 1)] == {0}


def random_kb(rng, n_triples=50, n_ent=12, n_rel=3):
    rows = [(f"e{rng.integers(n_ent)}", f"r{rng.integers(n_rel)}", f"e{rng.integers(n_ent)}") for _ in range(n_triples)]
    return build_kb(rows[:30], rows[30:40], rows[40:])


@pytest.mark.parametrize("seed", range(5))
def test_filter_index_matches_brute_force(seed):
    kb = random_kb(np.random.default_rng(seed))
    index = build_filter_index(kb)
    everything = np.concatenate([kb.train, kb.valid, kb.test]).tolist()
    pairs_sr = {(s, r) for s, r, _ in everything}
    pairs_ro = {(r, o) for _, r, o in everything}
    assert set(index.tail_true) == pairs_sr
    assert set(index.head_true) == pairs_ro
    for s, r in pairs_sr:
        assert index.tail_true[(s, r)] == {o for s2, r2, o in everything if (s2, r2) == (s, r)}
    for r, o in pairs_ro:
        assert index.head_true[(r, o)] == {s for s, r2, o2 in everything if (r2, o2) == (r, o)}


def test_filter_index_completeness_on_random_draws():
    rng = np.random.default_rng(7)
    kb = random_kb(rng, n_triples=300, n_ent=40, n_rel=5)
    index = build_filter_index(kb)
    everything = np.concatenate([kb.train, kb.valid, kb.test])
    for s, r, o in everything[rng.integers(len(everything), size=100)].tolist():
        assert o in index.tails(s, r)
        assert s in index.heads(r, o)


FB15K237 = os.environ.get("KBCV2_FB15K237_DIR")
FB15K = os.environ.get("KBCV2_FB15K_DIR")


@pytest.mark.skipif(not FB15K237, reason="set KBCV2_FB15K237_DIR to the published FB15k-237 split")
def test_fb15k237_train_size():
    assert len(load_split(os.path.join(FB15K237, "train.txt"))) == 272_115


@pytest.mark.skipif(not FB15K, reason="set KBCV2_FB15K_DIR to the published FB15k split")
def test_fb15k_vocabulary_size():
    kb = load_kb(FB15K)
    assert (kb.n_entities, kb.n_relations) == (14_951, 1_345)
