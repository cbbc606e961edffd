import itertools

import numpy as np
import pytest

from dcdh.retrieval import (
    CodesFormatError,
    MapResult,
    PackedCodes,
    average_precision,
    hamming,
    hamming_to_all,
    load_codes,
    lsh_codes,
    mean_average_precision,
    pack_codes,
    precision_at_k,
    rank,
    relevance,
    save_codes,
    unpack_codes,
)


def random_codes(rng, k, n):
    return np.where(rng.random((k, n)) < 0.5, 1.0, -1.0)


# ----------------------------------------------------------------- oracles

def naive_hamming(col_a, col_b):
    return int(sum(1 for x, y in zip(col_a, col_b) if x != y))


def naive_rank(query_col, db_cols):
    dists = [(naive_hamming(query_col, db_cols[:, j]), j)
             for j in range(db_cols.shape[1])]
    return [j for _, j in sorted(dists)]


def naive_ap(ranking, rel):
    flags = [int(rel[j]) for j in ranking]
    total_rel = sum(flags)
    if total_rel == 0:
        return None
    acc = 0.0
    for p in range(1, len(flags) + 1):
        if flags[p - 1]:
            acc += sum(flags[:p]) / p
    return acc / total_rel


# ------------------------------------------------------------------ packing

def test_pack_layout_lsb_first():
    b = np.array([[1.0], [-1.0], [1.0]])  # bits (1, 0, 1) -> 0b101
    pc = pack_codes(b)
    assert pc.n == 1 and pc.k == 3
    assert pc.words[0, 0] == 0b101


def test_pack_all_minus_one_is_zero_words():
    pc = pack_codes(-np.ones((70, 3)))
    assert np.all(pc.words == 0)


@pytest.mark.parametrize("k", [1, 63, 64, 65, 130])
def test_pack_roundtrip_word_boundaries(k):
    rng = np.random.default_rng(k)
    b = random_codes(rng, k, 9)
    assert np.array_equal(unpack_codes(pack_codes(b)), b)


def test_pack_rejects_nonbinary():
    with pytest.raises(ValueError):
        pack_codes(np.array([[0.5], [1.0]]))


def test_packed_codes_rejects_dirty_padding():
    words = np.array([[0b1111]], dtype=np.uint64)  # k=3 but bit 3 set
    with pytest.raises(ValueError, match="padding"):
        PackedCodes(1, 3, words)


# ------------------------------------------------------------------ hamming

def test_hamming_identity_is_zero():
    rng = np.random.default_rng(0)
    pc = pack_codes(random_codes(rng, 40, 4))
    assert hamming(pc.code(1), pc.code(1)) == 0


def test_hamming_complement_is_k():
    b = np.ones((16, 1))
    pc_a = pack_codes(b)
    pc_b = pack_codes(-b)
    assert hamming(pc_a.code(0), pc_b.code(0)) == 16


def test_hamming_matches_bit_loop_oracle():
    rng = np.random.default_rng(1)
    for k in (1, 7, 16, 64, 100, 128):
        b = random_codes(rng, k, 30)
        pc = pack_codes(b)
        for _ in range(60):
            i, j = rng.integers(0, 30, 2)
            assert hamming(pc.code(i), pc.code(j)) == naive_hamming(b[:, i], b[:, j])


def test_hamming_is_a_metric():
    rng = np.random.default_rng(2)
    b = random_codes(rng, 24, 12)
    pc = pack_codes(b)
    for i, j, l in itertools.product(range(6), repeat=3):
        dij = hamming(pc.code(i), pc.code(j))
        dji = hamming(pc.code(j), pc.code(i))
        assert dij == dji
        assert (dij == 0) == np.array_equal(b[:, i], b[:, j])
        assert dij <= hamming(pc.code(i), pc.code(l)) + hamming(pc.code(l), pc.code(j))


def test_hamming_rejects_length_mismatch():
    with pytest.raises(ValueError):
        hamming(np.zeros(1, dtype=np.uint64), np.zeros(2, dtype=np.uint64))


# --------------------------------------------------------------------- rank

def test_rank_self_comes_first():
    rng = np.random.default_rng(3)
    b = random_codes(rng, 16, 10)
    pc = pack_codes(b)
    order = rank(pc.code(4), pc)
    assert order[0] == 4


def test_rank_ties_broken_by_index():
    # db codes 1 and 2 are both at distance 1 from the query
    q = np.array([[1.0], [1.0], [1.0]])
    db = np.array([
        [1.0, 1.0, 1.0],    # distance 0
        [-1.0, 1.0, 1.0],   # distance 1
        [1.0, -1.0, 1.0],   # distance 1
    ]).T
    order = rank(pack_codes(q).code(0), pack_codes(db))
    assert list(order) == [0, 1, 2]


def test_rank_matches_naive_sort_oracle():
    rng = np.random.default_rng(4)
    db = random_codes(rng, 8, 20)
    queries = random_codes(rng, 8, 5)
    pc_db = pack_codes(db)
    pc_q = pack_codes(queries)
    for i in range(5):
        assert list(rank(pc_q.code(i), pc_db)) == naive_rank(queries[:, i], db)


def test_rank_distances_nondecreasing():
    rng = np.random.default_rng(5)
    db = random_codes(rng, 12, 25)
    pc = pack_codes(db)
    q = pack_codes(random_codes(rng, 12, 1)).code(0)
    order = rank(q, pc)
    dists = hamming_to_all(q, pc)[order]
    assert np.all(np.diff(dists) >= 0)


# ---------------------------------------------------------------- relevance

def test_relevance_mirrors_similarity_rule():
    db_labels = np.array([[1, 0, 0], [0, 1, 1], [1, 1, 0]])
    assert list(relevance(np.array([1, 0, 0]), db_labels)) == [1, 0, 1]
    assert list(relevance(np.array([0, 0, 1]), db_labels)) == [0, 1, 0]
    # identical labels are relevant; disjoint are not
    assert relevance(np.array([0, 1, 1]), db_labels)[1] == 1
    assert relevance(np.array([0, 0, 1]), db_labels)[0] == 0


# ------------------------------------------------------------------ metrics

def test_ap_perfect_ranking_is_one():
    ranking = np.array([2, 0, 1, 3])
    rel = np.array([1, 0, 1, 0])  # items 2 and 0 first
    assert average_precision(ranking, rel) == 1.0


def test_ap_single_relevant_at_rank_two():
    ranking = np.array([0, 1, 2, 3])
    rel = np.array([0, 1, 0, 0])
    assert average_precision(ranking, rel) == 0.5


def test_map_skips_queries_without_relevant_items():
    rankings = [np.array([0, 1]), np.array([1, 0])]
    rels = [np.array([0, 0]), np.array([1, 1])]
    res = mean_average_precision(rankings, rels)
    assert isinstance(res, MapResult)
    assert res.map == 1.0
    assert res.n_evaluated == 1
    assert res.n_skipped == 1


def test_map_matches_naive_oracle_exactly():
    rng = np.random.default_rng(6)
    for _ in range(30):
        n = int(rng.integers(2, 30))
        ranking = rng.permutation(n)
        rel = (rng.random(n) < 0.4).astype(np.int64)
        got = average_precision(ranking, rel)
        want = naive_ap(ranking, rel)
        assert got == want  # exact, including the None case


def test_map_one_iff_relevant_ranked_first():
    rng = np.random.default_rng(7)
    for _ in range(20):
        n = int(rng.integers(3, 15))
        rel = (rng.random(n) < 0.5).astype(np.int64)
        if rel.sum() in (0, n):
            continue
        perfect = np.concatenate([np.flatnonzero(rel == 1), np.flatnonzero(rel == 0)])
        assert average_precision(perfect, rel) == 1.0
        # swap the boundary pair: no longer perfect
        idx = int(rel.sum())
        broken = perfect.copy()
        broken[idx - 1], broken[idx] = broken[idx], broken[idx - 1]
        assert average_precision(broken, rel) < 1.0


def test_precision_at_k_cases():
    ranking = np.array([3, 1, 0, 2])
    rel = np.array([0, 1, 0, 1])
    assert precision_at_k(ranking, rel, 2) == 1.0  # items 3 and 1 relevant
    assert precision_at_k(ranking, np.zeros(4, dtype=int), 3) == 0.0
    # counting oracle on random cases
    rng = np.random.default_rng(8)
    for _ in range(20):
        n = int(rng.integers(2, 25))
        ranking = rng.permutation(n)
        rel = (rng.random(n) < 0.5).astype(np.int64)
        k = int(rng.integers(1, n + 1))
        want = sum(int(rel[j]) for j in ranking[:k]) / k
        assert precision_at_k(ranking, rel, k) == want


def test_metrics_stay_in_unit_interval():
    rng = np.random.default_rng(9)
    for _ in range(20):
        n = int(rng.integers(2, 20))
        ranking = rng.permutation(n)
        rel = (rng.random(n) < 0.5).astype(np.int64)
        ap = average_precision(ranking, rel)
        if ap is not None:
            assert 0.0 <= ap <= 1.0
        assert 0.0 <= precision_at_k(ranking, rel, 3) <= 1.0


# ---------------------------------------------------------------------- lsh

def test_lsh_deterministic_per_seed():
    rng = np.random.default_rng(10)
    x = rng.normal(size=(20, 6))
    assert np.array_equal(lsh_codes(x, 8, seed=3), lsh_codes(x, 8, seed=3))
    assert not np.array_equal(lsh_codes(x, 8, seed=3), lsh_codes(x, 8, seed=4))


def test_lsh_scale_invariant():
    rng = np.random.default_rng(11)
    x = rng.normal(size=(15, 5))
    assert np.array_equal(lsh_codes(x, 10, seed=0), lsh_codes(2.0 * x, 10, seed=0))


def test_lsh_codes_are_binary():
    rng = np.random.default_rng(12)
    codes = lsh_codes(rng.normal(size=(10, 4)), 6, seed=1)
    assert codes.shape == (6, 10)
    assert set(np.unique(codes)) <= {-1.0, 1.0}


# ----------------------------------------------------------------- codes io

def test_codes_file_roundtrip(tmp_path):
    rng = np.random.default_rng(13)
    for k in (1, 64, 100):
        pc = pack_codes(random_codes(rng, k, 7))
        path = str(tmp_path / ("codes%d.dcdhcode" % k))
        save_codes(pc, path)
        back = load_codes(path)
        assert back.n == pc.n and back.k == pc.k
        assert np.array_equal(back.words, pc.words)


def test_codes_file_bad_magic(tmp_path):
    path = str(tmp_path / "bad.dcdhcode")
    with open(path, "wb") as fh:
        fh.write(b"WRONGMAG" + b"\x00" * 24)
    with pytest.raises(CodesFormatError, match="magic"):
        load_codes(path)


def test_codes_file_truncation(tmp_path):
    rng = np.random.default_rng(14)
    pc = pack_codes(random_codes(rng, 16, 5))
    path = str(tmp_path / "t.dcdhcode")
    save_codes(pc, path)
    raw = open(path, "rb").read()
    with open(path, "wb") as fh:
        fh.write(raw[:-3])
    with pytest.raises(CodesFormatError, match="truncated"):
        load_codes(path)
