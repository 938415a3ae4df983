import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from styleumt.corpus import Style, build_vocabulary
from styleumt.embedding import EmbeddingMatrix, SGNSConfig, train_sgns
from styleumt.lexicon import (IDENTITY_FLOOR, TransferTable, build_transfer_table, similarity_distribution,
                              style_preference)

from .conftest import corpus_pair
from .oracles import brute_force_table


def random_setup(seed, n_words=8, dim=3):
    rng = np.random.default_rng(seed)
    words = [f"w{i}" for i in range(n_words)]
    xs = [list(rng.choice(words, rng.integers(1, 5))) for _ in range(12)]
    ys = [list(rng.choice(words, rng.integers(1, 5))) for _ in range(12)]
    X, Y = corpus_pair(xs, ys)
    v = build_vocabulary(X, Y)
    vecs = rng.normal(size=(len(v), dim))
    vecs[:4] = 0.0
    return v, EmbeddingMatrix(v.itos, vecs)


def test_style_preference_from_frequencies():
    X, Y = corpus_pair([["a", "a", "a", "b"]], [["a", "c"]])
    v = build_vocabulary(X, Y)
    p = style_preference(v, v.id("a"))
    assert p.p_source == 0.75 and p.p_target == 0.25
    assert style_preference(v, v.id("c")).p_source == 0.0
    with pytest.raises(ValueError):
        style_preference(v, 0)


def test_similarity_clamps_and_normalizes():
    vecs = np.array([[1.0, 0.0], [0.6, 0.8], [-1.0, 0.0], [0.0, 1.0]])
    emb = EmbeddingMatrix(list("abcd"), vecs)
    d = similarity_distribution(emb, 0, [0, 1, 2, 3], k=10)
    # cosines 1, 0.6, -1 (clamped), 0 (dropped)
    assert d == pytest.approx({0: 1 / 1.6, 1: 0.6 / 1.6})
    assert similarity_distribution(emb, 0, [0, 1, 2, 3], k=1) == {0: 1.0}


@given(st.integers(0, 100_000), st.integers(1, 6), st.sampled_from([0.0, 0.2, 0.5, 1.0]),
       st.sampled_from([Style.SOURCE, Style.TARGET]))
def test_matches_brute_force(seed, k, threshold, direction):
    v, emb = random_setup(seed)
    table = build_transfer_table(v, emb, direction, k=k, threshold=threshold)
    oracle = brute_force_table(v, emb, direction, k=k, threshold=threshold)
    assert set(table.entries) == set(oracle)
    for x, cands in table.entries.items():
        got = {c.token: c.prob for c in cands}
        assert set(got) == set(oracle[x])
        for y, p in got.items():
            assert p == pytest.approx(oracle[x][y], rel=1e-12, abs=1e-15)


@given(st.integers(0, 100_000), st.sampled_from([Style.SOURCE, Style.TARGET]))
def test_table_invariants(seed, direction):
    v, emb = random_setup(seed)
    table = build_transfer_table(v, emb, direction, k=4)
    for x, cands in table.entries.items():
        probs = [c.prob for c in cands]
        assert math.isclose(sum(probs), 1.0, rel_tol=1e-12)
        assert all(0 < p <= 1 for p in probs)
        assert x in {c.token for c in cands}
        # sorted by probability, ids ascending on ties
        keys = [(-c.prob, c.token) for c in cands]
        assert keys == sorted(keys)
        assert len(cands) <= 5


def test_identity_gets_floor_when_pruned():
    X, Y = corpus_pair([["bad", "food"]], [["good", "food"]])
    v = build_vocabulary(X, Y)
    vecs = np.zeros((len(v), 2))
    vecs[v.id("bad")] = [1.0, 0.0]
    vecs[v.id("good")] = [1.0, 0.01]
    vecs[v.id("food")] = [0.0, 1.0]
    emb = EmbeddingMatrix(v.itos, vecs)
    t = build_transfer_table(v, emb, Style.SOURCE, k=10, threshold=0.2)
    bad, good = v.id("bad"), v.id("good")
    # "bad" never occurs in style t, so its raw identity score is 0 and it gets the floor
    c = emb.cosine(bad, good)
    raw = c / (1 + c)
    assert t.prob(bad, good) == pytest.approx(raw / (raw + IDENTITY_FLOOR), rel=1e-12)
    assert t.prob(bad, bad) == pytest.approx(IDENTITY_FLOOR / (raw + IDENTITY_FLOOR), rel=1e-12)
    assert t.top1(bad) == good


def test_dump_load_roundtrip(tmp_path):
    v, emb = random_setup(5)
    t = build_transfer_table(v, emb, Style.TARGET, k=3)
    t.dump(tmp_path / "lex.tsv", v)
    back = TransferTable.load(tmp_path / "lex.tsv", v)
    assert back.direction == Style.TARGET and back.top_k == 3
    assert back.entries == t.entries


def test_planted_pairs_are_retrieved(small_task, small_vocab):
    X, Y, task = small_task
    emb = train_sgns([X, Y], small_vocab, SGNSConfig(dim=12, epochs=10, seed=2))
    t = build_transfer_table(small_vocab, emb, Style.SOURCE)
    hits = sum(t.top1(small_vocab.id(s)) == small_vocab.id(w) for s, w in task.pairs)
    assert hits >= len(task.pairs) - 1
