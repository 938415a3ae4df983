import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from styleumt.embedding import EmbeddingMatrix, SGNSConfig, train_sgns


@pytest.fixture(scope="module")
def trained(small_task, small_vocab):
    X, Y, _ = small_task
    return train_sgns([X, Y], small_vocab, SGNSConfig(dim=12, epochs=4, seed=4))


def test_sgns_is_reproducible(small_task, small_vocab, trained):
    X, Y, _ = small_task
    again = train_sgns([X, Y], small_vocab, SGNSConfig(dim=12, epochs=4, seed=4))
    assert np.array_equal(again.vectors, trained.vectors)


def test_sgns_loss_decreases(trained):
    h = trained.loss_history
    assert len(h) == 4 and h[-1] < h[0]


def test_specials_are_untrained(trained, small_vocab):
    assert not trained.trained[:4].any()
    assert trained.trained[4:].all()
    with pytest.raises(KeyError):
        trained.cosine(0, 5)


def test_swap_pairs_share_contexts(trained, small_task, small_vocab):
    # each swapped pair occurs in identical contexts, so it should be closer than a random word
    _, _, task = small_task
    v = small_vocab
    ranks = []
    for s, t in task.pairs:
        row = trained.cosine_row(v.id(s))
        others = [row[i] for i in range(4, len(v)) if i != v.id(s)]
        ranks.append(sum(o > row[v.id(t)] for o in others))
    assert np.median(ranks) <= 3


def test_dump_load_roundtrip(tmp_path, trained, small_vocab):
    trained.dump(tmp_path / "e.txt")
    back = EmbeddingMatrix.load(tmp_path / "e.txt", small_vocab)
    assert np.array_equal(back.vectors, trained.vectors)
    assert np.array_equal(back.trained, trained.trained)


def test_rejects_bad_config(small_task, small_vocab):
    X, Y, _ = small_task
    with pytest.raises(ValueError):
        train_sgns([X, Y], small_vocab, SGNSConfig(dim=1))


@given(st.integers(0, 10_000))
def test_cosine_properties(seed):
    rng = np.random.default_rng(seed)
    vecs = rng.normal(size=(6, 4)) * rng.uniform(0.01, 100)
    emb = EmbeddingMatrix([f"w{i}" for i in range(6)], vecs)
    for a in range(6):
        row = emb.cosine_row(a)
        assert row[a] == 1.0
        for b in range(6):
            c = emb.cosine(a, b)
            assert -1.0 <= c <= 1.0
            assert c == emb.cosine(b, a)
            assert c == pytest.approx(row[b], abs=1e-15)
    # cosine is scale invariant
    assert np.allclose(emb.scaled(3.5).cosine_row(0), emb.cosine_row(0))
