import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from styleumt.corpus import BOS, EOS, UNK, build_vocabulary
from styleumt.ngram_lm import FALLBACK_DISCOUNT, NGramLM, discounts, train_lm

from .conftest import corpus_pair
from .oracles import kn_contexts


def lm_for(sentences, order):
    X, Y = corpus_pair(sentences, [["pad_word"]])
    v = build_vocabulary(X, Y)
    return train_lm(sentences, v, order), v


def check_hand_bigram():
    # corpus "a b" / "b"; outcomes are <unk> </s> a b pad_word (5 words)
    lm, _ = lm_for([["a", "b"], ["b"]], 2)
    V = 5
    D = FALLBACK_DISCOUNT  # counts-of-counts are degenerate at both orders
    # continuation counts: a <- {<s>}, b <- {a, <s>}, </s> <- {b}; total 4
    gamma1 = D * 3 / 4
    p1 = {"a": (1 - D) / 4 + gamma1 / V, "b": (2 - D) / 4 + gamma1 / V,
          EOS: (1 - D) / 4 + gamma1 / V, UNK: gamma1 / V, "pad_word": gamma1 / V}
    # context <s>: a 1, b 1
    g_bos = D * 2 / 2
    # context a: b 1 ; context b: </s> 2
    g_a = D * 1 / 1
    g_b = D * 1 / 2
    expected = {
        ("a", (BOS,)): (1 - D) / 2 + g_bos * p1["a"],
        ("b", (BOS,)): (1 - D) / 2 + g_bos * p1["b"],
        (EOS, (BOS,)): g_bos * p1[EOS],
        ("b", ("a",)): (1 - D) / 1 + g_a * p1["b"],
        ("a", ("a",)): g_a * p1["a"],
        (EOS, ("b",)): (2 - D) / 2 + g_b * p1[EOS],
        (UNK, ("b",)): g_b * p1[UNK],
    }
    assert sum(p1.values()) == pytest.approx(1.0, abs=1e-15)
    for w, p in p1.items():
        assert math.exp(lm.logp(w, ())) == pytest.approx(p, abs=1e-9)
    for (w, ctx), p in expected.items():
        assert math.exp(lm.logp(w, ctx)) == pytest.approx(p, abs=1e-9)
    # unseen words map to <unk>
    assert lm.logp("zebra", ("a",)) == lm.logp(UNK, ("a",))


def test_hand_computed_bigram():
    check_hand_bigram()


def test_discounts():
    assert discounts({1: 10, 2: 5, 3: 3, 4: 2}) == pytest.approx(
        (1 - 2 * (10 / 20) * 5 / 10, 2 - 3 * (10 / 20) * 3 / 5, 3 - 4 * (10 / 20) * 2 / 3))
    assert discounts({1: 3, 2: 1}) == (FALLBACK_DISCOUNT,) * 3


@st.composite
def corpora(draw):
    words = ["a", "b", "c", "d", "e"][: draw(st.integers(2, 5))]
    return draw(st.lists(st.lists(st.sampled_from(words), min_size=1, max_size=7), min_size=1, max_size=15))


@given(corpora(), st.integers(1, 4))
def test_conditionals_normalize(sentences, order):
    lm, v = lm_for(sentences, order)
    for ctx in kn_contexts(sentences, order):
        total = sum(math.exp(lm.logp(w, ctx)) for w in lm.outcomes)
        assert total == pytest.approx(1.0, abs=1e-6), ctx


@given(corpora(), st.integers(1, 4))
def test_arpa_roundtrip(tmp_path_factory, sentences, order):
    lm, _ = lm_for(sentences, order)
    path = tmp_path_factory.mktemp("lm") / "lm.arpa"
    lm.dump_arpa(path)
    back = NGramLM.load_arpa(path)
    assert back.order == order
    for s in sentences:
        assert back.score(s) == pytest.approx(lm.score(s), abs=1e-9)
    assert back.score(["a", "zzz"]) == pytest.approx(lm.score(["a", "zzz"]), abs=1e-9)


def test_training_text_is_likelier_than_shuffled():
    rng = np.random.default_rng(0)
    sents = [["the", "food", "was", "good"], ["the", "staff", "was", "rude"]] * 20
    lm, _ = lm_for(sents, 3)
    shuffled = [list(rng.permutation(s)) for s in sents]
    assert lm.perplexity(sents) < lm.perplexity(shuffled)


def test_rejects_bad_input():
    _, v = lm_for([["a"]], 2)
    with pytest.raises(ValueError):
        train_lm([["a"]], v, 0)
    with pytest.raises(ValueError):
        train_lm([], v, 2)
