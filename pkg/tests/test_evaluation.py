import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from styleumt.classifier import ConstantClassifier
from styleumt.corpus import Style, StyleCorpus, task_labels
from styleumt.evaluation import bleu_stats, corpus_bleu, evaluate_system, transfer_accuracy

from .oracles import brute_force_bleu

toks = st.lists(st.sampled_from(["a", "b", "c", "d", "e"]), min_size=1, max_size=9)


def test_fixed_cases():
    refs = [["the", "food", "was", "great"], ["service", "is", "friendly", "here", "."]]
    assert corpus_bleu(refs, refs) == 100.0
    assert corpus_bleu([["x", "y"], ["z"]], refs) == 0.0
    # p1 = 3/4, p2 = 2/3, p3 = 1/2, p4 = 0/1 -> unsmoothed BLEU is zero
    c, r, match, total = bleu_stats([["a", "b", "c", "d"]], [["a", "b", "c", "e"]])
    assert (match, total) == ([3, 2, 1, 0], [4, 3, 2, 1])
    assert corpus_bleu([["a", "b", "c", "d"]], [["a", "b", "c", "e"]]) == 0.0


def test_hand_computed_brevity_penalty():
    hyp = [["a", "b", "c", "d", "e"]]
    ref = [["a", "b", "c", "d", "e", "f", "g"]]
    assert corpus_bleu(hyp, ref) == pytest.approx(100 * math.exp(1 - 7 / 5), rel=1e-12)


@pytest.mark.parametrize("seed", range(20))
def test_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    words = ["a", "b", "c", "d", "e", "f"]
    refs = [list(rng.choice(words, rng.integers(4, 12))) for _ in range(rng.integers(1, 15))]
    hyps = [[w if rng.random() < 0.8 else str(rng.choice(words)) for w in r[: len(r) - rng.integers(0, 2)]]
            for r in refs]
    assert corpus_bleu(hyps, refs) == pytest.approx(brute_force_bleu(hyps, refs), abs=0.01)


@given(st.lists(st.tuples(toks, toks), min_size=1, max_size=6), st.randoms())
def test_bleu_properties(pairs, rnd):
    hyps, refs = [list(h) for h, _ in pairs], [list(r) for _, r in pairs]
    b = corpus_bleu(hyps, refs)
    assert 0.0 <= b <= 100.0 + 1e-9
    if any(len(r) >= 4 for r in refs):
        assert corpus_bleu(refs, refs) == pytest.approx(100.0)
    else:
        # without a single 4-gram the 4-gram precision is 0/0, scored as zero
        assert corpus_bleu(refs, refs) == 0.0
    assert corpus_bleu([[t.upper() for t in h] for h in hyps], refs) == b
    order = list(range(len(pairs)))
    rnd.shuffle(order)
    assert corpus_bleu([hyps[i] for i in order], [refs[i] for i in order]) == pytest.approx(b, abs=1e-9)
    assert b == pytest.approx(brute_force_bleu(hyps, refs), abs=1e-9)


def test_bleu_errors():
    with pytest.raises(ValueError):
        corpus_bleu([["a"]], [])
    with pytest.raises(ValueError):
        corpus_bleu([], [])


def test_transfer_accuracy_rules():
    clf = ConstantClassifier(0.5)
    assert transfer_accuracy([("a",), ("b",)], Style.TARGET, clf) == 0.0
    clf = ConstantClassifier(0.7)
    assert transfer_accuracy([("a",), ()], Style.TARGET, clf) == 0.5
    assert transfer_accuracy([("a",), ()], Style.SOURCE, clf) == 0.0

    class Untrained:
        trained = False

    with pytest.raises(ValueError):
        transfer_accuracy([("a",)], Style.TARGET, Untrained())


def test_evaluate_system_records(tmp_path):
    src, _ = task_labels()
    test = StyleCorpus(src, (("the", "food", "was", "bad"), ("boom",)))
    refs = [("the", "food", "was", "good"), ("boom",)]

    def system(s):
        if s == ("boom",):
            raise RuntimeError("broken")
        return tuple("good" if t == "bad" else t for t in s)

    report = evaluate_system(system, test, ConstantClassifier(0.9), refs, name="swap")
    assert report.transfer_accuracy == 0.5
    assert report.records[1].error.startswith("RuntimeError")
    assert report.records[0].probability == pytest.approx(0.9)
    report.write(tmp_path / "r")
    data = json.loads((tmp_path / "r.json").read_text())
    assert data["system"] == "swap" and data["target"] == 1
    outs = [tuple(r["output"].split()) for r in data["records"]]
    assert corpus_bleu(outs, refs) == pytest.approx(data["bleu"])
    assert (tmp_path / "r.tsv").read_text().count("\n") == 3
    with pytest.raises(ValueError):
        evaluate_system(system, StyleCorpus(src, ()), ConstantClassifier(0.9))


def test_oracle_and_identity_systems_on_synthetic_task(small_task):
    from styleumt.classifier import ClassifierConfig, train_classifier

    X, Y, task = small_task
    from styleumt.corpus import build_vocabulary
    v = build_vocabulary(X, Y)
    clf = train_classifier((X, Y), (X, Y), v, ClassifierConfig(len(v), emb_dim=8, hidden=8, max_epochs=3))
    rng = np.random.default_rng(2)
    test = StyleCorpus(X.style, tuple(task.sample(Style.SOURCE, 60, rng)))
    refs = [task.transfer(s) for s in test.sentences]
    oracle = evaluate_system(lambda s: task.transfer(s), test, clf, refs)
    identity = evaluate_system(lambda s: s, test, clf, refs)
    assert oracle.bleu == 100.0 and oracle.transfer_accuracy >= 0.95
    assert identity.transfer_accuracy <= 0.05 and identity.bleu < 70
