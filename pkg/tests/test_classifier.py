import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from styleumt import autodiff as ad
from styleumt.backtrans import reward
from styleumt.classifier import ClassifierConfig, ConstantClassifier, StyleClassifier, train_classifier
from styleumt.corpus import Style, StyleCorpus, build_vocabulary, generate_synthetic, task_labels

from .gradcheck import TOL, check_params, random_classifier_case


@pytest.fixture(scope="module")
def separable():
    X, Y, task = generate_synthetic(5, n_sentences=400, lexicon_size=6, nouns_per_pair=2)
    v = build_vocabulary(X, Y)
    rng = np.random.default_rng(1)
    src, tgt = task_labels()
    dev = (StyleCorpus(src, tuple(task.sample(Style.SOURCE, 60, rng))),
           StyleCorpus(tgt, tuple(task.sample(Style.TARGET, 60, rng))))
    test_t = task.sample(Style.TARGET, 100, rng)
    return (X, Y), dev, test_t, v


@pytest.fixture(scope="module")
def trained(separable):
    train, dev, _, v = separable
    trace = []
    clf = train_classifier(train, dev, v, ClassifierConfig(len(v), emb_dim=8, hidden=8, max_epochs=6, patience=3),
                           log=trace.append)
    return clf, trace


@pytest.mark.parametrize("seed", range(6))
def test_loss_gradients(seed):
    clf, loss, rng = random_classifier_case(seed)
    worst, where = check_params(loss, clf.params, rng)
    assert worst < TOL, where


def test_learns_planted_styles(separable, trained):
    (X, Y), _, test_t, v = separable
    clf, _ = trained
    q = clf.predict_batch(test_t)
    assert np.mean(q > 0.9) >= 0.95
    sents = list(X.sentences) + list(Y.sentences)
    labels = [0] * len(X) + [1] * len(Y)
    assert clf.accuracy(sents, labels) >= 0.99
    assert clf.trained and clf.dev_accuracy >= 0.95


def test_training_is_deterministic(separable, trained):
    train, dev, _, v = separable
    trace = []
    train_classifier(train, dev, v, ClassifierConfig(len(v), emb_dim=8, hidden=8, max_epochs=6, patience=3), log=trace.append)
    assert trace == trained[1]


def test_untrained_output_is_a_probability(small_vocab):
    clf = StyleClassifier(ClassifierConfig(len(small_vocab), emb_dim=4, hidden=4), small_vocab)
    q = clf.predict_batch([["the", "food"], ["bad"], ["zzz", "the", "bad", "good"]])
    assert np.all((q > 0) & (q < 1))
    with pytest.raises(ValueError):
        clf.predict([])


@given(st.floats(0, 1))
def test_style_complement(q):
    sents = [("a",)]
    clf = ConstantClassifier(q)
    assert reward(clf, sents, Style.TARGET)[0] + reward(clf, sents, Style.SOURCE)[0] == 1.0


def test_pooling_is_order_free():
    # the pooled vector is a masked average of the GRU states, so permuting those states changes nothing
    rng = np.random.default_rng(0)
    states = rng.normal(size=(2, 5, 6))
    mask = np.array([[1, 1, 1, 0, 0], [1, 1, 1, 1, 1.0]])
    w = mask / mask.sum(axis=1, keepdims=True)
    pooled = (w[:, None, :] @ states)[:, 0]
    perm = np.array([2, 0, 1, 3, 4])
    pooled2 = (w[:, None, :][:, :, perm] @ states[:, perm])[:, 0]
    assert np.allclose(pooled, pooled2)
    # and the classifier itself ignores padding
    clf = StyleClassifier(ClassifierConfig(10, emb_dim=3, hidden=3))
    with ad.no_grad():
        alone = clf.logits([[4, 5, 6]]).data[0]
        padded = clf.logits([[4, 5, 6], [7, 8, 9, 4, 5]]).data[0]
    assert alone == pytest.approx(padded, abs=1e-12)


def test_seeds_give_independent_classifiers(small_vocab):
    a = StyleClassifier(ClassifierConfig(len(small_vocab), emb_dim=4, hidden=4, seed=1))
    b = StyleClassifier(ClassifierConfig(len(small_vocab), emb_dim=4, hidden=4, seed=2))
    assert not np.array_equal(a.params["emb"].data, b.params["emb"].data)
    assert a.params["emb"] is not b.params["emb"]


def test_rejects_single_class(separable):
    (X, Y), dev, _, v = separable
    empty = StyleCorpus(Y.style, ())
    with pytest.raises(ValueError):
        train_classifier((X, empty), dev, v, ClassifierConfig(len(v), emb_dim=4, hidden=4))
    with pytest.raises(ValueError):
        train_classifier((Y, X), dev, v, ClassifierConfig(len(v), emb_dim=4, hidden=4))


def test_checkpoint_roundtrip(tmp_path, separable, trained):
    _, _, test_t, v = separable
    clf, _ = trained
    clf.save(tmp_path / "c.ckpt")
    back = StyleClassifier.load(tmp_path / "c.ckpt", v)
    assert back.trained and back.dev_accuracy == clf.dev_accuracy
    assert np.array_equal(back.predict_batch(test_t[:10]), clf.predict_batch(test_t[:10]))
