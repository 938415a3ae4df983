"""Binary style classifier: BiGRU encoder, masked mean pooling, sigmoid output.

The output is Q(t | sentence), the probability of the target style. Two
independently seeded instances are used: one supplies rewards during
training, the other is reserved for evaluation.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .corpus import Style, StyleCorpus, Vocabulary
from .layers import (Adadelta, NumericalError, Params, clip_global_norm, gru_params, load_checkpoint, pad_batch,
                     run_gru, save_checkpoint)


@dataclass(frozen=True)
class ClassifierConfig:
    vocab_size: int
    emb_dim: int = 300
    hidden: int = 300
    seed: int = 11
    batch_size: int = 32
    max_epochs: int = 10
    patience: int = 2
    clip: float = 2.0


class StyleClassifier:
    def __init__(self, config: ClassifierConfig, vocab: Vocabulary | None = None):
        self.config = config
        self.vocab = vocab
        self.params = _init(config)
        self.optimizer = Adadelta()
        self.trained = False
        self.dev_accuracy: float | None = None

    def logits(self, batch_ids):
        p, H = self.params, self.config.hidden
        ids, mask = pad_batch(batch_ids)
        B = ids.shape[0]
        emb = ad.embedding_lookup(p["emb"], ids)
        h0 = ad.Tensor(np.zeros((B, H)))
        fwd = run_gru(ad.add(ad.matmul(emb, p["f.W"]), p["f.b"]), h0, p["f.U"], H, mask=mask)
        bwd = run_gru(ad.add(ad.matmul(emb, p["b.W"]), p["b.b"]), h0, p["b.U"], H, mask=mask, reverse=True)
        states = ad.concat([ad.stack(fwd, axis=1), ad.stack(bwd, axis=1)], axis=-1)  # (B, T, 2H)
        weights = mask / mask.sum(axis=1, keepdims=True)
        pooled = ad.reshape(ad.matmul(ad.Tensor(weights[:, None, :]), states), (B, 2 * H))
        out = ad.add(ad.matmul(pooled, p["out.W"]), p["out.b"])
        return ad.reshape(out, (B,))

    def _ids(self, sentences):
        out = []
        for s in sentences:
            if len(s) == 0:
                raise ValueError("cannot classify an empty sentence")
            out.append(self.vocab.encode(s) if s and isinstance(s[0], str) else list(s))
        return out

    def predict_batch(self, sentences) -> np.ndarray:
        """Q(t | s) for each sentence (token strings or ids)."""
        ids = self._ids(sentences)
        out = np.empty(len(ids))
        with ad.no_grad():
            for i in range(0, len(ids), 256):
                z = self.logits(ids[i:i + 256]).data
                out[i:i + 256] = _sigmoid(z)
        return out

    def predict(self, sentence) -> float:
        return float(self.predict_batch([sentence])[0])

    def loss(self, batch_ids, labels):
        """Mean binary cross-entropy, computed stably from logits."""
        z = self.logits(batch_ids)
        y = np.asarray(labels, dtype=np.float64)
        # softplus(z) - y z, with softplus(z) = log(1 + e^z) = -log(sigmoid(-z))
        softplus = ad.neg(ad.log(ad.sigmoid(ad.neg(z))))
        return ad.mean(ad.sub(softplus, ad.mul(z, ad.Tensor(y))))

    def accuracy(self, sentences, labels) -> float:
        q = self.predict_batch(sentences)
        return float(np.mean((q > 0.5) == (np.asarray(labels) == 1)))

    # ------------------------------------------------------------ persistence

    def save(self, path):
        meta = {"kind": "classifier", "config": asdict(self.config), "trained": self.trained,
                "dev_accuracy": self.dev_accuracy}
        save_checkpoint(path, meta, {k: v.data for k, v in self.params.items()})

    @classmethod
    def load(cls, path, vocab: Vocabulary | None = None) -> "StyleClassifier":
        meta, tensors = load_checkpoint(path)
        if meta.get("kind") != "classifier":
            raise ValueError(f"{path}: not a classifier checkpoint")
        clf = cls(ClassifierConfig(**meta["config"]), vocab)
        clf.params.load_arrays(tensors)
        clf.trained = meta["trained"]
        clf.dev_accuracy = meta.get("dev_accuracy")
        return clf


def _sigmoid(z):
    return np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))), np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))


def _init(config: ClassifierConfig) -> Params:
    rng = np.random.default_rng(config.seed)
    V, E, H = config.vocab_size, config.emb_dim, config.hidden
    p = Params()
    p.add_matrix("emb", rng, V, E)
    gru_params(p, rng, "f", E, H)
    gru_params(p, rng, "b", E, H)
    p.add_matrix("out.W", rng, 2 * H, 1)
    p.add_bias("out.b", 1)
    return p


class ConstantClassifier:
    """Fixed Q(t | s); the degenerate control for reward experiments."""

    trained = True

    def __init__(self, value: float):
        self.value = float(value)

    def predict_batch(self, sentences):
        return np.full(len(sentences), self.value)

    def predict(self, sentence):
        return self.value


def _labelled(source: StyleCorpus, target: StyleCorpus, vocab: Vocabulary):
    sents = [vocab.encode(s) for s in source] + [vocab.encode(s) for s in target]
    labels = [0] * len(source) + [1] * len(target)
    keep = [i for i, s in enumerate(sents) if s]
    return [sents[i] for i in keep], np.array([labels[i] for i in keep])


def train_classifier(train: tuple[StyleCorpus, StyleCorpus], dev: tuple[StyleCorpus, StyleCorpus],
                     vocab: Vocabulary, config: ClassifierConfig, log=None) -> StyleClassifier:
    """Fit on (source-style, target-style) corpora; keep the best dev-accuracy epoch.

    Ties in accuracy go to the lower dev loss. Stops after ``patience``
    epochs without improvement.
    """
    for pair, name in ((train, "train"), (dev, "dev")):
        if any(c.size == 0 for c in pair):
            raise ValueError(f"train_classifier: {name} data must contain both styles")
        if pair[0].style.id != Style.SOURCE or pair[1].style.id != Style.TARGET:
            raise ValueError(f"train_classifier: {name} corpora must be (source, target) styled")
    x_tr, y_tr = _labelled(*train, vocab)
    x_dev, y_dev = _labelled(*dev, vocab)
    clf = StyleClassifier(config, vocab)
    rng = np.random.default_rng(config.seed)
    best, best_params, stale = (-1.0, math.inf), None, 0
    for epoch in range(config.max_epochs):
        for idx in _batches(len(x_tr), config.batch_size, rng):
            clf.params.zero_grad()
            loss = clf.loss([x_tr[i] for i in idx], y_tr[idx])
            if not math.isfinite(loss.item()):
                raise NumericalError("non-finite classifier loss")
            ad.backward(loss)
            grads = clf.params.grads()
            clip_global_norm(grads, config.clip)
            clf.optimizer.step(clf.params, grads)
        acc = clf.accuracy(x_dev, y_dev)
        with ad.no_grad():
            dev_loss = sum(clf.loss(x_dev[i:i + 256], y_dev[i:i + 256]).item() * len(y_dev[i:i + 256])
                           for i in range(0, len(x_dev), 256)) / len(x_dev)
        if log:
            log(f"classifier epoch {epoch + 1}: dev accuracy {acc:.4f} loss {dev_loss:.4f}")
        if acc > best[0] or (acc == best[0] and dev_loss < best[1]):
            best, best_params, stale = (acc, dev_loss), clf.params.copy_arrays(), 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    clf.params.load_arrays(best_params)
    clf.trained = True
    clf.dev_accuracy = best[0]
    return clf


def _batches(n, size, rng):
    idx = rng.permutation(n)
    for i in range(0, n, size):
        yield idx[i:i + size]
