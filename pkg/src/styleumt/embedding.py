"""Skip-gram with negative sampling over the union of both style corpora."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .corpus import SPECIALS, Vocabulary

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SGNSConfig:
    dim: int = 300
    window: int = 5
    negatives: int = 5
    epochs: int = 5
    lr: float = 0.025
    seed: int = 1
    batch: int = 64


class EmbeddingMatrix:
    def __init__(self, tokens, vectors, trained=None):
        vectors = np.asarray(vectors, dtype=np.float64)
        if not np.all(np.isfinite(vectors)):
            raise ValueError("embedding contains NaN/Inf")
        self.tokens = list(tokens)
        self.vectors = vectors
        self.norms = np.linalg.norm(vectors, axis=1)
        if trained is None:
            trained = self.norms > 0
        self.trained = np.asarray(trained, dtype=bool)
        self.loss_history: list[float] = []

    @property
    def dim(self):
        return self.vectors.shape[1]

    def _check(self, i):
        if not 0 <= i < len(self.tokens) or not self.trained[i] or self.norms[i] == 0:
            raise KeyError(f"no trained vector for id {i}")

    def cosine(self, a: int, b: int) -> float:
        self._check(a)
        self._check(b)
        if a == b:
            return 1.0
        # same arithmetic as cosine_row, so both agree to the bit; elementwise
        # products and the norm product commute, hence exact symmetry
        c = float((self.vectors[a] * self.vectors[b]).sum() / (self.norms[a] * self.norms[b]))
        return min(1.0, max(-1.0, c))

    def cosine_row(self, a: int) -> np.ndarray:
        """Cosine of ``a`` against every row; untrained rows get NaN."""
        self._check(a)
        with np.errstate(invalid="ignore", divide="ignore"):
            c = (self.vectors * self.vectors[a]).sum(axis=1) / (self.norms * self.norms[a])
        c = np.clip(c, -1.0, 1.0)
        c[~self.trained] = np.nan
        c[a] = 1.0
        return c

    def scaled(self, factor: float) -> "EmbeddingMatrix":
        return EmbeddingMatrix(self.tokens, self.vectors * factor, self.trained)

    def dump(self, path):
        trained = [i for i in range(len(self.tokens)) if self.trained[i]]
        with open(path, "w", encoding="utf-8") as f:
            f.write(f"{len(trained)} {self.dim}\n")
            for i in trained:
                f.write(self.tokens[i] + " " + " ".join(repr(float(v)) for v in self.vectors[i]) + "\n")

    @classmethod
    def load(cls, path, vocab: Vocabulary):
        with open(path, encoding="utf-8") as f:
            n, d = map(int, f.readline().split())
            vecs = np.zeros((len(vocab), d))
            trained = np.zeros(len(vocab), dtype=bool)
            for _ in range(n):
                parts = f.readline().rstrip("\n").split(" ")
                if parts[0] not in vocab:
                    continue
                i = vocab.id(parts[0])
                vecs[i] = [float(v) for v in parts[1:]]
                trained[i] = True
        return cls(vocab.itos, vecs, trained)


def _pairs(sentences, window):
    centers, contexts = [], []
    for s in sentences:
        n = len(s)
        for i, w in enumerate(s):
            for j in range(max(0, i - window), min(n, i + window + 1)):
                if j != i:
                    centers.append(w)
                    contexts.append(s[j])
    return np.asarray(centers, dtype=np.int64), np.asarray(contexts, dtype=np.int64)


def train_sgns(corpora, vocab: Vocabulary, config: SGNSConfig = SGNSConfig()) -> EmbeddingMatrix:
    """Train word vectors on all sentences of ``corpora`` (StyleCorpus objects).

    Single-threaded minibatch SGD; bit-reproducible for a fixed seed.
    """
    if config.dim < 2:
        raise ValueError("dim must be >= 2")
    if config.window < 1 or config.negatives < 1:
        raise ValueError("window and negatives must be positive")
    sents = [vocab.encode(s) for c in corpora for s in c.sentences]
    sents = [s for s in sents if s]
    if not sents:
        raise ValueError("train_sgns: empty corpora")
    rng = np.random.default_rng(config.seed)
    V, d = len(vocab), config.dim
    counts = np.bincount(np.concatenate([np.asarray(s) for s in sents]), minlength=V).astype(np.float64)
    counts[: len(SPECIALS)] = 0
    noise = counts ** 0.75
    noise /= noise.sum()
    noise_cdf = np.cumsum(noise)

    w_in = (rng.random((V, d)) - 0.5) / d
    w_out = np.zeros((V, d))
    centers, contexts = _pairs(sents, config.window)
    total = config.epochs * len(centers)
    done = 0
    history = []
    for epoch in range(config.epochs):
        perm = rng.permutation(len(centers))
        epoch_loss, n = 0.0, 0
        for start in range(0, len(perm), config.batch):
            idx = perm[start:start + config.batch]
            c, o = centers[idx], contexts[idx]
            b = len(idx)
            neg = np.searchsorted(noise_cdf, rng.random((b, config.negatives)), side="right")
            neg = np.minimum(neg, V - 1)
            lr = config.lr * max(1e-4, 1.0 - done / total)
            done += b
            targets = np.concatenate([o[:, None], neg], axis=1)
            labels = np.zeros(targets.shape)
            labels[:, 0] = 1.0
            vc = w_in[c]
            vo = w_out[targets]
            score = np.einsum("bd,bkd->bk", vc, vo)
            prob = 1.0 / (1.0 + np.exp(-score))
            epoch_loss -= float(np.sum(np.log(np.where(labels > 0, prob, 1.0 - prob) + 1e-12)))
            n += b
            g = (labels - prob) * lr
            grad_in = np.einsum("bk,bkd->bd", g, vo)
            grad_out = g[:, :, None] * vc[:, None, :]
            np.add.at(w_out, targets.reshape(-1), grad_out.reshape(-1, d))
            np.add.at(w_in, c, grad_in)
        history.append(epoch_loss / max(n, 1))
        log.info("sgns epoch %d loss %.4f", epoch + 1, history[-1])
    trained = counts > 0
    w_in[~trained] = 0.0
    emb = EmbeddingMatrix(vocab.itos, w_in, trained)
    emb.loss_history = history
    return emb
