"""Iterative back-translation with classifier-weighted self-samples.

Each epoch both directional models decode their inputs with the parameters
they had at the start of the epoch. The s->t model is then trained on

* back-translated pairs (x_hat, y) produced by the t->s model, weight 1, and
* its own samples (x, y_hat), weight Q(t | y_hat);

and the t->s model symmetrically with Q(s | x_hat) = 1 - Q(t | x_hat).
Generated sentences enter training as constants, so no gradient reaches
the model that produced them.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .corpus import BACKTRANSLATED, SELF_SAMPLE, PseudoCorpus, PseudoPair, Style, direction_tag
from .seq2seq import Seq2Seq, minibatches


@dataclass
class BTConfig:
    k_samples: int = 4
    beam_train: int = 4
    beam_test: int = 12
    max_epochs: int = 3
    batch_size: int = 32
    seed: int = 5
    disable_reward: bool = False
    weighting: str = "uniform"  # or "beam": renormalized hypothesis probabilities
    pretrain_epochs: int = 20
    pretrain_patience: int = 2
    dev_fraction: float = 0.05
    clip: float = 2.0

    def __post_init__(self):
        if not 1 <= self.k_samples <= self.beam_train:
            raise ValueError("need 1 <= k_samples <= beam_train")
        if self.weighting not in ("uniform", "beam"):
            raise ValueError(f"unknown weighting {self.weighting!r}")
        if self.max_epochs < 0:
            raise ValueError("max_epochs must be >= 0")


@dataclass
class TrainState:
    """Both directional models plus an append-only metric history."""

    models: dict  # Style -> Seq2Seq; key is the input style
    epoch: int = 0
    history: list = field(default_factory=list)

    @property
    def s2t(self) -> Seq2Seq:
        return self.models[Style.SOURCE]

    @property
    def t2s(self) -> Seq2Seq:
        return self.models[Style.TARGET]

    def save(self, root):
        root = Path(root)
        root.mkdir(parents=True, exist_ok=True)
        for style, m in self.models.items():
            m.save(root / f"nmt.{direction_tag(style)}.ckpt", extra={"epoch": self.epoch})
        (root / "state.json").write_text(json.dumps({"epoch": self.epoch, "history": self.history},
                                                    sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, root):
        root = Path(root)
        meta = json.loads((root / "state.json").read_text(encoding="utf-8"))
        models = {s: Seq2Seq.load(root / f"nmt.{direction_tag(s)}.ckpt") for s in (Style.SOURCE, Style.TARGET)}
        return cls(models, meta["epoch"], meta["history"])


def reward(clf, sentences, style: Style, disable=False) -> np.ndarray:
    """Classifier probability that each sentence is in ``style``; empty ones get 0."""
    if disable:
        return np.ones(len(sentences))
    if clf is None or not getattr(clf, "trained", False):
        raise ValueError("reward classifier missing or untrained")
    out = np.zeros(len(sentences))
    idx = [i for i, s in enumerate(sentences) if len(s)]
    if idx:
        q_t = np.asarray(clf.predict_batch([sentences[i] for i in idx]), dtype=np.float64)
        out[idx] = q_t if Style(style) == Style.TARGET else 1.0 - q_t
    return np.clip(out, 0.0, 1.0)


def generate_pseudo(model: Seq2Seq, direction: Style, inputs, k_samples: int, beam: int, reward_clf,
                    disable_reward=False, weighting="uniform", epoch=0):
    """Decode ``inputs`` (id sequences of style ``direction``) with a frozen model.

    Returns ``(back, own)``: back-translated pairs for the reverse model
    (hypothesis -> original, weight 1) and self-samples for this model
    (original -> hypothesis, weight = reward of the hypothesis). Hypotheses
    that are empty cannot serve as inputs and are dropped from ``back``.
    """
    if not inputs:
        raise ValueError("generate_pseudo: empty corpus")
    if not 1 <= k_samples <= beam:
        raise ValueError("need 1 <= k_samples <= beam")
    direction = Style(direction)
    results = model.beam_search(list(inputs), beam=beam, n_best=k_samples)
    srcs, hyps, mult = [], [], []
    for x, hs in zip(inputs, results):
        if weighting == "beam":
            scores = np.array([h.score for h in hs])
            p = np.exp(scores - scores.max())
            p = p / p.sum()
        else:
            p = np.ones(len(hs))
        for h, m in zip(hs, p):
            srcs.append(tuple(x))
            hyps.append(tuple(h.tokens))
            mult.append(float(m))
    rewards = reward(reward_clf, hyps, direction.other, disable_reward)
    back = [PseudoPair(h, x, float(m), BACKTRANSLATED) for x, h, m in zip(srcs, hyps, mult) if len(h)]
    own = [PseudoPair(x, h, float(r * m), SELF_SAMPLE) for x, h, r, m in zip(srcs, hyps, rewards, mult)]
    return PseudoCorpus(direction.other, back, epoch), PseudoCorpus(direction, own, epoch)


def _train_on(model: Seq2Seq, pairs, batch_size, rng, clip=2.0):
    """One pass over weighted pairs; returns per-provenance weighted mean NLL."""
    sums = {BACKTRANSLATED: [0.0, 0.0], SELF_SAMPLE: [0.0, 0.0]}
    for idx in minibatches(len(pairs), batch_size, rng):
        batch = [pairs[i] for i in idx]
        w = np.array([p.weight for p in batch])
        stats = model.train_step([p.source for p in batch], [p.target for p in batch], w, clip=clip)
        if stats.updated:
            for p, nll in zip(batch, stats.per_example):
                acc = sums[p.provenance]
                acc[0] += p.weight * nll
                acc[1] += p.weight
    return {k: (float(v[0] / v[1]) if v[1] > 0 else None) for k, v in sums.items()}


def run_epoch(state: TrainState, X, Y, reward_clf, config: BTConfig, evaluate=None, artifacts=None,
              vocab=None) -> TrainState:
    """One round of updates for both models.

    ``X`` and ``Y`` are id sequences of the two styles. ``evaluate`` maps the
    state to a dict of extra metrics logged per direction. With ``artifacts``
    the weighted training pairs of each epoch are written as text, which
    needs ``vocab``.
    """
    if artifacts is not None and vocab is None:
        raise ValueError("run_epoch: writing artifacts needs a vocabulary")
    if not config.disable_reward and (reward_clf is None or not getattr(reward_clf, "trained", False)):
        raise ValueError("run_epoch: reward classifier missing")
    k = state.epoch + 1
    rng = np.random.default_rng([config.seed, k])
    gen = {}
    for style, inputs in ((Style.SOURCE, X), (Style.TARGET, Y)):
        gen[style] = generate_pseudo(state.models[style], style, inputs, config.k_samples, config.beam_train,
                                     reward_clf, config.disable_reward, config.weighting, epoch=k)
    records = []
    for style in (Style.SOURCE, Style.TARGET):
        back = gen[style.other][0]
        own = gen[style][1]
        if artifacts is not None:
            d = Path(artifacts) / f"epoch{k}"
            d.mkdir(parents=True, exist_ok=True)
            text = [PseudoPair(vocab.decode(p.source), vocab.decode(p.target), p.weight, p.provenance)
                    for p in list(back.pairs) + list(own.pairs)]
            PseudoCorpus(style, text, k).dump(d)
        pairs = list(back.pairs) + list(own.pairs)
        losses = _train_on(state.models[style], pairs, config.batch_size, rng, config.clip)
        rewards = [p.weight for p in own.pairs]
        records.append({"epoch": k, "direction": direction_tag(style),
                        "mean_reward": float(np.mean(rewards)) if rewards else None,
                        "L1": losses[BACKTRANSLATED], "L2": losses[SELF_SAMPLE],
                        "n_back": len(back.pairs), "n_self": len(own.pairs)})
    state.epoch = k
    if evaluate is not None:
        extra = evaluate(state)
        for r in records:
            r.update(extra.get(r["direction"], {}))
    for r in records:
        state.history.append(_clean(r))
    return state


def _clean(record):
    return {k: (round(v, 10) if isinstance(v, float) and math.isfinite(v) else v) for k, v in record.items()}


def backtranslate(state: TrainState, X, Y, reward_clf, config: BTConfig, evaluate=None, artifacts=None,
                  ledger=None, log=None, vocab=None) -> TrainState:
    """Run epochs until ``config.max_epochs``; appends each record to the JSONL ``ledger``."""
    while state.epoch < config.max_epochs:
        before = len(state.history)
        run_epoch(state, X, Y, reward_clf, config, evaluate, artifacts, vocab)
        new = state.history[before:]
        if ledger is not None:
            with open(ledger, "a", encoding="utf-8") as f:
                for r in new:
                    f.write(json.dumps(r, sort_keys=True) + "\n")
        if log:
            for r in new:
                log(json.dumps(r, sort_keys=True))
    return state


# ---------------------------------------------------------------- stage-1 pretraining


def pretrain(pseudo: dict, make_model, config: BTConfig, log=None) -> TrainState:
    """MLE on stage-1 pseudo data, per direction, until dev loss stops improving.

    ``pseudo`` maps an input style to its PseudoCorpus; ``make_model`` builds
    a fresh model for a style. Weights are all treated as 1.
    """
    models = {}
    for style in (Style.SOURCE, Style.TARGET):
        corpus = pseudo[style]
        pairs = [p for p in corpus.pairs if len(p.source)]
        if not pairs:
            raise ValueError(f"pretrain: no pseudo pairs for {direction_tag(style)}")
        rng = np.random.default_rng([config.seed, int(style)])
        order = rng.permutation(len(pairs))
        n_dev = max(1, int(round(config.dev_fraction * len(pairs)))) if len(pairs) > 1 else 0
        dev = [pairs[i] for i in order[:n_dev]]
        train = [pairs[i] for i in order[n_dev:]] or dev
        model = make_model(style)
        best, best_params, stale = math.inf, model.params.copy_arrays(), 0
        for ep in range(config.pretrain_epochs):
            for idx in minibatches(len(train), config.batch_size, rng):
                batch = [train[i] for i in idx]
                model.train_step([p.source for p in batch], [p.target for p in batch], clip=config.clip)
            if dev:
                dev_loss = -float(np.mean(model.batch_log_prob([p.source for p in dev], [p.target for p in dev])))
            else:
                dev_loss = 0.0
            if log:
                log(f"pretrain {direction_tag(style)} epoch {ep + 1}: dev loss {dev_loss:.4f}")
            if dev_loss < best - 1e-9:
                best, best_params, stale = dev_loss, model.params.copy_arrays(), 0
            else:
                stale += 1
                if stale >= config.pretrain_patience:
                    break
        model.params.load_arrays(best_params)
        models[style] = model
    return TrainState(models)


def config_dict(config: BTConfig) -> dict:
    return asdict(config)
