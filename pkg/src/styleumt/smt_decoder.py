"""Monotone word-for-word SMT transfer with five log-linear features.

Features, in the order of :class:`FeatureWeights`: forward lexicon log
probability, backward lexicon log probability, style-t LM score, style-s LM
score, and output word count. Each source position emits exactly one word,
chosen from its transfer-table candidates plus the word itself.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .corpus import BOS, EOS, PseudoCorpus, PseudoPair, Style, StyleCorpus, Vocabulary
from .lexicon import IDENTITY_FLOOR, TransferTable
from .ngram_lm import NGramLM

LOG_ZERO = -30.0


@dataclass(frozen=True)
class FeatureWeights:
    w_fwd: float = 1.0
    w_bwd: float = 1.0
    w_lm_tgt: float = 1.0  # weight of the style-t LM
    w_lm_src: float = -1.0  # weight of the style-s LM
    w_count: float = 1.0

    def __post_init__(self):
        if not all(math.isfinite(w) for w in self.as_tuple()):
            raise ValueError("feature weights must be finite")

    def as_tuple(self):
        return (self.w_fwd, self.w_bwd, self.w_lm_tgt, self.w_lm_src, self.w_count)

    @classmethod
    def default(cls, direction: Style) -> "FeatureWeights":
        """All ones, except -1 on the LM of the input style."""
        if Style(direction) == Style.SOURCE:
            return cls(1.0, 1.0, 1.0, -1.0, 1.0)
        return cls(1.0, 1.0, -1.0, 1.0, 1.0)


def _log(p):
    return math.log(p) if p > 0 else LOG_ZERO


@dataclass
class SMTSystem:
    """Transfer system for inputs of style ``fwd.direction``.

    ``fwd`` maps input-style words to output-style candidates; ``bwd`` is the
    reverse-direction table, read as P(x | y).
    """

    vocab: Vocabulary
    fwd: TransferTable
    bwd: TransferTable
    lm_source: NGramLM
    lm_target: NGramLM
    weights: FeatureWeights
    beam: int = 10

    @property
    def direction(self) -> Style:
        return self.fwd.direction

    def lexical(self, x: int, y: int) -> tuple[float, float]:
        pf = self.fwd.prob(x, y)
        pb = self.bwd.prob(y, x)
        if x == y:
            pf = pf or IDENTITY_FLOOR
            pb = pb or IDENTITY_FLOOR
        return _log(pf), _log(pb)

    def candidates(self, x: int) -> list[int]:
        cands = {c.token for c in self.fwd.candidates(x)}
        cands.add(x)
        return sorted(cands)

    def features(self, x_ids, y_ids) -> tuple[float, float, float, float, float]:
        """From-scratch feature values of emitting ``y_ids`` for ``x_ids``."""
        if len(x_ids) != len(y_ids):
            raise ValueError("monotone decoding emits one word per source word")
        fwd = bwd = 0.0
        for x, y in zip(x_ids, y_ids):
            f, b = self.lexical(x, y)
            fwd += f
            bwd += b
        toks = [self.vocab.token(i) for i in y_ids]
        return (fwd, bwd, self.lm_target.score(toks), self.lm_source.score(toks), float(len(y_ids)))

    def total(self, x_ids, y_ids) -> float:
        return sum(w * f for w, f in zip(self.weights.as_tuple(), self.features(x_ids, y_ids)))

    def decode(self, x_ids, beam=None) -> tuple[list[int], float]:
        """Best output ids and their model score."""
        beam = self.beam if beam is None else beam
        if beam < 1:
            raise ValueError("beam must be >= 1")
        w = self.weights
        order = max(self.lm_source.order, self.lm_target.order)
        keep = max(order - 1, 1)
        tok = self.vocab.token
        # state -> (score, ids); state is the LM history, so equal states share every future cost
        hyps = {(BOS,): (0.0, ())}
        for x in x_ids:
            expanded: dict[tuple, tuple[float, tuple]] = {}
            for state, (score, ids) in hyps.items():
                for y in self.candidates(x):
                    lf, lb = self.lexical(x, y)
                    word = tok(y)
                    s = (score + w.w_fwd * lf + w.w_bwd * lb + w.w_count
                         + w.w_lm_tgt * self.lm_target.logp(word, state)
                         + w.w_lm_src * self.lm_source.logp(word, state))
                    new_ids = ids + (y,)
                    key = (state + (word,))[-keep:]
                    old = expanded.get(key)
                    if old is None or (-s, new_ids) < (-old[0], old[1]):
                        expanded[key] = (s, new_ids)
            ranked = sorted(expanded.items(), key=lambda kv: (-kv[1][0], kv[1][1]))[:beam]
            hyps = dict(ranked)
        best = None
        for state, (score, ids) in hyps.items():
            s = score + w.w_lm_tgt * self.lm_target.logp(EOS, state) + w.w_lm_src * self.lm_source.logp(EOS, state)
            if best is None or (-s, ids) < (-best[0], best[1]):
                best = (s, ids)
        return list(best[1]), best[0]

    def translate(self, tokens) -> tuple[str, ...]:
        ids, _ = self.decode(self.vocab.encode(tokens))
        # out-of-vocabulary inputs can only map to themselves
        return tuple(t if t not in self.vocab else self.vocab.token(i) for t, i in zip(tokens, ids))


def smt_translate(x, tables, lms, weights: FeatureWeights, beam: int, vocab: Vocabulary):
    """Translate token sequence ``x``; ``tables=(fwd, bwd)``, ``lms=(lm_src, lm_tgt)``."""
    fwd, bwd = tables
    lm_s, lm_t = lms
    return SMTSystem(vocab, fwd, bwd, lm_s, lm_t, weights, beam).translate(x)


def build_systems(vocab, table_s2t, table_t2s, lm_s, lm_t, beam=10, weights=None):
    """Both directional systems with the default feature weights."""
    weights = weights or {}
    s2t = SMTSystem(vocab, table_s2t, table_t2s, lm_s, lm_t,
                    weights.get(Style.SOURCE, FeatureWeights.default(Style.SOURCE)), beam)
    t2s = SMTSystem(vocab, table_t2s, table_s2t, lm_s, lm_t,
                    weights.get(Style.TARGET, FeatureWeights.default(Style.TARGET)), beam)
    return s2t, t2s


def build_pseudo_corpus(X: StyleCorpus, Y: StyleCorpus, systems, forward_pairing=False):
    """Pseudo-parallel data for the s->t and t->s NMT models.

    Default back-translation pairing keeps authentic sentences on the target
    side: the s->t corpus pairs (t2s(y), y) and the t->s corpus (s2t(x), x).
    With ``forward_pairing`` the synthetic side is the target instead.
    """
    s2t, t2s = systems
    x_out = [s2t.translate(x) for x in X]
    y_out = [t2s.translate(y) for y in Y]
    if forward_pairing:
        ps = [PseudoPair(tuple(x), tuple(o)) for x, o in zip(X, x_out)]
        pt = [PseudoPair(tuple(y), tuple(o)) for y, o in zip(Y, y_out)]
    else:
        ps = [PseudoPair(tuple(o), tuple(y)) for y, o in zip(Y, y_out)]
        pt = [PseudoPair(tuple(o), tuple(x)) for x, o in zip(X, x_out)]
    return PseudoCorpus(Style.SOURCE, ps), PseudoCorpus(Style.TARGET, pt)
