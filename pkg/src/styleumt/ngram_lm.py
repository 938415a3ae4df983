"""Interpolated modified Kneser-Ney n-gram language models.

Training produces, for every observed n-gram, its fully interpolated
conditional probability and, for every observed context, the interpolation
weight handed to the next-lower order. That is exactly the ARPA backoff
representation, so a model read back from an ARPA file scores identically
(up to the printed precision).
"""

from __future__ import annotations

import math
from collections import Counter, defaultdict

from .corpus import BOS, EOS, PAD, UNK, Vocabulary

FALLBACK_DISCOUNT = 0.75
LOG10 = math.log(10.0)


def discounts(counts_of_counts) -> tuple[float, float, float]:
    """Chen-Goodman (D1, D2, D3+) from n1..n4, or absolute 0.75 when degenerate."""
    n1, n2, n3, n4 = (counts_of_counts.get(i, 0) for i in (1, 2, 3, 4))
    if min(n1, n2, n3, n4) == 0:
        return (FALLBACK_DISCOUNT,) * 3
    y = n1 / (n1 + 2 * n2)
    d = (1 - 2 * y * n2 / n1, 2 - 3 * y * n3 / n2, 3 - 4 * y * n4 / n3)
    if not all(0 <= di < k for di, k in zip(d, (1, 2, 3))):
        return (FALLBACK_DISCOUNT,) * 3
    return d


class NGramLM:
    """Backoff-form n-gram model; probabilities are natural-log internally.

    ``prob[n]`` maps an n-gram tuple to log p(w | h); ``bow[n]`` maps an
    n-gram (used as a context) to the log interpolation weight.
    """

    def __init__(self, order: int, vocab_words, style=None):
        self.order = order
        self.words = tuple(vocab_words)
        self.style = style
        self.prob: list[dict] = [dict() for _ in range(order + 1)]
        self.bow: list[dict] = [dict() for _ in range(order + 1)]
        self.discounts: dict[int, tuple[float, float, float]] = {}

    @property
    def outcomes(self):
        """Tokens with a predictive distribution: every word, ``<unk>`` and ``</s>``."""
        return self.words

    def _map(self, tok):
        return tok if tok in self._known else UNK

    @property
    def _known(self):
        k = getattr(self, "_known_cache", None)
        if k is None:
            k = set(self.words) | {BOS}
            self._known_cache = k
        return k

    def logp(self, word, context) -> float:
        """log p(word | context); context is a tuple of preceding tokens."""
        word = self._map(word)
        ctx = tuple(self._map(t) for t in context)[-(self.order - 1):] if self.order > 1 else ()
        return self._logp(word, ctx)

    def _logp(self, word, ctx):
        acc = 0.0
        while True:
            ng = ctx + (word,)
            lp = self.prob[len(ng)].get(ng)
            if lp is not None:
                return acc + lp
            if not ctx:
                raise KeyError(f"{word!r} has no unigram probability")
            acc += self.bow[len(ctx)].get(ctx, 0.0)
            ctx = ctx[1:]

    def state(self, context):
        return tuple(self._map(t) for t in context)[-(self.order - 1):] if self.order > 1 else ()

    def score(self, sentence) -> float:
        """Natural-log probability of ``sentence`` followed by ``</s>``."""
        ctx = (BOS,)
        total = 0.0
        for w in list(sentence) + [EOS]:
            w = self._map(w)
            c = ctx[-(self.order - 1):] if self.order > 1 else ()
            total += self._logp(w, c)
            ctx = ctx + (w,)
        return total

    def perplexity(self, sentences) -> float:
        lp = sum(self.score(s) for s in sentences)
        n = sum(len(s) + 1 for s in sentences)
        return math.exp(-lp / n)

    # ------------------------------------------------------------ ARPA

    def dump_arpa(self, path):
        with open(path, "w", encoding="utf-8") as f:
            f.write("\\data\\\n")
            for n in range(1, self.order + 1):
                size = len(self.prob[n]) + (1 if n == 1 else 0)
                f.write(f"ngram {n}={size}\n")
            for n in range(1, self.order + 1):
                f.write(f"\n\\{n}-grams:\n")
                rows = list(self.prob[n].items())
                if n == 1:
                    rows.append(((BOS,), None))
                for ng, lp in sorted(rows, key=lambda r: r[0]):
                    p10 = -99.0 if lp is None else lp / LOG10
                    line = f"{p10!r}\t{' '.join(ng)}"
                    if n < self.order and ng in self.bow[n]:
                        line += f"\t{self.bow[n][ng] / LOG10!r}"
                    f.write(line + "\n")
            f.write("\n\\end\\\n")

    @classmethod
    def load_arpa(cls, path, style=None):
        sections: dict[int, list[list[str]]] = defaultdict(list)
        order = 0
        cur = None
        with open(path, encoding="utf-8") as f:
            for line in f:
                line = line.strip()
                if not line or line == "\\data\\":
                    continue
                if line.startswith("ngram "):
                    order = max(order, int(line.split()[1].split("=")[0]))
                elif line.endswith("-grams:"):
                    cur = int(line[1:].split("-")[0])
                elif line == "\\end\\":
                    break
                elif cur is not None:
                    sections[cur].append(line.split("\t"))
        words = [r[1] for r in sections[1] if r[1] != BOS]
        lm = cls(order, words, style)
        for n, rows in sections.items():
            for r in rows:
                ng = tuple(r[1].split(" "))
                if ng != (BOS,):
                    lm.prob[n][ng] = float(r[0]) * LOG10
                if len(r) > 2:
                    lm.bow[n][ng] = float(r[2]) * LOG10
        return lm


def _adjusted_counts(sentences, order):
    """Raw counts at the top order, continuation counts below it.

    Lower-order n-grams that begin with ``<s>`` keep raw counts because no
    token can precede them.
    """
    raw = [Counter() for _ in range(order + 1)]
    for s in sentences:
        toks = [BOS] + list(s) + [EOS]
        for n in range(1, order + 1):
            for i in range(1, len(toks)):
                if i - n + 1 < 0:
                    continue
                raw[n][tuple(toks[i - n + 1:i + 1])] += 1
    adj = [Counter() for _ in range(order + 1)]
    adj[order] = raw[order]
    for n in range(order - 1, 0, -1):
        cont = Counter()
        for ng in raw[n + 1]:
            cont[ng[1:]] += 1
        for ng, c in raw[n].items():
            adj[n][ng] = c if ng[0] == BOS else cont[ng]
    return adj


def train_lm(sentences, vocab: Vocabulary, order: int = 4, style=None) -> NGramLM:
    """Fit an interpolated modified-KN model on tokenized ``sentences``.

    Tokens missing from ``vocab`` count as ``<unk>``. The lowest order
    interpolates with a uniform distribution over every vocabulary word plus
    ``<unk>`` and ``</s>``.
    """
    if order < 1:
        raise ValueError("order must be >= 1")
    sents = [[t if t in vocab else UNK for t in s] for s in sentences]
    if not sents:
        raise ValueError("train_lm: empty corpus")
    outcomes = [w for w in vocab.itos if w not in (PAD, BOS)]
    lm = NGramLM(order, outcomes, style)
    adj = _adjusted_counts(sents, order)
    lower = {(w,): 1.0 / len(outcomes) for w in outcomes}  # p at order n-1, as probabilities

    for n in range(1, order + 1):
        coc = Counter(c for c in adj[n].values() if c <= 4)
        d1, d2, d3 = lm.discounts[n] = discounts(coc)
        by_ctx: dict[tuple, dict] = defaultdict(dict)
        for ng, c in adj[n].items():
            by_ctx[ng[:-1]][ng[-1]] = c
        cur = {}
        for ctx, nexts in by_ctx.items():
            total = sum(nexts.values())
            n1 = sum(1 for c in nexts.values() if c == 1)
            n2 = sum(1 for c in nexts.values() if c == 2)
            n3 = len(nexts) - n1 - n2
            gamma = (d1 * n1 + d2 * n2 + d3 * n3) / total
            if n == 1:
                # the unigram "context" is empty: fold the uniform floor into every outcome
                for w in outcomes:
                    c = nexts.get(w, 0)
                    d = 0.0 if c == 0 else (d1 if c == 1 else d2 if c == 2 else d3)
                    cur[(w,)] = (c - d) / total + gamma / len(outcomes)
                continue
            for w, c in nexts.items():
                d = d1 if c == 1 else d2 if c == 2 else d3
                cur[ctx + (w,)] = (c - d) / total + gamma * _interp(lower, lm, ctx[1:], w)
            lm.bow[n - 1][ctx] = math.log(gamma)
        for ng, p in cur.items():
            lm.prob[n][ng] = math.log(p)
        lower = cur
    return lm


def _interp(lower, lm, ctx, w):
    """Lower-order interpolated probability p(w | ctx) using the model built so far."""
    p = lower.get(ctx + (w,))
    if p is not None:
        return p
    return math.exp(lm._logp(w, ctx))
