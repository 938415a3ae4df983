"""Word-level transfer tables from style preference and embedding similarity.

The score of rewriting ``x`` (style a) as ``y`` (style b) is the product

    P(a | x) * P(y | x) * P(b | y)

where the outer factors are relative corpus frequencies and the middle one is
the linearly normalized, zero-clamped cosine over the ``k`` nearest words.
Scores are pruned relative to the best candidate and renormalized.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .corpus import Style, Vocabulary
from .embedding import EmbeddingMatrix

IDENTITY_FLOOR = 1e-4


@dataclass(frozen=True)
class StylePreference:
    p_source: float
    p_target: float

    def toward(self, style: Style) -> float:
        return self.p_source if style == Style.SOURCE else self.p_target


def style_preference(vocab: Vocabulary, w: int) -> StylePreference:
    fs, ft = vocab.F(Style.SOURCE, w), vocab.F(Style.TARGET, w)
    if fs + ft <= 0:
        raise ValueError(f"word id {w} has zero frequency in both styles")
    p = fs / (fs + ft)
    return StylePreference(p, 1.0 - p)


def similarity_distribution(emb: EmbeddingMatrix, x_w: int, candidates, k: int) -> dict[int, float]:
    """Top-``k`` candidates by cosine, negatives clamped, linearly normalized."""
    cands = np.array(sorted(set(int(c) for c in candidates)), dtype=np.int64)
    if cands.size == 0:
        raise ValueError("similarity_distribution: no candidates")
    row = emb.cosine_row(x_w)
    cos = row[cands]
    ok = ~np.isnan(cos)
    cands, cos = cands[ok], cos[ok]
    # descending cosine, ascending id on ties
    order = np.lexsort((cands, -cos))[:k]
    cands, cos = cands[order], np.maximum(cos[order], 0.0)
    total = cos.sum()
    if total <= 0:
        return {int(x_w): 1.0}
    return {int(c): float(v / total) for c, v in zip(cands, cos) if v > 0}


class Candidate(NamedTuple):
    token: int
    prob: float
    pref_src: float
    sim: float
    pref_tgt: float


class TransferTable:
    """Sparse map ``source id -> candidates`` sorted by probability, id on ties."""

    def __init__(self, direction: Style, entries: dict[int, list[Candidate]], top_k: int):
        self.direction = Style(direction)
        self.entries = entries
        self.top_k = top_k
        self._lookup = {x: {c.token: c.prob for c in cs} for x, cs in entries.items()}

    def candidates(self, x: int) -> list[Candidate]:
        return self.entries.get(x, [])

    def prob(self, x: int, y: int) -> float:
        return self._lookup.get(x, {}).get(y, 0.0)

    def top1(self, x: int):
        cs = self.entries.get(x)
        return cs[0].token if cs else None

    def __len__(self):
        return len(self.entries)

    def dump(self, path, vocab: Vocabulary):
        with open(path, "w", encoding="utf-8") as f:
            f.write(f"# direction={int(self.direction)} top_k={self.top_k}\n")
            for x in sorted(self.entries, key=lambda i: vocab.token(i)):
                for c in self.entries[x]:
                    f.write(f"{vocab.token(x)}\t{vocab.token(c.token)}\t{c.prob!r}\t"
                            f"{c.pref_src!r}\t{c.sim!r}\t{c.pref_tgt!r}\n")

    @classmethod
    def load(cls, path, vocab: Vocabulary):
        entries: dict[int, list[Candidate]] = {}
        with open(path, encoding="utf-8") as f:
            header = dict(kv.split("=") for kv in f.readline()[1:].split())
            for line in f:
                src, cand, *vals = line.rstrip("\n").split("\t")
                p, ps, sim, pt = map(float, vals)
                entries.setdefault(vocab.id(src), []).append(Candidate(vocab.id(cand), p, ps, sim, pt))
        return cls(Style(int(header["direction"])), entries, int(header["top_k"]))


def transferable_words(vocab: Vocabulary, emb: EmbeddingMatrix) -> list[int]:
    return [i for i in range(len(vocab))
            if not vocab.is_special(i) and emb.trained[i] and vocab.freq[:, i].sum() > 0]


def build_transfer_table(vocab: Vocabulary, emb: EmbeddingMatrix, direction: Style = Style.SOURCE,
                         k: int = 10, threshold: float = 0.2) -> TransferTable:
    """Transfer table for inputs of style ``direction`` into the other style."""
    src_style = Style(direction)
    tgt_style = src_style.other
    words = transferable_words(vocab, emb)
    prefs = {w: style_preference(vocab, w) for w in words}
    entries = {}
    for x in words:
        p_src = prefs[x].toward(src_style)
        sims = similarity_distribution(emb, x, words, k)
        raw = {y: p_src * s * prefs[y].toward(tgt_style) for y, s in sims.items()}
        best = max(raw.values())
        kept = {y: v for y, v in raw.items() if v > 0 and v >= threshold * best}
        kept[x] = max(raw.get(x, 0.0), IDENTITY_FLOOR)
        z = sum(kept.values())
        cands = [Candidate(y, v / z, p_src, sims.get(y, 0.0), prefs[y].toward(tgt_style))
                 for y, v in kept.items()]
        cands.sort(key=lambda c: (-c.prob, c.token))
        entries[x] = cands
    return TransferTable(src_style, entries, k)
