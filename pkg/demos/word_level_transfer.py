"""
Word-level style transfer on the synthetic task
===============================================

Builds the unsupervised word-level system from scratch: skip-gram vectors,
the two transfer tables, one n-gram LM per style and the monotone decoder.
No parallel data is used anywhere; the references printed at the end come
from the generator and are only used for scoring.

    python3 demos/word_level_transfer.py
"""

import numpy as np

from styleumt.corpus import Style, build_vocabulary, generate_synthetic
from styleumt.embedding import SGNSConfig, train_sgns
from styleumt.evaluation import corpus_bleu
from styleumt.lexicon import build_transfer_table
from styleumt.ngram_lm import train_lm
from styleumt.smt_decoder import build_systems

# two non-parallel corpora; style s and style t share templates and nouns
X, Y, task = generate_synthetic(1, n_sentences=2000, nouns_per_pair=1, p_modifier=0.5, n_borrowed=8,
                                borrow_rate=0.55)
vocab = build_vocabulary(X, Y)
print(f"{len(X)} + {len(Y)} sentences, {len(vocab)} word types")
print("style s:", " ".join(X.sentences[0]))
print("style t:", " ".join(Y.sentences[0]))

# one embedding space for both styles
emb = train_sgns([X.with_vocab(vocab), Y.with_vocab(vocab)], vocab, SGNSConfig(dim=32, epochs=5, seed=2))
s2t = build_transfer_table(vocab, emb, Style.SOURCE)
t2s = build_transfer_table(vocab, emb, Style.TARGET)

# the planted pairs should come back as top-1 candidates
print("\nplanted pair        best candidate (probability)")
for s, t in task.pairs[:8]:
    best = s2t.candidates(vocab.id(s))[0]
    print(f"{s:>8} -> {t:<8}  {vocab.token(best.token):<8} ({best.prob:.2f})")

# content words keep most of their mass on themselves
word = task.nouns[0][0]
print(f"\ncandidates for {word!r}:",
      ", ".join(f"{vocab.token(c.token)} {c.prob:.2f}" for c in s2t.candidates(vocab.id(word))))

lm_s = train_lm(X.with_vocab(vocab).sentences, vocab, 4, Style.SOURCE)
lm_t = train_lm(Y.with_vocab(vocab).sentences, vocab, 4, Style.TARGET)
smt_s2t, smt_t2s = build_systems(vocab, s2t, t2s, lm_s, lm_t)

rng = np.random.default_rng(7)
test = task.sample(Style.SOURCE, 300, rng)
outputs = [smt_s2t.translate(s) for s in test]
refs = [task.transfer(s, Style.SOURCE) for s in test]
print()
for s, o in list(zip(test, outputs))[:5]:
    print(" ".join(s), "=>", " ".join(o))
print(f"\nBLEU against the generator's rewrites: {corpus_bleu(outputs, refs):.2f}")
