"""Case-insensitive corpus BLEU and classifier-based transfer accuracy."""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import asdict, dataclass, field

from .corpus import Style, detokenize


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _tok(s):
    if isinstance(s, str):
        s = s.split()
    return [t.lower() for t in s]


def bleu_stats(hypotheses, references, max_n=4):
    """Summed (hyp_len, ref_len, [matches_n], [totals_n]) over the corpus."""
    if len(hypotheses) != len(references):
        raise ValueError(f"{len(hypotheses)} hypotheses vs {len(references)} references")
    if not hypotheses:
        raise ValueError("corpus_bleu: empty corpus")
    c = r = 0
    match = [0] * max_n
    total = [0] * max_n
    for h, ref in zip(hypotheses, references):
        h, ref = _tok(h), _tok(ref)
        c += len(h)
        r += len(ref)
        for n in range(1, max_n + 1):
            hn, rn = _ngrams(h, n), _ngrams(ref, n)
            match[n - 1] += sum(min(cnt, rn[g]) for g, cnt in hn.items())
            total[n - 1] += max(len(h) - n + 1, 0)
    return c, r, match, total


def corpus_bleu(hypotheses, references, max_n=4) -> float:
    """BLEU-4 in percent, unsmoothed, single reference, case-folded.

    Sentences may be token sequences or whitespace-tokenized strings.
    """
    c, r, match, total = bleu_stats(hypotheses, references, max_n)
    if c == 0 or any(m == 0 for m in match):
        return 0.0
    log_prec = sum(math.log(m / t) for m, t in zip(match, total)) / max_n
    bp = 1.0 if c > r else math.exp(1.0 - r / c)
    return 100.0 * bp * math.exp(log_prec)


def transfer_accuracy(outputs, target: Style, eval_clf) -> float:
    """Fraction of outputs the classifier puts in ``target`` with probability > 0.5."""
    if not outputs:
        raise ValueError("transfer_accuracy: no outputs")
    probs = style_probabilities(outputs, target, eval_clf)
    return sum(1 for p in probs if p is not None and p > 0.5) / len(outputs)


def style_probabilities(outputs, target: Style, eval_clf):
    """Classifier probability of ``target`` per output; ``None`` for empty outputs."""
    if not getattr(eval_clf, "trained", False):
        raise ValueError("evaluation classifier is not trained")
    nonempty = [i for i, o in enumerate(outputs) if len(o) > 0]
    q_t = eval_clf.predict_batch([outputs[i] for i in nonempty]) if nonempty else []
    probs = [None] * len(outputs)
    for i, q in zip(nonempty, q_t):
        probs[i] = float(q) if Style(target) == Style.TARGET else 1.0 - float(q)
    return probs


@dataclass
class SentenceRecord:
    input: str
    output: str
    reference: str | None
    probability: float | None
    error: str | None = None


@dataclass
class EvalReport:
    system: str
    target: int
    transfer_accuracy: float
    bleu: float | None
    records: list[SentenceRecord] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def table(self) -> str:
        bleu = "-" if self.bleu is None else f"{self.bleu:.2f}"
        return (f"{'system':<24} {'accuracy':>9} {'BLEU':>7}\n"
                f"{self.system:<24} {100 * self.transfer_accuracy:>8.1f}% {bleu:>7}")

    def dump_tsv(self, path):
        with open(path, "w", encoding="utf-8") as f:
            f.write("input\toutput\treference\tprobability\terror\n")
            for r in self.records:
                p = "" if r.probability is None else f"{r.probability:.6f}"
                f.write(f"{r.input}\t{r.output}\t{r.reference or ''}\t{p}\t{r.error or ''}\n")

    def write(self, stem):
        with open(f"{stem}.json", "w", encoding="utf-8") as f:
            f.write(self.to_json() + "\n")
        with open(f"{stem}.txt", "w", encoding="utf-8") as f:
            f.write(self.table() + "\n")
        self.dump_tsv(f"{stem}.tsv")


def evaluate_system(system, test, eval_clf, references=None, target: Style | None = None, name="system"):
    """Run ``system`` (tokens -> tokens) over ``test`` and score the outputs.

    ``target`` defaults to the style opposite the test corpus. A failing
    sentence yields an empty output, counted as a style failure.
    """
    sents = list(test.sentences) if hasattr(test, "sentences") else list(test)
    if not sents:
        raise ValueError("evaluate_system: empty test set")
    if target is None:
        target = test.style.id.other
    if references is not None and len(references) != len(sents):
        raise ValueError("references must align with the test set")
    outputs, errors = [], []
    for s in sents:
        try:
            outputs.append(tuple(system(s)))
            errors.append(None)
        except Exception as exc:  # recorded per sentence, never fatal
            outputs.append(())
            errors.append(f"{type(exc).__name__}: {exc}")
    probs = style_probabilities(outputs, target, eval_clf)
    acc = sum(1 for p in probs if p is not None and p > 0.5) / len(outputs)
    bleu = corpus_bleu(outputs, references) if references is not None else None
    records = [SentenceRecord(detokenize(s), detokenize(o),
                              None if references is None else detokenize(references[i]), probs[i], errors[i])
               for i, (s, o) in enumerate(zip(sents, outputs))]
    return EvalReport(name, int(target), acc, bleu, records)
