"""Corpus ingestion, the shared two-style vocabulary, and the synthetic task."""

from __future__ import annotations

import enum
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

PAD, UNK, BOS, EOS = "<pad>", "<unk>", "<s>", "</s>"
SPECIALS = (PAD, UNK, BOS, EOS)
PAD_ID, UNK_ID, BOS_ID, EOS_ID = range(4)


class CorpusError(ValueError):
    pass


class Style(enum.IntEnum):
    """The two styles of a task: ``SOURCE`` (s, file suffix 0) and ``TARGET`` (t, suffix 1)."""

    SOURCE = 0
    TARGET = 1

    @property
    def other(self) -> "Style":
        return Style(1 - self.value)


@dataclass(frozen=True)
class StyleLabel:
    id: Style
    name: str


def task_labels(source_name="negative", target_name="positive"):
    if source_name == target_name:
        raise CorpusError("style labels must be distinct")
    return StyleLabel(Style.SOURCE, source_name), StyleLabel(Style.TARGET, target_name)


@dataclass(frozen=True)
class TokenizerConfig:
    lowercase: bool = True
    max_len: int = 30
    # "drop" for training splits, "keep" for test splits, "truncate" otherwise
    long_policy: str = "drop"
    vocab_cap: int | None = None


def tokenize(line: str, lowercase=True) -> tuple[str, ...]:
    if lowercase:
        line = line.lower()
    return tuple(line.split())


def detokenize(tokens) -> str:
    return " ".join(tokens)


@dataclass(frozen=True)
class StyleCorpus:
    """Tokenized sentences of one style. Tokens are strings; see :meth:`ids`."""

    style: StyleLabel
    sentences: tuple[tuple[str, ...], ...]

    @property
    def size(self) -> int:
        return len(self.sentences)

    def __len__(self):
        return len(self.sentences)

    def __iter__(self):
        return iter(self.sentences)

    def ids(self, vocab: "Vocabulary") -> list[list[int]]:
        return [vocab.encode(s) for s in self.sentences]

    def with_vocab(self, vocab: "Vocabulary") -> "StyleCorpus":
        """Replace out-of-vocabulary tokens by ``<unk>``."""
        sents = tuple(tuple(t if t in vocab else UNK for t in s) for s in self.sentences)
        return StyleCorpus(self.style, sents)


def _filter_lengths(sentences, cfg: TokenizerConfig):
    out = []
    for s in sentences:
        if not s:
            continue
        if len(s) > cfg.max_len:
            if cfg.long_policy == "drop":
                continue
            if cfg.long_policy == "truncate":
                s = s[: cfg.max_len]
        out.append(s)
    return out


def load_corpus(path, style: StyleLabel, config: TokenizerConfig = TokenizerConfig(), vocab=None) -> StyleCorpus:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"corpus file not found: {path}")
    with path.open(encoding="utf-8") as f:
        raw = [tokenize(line, config.lowercase) for line in f]
    sents = _filter_lengths(raw, config)
    if not sents:
        raise CorpusError(f"{path}: empty corpus after filtering")
    corpus = StyleCorpus(style, tuple(sents))
    if vocab is not None:
        if config.vocab_cap is not None and len(vocab.words) > config.vocab_cap:
            raise CorpusError(f"vocabulary of {len(vocab.words)} words exceeds cap {config.vocab_cap}")
        corpus = corpus.with_vocab(vocab)
    return corpus


def corpus_path(root, task: str, split: str, style: Style) -> Path:
    return Path(root) / f"{task}.{split}.{int(style)}"


def write_corpus(corpus: StyleCorpus, path):
    Path(path).write_text("".join(detokenize(s) + "\n" for s in corpus.sentences), encoding="utf-8")


class Vocabulary:
    """Token/id bijection over both styles with per-style frequencies.

    Ids ``0..3`` are the specials; words follow in descending total frequency,
    ties broken by first occurrence (source corpus first).
    """

    def __init__(self, words, freq_source, freq_target):
        self.itos = list(SPECIALS) + list(words)
        self.stoi = {w: i for i, w in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise CorpusError("duplicate tokens in vocabulary")
        self.freq = np.zeros((2, len(self.itos)), dtype=np.int64)
        for w, c in freq_source.items():
            self.freq[0, self.stoi[w]] = c
        for w, c in freq_target.items():
            self.freq[1, self.stoi[w]] = c

    @property
    def words(self):
        return self.itos[len(SPECIALS):]

    def __len__(self):
        return len(self.itos)

    def __contains__(self, token):
        return token in self.stoi

    def id(self, token) -> int:
        return self.stoi.get(token, UNK_ID)

    def token(self, i) -> str:
        return self.itos[i]

    def encode(self, tokens) -> list[int]:
        return [self.stoi.get(t, UNK_ID) for t in tokens]

    def decode(self, ids, strip=True) -> tuple[str, ...]:
        out = []
        for i in ids:
            if strip and i == EOS_ID:
                break
            if strip and i in (PAD_ID, BOS_ID):
                continue
            out.append(self.itos[i])
        return tuple(out)

    def is_special(self, i) -> bool:
        return i < len(SPECIALS)

    def F(self, style: Style, i: int) -> int:
        return int(self.freq[int(style), i])

    def dump(self, path):
        with open(path, "w", encoding="utf-8") as f:
            for i, w in enumerate(self.itos):
                f.write(f"{w}\t{i}\t{self.freq[0, i]}\t{self.freq[1, i]}\n")

    @classmethod
    def load(cls, path):
        rows = [line.rstrip("\n").split("\t") for line in open(path, encoding="utf-8") if line.strip()]
        if [r[0] for r in rows[: len(SPECIALS)]] != list(SPECIALS):
            raise CorpusError(f"{path}: vocabulary must start with the special tokens")
        for expected, r in enumerate(rows):
            if int(r[1]) != expected:
                raise CorpusError(f"{path}: ids must be dense, got {r[1]} at row {expected}")
        words = [r[0] for r in rows[len(SPECIALS):]]
        fs = {r[0]: int(r[2]) for r in rows[len(SPECIALS):]}
        ft = {r[0]: int(r[3]) for r in rows[len(SPECIALS):]}
        return cls(words, fs, ft)

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.itos == other.itos and np.array_equal(self.freq, other.freq)


def build_vocabulary(source: StyleCorpus, target: StyleCorpus, cap=None, min_count=1) -> Vocabulary:
    if source.style.id == target.style.id:
        raise CorpusError("build_vocabulary needs one corpus per style")
    if not source.sentences or not target.sentences:
        raise CorpusError("build_vocabulary: empty corpus")
    fs = Counter(t for s in source for t in s if t not in SPECIALS)
    ft = Counter(t for s in target for t in s if t not in SPECIALS)
    first_seen = {}
    for corpus in (source, target):
        for s in corpus:
            for t in s:
                first_seen.setdefault(t, len(first_seen))
    total = fs + ft
    ranked = sorted((w for w in total if total[w] >= min_count), key=lambda w: (-total[w], first_seen[w]))
    if cap is not None:
        ranked = ranked[:cap]
    keep = set(ranked)
    return Vocabulary(ranked, {w: fs[w] for w in keep if fs[w]}, {w: ft[w] for w in keep if ft[w]})


# ---------------------------------------------------------------- synthetic task

# Each pair is (style-s word, style-t word); pairs beyond this list get invented names.
_SWAP_WORDS = [
    ("bad", "good"), ("terrible", "great"), ("rude", "friendly"), ("cold", "warm"),
    ("bland", "tasty"), ("dirty", "clean"), ("slow", "quick"), ("hate", "love"),
    ("awful", "awesome"), ("stale", "fresh"), ("overpriced", "affordable"), ("boring", "fun"),
    ("noisy", "quiet"), ("worst", "best"), ("mediocre", "excellent"), ("greasy", "crispy"),
    ("unhelpful", "helpful"), ("disappointing", "amazing"), ("cramped", "spacious"), ("sad", "happy"),
]

_NOUNS = [
    "food", "pizza", "pasta", "steak", "soup", "salad", "burger", "fries", "sushi", "coffee",
    "tea", "dessert", "bread", "staff", "waiter", "server", "manager", "owner", "room", "bed",
    "lobby", "pool", "view", "music", "patio", "table", "menu", "wine", "beer", "price",
    "bill", "parking", "location", "decor", "atmosphere", "lighting", "booth", "kitchen", "bar", "counter",
    "shop", "store", "hotel", "gym", "spa", "salon", "car", "phone", "case", "charger",
    "movie", "show", "book", "game", "hike", "trip", "flight", "seat", "drive", "ride",
]

_MODIFIERS = [
    "house", "side", "front", "corner", "family", "city", "garden", "lunch", "dinner", "morning",
    "evening", "weekend", "holiday", "summer", "winter", "spring", "downtown", "uptown", "local", "main",
    "new", "old", "little", "big", "second", "third", "last", "daily", "special", "regular",
    "thai", "greek", "french", "italian", "mexican", "indian", "korean", "cuban", "irish", "polish",
    "lemon", "cherry", "almond", "pepper", "garlic", "honey", "maple", "ginger", "olive", "mango",
    "silver", "golden", "copper", "velvet", "cotton", "marble", "cedar", "stone", "glass", "paper",
]

_PATTERNS = [
    "the {n} was {a} .",
    "the {n} is {a} .",
    "our {n} was {a} today .",
    "i think the {n} here is {a} .",
    "this {n} was really {a} .",
    "they said the {n} is very {a} .",
    "my {n} at this place was so {a} .",
    "we found the {n} {a} .",
    "the {n} was {a} and the {m} was {b} .",
    "our {n} was very {a} and the {m} is {b} .",
    "it was {a} , the {n} here .",
    "for the {n} it is {a} .",
]


@dataclass
class SyntheticTask:
    """Planted style-transfer task: templates, a bijective swap lexicon, and noun pools."""

    templates: list[str]
    swap_lexicon: dict[str, str]
    nouns: list[list[str]]
    seed: int
    coupling: float = 1.0
    modifiers: dict[str, str] = field(default_factory=dict)
    p_modifier: float = 0.0
    borrowed: frozenset = frozenset()
    borrow_rate: float = 0.0
    pairs: list[tuple[str, str]] = field(init=False)

    def __post_init__(self):
        self.pairs = list(self.swap_lexicon.items())
        if len(set(self.swap_lexicon.values())) != len(self.swap_lexicon):
            raise CorpusError("swap lexicon must be a bijection")
        self._inverse = {v: k for k, v in self.swap_lexicon.items()}

    @property
    def inverse_lexicon(self):
        return dict(self._inverse)

    def transfer(self, sentence, direction: Style = Style.SOURCE):
        """Ground truth: swap every lexicon word of the sentence's style in place.

        ``direction`` is the style of the input sentence.
        """
        table = self.swap_lexicon if direction == Style.SOURCE else self._inverse
        return tuple(table.get(t, t) for t in sentence)

    def sample(self, style: Style, n: int, rng: np.random.Generator):
        """Draw ``n`` sentences of one style; every lexicon pair is used in turn."""
        k = len(self.pairs)
        order = np.concatenate([rng.permutation(k) for _ in range(n // k + 1)])[:n]
        out = []
        for i in order:
            tpl = self.templates[rng.integers(len(self.templates))]
            j = int(rng.integers(k)) if "{b}" in tpl else None
            out.append(self._fill(tpl, int(i), j, style, rng))
        return out

    def _fill(self, tpl, i, j, style, rng):
        def word(pair):
            # style-t sentences use the style-s word of a borrowed pair at borrow_rate
            if style == Style.TARGET and pair in self.borrowed and rng.random() < self.borrow_rate:
                return self.pairs[pair][0]
            return self.pairs[pair][int(style)]

        def noun(pair):
            pool = self.nouns[pair] if rng.random() < self.coupling else self.nouns[rng.integers(len(self.nouns))]
            n = pool[rng.integers(len(pool))]
            if n in self.modifiers and rng.random() < self.p_modifier:
                return f"{self.modifiers[n]} {n}"
            return n

        fill = {"a": word(i), "n": noun(i)}
        if j is not None:
            fill.update(b=word(j), m=noun(j))
        return tuple(tpl.format(**fill).split())

    def dump(self, root):
        root = Path(root)
        root.mkdir(parents=True, exist_ok=True)
        with open(root / "swap_lexicon.tsv", "w", encoding="utf-8") as f:
            for a, b in self.pairs:
                f.write(f"{a}\t{b}\n")
        (root / "templates.txt").write_text("".join(t + "\n" for t in self.templates), encoding="utf-8")


def generate_synthetic(seed: int, n_templates=8, n_sentences=2000, lexicon_size=20, nouns_per_pair=3, coupling=1.0,
                       p_modifier=0.0, n_borrowed=0, borrow_rate=0.0):
    """Two non-parallel corpora (style s, style t) and the task that made them.

    Deterministic under ``seed``. Each lexicon pair owns a small pool of nouns
    it co-occurs with in both styles, so the swapped words share contexts.
    For ``n_borrowed`` pairs the style-t corpus uses the style-s word at
    ``borrow_rate`` (like "not bad" in a positive review).
    """
    if not 0.0 <= borrow_rate < 1.0:
        raise CorpusError("borrow_rate must be in [0, 1)")
    if lexicon_size < 2:
        raise CorpusError("lexicon_size must be >= 2")
    if n_sentences < 1:
        raise CorpusError("n_sentences must be >= 1")
    rng = np.random.default_rng(seed)
    pairs = list(_SWAP_WORDS[:lexicon_size])
    pairs += [(f"sw{i}", f"tw{i}") for i in range(len(pairs), lexicon_size)]
    n_templates = max(1, min(n_templates, len(_PATTERNS)))
    templates = [_PATTERNS[i] for i in sorted(rng.choice(len(_PATTERNS), n_templates, replace=False))]
    pool = list(_NOUNS) + [f"thing{i}" for i in range(max(0, lexicon_size * nouns_per_pair - len(_NOUNS)))]
    pool = [pool[i] for i in rng.permutation(len(pool))]
    nouns = [pool[i * nouns_per_pair:(i + 1) * nouns_per_pair] for i in range(lexicon_size)]
    mods = list(_MODIFIERS) + [f"mod{i}" for i in range(max(0, len(pool) - len(_MODIFIERS)))]
    flat = [n for ns in nouns for n in ns]
    modifiers = {n: mods[i] for i, n in enumerate(flat)}
    picked = sorted(int(i) for i in rng.choice(lexicon_size, min(n_borrowed, lexicon_size), replace=False)) \
        if n_borrowed > 0 else []
    borrowed = frozenset(picked)
    task = SyntheticTask(templates, dict(pairs), nouns, seed, coupling, modifiers, p_modifier, borrowed, borrow_rate)
    src, tgt = task_labels()
    xs = task.sample(Style.SOURCE, n_sentences, rng)
    ys = task.sample(Style.TARGET, n_sentences, rng)
    return StyleCorpus(src, tuple(xs)), StyleCorpus(tgt, tuple(ys)), task


# ---------------------------------------------------------------- pseudo-parallel data

BACKTRANSLATED = "back-translated"
SELF_SAMPLE = "self-sample"


def direction_tag(direction: Style) -> str:
    return "s2t" if Style(direction) == Style.SOURCE else "t2s"


@dataclass(frozen=True)
class PseudoPair:
    source: tuple[str, ...]
    target: tuple[str, ...]
    weight: float = 1.0
    provenance: str = BACKTRANSLATED


@dataclass
class PseudoCorpus:
    """Training pairs for one direction; ``direction`` is the style of the inputs."""

    direction: Style
    pairs: list[PseudoPair]
    epoch: int = 0

    def __len__(self):
        return len(self.pairs)

    def __post_init__(self):
        for p in self.pairs:
            if not 0.0 <= p.weight <= 1.0:
                raise CorpusError(f"pair weight {p.weight} outside [0, 1]")

    def dump(self, root):
        root = Path(root)
        root.mkdir(parents=True, exist_ok=True)
        tag = direction_tag(self.direction)
        with open(root / f"pseudo.{tag}.src", "w", encoding="utf-8") as fs, \
                open(root / f"pseudo.{tag}.tgt", "w", encoding="utf-8") as ft:
            for p in self.pairs:
                fs.write(detokenize(p.source) + "\n")
                ft.write(detokenize(p.target) + "\n")
        if any(p.provenance != BACKTRANSLATED or p.weight != 1.0 for p in self.pairs):
            with open(root / f"pseudo.{tag}.meta", "w", encoding="utf-8") as fm:
                for p in self.pairs:
                    fm.write(f"{p.weight!r}\t{p.provenance}\n")

    @classmethod
    def load(cls, root, direction: Style, epoch=0):
        root = Path(root)
        tag = direction_tag(direction)
        src = (root / f"pseudo.{tag}.src").read_text(encoding="utf-8").splitlines()
        tgt = (root / f"pseudo.{tag}.tgt").read_text(encoding="utf-8").splitlines()
        if len(src) != len(tgt):
            raise CorpusError(f"pseudo corpus {tag}: {len(src)} sources vs {len(tgt)} targets")
        meta = root / f"pseudo.{tag}.meta"
        info = ([line.split("\t") for line in meta.read_text(encoding="utf-8").splitlines()]
                if meta.exists() else [("1.0", BACKTRANSLATED)] * len(src))
        pairs = [PseudoPair(tuple(s.split()), tuple(t.split()), float(w), prov)
                 for s, t, (w, prov) in zip(src, tgt, info)]
        return cls(Style(direction), pairs, epoch)
