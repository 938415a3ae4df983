"""Stage orchestration over a versioned work directory.

Every stage reads its inputs from the work directory, writes its outputs
there, and records a manifest holding the resolved configuration, the seeds,
a configuration hash and the SHA-256 of each output. A stage's hash covers
its own settings and the hashes of the stages it depends on, so changing a
setting invalidates exactly the downstream artifacts.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import os
import shutil
from contextlib import contextmanager
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import backtrans as bt
from .classifier import ClassifierConfig, StyleClassifier, train_classifier
from .corpus import (PseudoCorpus, PseudoPair, Style, StyleCorpus, TokenizerConfig, Vocabulary,
                     build_vocabulary, corpus_path, direction_tag, generate_synthetic, load_corpus, task_labels,
                     write_corpus)
from .embedding import EmbeddingMatrix, SGNSConfig, train_sgns
from .evaluation import corpus_bleu, evaluate_system, transfer_accuracy
from .lexicon import TransferTable, build_transfer_table
from .ngram_lm import NGramLM, train_lm
from .seq2seq import Seq2Seq, vocab_config
from .smt_decoder import FeatureWeights, build_pseudo_corpus, build_systems

LAYOUT_VERSION = 1
log = logging.getLogger("styleumt")


class PipelineError(Exception):
    exit_code = 1


class ConfigError(PipelineError):
    exit_code = 1


class DependencyError(PipelineError):
    exit_code = 2


class LockError(PipelineError):
    exit_code = 1


# ---------------------------------------------------------------- configuration


@dataclass(frozen=True)
class PipelineConfig:
    # data
    task: str = "synthetic"
    data_dir: str = ""  # empty: use the corpora written by synth-corpus
    lowercase: bool = True
    max_len: int = 30
    vocab_cap: int = 10000
    min_count: int = 1
    # synthetic task
    synth_sentences: int = 2000
    synth_templates: int = 8
    synth_lexicon: int = 20
    synth_nouns_per_pair: int = 1
    synth_coupling: float = 1.0
    synth_modifier_rate: float = 0.5
    synth_borrowed: int = 8
    synth_borrow_rate: float = 0.55
    synth_dev: int = 200
    synth_test: int = 300
    # embeddings and lexicon
    emb_dim: int = 300
    emb_window: int = 5
    emb_negatives: int = 5
    emb_epochs: int = 5
    emb_lr: float = 0.025
    lexicon_k: int = 10
    lexicon_threshold: float = 0.2
    # language models and SMT
    lm_order: int = 4
    smt_beam: int = 10
    smt_weights_s2t: tuple = (1.0, 1.0, 1.0, -1.0, 1.0)
    smt_weights_t2s: tuple = (1.0, 1.0, -1.0, 1.0, 1.0)
    forward_pairing: bool = False
    # NMT
    nmt_emb_dim: int = 300
    nmt_hidden: int = 300
    nmt_attn_dim: int = 300
    batch_size: int = 32
    clip_norm: float = 2.0
    pretrain_epochs: int = 20
    pretrain_patience: int = 2
    warm_start_embeddings: bool = False
    # classifiers
    clf_emb_dim: int = 300
    clf_hidden: int = 300
    clf_epochs: int = 10
    clf_patience: int = 2
    # back-translation
    k_samples: int = 4
    beam_train: int = 4
    beam_test: int = 12
    max_epochs: int = 3
    weighting: str = "uniform"
    disable_reward: bool = False
    # seeds
    seed_data: int = 1
    seed_emb: int = 2
    seed_nmt: int = 3
    seed_clf_reward: int = 4
    seed_clf_eval: int = 5
    seed_bt: int = 6

    def __post_init__(self):
        problems = []
        positive = ("max_len", "vocab_cap", "min_count", "synth_sentences", "synth_templates", "synth_lexicon",
                    "synth_nouns_per_pair", "synth_dev", "synth_test", "emb_dim", "emb_window", "emb_negatives",
                    "emb_epochs", "lexicon_k", "lm_order", "smt_beam", "nmt_emb_dim", "nmt_hidden", "nmt_attn_dim",
                    "batch_size", "pretrain_epochs", "pretrain_patience", "clf_emb_dim", "clf_hidden", "clf_epochs",
                    "clf_patience", "k_samples", "beam_train", "beam_test")
        problems += [f"{k} must be >= 1" for k in positive if getattr(self, k) < 1]
        if self.max_epochs < 0 or self.synth_borrowed < 0:
            problems.append("max_epochs and synth_borrowed must be >= 0")
        if not 0 <= self.lexicon_threshold <= 1:
            problems.append("lexicon_threshold must be in [0, 1]")
        if not 0 <= self.synth_borrow_rate < 1 or not 0 <= self.synth_coupling <= 1 \
                or not 0 <= self.synth_modifier_rate <= 1:
            problems.append("synthetic rates must be in [0, 1]")
        if not 1 <= self.k_samples <= self.beam_train:
            problems.append("need 1 <= k_samples <= beam_train")
        if self.weighting not in ("uniform", "beam"):
            problems.append("weighting must be 'uniform' or 'beam'")
        for name in ("smt_weights_s2t", "smt_weights_t2s"):
            w = getattr(self, name)
            if len(w) != 5 or not all(np.isfinite(w)):
                problems.append(f"{name} needs five finite numbers")
        if self.clip_norm <= 0:
            problems.append("clip_norm must be > 0")
        if self.warm_start_embeddings and self.emb_dim != self.nmt_emb_dim:
            problems.append("warm_start_embeddings needs emb_dim == nmt_emb_dim")
        if len({self.seed_clf_reward, self.seed_clf_eval}) != 2:
            problems.append("reward and evaluation classifiers need different seeds")
        if problems:
            raise ConfigError("; ".join(problems))

    @property
    def synthetic(self) -> bool:
        return not self.data_dir

    def to_dict(self) -> dict:
        return {f.name: (list(getattr(self, f.name)) if isinstance(getattr(self, f.name), tuple)
                         else getattr(self, f.name)) for f in fields(self)}

    def to_text(self) -> str:
        lines = []
        for k, v in self.to_dict().items():
            if isinstance(v, list):
                v = ",".join(repr(float(x)) for x in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{k} = {v}")
        return "\n".join(lines) + "\n"

    def replace(self, **kw) -> "PipelineConfig":
        return dataclasses.replace(self, **kw)


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _coerce(name, ftype, text):
    text = text.strip()
    try:
        if ftype == "bool":
            if text.lower() in _TRUE:
                return True
            if text.lower() in _FALSE:
                return False
            raise ValueError(text)
        if ftype == "int":
            return int(text)
        if ftype == "float":
            return float(text)
        if ftype == "tuple":
            return tuple(float(x) for x in text.split(","))
        return text
    except ValueError:
        raise ConfigError(f"bad value for {name}: {text!r}") from None


def parse_assignments(lines, source="<overrides>") -> dict:
    types = {f.name: f.type for f in fields(PipelineConfig)}
    out = {}
    for n, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{n}: expected key=value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ConfigError(f"{source}:{n}: unknown setting {key!r}")
        out[key] = _coerce(key, types[key], value)
    return out


def load_config(path=None, overrides=()) -> PipelineConfig:
    values = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        values.update(parse_assignments(p.read_text(encoding="utf-8").splitlines(), str(p)))
    values.update(parse_assignments(overrides))
    return PipelineConfig(**values)


# ---------------------------------------------------------------- work directory


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class Workspace:
    def __init__(self, root):
        self.root = Path(root)

    def path(self, rel) -> Path:
        return self.root / rel

    def init(self):
        self.root.mkdir(parents=True, exist_ok=True)
        layout = self.root / "LAYOUT"
        if layout.exists():
            v = json.loads(layout.read_text(encoding="utf-8")).get("version")
            if v != LAYOUT_VERSION:
                raise ConfigError(f"{self.root}: work dir layout version {v}, expected {LAYOUT_VERSION}")
        else:
            layout.write_text(json.dumps({"version": LAYOUT_VERSION}) + "\n", encoding="utf-8")
        (self.root / "manifests").mkdir(exist_ok=True)

    @contextmanager
    def lock(self):
        self.init()
        lock = self.root / ".lock"
        try:
            fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            pid = lock.read_text().strip()
            if pid.isdigit() and not _alive(int(pid)):
                lock.unlink()
                fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
            else:
                raise LockError(f"{self.root} is locked by process {pid or '?'}; "
                                f"remove {lock} if that process is gone") from None
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        try:
            yield self
        finally:
            lock.unlink(missing_ok=True)

    def manifest_path(self, stage) -> Path:
        return self.root / "manifests" / f"{stage}.json"

    def read_manifest(self, stage):
        p = self.manifest_path(stage)
        if not p.exists():
            return None
        return json.loads(p.read_text(encoding="utf-8"))

    def write_manifest(self, stage, manifest):
        self.manifest_path(stage).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                                             encoding="utf-8")


def _alive(pid) -> bool:
    try:
        os.kill(pid, 0)
    except ProcessLookupError:
        return False
    except PermissionError:
        return True
    return True


# ---------------------------------------------------------------- stage registry


@dataclass(frozen=True)
class Stage:
    name: str
    deps: tuple
    keys: tuple
    seeds: tuple
    run: object


STAGES: dict[str, Stage] = {}
ORDER = ("synth-corpus", "build-vocab", "train-embeddings", "build-lexicon", "train-lm", "smt-translate",
         "make-pseudo", "pretrain-nmt", "train-classifier", "backtranslate", "evaluate")


def stage(name, deps=(), keys=(), seeds=()):
    def register(fn):
        STAGES[name] = Stage(name, tuple(deps), tuple(keys), tuple(seeds), fn)
        return fn
    return register


def stage_deps(name, cfg: PipelineConfig):
    deps = list(STAGES[name].deps)
    if name == "build-vocab" and cfg.synthetic:
        deps.append("synth-corpus")
    if name == "pretrain-nmt" and cfg.warm_start_embeddings:
        deps.append("train-embeddings")
    return deps


def _external_data_digest(cfg: PipelineConfig):
    root = Path(cfg.data_dir)
    out = {}
    for split in ("train", "dev", "test"):
        for style in Style:
            for suffix in ("", ".ref"):
                p = Path(str(corpus_path(root, cfg.task, split, style)) + suffix)
                if p.exists():
                    out[p.name] = sha256_file(p)
    return out


def stage_hash(name, cfg: PipelineConfig, _memo=None) -> str:
    memo = {} if _memo is None else _memo
    if name in memo:
        return memo[name]
    st = STAGES[name]
    d = cfg.to_dict()
    payload = {"stage": name, "layout": LAYOUT_VERSION,
               "settings": {k: d[k] for k in st.keys + st.seeds},
               "deps": {dep: stage_hash(dep, cfg, memo) for dep in stage_deps(name, cfg)}}
    if name == "build-vocab" and not cfg.synthetic:
        payload["data"] = _external_data_digest(cfg)
    h = hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]
    memo[name] = h
    return h


def artifact_status(ws: Workspace, name, cfg) -> str:
    """'ok', 'missing', 'stale' (config changed) or 'corrupt' (outputs changed)."""
    m = ws.read_manifest(name)
    if m is None:
        return "missing"
    if m.get("config_hash") != stage_hash(name, cfg):
        return "stale"
    for rel, digest in m.get("outputs", {}).items():
        p = ws.path(rel)
        if not p.exists() or sha256_file(p) != digest:
            return "corrupt"
    return "ok"


def check_dependencies(ws: Workspace, name, cfg):
    for dep in stage_deps(name, cfg):
        status = artifact_status(ws, dep, cfg)
        if status == "missing":
            raise DependencyError(f"{name} needs the output of '{dep}', which has not been run in {ws.root}; "
                                  f"run `styleumt {dep}` first")
        if status == "stale":
            raise DependencyError(f"artifacts of '{dep}' in {ws.root} were built with a different configuration; "
                                  f"rerun `styleumt {dep}` before {name}")
        if status == "corrupt":
            raise DependencyError(f"artifacts of '{dep}' in {ws.root} are missing or modified; "
                                  f"rerun `styleumt {dep}`")


def run_stage(ws: Workspace, name, cfg: PipelineConfig):
    if name not in STAGES:
        raise ConfigError(f"unknown command {name!r}")
    if name == "synth-corpus" and not cfg.synthetic:
        raise ConfigError("synth-corpus writes the synthetic task; unset data_dir to use it")
    check_dependencies(ws, name, cfg)
    st = STAGES[name]
    log.info("running %s", name)
    outputs = st.run(ws, cfg)
    d = cfg.to_dict()
    manifest = {
        "stage": name,
        "layout_version": LAYOUT_VERSION,
        "config_hash": stage_hash(name, cfg),
        "config": {k: d[k] for k in st.keys},
        "seeds": {k: d[k] for k in st.seeds},
        "inputs": {dep: stage_hash(dep, cfg) for dep in stage_deps(name, cfg)},
        "outputs": {rel: sha256_file(ws.path(rel)) for rel in sorted(outputs)},
    }
    ws.write_manifest(name, manifest)
    return manifest


def run_all(ws: Workspace, cfg: PipelineConfig):
    (ws.path("config.resolved")).write_text(cfg.to_text(), encoding="utf-8")
    for name in ORDER:
        if name == "synth-corpus" and not cfg.synthetic:
            continue
        status = artifact_status(ws, name, cfg)
        if status == "ok":
            log.info("%s: up to date", name)
            continue
        run_stage(ws, name, cfg)


# ---------------------------------------------------------------- shared loaders


def data_root(ws: Workspace, cfg: PipelineConfig) -> Path:
    return ws.path("data") if cfg.synthetic else Path(cfg.data_dir)


def load_split(ws, cfg, split, vocab=None):
    policy = "keep" if split == "test" else "drop"
    tok = TokenizerConfig(cfg.lowercase, cfg.max_len, policy)
    root = data_root(ws, cfg)
    out = []
    for label in task_labels():
        p = corpus_path(root, cfg.task, split, label.id)
        if not p.exists():
            hint = "run `styleumt synth-corpus`" if cfg.synthetic else f"check data_dir={cfg.data_dir}"
            raise DependencyError(f"corpus file missing: {p}; {hint}")
        c = load_corpus(p, label, tok)
        out.append(c.with_vocab(vocab) if vocab is not None else c)
    return tuple(out)


def load_references(ws, cfg, style: Style):
    p = Path(str(corpus_path(data_root(ws, cfg), cfg.task, "test", style)) + ".ref")
    if not p.exists():
        return None
    return [tuple(line.lower().split() if cfg.lowercase else line.split())
            for line in p.read_text(encoding="utf-8").splitlines()]


def load_vocab(ws) -> Vocabulary:
    return Vocabulary.load(ws.path("vocab.tsv"))


def weights_for(cfg, style: Style) -> FeatureWeights:
    w = cfg.smt_weights_s2t if style == Style.SOURCE else cfg.smt_weights_t2s
    return FeatureWeights(*w)


def load_smt(ws, cfg, vocab):
    tables = {s: TransferTable.load(ws.path(f"lexicon.{direction_tag(s)}.tsv"), vocab) for s in Style}
    lms = {s: NGramLM.load_arpa(ws.path(f"lm.{int(s)}.arpa"), s) for s in Style}
    weights = {s: weights_for(cfg, s) for s in Style}
    return build_systems(vocab, tables[Style.SOURCE], tables[Style.TARGET], lms[Style.SOURCE], lms[Style.TARGET],
                         cfg.smt_beam, weights)


def load_models(root) -> dict:
    return {s: Seq2Seq.load(Path(root) / f"nmt.{direction_tag(s)}.ckpt") for s in Style}


def load_classifier(ws, which, vocab) -> StyleClassifier:
    return StyleClassifier.load(ws.path(f"classifier/{which}.ckpt"), vocab)


def nmt_system(model: Seq2Seq, vocab: Vocabulary, beam: int):
    def translate(tokens):
        return model.translate(tokens, vocab, beam=beam)
    return translate


def decode_corpus(model: Seq2Seq, vocab: Vocabulary, corpus: StyleCorpus, beam: int):
    res = model.beam_search([vocab.encode(s) for s in corpus.sentences], beam=beam)
    return [tuple(vocab.token(i) for i in r[0].tokens) for r in res]


def _rel(ws, p):
    return str(Path(p).relative_to(ws.root))


# ---------------------------------------------------------------- stages


@stage("synth-corpus", keys=("task", "synth_sentences", "synth_templates", "synth_lexicon",
                             "synth_nouns_per_pair", "synth_coupling", "synth_modifier_rate", "synth_borrowed",
                             "synth_borrow_rate", "synth_dev", "synth_test"), seeds=("seed_data",))
def _synth(ws, cfg):
    X, Y, task = generate_synthetic(cfg.seed_data, n_templates=cfg.synth_templates,
                                    n_sentences=cfg.synth_sentences, lexicon_size=cfg.synth_lexicon,
                                    nouns_per_pair=cfg.synth_nouns_per_pair, coupling=cfg.synth_coupling,
                                    p_modifier=cfg.synth_modifier_rate, n_borrowed=cfg.synth_borrowed,
                                    borrow_rate=cfg.synth_borrow_rate)
    root = ws.path("data")
    if root.exists():
        shutil.rmtree(root)
    root.mkdir(parents=True)
    rng = np.random.default_rng([cfg.seed_data, 1])
    src, tgt = task_labels()
    splits = {"train": (X, Y)}
    for split, n in (("dev", cfg.synth_dev), ("test", cfg.synth_test)):
        splits[split] = (StyleCorpus(src, tuple(task.sample(Style.SOURCE, n, rng))),
                         StyleCorpus(tgt, tuple(task.sample(Style.TARGET, n, rng))))
    outs = []
    for split, pair in splits.items():
        for c in pair:
            p = corpus_path(root, cfg.task, split, c.style.id)
            write_corpus(c, p)
            outs.append(p)
    for c in splits["test"]:
        ref = Path(str(corpus_path(root, cfg.task, "test", c.style.id)) + ".ref")
        ref.write_text("".join(" ".join(task.transfer(s, c.style.id)) + "\n" for s in c.sentences),
                       encoding="utf-8")
        outs.append(ref)
    task.dump(root)
    outs += [root / "swap_lexicon.tsv", root / "templates.txt"]
    (root / "borrowed.txt").write_text("".join(f"{task.pairs[i][0]}\t{task.pairs[i][1]}\n"
                                               for i in sorted(task.borrowed)), encoding="utf-8")
    outs.append(root / "borrowed.txt")
    return [_rel(ws, p) for p in outs]


@stage("build-vocab", keys=("data_dir", "task", "lowercase", "max_len", "vocab_cap", "min_count"))
def _vocab(ws, cfg):
    X, Y = load_split(ws, cfg, "train")
    vocab = build_vocabulary(X, Y, cap=cfg.vocab_cap, min_count=cfg.min_count)
    vocab.dump(ws.path("vocab.tsv"))
    log.info("vocabulary: %d entries", len(vocab))
    return ["vocab.tsv"]


@stage("train-embeddings", deps=("build-vocab",),
       keys=("emb_dim", "emb_window", "emb_negatives", "emb_epochs", "emb_lr"), seeds=("seed_emb",))
def _embeddings(ws, cfg):
    vocab = load_vocab(ws)
    X, Y = load_split(ws, cfg, "train", vocab)
    emb = train_sgns([X, Y], vocab, SGNSConfig(dim=cfg.emb_dim, window=cfg.emb_window,
                                               negatives=cfg.emb_negatives, epochs=cfg.emb_epochs,
                                               lr=cfg.emb_lr, seed=cfg.seed_emb))
    emb.dump(ws.path("embeddings.txt"))
    return ["embeddings.txt"]


@stage("build-lexicon", deps=("train-embeddings",), keys=("lexicon_k", "lexicon_threshold"))
def _lexicon(ws, cfg):
    vocab = load_vocab(ws)
    emb = EmbeddingMatrix.load(ws.path("embeddings.txt"), vocab)
    outs = []
    for s in Style:
        table = build_transfer_table(vocab, emb, s, k=cfg.lexicon_k, threshold=cfg.lexicon_threshold)
        rel = f"lexicon.{direction_tag(s)}.tsv"
        table.dump(ws.path(rel), vocab)
        outs.append(rel)
    return outs


@stage("train-lm", deps=("build-vocab",), keys=("lm_order",))
def _lms(ws, cfg):
    vocab = load_vocab(ws)
    outs = []
    for corpus in load_split(ws, cfg, "train", vocab):
        lm = train_lm(corpus.sentences, vocab, cfg.lm_order, corpus.style.id)
        rel = f"lm.{int(corpus.style.id)}.arpa"
        lm.dump_arpa(ws.path(rel))
        outs.append(rel)
    return outs


@stage("smt-translate", deps=("build-lexicon", "train-lm"), keys=("smt_beam", "smt_weights_s2t", "smt_weights_t2s"))
def _smt_translate(ws, cfg):
    vocab = load_vocab(ws)
    systems = dict(zip(Style, load_smt(ws, cfg, vocab)))
    ws.path("smt").mkdir(exist_ok=True)
    outs = []
    for corpus in load_split(ws, cfg, "test"):
        system = systems[corpus.style.id]
        rel = f"smt/test.{direction_tag(corpus.style.id)}.out"
        ws.path(rel).write_text("".join(" ".join(system.translate(s)) + "\n" for s in corpus.sentences),
                                encoding="utf-8")
        outs.append(rel)
    return outs


@stage("make-pseudo", deps=("build-lexicon", "train-lm"),
       keys=("smt_beam", "smt_weights_s2t", "smt_weights_t2s", "forward_pairing"))
def _pseudo(ws, cfg):
    vocab = load_vocab(ws)
    X, Y = load_split(ws, cfg, "train", vocab)
    ps, pt = build_pseudo_corpus(X, Y, load_smt(ws, cfg, vocab), forward_pairing=cfg.forward_pairing)
    root = ws.path("pseudo")
    root.mkdir(exist_ok=True)
    ps.dump(root)
    pt.dump(root)
    return [_rel(ws, p) for p in sorted(root.iterdir())]


def _nmt_factory(ws, cfg, vocab):
    vectors = None
    if cfg.warm_start_embeddings:
        vectors = EmbeddingMatrix.load(ws.path("embeddings.txt"), vocab).vectors

    def make(style):
        m = Seq2Seq(vocab_config(vocab, emb_dim=cfg.nmt_emb_dim, hidden=cfg.nmt_hidden, attn_dim=cfg.nmt_attn_dim,
                                 seed=cfg.seed_nmt * 2 + int(style)))
        if vectors is not None:
            m.warm_start(vectors)
        return m
    return make


def _bt_config(cfg) -> bt.BTConfig:
    return bt.BTConfig(k_samples=cfg.k_samples, beam_train=cfg.beam_train, beam_test=cfg.beam_test,
                       max_epochs=cfg.max_epochs, batch_size=cfg.batch_size, seed=cfg.seed_bt,
                       disable_reward=cfg.disable_reward, weighting=cfg.weighting,
                       pretrain_epochs=cfg.pretrain_epochs, pretrain_patience=cfg.pretrain_patience,
                       clip=cfg.clip_norm)


@stage("pretrain-nmt", deps=("make-pseudo",),
       keys=("nmt_emb_dim", "nmt_hidden", "nmt_attn_dim", "batch_size", "clip_norm", "pretrain_epochs",
             "pretrain_patience", "warm_start_embeddings"), seeds=("seed_nmt", "seed_bt"))
def _pretrain(ws, cfg):
    vocab = load_vocab(ws)
    pseudo = {}
    for s in Style:
        pc = PseudoCorpus.load(ws.path("pseudo"), s)
        pseudo[s] = PseudoCorpus(s, [PseudoPair(tuple(vocab.encode(p.source)), tuple(vocab.encode(p.target)))
                                     for p in pc.pairs])
    state = bt.pretrain(pseudo, _nmt_factory(ws, cfg, vocab), _bt_config(cfg), log=log.info)
    root = ws.path("nmt0")
    root.mkdir(exist_ok=True)
    outs = []
    for s, m in state.models.items():
        rel = f"nmt0/nmt.{direction_tag(s)}.ckpt"
        m.save(ws.path(rel))
        outs.append(rel)
    return outs


@stage("train-classifier", deps=("build-vocab",),
       keys=("clf_emb_dim", "clf_hidden", "clf_epochs", "clf_patience", "batch_size", "clip_norm"),
       seeds=("seed_clf_reward", "seed_clf_eval"))
def _classifiers(ws, cfg):
    vocab = load_vocab(ws)
    train = load_split(ws, cfg, "train", vocab)
    dev = load_split(ws, cfg, "dev", vocab)
    ws.path("classifier").mkdir(exist_ok=True)
    outs = []
    for which, seed in (("reward", cfg.seed_clf_reward), ("eval", cfg.seed_clf_eval)):
        ccfg = ClassifierConfig(len(vocab), emb_dim=cfg.clf_emb_dim, hidden=cfg.clf_hidden, seed=seed,
                                batch_size=cfg.batch_size, max_epochs=cfg.clf_epochs, patience=cfg.clf_patience,
                                clip=cfg.clip_norm)
        clf = train_classifier(train, dev, vocab, ccfg, log=lambda m, w=which: log.info("%s %s", w, m))
        rel = f"classifier/{which}.ckpt"
        clf.save(ws.path(rel))
        outs.append(rel)
    return outs


def test_metrics(models, vocab, eval_clf, tests, refs, beam) -> dict:
    """Accuracy and BLEU per direction on the test split."""
    out = {}
    for corpus in tests:
        s = corpus.style.id
        outputs = decode_corpus(models[s], vocab, corpus, beam)
        m = {"transfer_accuracy": round(transfer_accuracy(outputs, s.other, eval_clf), 10)}
        if refs.get(s) is not None:
            m["bleu"] = round(corpus_bleu(outputs, refs[s]), 10)
        out[direction_tag(s)] = m
    return out


def _resume_key(cfg) -> str:
    d = cfg.replace(max_epochs=0)
    return stage_hash("backtranslate", d)


@stage("backtranslate", deps=("pretrain-nmt", "train-classifier"),
       keys=("k_samples", "beam_train", "beam_test", "max_epochs", "weighting", "disable_reward", "batch_size",
             "clip_norm"), seeds=("seed_bt",))
def _backtranslate(ws, cfg):
    vocab = load_vocab(ws)
    X, Y = load_split(ws, cfg, "train", vocab)
    tests = load_split(ws, cfg, "test", vocab)
    refs = {s: load_references(ws, cfg, s) for s in Style}
    reward_clf = load_classifier(ws, "reward", vocab)
    eval_clf = load_classifier(ws, "eval", vocab)
    root = ws.path("bt")
    ledger = root / "metrics.jsonl"
    key = _resume_key(cfg)
    state = None
    if (root / "state.json").exists():
        meta = json.loads((root / "state.json").read_text(encoding="utf-8"))
        if meta.get("resume_key") == key and meta.get("epoch", 0) <= cfg.max_epochs:
            state = bt.TrainState.load(root)
            _truncate_ledger(ledger, state.epoch)
            log.info("resuming back-translation after epoch %d", state.epoch)
    if state is None:
        if root.exists():
            shutil.rmtree(root)
        root.mkdir(parents=True)
        state = bt.TrainState(load_models(ws.path("nmt0")))
        base = test_metrics(state.models, vocab, eval_clf, tests, refs, cfg.beam_test)
        with open(ledger, "w", encoding="utf-8") as f:
            for tag, m in base.items():
                f.write(json.dumps({"epoch": 0, "direction": tag, **m}, sort_keys=True) + "\n")
        _save_state(root, state, key)

    def evaluate(st):
        return test_metrics(st.models, vocab, eval_clf, tests, refs, cfg.beam_test)

    bcfg = _bt_config(cfg)
    X_ids = [vocab.encode(s) for s in X.sentences]
    Y_ids = [vocab.encode(s) for s in Y.sentences]
    while state.epoch < cfg.max_epochs:
        before = len(state.history)
        bt.run_epoch(state, X_ids, Y_ids, reward_clf, bcfg, evaluate, artifacts=root, vocab=vocab)
        with open(ledger, "a", encoding="utf-8") as f:
            for r in state.history[before:]:
                f.write(json.dumps(r, sort_keys=True) + "\n")
                log.info("epoch %d %s: %s", r["epoch"], r["direction"],
                         {k: v for k, v in r.items() if k not in ("epoch", "direction")})
        _save_state(root, state, key)
    outs = [p for p in sorted(root.rglob("*")) if p.is_file()]
    return [_rel(ws, p) for p in outs]


def _save_state(root, state, key):
    state.save(root)
    meta = json.loads((root / "state.json").read_text(encoding="utf-8"))
    meta["resume_key"] = key
    (root / "state.json").write_text(json.dumps(meta, sort_keys=True) + "\n", encoding="utf-8")


def _truncate_ledger(ledger, epoch):
    if not ledger.exists():
        return
    keep = [line for line in ledger.read_text(encoding="utf-8").splitlines()
            if json.loads(line)["epoch"] <= epoch]
    ledger.write_text("".join(line + "\n" for line in keep), encoding="utf-8")


@stage("evaluate", deps=("pretrain-nmt", "backtranslate", "smt-translate", "train-classifier"), keys=("beam_test",))
def _evaluate(ws, cfg):
    vocab = load_vocab(ws)
    eval_clf = load_classifier(ws, "eval", vocab)
    tests = load_split(ws, cfg, "test")
    refs = {s: load_references(ws, cfg, s) for s in Style}
    systems = {}
    for corpus in tests:
        tag = direction_tag(corpus.style.id)
        lines = ws.path(f"smt/test.{tag}.out").read_text(encoding="utf-8").splitlines()
        table = dict(zip(corpus.sentences, (tuple(line.split()) for line in lines)))
        systems.setdefault("smt", {})[corpus.style.id] = table.__getitem__
    for name, root in (("iter0", "nmt0"), ("final", "bt")):
        models = load_models(ws.path(root))
        systems[name] = {s: nmt_system(models[s], vocab, cfg.beam_test) for s in Style}
    root = ws.path("eval")
    root.mkdir(exist_ok=True)
    summary = {}
    outs = []
    for name, per_dir in systems.items():
        reports = []
        for corpus in tests:
            s = corpus.style.id
            tag = direction_tag(s)
            report = evaluate_system(per_dir[s], corpus, eval_clf, refs[s], target=s.other, name=f"{name}.{tag}")
            stem = root / f"{name}.{tag}"
            report.write(stem)
            outs += [f"{stem}.json", f"{stem}.txt", f"{stem}.tsv"]
            summary.setdefault(name, {})[tag] = {"transfer_accuracy": report.transfer_accuracy, "bleu": report.bleu}
            reports.append(report)
        summary[name]["both"] = pooled_metrics(reports)
    (root / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    (root / "summary.txt").write_text(summary_table(summary), encoding="utf-8")
    outs += [str(root / "summary.json"), str(root / "summary.txt")]
    log.info("\n%s", summary_table(summary))
    return [_rel(ws, p) for p in outs]


def pooled_metrics(reports) -> dict:
    """Accuracy and corpus BLEU over the union of both test directions."""
    records = [r for rep in reports for r in rep.records]
    acc = sum(1 for r in records if r.probability is not None and r.probability > 0.5) / len(records)
    bleu = None
    if all(r.reference is not None for r in records):
        bleu = corpus_bleu([r.output.split() for r in records], [r.reference.split() for r in records])
    return {"transfer_accuracy": acc, "bleu": bleu}


def summary_table(summary: dict) -> str:
    lines = [f"{'system':<10} {'direction':<9} {'accuracy':>9} {'BLEU':>7}"]
    for name, per_dir in summary.items():
        for tag, m in per_dir.items():
            bleu = "-" if m["bleu"] is None else f"{m['bleu']:.2f}"
            lines.append(f"{name:<10} {tag:<9} {100 * m['transfer_accuracy']:>8.1f}% {bleu:>7}")
    return "\n".join(lines) + "\n"
