"""Attentional GRU encoder-decoder.

Encoder: bidirectional GRU over source embeddings, annotations are the
concatenated forward/backward states. The decoder starts from
``tanh([h_fwd_last; h_bwd_first] W_init + b)``, attends with an additive
(MLP) score, and feeds ``[emb(y_prev); context]`` to its GRU. Output logits
come from ``tanh(W_r [s; c; emb(y_prev)] + b_r) W_o + b_o``. ``<pad>`` and
``<s>`` can never be emitted.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .corpus import BOS, EOS, PAD, Vocabulary
from .layers import (Adadelta, NumericalError, Params, clip_global_norm, gru_params, gru_step, load_checkpoint,
                     pad_batch, run_gru, save_checkpoint)

NEG_INF = -1e9


@dataclass(frozen=True)
class Seq2SeqConfig:
    vocab_size: int
    emb_dim: int = 300
    hidden: int = 300
    attn_dim: int = 300
    seed: int = 1
    bos_id: int = 2
    eos_id: int = 3
    masked_ids: tuple = (0, 2)  # <pad>, <s>

    def to_dict(self):
        d = asdict(self)
        d["masked_ids"] = list(self.masked_ids)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["masked_ids"] = tuple(d.get("masked_ids", (0, 2)))
        return cls(**d)


def max_output_len(src_len: int) -> int:
    return int(math.floor(1.5 * src_len)) + 5


@dataclass
class Hypothesis:
    tokens: tuple
    score: float
    step_logps: tuple = ()


@dataclass
class TrainStats:
    loss: float
    grad_norm: float
    updated: bool
    per_example: np.ndarray | None = None


class Seq2Seq:
    def __init__(self, config: Seq2SeqConfig):
        self.config = config
        self.params = init_params(config)
        self.optimizer = Adadelta()
        mask = np.zeros(config.vocab_size)
        mask[list(config.masked_ids)] = NEG_INF
        self._out_mask = mask

    # ------------------------------------------------------------ forward pieces

    def encode(self, src_ids: np.ndarray, src_mask: np.ndarray):
        """Annotations (B, S, 2H), their attention projection, and the initial decoder state."""
        p, H = self.params, self.config.hidden
        B = src_ids.shape[0]
        emb = ad.embedding_lookup(p["src_emb"], src_ids)
        h0 = ad.Tensor(np.zeros((B, H)))
        xf = ad.add(ad.matmul(emb, p["enc_f.W"]), p["enc_f.b"])
        xb = ad.add(ad.matmul(emb, p["enc_b.W"]), p["enc_b.b"])
        fwd = run_gru(xf, h0, p["enc_f.U"], H, mask=src_mask)
        bwd = run_gru(xb, h0, p["enc_b.U"], H, mask=src_mask, reverse=True)
        ann = ad.concat([ad.stack(fwd, axis=1), ad.stack(bwd, axis=1)], axis=-1)
        # masked forward states carry the last real state to the end
        s0 = ad.tanh(ad.add(ad.matmul(ad.concat([fwd[-1], bwd[0]], axis=-1), p["init.W"]), p["init.b"]))
        proj = ad.matmul(ann, p["att.U"])
        bias = np.where(src_mask > 0, 0.0, NEG_INF)
        return ann, proj, ad.Tensor(bias), s0

    def attend(self, s_prev, ann, proj, bias):
        """Context vector (B, 2H) and attention weights (B, S)."""
        p = self.params
        B, S = bias.shape
        q = ad.add(ad.matmul(s_prev, p["att.W"]), p["att.b"])
        e = ad.tanh(ad.add(proj, ad.expand(q, 1, S)))
        scores = ad.add(ad.reshape(ad.matmul(e, p["att.v"]), (B, S)), bias)
        alpha = ad.softmax(scores, axis=1)
        ctx = ad.reshape(ad.matmul(ad.reshape(alpha, (B, 1, S)), ann), (B, ann.shape[2]))
        return ctx, alpha

    def dec_step(self, y_prev_emb, s_prev, ann, proj, bias):
        p, H = self.params, self.config.hidden
        ctx, alpha = self.attend(s_prev, ann, proj, bias)
        xw = ad.add(ad.matmul(ad.concat([y_prev_emb, ctx], axis=-1), p["dec.W"]), p["dec.b"])
        s = gru_step(xw, s_prev, p["dec.U"], H)
        return s, ctx, alpha

    def readout(self, s, ctx, y_prev_emb):
        p = self.params
        r = ad.tanh(ad.add(ad.matmul(ad.concat([s, ctx, y_prev_emb], axis=-1), p["read.W"]), p["read.b"]))
        return ad.add(ad.add(ad.matmul(r, p["out.W"]), p["out.b"]), ad.Tensor(self._out_mask))

    def token_nll(self, sources, targets):
        """Per-token negative log-likelihood (B, T) and the target mask (B, T).

        Targets are scored with ``</s>`` appended.
        """
        cfg = self.config
        src_ids, src_mask = pad_batch([list(s) for s in sources])
        tgt = [list(t) + [cfg.eos_id] for t in targets]
        tgt_ids, tgt_mask = pad_batch(tgt)
        prev_ids = np.concatenate([np.full((len(tgt), 1), cfg.bos_id), tgt_ids[:, :-1]], axis=1)
        ann, proj, bias, s = self.encode(src_ids, src_mask)
        prev_emb = ad.embedding_lookup(self.params["tgt_emb"], prev_ids)
        B, T = tgt_ids.shape
        states, ctxs = [], []
        for j in range(T):
            s, ctx, _ = self.dec_step(prev_emb[:, j, :], s, ann, proj, bias)
            states.append(s)
            ctxs.append(ctx)
        logits = self.readout(ad.stack(states, axis=1), ad.stack(ctxs, axis=1), prev_emb)
        nll = ad.cross_entropy(ad.reshape(logits, (B * T, cfg.vocab_size)), tgt_ids.reshape(-1))
        return ad.reshape(nll, (B, T)), tgt_mask

    # ------------------------------------------------------------ scoring / training

    def log_prob(self, x, y) -> tuple[float, list[float]]:
        """log P(y + </s> | x) and its per-step terms."""
        with ad.no_grad():
            nll, mask = self.token_nll([x], [y])
        steps = [-float(v) for v in nll.data[0][mask[0] > 0]]
        return float(sum(steps)), steps

    def batch_log_prob(self, sources, targets) -> np.ndarray:
        with ad.no_grad():
            nll, mask = self.token_nll(sources, targets)
        return -(nll.data * mask).sum(axis=1)

    def weighted_loss(self, sources, targets, weights):
        """sum_i w_i * NLL_i / sum_i w_i as a graph node, plus per-example NLL values."""
        w = np.asarray(weights, dtype=np.float64)
        nll, mask = self.token_nll(sources, targets)
        per_ex = ad.sum_(ad.mul(nll, ad.Tensor(mask)), axis=1)
        loss = ad.scale(ad.dot(per_ex, ad.Tensor(w)), 1.0 / w.sum())
        return loss, per_ex.data

    def train_step(self, sources, targets, weights=None, clip=2.0) -> TrainStats:
        """One Adadelta update on a weighted minibatch.

        An all-zero weight vector leaves the parameters untouched.
        """
        if weights is None:
            weights = np.ones(len(sources))
        weights = np.asarray(weights, dtype=np.float64)
        if len(weights) != len(sources) or len(targets) != len(sources):
            raise ValueError("sources, targets and weights must align")
        if np.any(weights < 0) or not np.all(np.isfinite(weights)):
            raise ValueError("weights must be finite and non-negative")
        if weights.sum() <= 0:
            return TrainStats(0.0, 0.0, False)
        self.params.zero_grad()
        loss, per_ex = self.weighted_loss(sources, targets, weights)
        if not math.isfinite(loss.item()):
            bad = int(np.flatnonzero(~np.isfinite(per_ex))[0]) if np.any(~np.isfinite(per_ex)) else 0
            raise NumericalError(f"non-finite loss on example {bad}", (sources[bad], targets[bad]))
        ad.backward(loss)
        grads = self.params.grads()
        norm = clip_global_norm(grads, clip)
        self.optimizer.step(self.params, grads)
        return TrainStats(loss.item(), norm, True, per_ex)

    # ------------------------------------------------------------ decoding

    def step_logprobs(self, prev_ids, s, ann, proj, bias):
        emb = ad.embedding_lookup(self.params["tgt_emb"], prev_ids)
        s, ctx, alpha = self.dec_step(emb, s, ann, proj, bias)
        logits = self.readout(s, ctx, emb).data
        m = logits.max(axis=1, keepdims=True)
        lp = logits - m - np.log(np.exp(logits - m).sum(axis=1, keepdims=True))
        return lp, s, alpha.data

    def beam_search(self, sources, beam=12, n_best=1, max_len=None) -> list[list[Hypothesis]]:
        """Shrinking-beam search; scores are unnormalized log-probabilities.

        Each finished hypothesis (``</s>`` emitted or length limit reached)
        takes one slot, so at most ``beam`` hypotheses finish per sentence.
        Candidates are ranked by score, then token id, then parent slot.
        """
        if beam < 1:
            raise ValueError("beam must be >= 1")
        cfg = self.config
        results: list[list[Hypothesis]] = []
        with ad.no_grad():
            for start in range(0, len(sources), 64):
                results.extend(self._beam_chunk(sources[start:start + 64], beam, n_best, max_len))
        return results

    def _beam_chunk(self, sources, beam, n_best, max_len):
        cfg = self.config
        V = cfg.vocab_size
        B = len(sources)
        empty = [i for i, s in enumerate(sources) if len(s) == 0]
        if empty:
            raise ValueError(f"cannot decode an empty source (index {empty[0]})")
        src_ids, src_mask = pad_batch([list(s) for s in sources])
        ann, proj, bias, s0 = self.encode(src_ids, src_mask)
        limits = [max_output_len(len(s)) if max_len is None else max_len for s in sources]

        # live hypotheses: per sentence a list of (score, tokens, step_logps, row)
        live = [[(0.0, (), ())] for _ in range(B)]
        finished: list[list[Hypothesis]] = [[] for _ in range(B)]
        rows_src = np.arange(B)
        state = s0.data
        prev = np.full(B, cfg.bos_id)
        step = 0
        while rows_src.size:
            sel = rows_src
            lp, s_new, _ = self.step_logprobs(
                prev, ad.Tensor(state), ad.Tensor(ann.data[sel]), ad.Tensor(proj.data[sel]),
                ad.Tensor(bias.data[sel]))
            step += 1
            new_rows, new_state, new_prev, new_live = [], [], [], [[] for _ in range(B)]
            r = 0
            for b in range(B):
                hyps = live[b]
                if not hyps:
                    continue
                block = lp[r:r + len(hyps)]
                base = np.array([h[0] for h in hyps])
                cand = (base[:, None] + block).ravel()
                parent = np.repeat(np.arange(len(hyps)), V)
                token = np.tile(np.arange(V), len(hyps))
                slots = beam - len(finished[b])
                valid = cand > NEG_INF / 2
                order = np.lexsort((parent, token, -cand))
                order = order[valid[order]][:slots]
                for k in order:
                    pi, tok = int(parent[k]), int(token[k])
                    sc, toks, steps = hyps[pi]
                    toks2 = toks + (tok,)
                    steps2 = steps + (float(block[pi, tok]),)
                    total = float(cand[k])
                    if tok == cfg.eos_id:
                        finished[b].append(Hypothesis(toks, total, steps2))
                    elif step >= limits[b]:
                        finished[b].append(Hypothesis(toks2, total, steps2))
                    else:
                        new_live[b].append((total, toks2, steps2))
                        new_rows.append(b)
                        new_state.append(s_new.data[r + pi])
                        new_prev.append(tok)
                r += len(hyps)
            live = new_live
            rows_src = np.array(new_rows, dtype=np.int64)
            if rows_src.size:
                state = np.stack(new_state)
                prev = np.array(new_prev)
        out = []
        for b in range(B):
            hs = sorted(finished[b], key=lambda h: (-h.score, h.tokens))
            out.append(hs[:n_best])
        return out

    def translate(self, tokens, vocab: Vocabulary, beam=12) -> tuple[str, ...]:
        ids = vocab.encode(tokens)
        best = self.beam_search([ids], beam=beam)[0][0]
        return tuple(vocab.token(i) for i in best.tokens)

    def attention_weights(self, x, y) -> np.ndarray:
        """(len(y)+1, len(x)) attention matrix under teacher forcing."""
        cfg = self.config
        with ad.no_grad():
            src_ids, src_mask = pad_batch([list(x)])
            ann, proj, bias, s = self.encode(src_ids, src_mask)
            prev = [cfg.bos_id] + list(y)
            rows = []
            for tok in prev:
                emb = ad.embedding_lookup(self.params["tgt_emb"], np.array([tok]))
                s, _, alpha = self.dec_step(emb, s, ann, proj, bias)
                rows.append(alpha.data[0])
        return np.stack(rows)

    # ------------------------------------------------------------ persistence

    def warm_start(self, vectors: np.ndarray):
        """Copy pretrained word vectors (V, E) into both embedding tables."""
        if vectors.shape != self.params["src_emb"].shape:
            raise ValueError(f"embedding shape {vectors.shape} != {self.params['src_emb'].shape}")
        for k in ("src_emb", "tgt_emb"):
            self.params[k].data = np.array(vectors, dtype=np.float64)

    def save(self, path, extra: dict | None = None):
        tensors = {f"param/{k}": v.data for k, v in self.params.items()}
        tensors.update({f"opt/{k}": v for k, v in self.optimizer.state_arrays().items()})
        meta = {"kind": "seq2seq", "config": self.config.to_dict(), "opt_steps": self.optimizer.steps}
        if extra:
            meta["extra"] = extra
        save_checkpoint(path, meta, tensors)

    @classmethod
    def load(cls, path) -> "Seq2Seq":
        meta, tensors = load_checkpoint(path)
        if meta.get("kind") != "seq2seq":
            raise ValueError(f"{path}: not a seq2seq checkpoint")
        model = cls(Seq2SeqConfig.from_dict(meta["config"]))
        model.params.load_arrays({k[6:]: v for k, v in tensors.items() if k.startswith("param/")})
        model.optimizer.load_state_arrays({k[4:]: v for k, v in tensors.items() if k.startswith("opt/")})
        model.optimizer.steps = meta.get("opt_steps", 0)
        return model

    def clone(self) -> "Seq2Seq":
        other = Seq2Seq(self.config)
        other.params.load_arrays(self.params.copy_arrays())
        return other


def init_params(config: Seq2SeqConfig) -> Params:
    """Weights ~ N(0, 6 / (rows + cols)) in standard deviation terms, biases zero."""
    rng = np.random.default_rng(config.seed)
    V, E, H, A = config.vocab_size, config.emb_dim, config.hidden, config.attn_dim
    p = Params()
    p.add_matrix("src_emb", rng, V, E)
    p.add_matrix("tgt_emb", rng, V, E)
    gru_params(p, rng, "enc_f", E, H)
    gru_params(p, rng, "enc_b", E, H)
    p.add_matrix("init.W", rng, 2 * H, H)
    p.add_bias("init.b", H)
    p.add_matrix("att.W", rng, H, A)
    p.add_bias("att.b", A)
    p.add_matrix("att.U", rng, 2 * H, A)
    p.add_matrix("att.v", rng, A, 1)
    gru_params(p, rng, "dec", E + 2 * H, H)
    p.add_matrix("read.W", rng, H + 2 * H + E, H)
    p.add_bias("read.b", H)
    p.add_matrix("out.W", rng, H, V)
    p.add_bias("out.b", V)
    return p


def vocab_config(vocab: Vocabulary, **kw) -> Seq2SeqConfig:
    return Seq2SeqConfig(vocab_size=len(vocab), bos_id=vocab.id(BOS), eos_id=vocab.id(EOS),
                         masked_ids=(vocab.id(PAD), vocab.id(BOS)), **kw)


def minibatches(n: int, batch_size: int, rng: np.random.Generator | None):
    idx = np.arange(n) if rng is None else rng.permutation(n)
    for i in range(0, n, batch_size):
        yield idx[i:i + batch_size]
