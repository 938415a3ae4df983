"""Shared building blocks: parameter init, GRU cell, Adadelta, clipping, checkpoints."""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad

CKPT_MAGIC = b"SUMTCKPT"
CKPT_VERSION = 1


class NumericalError(RuntimeError):
    """A non-finite loss or gradient; carries the offending example when known."""

    def __init__(self, message, example=None):
        super().__init__(message)
        self.example = example


def init_matrix(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    """Normal with mean 0 and standard deviation sqrt(6 / (rows + cols))."""
    return rng.normal(0.0, math.sqrt(6.0 / (rows + cols)), size=(rows, cols))


class Params(dict):
    """Ordered name -> Tensor mapping; all tensors require grad."""

    def add_matrix(self, name, rng, rows, cols):
        self[name] = ad.Tensor(init_matrix(rng, rows, cols), requires_grad=True, name=name)

    def add_bias(self, name, size):
        self[name] = ad.Tensor(np.zeros(size), requires_grad=True, name=name)

    def zero_grad(self):
        for p in self.values():
            p.grad = None

    def grads(self):
        return {k: (p.grad if p.grad is not None else np.zeros_like(p.data)) for k, p in self.items()}

    def copy_arrays(self):
        return {k: p.data.copy() for k, p in self.items()}

    def load_arrays(self, arrays):
        for k, v in arrays.items():
            if self[k].shape != v.shape:
                raise ValueError(f"parameter {k}: shape {v.shape} != {self[k].shape}")
            self[k].data = np.array(v, dtype=np.float64)


def gru_params(params: Params, rng, prefix: str, input_dim: int, hidden: int):
    params.add_matrix(f"{prefix}.W", rng, input_dim, 3 * hidden)
    params.add_matrix(f"{prefix}.U", rng, hidden, 3 * hidden)
    params.add_bias(f"{prefix}.b", 3 * hidden)


def gru_step(xw, h, U, hidden: int):
    """One GRU update given the precomputed input projection ``xw = x W + b``.

    Gate layout along the last axis: update z, reset r, candidate n.
    """
    hu = ad.matmul(h, U)
    z = ad.sigmoid(ad.add(xw[:, :hidden], hu[:, :hidden]))
    r = ad.sigmoid(ad.add(xw[:, hidden:2 * hidden], hu[:, hidden:2 * hidden]))
    n = ad.tanh(ad.add(xw[:, 2 * hidden:], ad.mul(r, hu[:, 2 * hidden:])))
    # h' = n + z * (h - n)
    return ad.add(n, ad.mul(z, ad.sub(h, n)))


def masked_update(h_new, h_old, keep):
    """``keep`` is a constant (B, H) array of 0/1: 1 takes the new state."""
    if keep is None:
        return h_new
    return ad.add(ad.mul(h_new, ad.Tensor(keep)), ad.mul(h_old, ad.Tensor(1.0 - keep)))


def run_gru(xw_seq, h0, U, hidden, mask=None, reverse=False):
    """Run a GRU over (B, T, 3H) projections; returns the list of T states in time order."""
    T = xw_seq.shape[1]
    steps = range(T - 1, -1, -1) if reverse else range(T)
    h = h0
    out = [None] * T
    for t in steps:
        h_new = gru_step(xw_seq[:, t, :], h, U, hidden)
        keep = None if mask is None else np.repeat(mask[:, t:t + 1], hidden, axis=1)
        h = masked_update(h_new, h, keep)
        out[t] = h
    return out


def pad_batch(seqs, pad_id=0):
    n = max(len(s) for s in seqs)
    ids = np.full((len(seqs), n), pad_id, dtype=np.int64)
    mask = np.zeros((len(seqs), n))
    for i, s in enumerate(seqs):
        ids[i, :len(s)] = s
        mask[i, :len(s)] = 1.0
    return ids, mask


# ---------------------------------------------------------------- optimization


def clip_global_norm(grads: dict, max_norm: float) -> float:
    """Rescale ``grads`` in place so their joint L2 norm is at most ``max_norm``.

    Returns the norm before clipping.
    """
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if not math.isfinite(total):
        raise NumericalError("non-finite gradient norm")
    if total > max_norm:
        s = max_norm / total
        for g in grads.values():
            g *= s
    return total


@dataclass
class Adadelta:
    rho: float = 0.95
    eps: float = 1e-6
    lr: float = 1.0
    acc_grad: dict = field(default_factory=dict)
    acc_delta: dict = field(default_factory=dict)
    steps: int = 0

    def step(self, params: Params, grads: dict):
        for k, g in grads.items():
            p = params[k]
            eg = self.acc_grad.setdefault(k, np.zeros_like(p.data))
            ed = self.acc_delta.setdefault(k, np.zeros_like(p.data))
            eg *= self.rho
            eg += (1 - self.rho) * g * g
            delta = -np.sqrt(ed + self.eps) / np.sqrt(eg + self.eps) * g
            ed *= self.rho
            ed += (1 - self.rho) * delta * delta
            p.data = p.data + self.lr * delta
        self.steps += 1

    def state_arrays(self):
        out = {f"acc_grad/{k}": v for k, v in self.acc_grad.items()}
        out.update({f"acc_delta/{k}": v for k, v in self.acc_delta.items()})
        return out

    def load_state_arrays(self, arrays):
        for name, v in arrays.items():
            kind, key = name.split("/", 1)
            (self.acc_grad if kind == "acc_grad" else self.acc_delta)[key] = np.array(v)


# ---------------------------------------------------------------- checkpoints


def save_checkpoint(path, config: dict, tensors: dict):
    """Versioned binary container: header, JSON config, then named float64 tensors."""
    blob = json.dumps(config, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(struct.pack("<II", CKPT_VERSION, len(blob)))
        f.write(blob)
        f.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors.items():
            arr = np.asarray(arr, dtype="<f8")
            nb = name.encode("utf-8")
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            f.write(struct.pack("<B", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes())


def load_checkpoint(path):
    with open(path, "rb") as f:
        if f.read(len(CKPT_MAGIC)) != CKPT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        version, n = struct.unpack("<II", f.read(8))
        if version != CKPT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        config = json.loads(f.read(n).decode("utf-8"))
        (count,) = struct.unpack("<I", f.read(4))
        tensors = {}
        for _ in range(count):
            (ln,) = struct.unpack("<H", f.read(2))
            name = f.read(ln).decode("utf-8")
            (ndim,) = struct.unpack("<B", f.read(1))
            shape = struct.unpack(f"<{ndim}I", f.read(4 * ndim))
            size = int(np.prod(shape)) if ndim else 1
            tensors[name] = np.frombuffer(f.read(8 * size), dtype="<f8").reshape(shape).astype(np.float64)
    return config, tensors
