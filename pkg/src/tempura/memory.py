"""Predicate-class memory prototypes and the memory diffusion unit.

The bank is rebuilt between epochs from a frozen copy of the model (epoch
a uses the weights at the end of epoch a-1) and is a constant within the
epoch: gradients reach the diffusion weights and the query embedding,
never the stored prototypes. The unit is a training-time regularizer only.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from .attention import attention
from .autodiff import Module, ops
from .autodiff.nn import uniform_weight
from .autodiff.tensor import ContractError, Tensor


@dataclass
class MemoryBank:
    prototypes: np.ndarray  # [C_r, D]
    counts: np.ndarray      # [C_r]
    epoch: int

    @property
    def valid(self) -> np.ndarray:
        return self.counts > 0

    def dump(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(json.dumps({"epoch": self.epoch, "classes": int(self.counts.size),
                                 "dim": int(self.prototypes.shape[1])}) + "\n")
            for p, (n, w) in enumerate(zip(self.counts, self.prototypes)):
                fh.write(json.dumps({"class": p, "count": int(n), "prototype": [float(x) for x in w]}) + "\n")

    @classmethod
    def load(cls, path) -> "MemoryBank":
        with open(path, encoding="utf-8") as fh:
            head = json.loads(fh.readline())
            rows = [json.loads(line) for line in fh if line.strip()]
        protos = np.zeros((head["classes"], head["dim"]))
        counts = np.zeros(head["classes"], dtype=np.int64)
        for r in rows:
            protos[r["class"]] = r["prototype"]
            counts[r["class"]] = r["count"]
        return cls(protos, counts, head["epoch"])


class MemoryAccumulator:
    """Streaming running sums so the bank needs one pass and O(C_r * D) memory."""

    def __init__(self, n_classes: int, dim: int):
        self.sums = np.zeros((n_classes, dim))
        self.counts = np.zeros(n_classes, dtype=np.int64)

    def add(self, embeddings: np.ndarray, label_sets: Iterable[Iterable[int]]) -> None:
        for row, labels in zip(np.asarray(embeddings), label_sets):
            for p in set(labels):
                self.sums[p] += row
                self.counts[p] += 1

    def bank(self, epoch: int) -> MemoryBank:
        protos = np.zeros_like(self.sums)
        nz = self.counts > 0
        protos[nz] = self.sums[nz] / self.counts[nz, None]
        return MemoryBank(protos, self.counts.copy(), epoch)


def compute_memory_bank(embed: Callable, videos: Iterable, n_classes: int, dim: int, epoch: int) -> MemoryBank:
    """Bank for ``epoch`` from ``embed(video) -> (embeddings [P, D], label sets)``,
    where ``embed`` runs the frozen previous-epoch model."""
    if epoch < 2:
        raise ContractError("no memory exists for epoch 1; bypass the diffusion unit instead")
    acc = MemoryAccumulator(n_classes, dim)
    for video in videos:
        emb, labels = embed(video)
        acc.add(emb, labels)
    return acc.bank(epoch)


class MemoryDiffusion(Module):
    def __init__(self, rng: np.random.Generator, dim: int, lam: float):
        if not 0.0 < lam <= 1.0:
            raise ContractError(f"lambda must lie in (0, 1], got {lam}")
        self.lam = lam
        self.w_q = uniform_weight(rng, dim, (dim, dim))
        self.w_k = uniform_weight(rng, dim, (dim, dim))
        self.w_v = uniform_weight(rng, dim, (dim, dim))


def memory_attend(r: Tensor, bank: MemoryBank, mdu: MemoryDiffusion) -> Tensor:
    if not bank.valid.any():
        raise ContractError("memory bank has no populated prototype")
    omega = Tensor(bank.prototypes)
    q = ops.matmul(r, mdu.w_q)
    k = ops.matmul(omega, mdu.w_k)
    v = ops.matmul(omega, mdu.w_v)
    return attention(q, k, v, key_padding_mask=~bank.valid)


def memory_diffuse(r: Tensor, bank: MemoryBank, mdu: MemoryDiffusion) -> Tensor:
    """lam * r + (1 - lam) * attention(r W_Q, Omega W_K, Omega W_V)."""
    if mdu.lam == 1.0:
        return r
    r_mem = memory_attend(r, bank, mdu)
    return ops.add(ops.mul(r, mdu.lam), ops.mul(r_mem, 1.0 - mdu.lam))


def mdu_schedule(epoch: int, training: bool = True) -> str:
    """'bypass' or 'diffuse' (with the bank built from epoch-1 weights)."""
    if epoch < 1:
        raise ContractError(f"epochs count from 1, got {epoch}")
    if not training or epoch == 1:
        return "bypass"
    return "diffuse"
