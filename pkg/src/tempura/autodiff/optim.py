from __future__ import annotations

import numpy as np

from .. import kernels
from .tensor import ContractError, Tensor


class AdamW:
    """AdamW with decoupled weight decay.

    Moments live in two flat buffers; each parameter gets a view. The update
    itself is one fused pass per parameter (compiled when available).
    """

    def __init__(self, params: list[Tensor], lr: float = 1e-5, betas: tuple[float, float] = (0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 1e-4):
        self.params = list(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        sizes = [p.size for p in self.params]
        bounds = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
        self.exp_avg = np.zeros(int(bounds[-1]))
        self.exp_avg_sq = np.zeros(int(bounds[-1]))
        self._slices = [(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:])]
        for p in self.params:
            p.data = np.ascontiguousarray(p.data, dtype=np.float64)

    def step(self) -> None:
        for i, p in enumerate(self.params):
            if p.grad is None:
                raise ContractError(f"parameter {i} ({p.name or p.shape}) has no gradient")
        self.step_count += 1
        beta1, beta2 = self.betas
        bc1 = 1.0 - beta1 ** self.step_count
        bc2 = 1.0 - beta2 ** self.step_count
        for p, (a, b) in zip(self.params, self._slices):
            if not p.data.flags.c_contiguous or not p.data.flags.writeable:
                p.data = np.array(p.data, dtype=np.float64)
            g = np.ascontiguousarray(p.grad, dtype=np.float64).reshape(-1)
            kernels.adamw_update(p.data.reshape(-1), g, self.exp_avg[a:b], self.exp_avg_sq[a:b],
                                 self.lr, beta1, beta2, self.eps, self.weight_decay, bc1, bc2)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {"exp_avg": self.exp_avg.copy(), "exp_avg_sq": self.exp_avg_sq.copy(),
                "step_count": np.array([self.step_count], dtype=np.float64)}
