from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import ContractError, Tensor, backward


def finite_diff_check(f: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-5,
                      max_coords: int | None = None, rng: np.random.Generator | None = None) -> float:
    """Max relative error between backprop and central differences.

    ``f`` rebuilds the graph from the current parameter values and must be
    deterministic (freeze any sampling noise before calling). With
    ``max_coords`` set, a random subset of coordinates per parameter is
    probed instead of all of them.
    """
    for p in params:
        p.grad = None
    loss = f()
    again = f()
    if loss.item() != again.item():
        raise ContractError("finite_diff_check: f is not deterministic")
    backward(loss)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    worst = 0.0
    for p, ga in zip(params, analytic):
        flat = p.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = (rng or np.random.default_rng(0)).choice(flat.size, max_coords, replace=False)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + h
            fp = f().item()
            flat[i] = orig - h
            fm = f().item()
            flat[i] = orig
            fd = (fp - fm) / (2.0 * h)
            a = ga.reshape(-1)[i]
            err = abs(a - fd) / (abs(a) + abs(fd) + 1e-12)
            worst = max(worst, err)
    for p in params:
        p.grad = None
    return worst
