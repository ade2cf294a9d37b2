"""Gaussian-mixture predicate head with learned loss attenuation.

Per class p and component k the head predicts a scalar logit mean, a
sigmoid-bounded variance and a softmax mixture weight. Training samples
logits with the reparameterization mu + eps * sqrt(var); inference uses
the means directly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Linear, Module, ops
from .autodiff.tensor import Tensor, as_tensor

PROB_FLOOR = 1e-12


@dataclass
class GmmOutput:
    pi: Tensor     # [N, C, K]
    mu: Tensor     # [N, C, K]
    sigma: Tensor  # [N, C, K] variances in (0, 1)


class GMMHead(Module):
    def __init__(self, rng: np.random.Generator, dim: int, n_classes: int, k: int):
        self.n_classes, self.k = n_classes, k
        self.f_mu = Linear(rng, dim, n_classes * k)
        self.f_sigma = Linear(rng, dim, n_classes * k)
        self.f_pi = Linear(rng, dim, n_classes * k)

    def __call__(self, z: Tensor) -> GmmOutput:
        return gmm_params(z, self)


def gmm_params(z: Tensor, head: GMMHead) -> GmmOutput:
    shape = (z.shape[0], head.n_classes, head.k)
    mu = ops.reshape(head.f_mu(z), shape)
    sigma = ops.sigmoid(ops.reshape(head.f_sigma(z), shape))
    pi = ops.softmax(ops.reshape(head.f_pi(z), shape), axis=-1)
    return GmmOutput(pi, mu, sigma)


def aleatoric(pi, sigma) -> Tensor:
    """sum_k pi^k Sigma^k per class."""
    return ops.sum(ops.mul(as_tensor(pi), as_tensor(sigma)), axis=-1)


def epistemic(pi, mu) -> Tensor:
    """sum_k pi^k (mu^k - sum_j pi^j mu^j)^2 per class."""
    pi, mu = as_tensor(pi), as_tensor(mu)
    mean = ops.sum(ops.mul(pi, mu), axis=-1, keepdims=True)
    return ops.sum(ops.mul(pi, ops.square(ops.sub(mu, mean))), axis=-1)


def train_scores(out: GmmOutput, eps: np.ndarray) -> tuple[Tensor, Tensor]:
    """(y_hat, c_hat) with c_hat = mu + eps * sqrt(Sigma), y_hat = sum_k pi sigmoid(c_hat)."""
    c_hat = ops.add(out.mu, ops.mul(ops.sqrt(out.sigma), np.asarray(eps, dtype=np.float64)))
    y_hat = ops.sum(ops.mul(out.pi, ops.sigmoid(c_hat)), axis=-1)
    return y_hat, c_hat


def infer_scores(out: GmmOutput) -> Tensor:
    return ops.sum(ops.mul(out.pi, ops.sigmoid(out.mu)), axis=-1)


def predicate_loss(p_hat: Tensor, targets: np.ndarray) -> Tensor:
    """Binary cross entropy summed over pairs and classes; p_hat clamped to
    [1e-12, 1 - 1e-12] before the logs."""
    y = np.asarray(targets, dtype=np.float64)
    p = ops.clip(p_hat, PROB_FLOOR, 1.0 - PROB_FLOOR)
    pos = ops.mul(ops.log(p), y)
    neg = ops.mul(ops.log(ops.sub(1.0, p)), 1.0 - y)
    return ops.mul(ops.sum(ops.add(pos, neg)), -1.0)


class PlainHead(Module):
    """Ablation head: one linear layer, independent sigmoids."""

    def __init__(self, rng: np.random.Generator, dim: int, n_classes: int):
        self.fc = Linear(rng, dim, n_classes)

    def __call__(self, z: Tensor) -> Tensor:
        return ops.sigmoid(self.fc(z))


def multi_hot(label_sets, n_classes: int) -> np.ndarray:
    y = np.zeros((len(label_sets), n_classes))
    for i, labels in enumerate(label_sets):
        y[i, list(labels)] = 1.0
    return y
