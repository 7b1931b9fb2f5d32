"""Training objective: MAE reconstruction plus triplet, compactness and uniformity terms."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .numerics import Tensor


@dataclass(frozen=True)
class LossConfig:
    margin: float = 1.0  # triplet margin lambda
    lambda1: float = 0.01
    lambda2: float = 0.1
    lambda3: float = 0.0001

    def __post_init__(self):
        if self.margin <= 0:
            raise ValueError("triplet margin must be positive")
        if min(self.lambda1, self.lambda2, self.lambda3) < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass
class LossParts:
    mae: Tensor
    triplet: Tensor
    compact: Tensor
    uniform: Tensor
    total: Tensor

    def values(self) -> dict[str, float]:
        return {
            "mae": self.mae.item(),
            "l1": self.triplet.item(),
            "l2": self.compact.item(),
            "l3": self.uniform.item(),
            "total": self.total.item(),
        }


def _batch_count(query: Tensor) -> int:
    # (N, d) is one window; (B, N, d) is a batch of B
    return query.shape[0] if query.ndim == 3 else 1


def _sqdist(query: Tensor, memory: Tensor, idx: np.ndarray) -> Tensor:
    diff = query - nx.take_rows(memory, idx)
    return (diff * diff).sum(axis=-1)


def triplet_loss(query: Tensor, memory: Tensor, pos: np.ndarray, neg: np.ndarray,
                 margin: float = 1.0) -> Tensor:
    """Hinge on ``|q - M[pos]|^2 - |q - M[neg]|^2 + margin``, summed over nodes, batch-averaged."""
    if np.any(np.asarray(pos) == np.asarray(neg)):
        raise ValueError("triplet_loss: pos and neg must differ")
    gap = _sqdist(query, memory, pos) - _sqdist(query, memory, neg) + margin
    return nx.relu(gap).sum() * (1.0 / _batch_count(query))


def compact_loss(query: Tensor, memory: Tensor, pos: np.ndarray) -> Tensor:
    """Squared distance from each query to its nearest item, summed over nodes, batch-averaged."""
    return _sqdist(query, memory, pos).sum() * (1.0 / _batch_count(query))


def kl_uniform_loss(att: Tensor) -> Tensor:
    """KL(Uniform(m) || softmax(total attention mass per item)).

    ``att`` is any ``(..., m)`` stack of attention rows; the mass is summed
    over every leading axis before the softmax.
    """
    m = att.shape[-1]
    mass = att.reshape(-1, m).sum(axis=0)
    return nx.log_softmax(mass).mean() * -1.0 - float(np.log(m))


def reconstruction_loss(target, recon: Tensor) -> Tensor:
    """Mean absolute error over every entry."""
    return nx.absolute(recon - target).mean()


def total_loss(mae: Tensor, l1: Tensor, l2: Tensor, l3: Tensor, cfg: LossConfig) -> Tensor:
    return mae + l1 * cfg.lambda1 + l2 * cfg.lambda2 + l3 * cfg.lambda3


def mixad_loss(target, output, memory: Tensor, cfg: LossConfig) -> LossParts:
    """All four terms for a forward pass of the model."""
    snap = output.snapshot
    mae = reconstruction_loss(Tensor._wrap(np.asarray(target, dtype=np.float64), False), output.reconstruction)
    l1 = triplet_loss(snap.query, memory, snap.pos, snap.neg, cfg.margin)
    l2 = compact_loss(snap.query, memory, snap.pos)
    l3 = kl_uniform_loss(snap.attention)
    return LossParts(mae, l1, l2, l3, total_loss(mae, l1, l2, l3, cfg))
