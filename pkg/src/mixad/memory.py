"""Memory bank read-out: query projection, attention over items, augmented state."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .numerics import ShapeError, Tensor


@dataclass
class MemoryBank:
    items: Tensor  # (m, d)
    w_query: Tensor  # (h, d)
    b_query: Tensor  # (d,)

    def __post_init__(self):
        if self.items.ndim != 2 or self.items.shape[0] < 2:
            raise ValueError(f"memory needs at least 2 items, got shape {self.items.shape}")


@dataclass
class AttentionSnapshot:
    """Per-node attention over memory items plus the triplet indices."""

    attention: Tensor  # (..., N, m), rows sum to 1
    query: Tensor  # (..., N, d)
    pos: np.ndarray  # (..., N) index of the most attended item
    neg: np.ndarray  # (..., N) index of the second most attended item


def nearest_items(att: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Indices of the top-2 attention entries along the last axis.

    Exact ties resolve to the lower index first.
    """
    order = np.argsort(-att, axis=-1, kind="stable")
    return order[..., 0], order[..., 1]


def query_memory(hidden: Tensor, bank: MemoryBank) -> tuple[AttentionSnapshot, Tensor]:
    """Attend from each node's hidden state to the memory items.

    Returns the snapshot and the augmented hidden state ``Att @ M``.
    """
    if hidden.shape[-1] != bank.w_query.shape[0]:
        raise ShapeError(
            f"query_memory: hidden width {hidden.shape[-1]} != query projection {bank.w_query.shape}"
        )
    query = hidden @ bank.w_query + bank.b_query
    att = nx.softmax(query @ nx.transpose(bank.items))
    augmented = att @ bank.items
    pos, neg = nearest_items(att.data)
    return AttentionSnapshot(att, query, pos, neg), augmented


def concat_augment(hidden: Tensor, augmented: Tensor, w_proj: Tensor, b_proj: Tensor) -> Tensor:
    """Decoder initial state: affine map of ``[hidden || augmented]``."""
    width = hidden.shape[-1] + augmented.shape[-1]
    if w_proj.shape[0] != width:
        raise ShapeError(f"concat_augment: projection expects {w_proj.shape[0]} inputs, got {width}")
    return nx.concat([hidden, augmented], axis=-1) @ w_proj + b_proj


def init_memory(rng: np.random.Generator, m: int, d: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(d)
    return rng.uniform(-bound, bound, size=(m, d))
