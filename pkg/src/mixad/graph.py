"""Adjacency normalisation, power-series graph convolution and Gumbel graph sampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from . import numerics as nx
from .numerics import ShapeError, Tensor


def normalize_adjacency(adj) -> Tensor:
    """Symmetric normalisation with self-loops: ``D^-1/2 (A + I) D^-1/2``.

    ``D`` is the degree matrix of ``A + I``; the self-loop keeps every degree
    at least 1. Differentiable when ``adj`` is a Tensor on an active tape.
    """
    adj = adj if isinstance(adj, Tensor) else Tensor(adj)
    if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
        raise ShapeError(f"normalize_adjacency: expected a square matrix, got {adj.shape}")
    if np.any(adj.data < 0):
        raise ValueError("normalize_adjacency: adjacency has negative entries")
    n = adj.shape[0]
    looped = adj + np.eye(n)
    dinv = nx.exp(nx.log(looped.sum(axis=1)) * -0.5)
    # scale columns, transpose, scale columns again: a_ij * d_i * d_j
    return nx.transpose(nx.transpose(looped * dinv) * dinv)


def graph_conv(x: Tensor, adj: Tensor, weight: Tensor) -> Tensor:
    """``sum_k adj^k @ x @ weight[k]`` for k = 0..K.

    ``x`` is ``(..., N, c_in)``, ``adj`` is ``(N, N)`` and ``weight`` is
    ``(K+1, c_in, c_out)``. The propagated features are stacked along the
    channel axis so the K+1 weight blocks apply in a single matmul.
    """
    if weight.ndim != 3:
        raise ShapeError(f"graph_conv: weight must be (K+1, c_in, c_out), got {weight.shape}")
    order, c_in, c_out = weight.shape
    if x.shape[-1] != c_in:
        raise ShapeError(f"graph_conv: input channels {x.shape[-1]} != weight c_in {c_in}")
    if adj.shape != (x.shape[-2], x.shape[-2]):
        raise ShapeError(f"graph_conv: adjacency {adj.shape} does not match {x.shape[-2]} nodes")
    return propagate(x, adj, order - 1) @ weight.reshape(order * c_in, c_out)


def propagate(x: Tensor, adj: Tensor, k: int) -> Tensor:
    """``[x || adj x || ... || adj^k x]`` along the channel axis."""
    terms = [x]
    for _ in range(k):
        terms.append(adj @ terms[-1])
    return terms[0] if k == 0 else nx.concat(terms, axis=-1)


def gumbel(rng: np.random.Generator, shape) -> np.ndarray:
    """Standard Gumbel samples by inverse CDF, ``-log(-log(u))``."""
    u = rng.uniform(np.finfo(np.float64).tiny, 1.0, size=shape)
    return -np.log(-np.log(u))


@dataclass
class GeneratedGraph:
    adjacency: Tensor  # sampled/relaxed A, zero diagonal
    normalized: Tensor  # A~ fed to the graph convolutions
    edge_prob: np.ndarray  # theta, for inspection


def generate_graph(memory: Tensor, embed: Tensor, tau: float, mode: str = "eval",
                   rng: np.random.Generator | None = None,
                   noise: np.ndarray | None = None) -> GeneratedGraph:
    """Build a sparse-ish graph from memory-derived node embeddings.

    ``E = embed @ memory`` and ``S = E E^T``. Edge probabilities are
    ``theta = sigmoid(S)``, so ``logit(theta) == S`` and the relaxed sample is
    ``sigmoid((S + g1 - g2) / tau)``; the logit is taken analytically to avoid
    round-tripping through a saturated sigmoid. In eval mode the noise term is
    dropped. ``noise`` (the ``g1 - g2`` matrix) may be supplied to freeze the
    sample, e.g. for finite-difference checks.
    """
    if tau <= 0:
        raise ValueError(f"generate_graph: temperature must be positive, got {tau}")
    if embed.ndim != 2 or embed.shape[1] != memory.shape[0]:
        raise ShapeError(f"generate_graph: embedding {embed.shape} incompatible with memory {memory.shape}")
    n = embed.shape[0]
    emb = embed @ memory
    logits = emb @ nx.transpose(emb)
    theta = expit(logits.data)
    if not np.all(np.isfinite(theta)):
        raise nx.NumericError("generate_graph: non-finite edge probabilities")
    if mode == "train":
        if noise is None:
            if rng is None:
                raise ValueError("generate_graph: train mode needs an rng or explicit noise")
            noise = gumbel(rng, (n, n)) - gumbel(rng, (n, n))
        logits = logits + noise
    elif mode != "eval":
        raise ValueError(f"generate_graph: unknown mode {mode!r}")
    adjacency = nx.sigmoid(logits * (1.0 / tau)) * (1.0 - np.eye(n))
    return GeneratedGraph(adjacency, normalize_adjacency(adjacency), theta)
