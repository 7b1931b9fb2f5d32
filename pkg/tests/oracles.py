"""Plain-numpy reference implementations shared by several test modules."""

import numpy as np

from mixad import numerics as nx
from mixad.losses import LossConfig, mixad_loss
from mixad.model import MixadModel, ModelConfig


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def normalize(a):
    a = a + np.eye(len(a))
    d = 1.0 / np.sqrt(a.sum(axis=1))
    return d[:, None] * a * d[None, :]


def conv(x, adj, w):
    """sum_k adj^k x w[k] for a single (N, c) input."""
    return sum(np.linalg.matrix_power(adj, k) @ x @ w[k] for k in range(w.shape[0]))


def gru_step(p, prefix, x, h, adj):
    xh = np.concatenate([x, h], axis=1)
    r = sigmoid(conv(xh, adj, p[f"{prefix}.w_r"]) + p[f"{prefix}.b_r"])
    u = sigmoid(conv(xh, adj, p[f"{prefix}.w_u"]) + p[f"{prefix}.b_u"])
    c = np.tanh(conv(np.concatenate([x, r * h], axis=1), adj, p[f"{prefix}.w_c"]) + p[f"{prefix}.b_c"])
    return u * h + (1 - u) * c


def eval_adjacency(p, tau):
    e = p["w_embed"] @ p["memory"]
    a = sigmoid((e @ e.T) / tau)
    np.fill_diagonal(a, 0.0)
    return normalize(a)


def replay_forward(p, window, adj):
    """Reference forward for one ``(N, w)`` window; returns (reconstruction, attention)."""
    n, w = window.shape
    h = np.zeros((n, p["enc.b_r"].size))
    for t in range(w):
        h = gru_step(p, "enc", window[:, t : t + 1], h, adj)
    q = h @ p["w_query"] + p["b_query"]
    logits = q @ p["memory"].T
    att = np.exp(logits - logits.max(axis=1, keepdims=True))
    att /= att.sum(axis=1, keepdims=True)
    state = np.concatenate([h, att @ p["memory"]], axis=1) @ p["w_proj"] + p["b_proj"]
    x = np.zeros((n, 1))
    emitted = []
    for _ in range(w):
        state = gru_step(p, "dec", x, state, adj)
        x = state @ p["w_out"] + p["b_out"]
        emitted.append(x[:, 0])
    return np.stack(emitted[::-1], axis=1), att


def gradcheck_model(seed=0, batch=2, h_step=1e-4, cfg_loss=None, window=6):
    """Analytic vs central-difference gradients of the total loss for every parameter.

    Uses a 3-node, m=2, h=4, K=1 model (w=6 unless given) with a train-mode graph whose
    logistic noise is frozen so the loss is a deterministic function of the
    parameters. Returns ``{name: relative error}``.
    """
    cfg = ModelConfig(n_nodes=3, window=window, m=2, d=3, h=4, order=1, tau=0.5)
    model = MixadModel.initialize(cfg, seed)
    rng = np.random.default_rng(seed + 100)
    # larger memory spread keeps the top-2 attention order well separated
    model.params["memory"].data[...] *= 4.0
    windows = rng.uniform(0, 1, size=(batch, 3, window))
    noise = rng.logistic(size=(3, 3))
    loss_cfg = cfg_loss or LossConfig()

    def loss():
        g = model.graph("train", noise=noise)
        out = model.forward(windows, g.normalized)
        return mixad_loss(windows, out, model.params["memory"], loss_cfg).total

    for t in model.params.values():
        t.grad = None
    with nx.Tape() as tape:
        tape.backward(loss())
    errors = {}
    for name, t in model.params.items():
        analytic = t.grad.copy()
        numeric = nx.numeric_gradient(lambda: loss().item(), t.data, h_step)
        errors[name] = nx.relative_error(analytic, numeric)
    return errors
