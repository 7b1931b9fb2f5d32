"""Windowing, min-max normalisation and the training loop with early stopping."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .losses import LossConfig, mixad_loss
from .model import MixadModel, ModelConfig

log = logging.getLogger(__name__)

LOG_FIELDS = ("epoch", "mae", "l1", "l2", "l3", "total", "val_total")


@dataclass(frozen=True)
class TrainConfig:
    window: int = 30
    batch_size: int = 256
    lr: float = 1e-3
    max_epochs: int = 30
    patience: int = 10
    val_fraction: float = 0.2
    seed: int = 0
    m: int = 5
    d: int = 64
    h: int = 64
    order: int = 3
    tau: float = 0.5
    stride: int = 1
    clip_norm: float = 5.0
    loss: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self):
        if self.window < 2:
            raise ValueError("window must be at least 2")
        if not 0 < self.val_fraction < 1:
            raise ValueError("val_fraction must lie in (0, 1)")
        if self.patience > self.max_epochs:
            raise ValueError("patience cannot exceed max_epochs")
        if self.batch_size < 1 or self.stride < 1 or self.max_epochs < 1:
            raise ValueError("batch_size, stride and max_epochs must be positive")

    def model_config(self, n_nodes: int) -> ModelConfig:
        return ModelConfig(n_nodes=n_nodes, window=self.window, m=self.m, d=self.d,
                           h=self.h, order=self.order, tau=self.tau)


@dataclass
class NormalizationStats:
    lo: np.ndarray
    hi: np.ndarray

    @property
    def degenerate(self) -> np.ndarray:
        return self.hi == self.lo


def fit_normalizer(train: np.ndarray) -> NormalizationStats:
    """Per-feature min and max of a ``(N, T)`` training array."""
    train = np.asarray(train, dtype=np.float64)
    return NormalizationStats(train.min(axis=1), train.max(axis=1))


def apply_normalizer(x: np.ndarray, stats: NormalizationStats) -> np.ndarray:
    """Min-max scale with training stats; no clipping, so test excursions stay visible.

    Constant training features map to 0.5.
    """
    x = np.asarray(x, dtype=np.float64)
    span = stats.hi - stats.lo
    safe = np.where(span > 0, span, 1.0)
    out = (x - stats.lo[:, None]) / safe[:, None]
    out[stats.degenerate] = 0.5
    return out


def make_windows(x: np.ndarray, w: int, stride: int = 1) -> np.ndarray:
    """``(count, N, w)`` stack of windows; window ``j`` covers columns ``[j*stride, j*stride + w)``."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[1] < w:
        raise ValueError(f"series of length {x.shape[1]} is shorter than the window {w}")
    view = np.lib.stride_tricks.sliding_window_view(x, w, axis=1)  # (N, T-w+1, w)
    return np.ascontiguousarray(view[:, ::stride].transpose(1, 0, 2))


def chronological_split(x: np.ndarray, val_fraction: float) -> tuple[np.ndarray, np.ndarray]:
    cut = int(round(x.shape[1] * (1.0 - val_fraction)))
    return x[:, :cut], x[:, cut:]


class EarlyStopping:
    """Track the best validation loss; ``step`` returns True when training should stop."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = np.inf
        self.best_epoch = 0
        self.bad_epochs = 0

    def step(self, epoch: int, value: float) -> bool:
        if value < self.best:
            self.best, self.best_epoch, self.bad_epochs = value, epoch, 0
            return False
        self.bad_epochs += 1
        return self.bad_epochs >= self.patience


def validation_loss(model: MixadModel, windows: np.ndarray, cfg: TrainConfig) -> float:
    """Total loss on eval-mode graphs, averaged over batches weighted by size."""
    adj = model.graph("eval").normalized
    total, count = 0.0, 0
    for i in range(0, len(windows), cfg.batch_size):
        batch = windows[i : i + cfg.batch_size]
        out = model.forward(batch, adj)
        total += mixad_loss(batch, out, model.params["memory"], cfg.loss).total.item() * len(batch)
        count += len(batch)
    return total / count


@dataclass
class TrainResult:
    best_state: dict[str, np.ndarray]
    log: list[dict]
    best_epoch: int
    best_val: float
    initial_val: float
    epochs_run: int

    def log_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=LOG_FIELDS, lineterminator="\n")
        w.writeheader()
        for row in self.log:
            w.writerow({k: (row[k] if k == "epoch" else format(row[k], ".17g")) for k in LOG_FIELDS})
        return buf.getvalue()


def train(model: MixadModel, series: np.ndarray, cfg: TrainConfig) -> TrainResult:
    """Fit ``model`` on a normalised ``(N, T)`` series; the model ends at its best state.

    The last ``val_fraction`` of the timeline is held out; windows are cut
    separately on each side so none straddles the boundary.
    """
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(2)[1])
    fit_part, val_part = chronological_split(series, cfg.val_fraction)
    train_windows = make_windows(fit_part, cfg.window, cfg.stride)
    val_windows = make_windows(val_part, cfg.window, cfg.stride)
    log.info("training on %d windows, validating on %d", len(train_windows), len(val_windows))

    optimizer = nx.Adam(model.params, lr=cfg.lr)
    params = list(model.params.values())
    initial_val = validation_loss(model, val_windows, cfg)
    stopper = EarlyStopping(cfg.patience)
    best_state = model.state_dict()
    history = []

    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(len(train_windows))
        sums = dict.fromkeys(("mae", "l1", "l2", "l3", "total"), 0.0)
        n_batches = 0
        for step, i in enumerate(range(0, len(order), cfg.batch_size)):
            batch = train_windows[order[i : i + cfg.batch_size]]
            optimizer.zero_grad()
            try:
                with nx.Tape() as tape:
                    graph = model.graph("train", rng)
                    out = model.forward(batch, graph.normalized)
                    parts = mixad_loss(batch, out, model.params["memory"], cfg.loss)
                    tape.backward(parts.total)
            except nx.NumericError as exc:
                raise nx.NumericError(f"epoch {epoch}, step {step}: {exc}") from exc
            nx.clip_grad_norm(params, cfg.clip_norm)
            optimizer.step()
            for k, v in parts.values().items():
                sums[k] += v
            n_batches += 1

        val = validation_loss(model, val_windows, cfg)
        row = {"epoch": epoch, **{k: v / n_batches for k, v in sums.items()}, "val_total": val}
        history.append(row)
        log.info("epoch %d: train %.5f (mae %.5f) val %.5f", epoch, row["total"], row["mae"], val)
        stop = stopper.step(epoch, val)
        if stopper.best_epoch == epoch:
            best_state = model.state_dict()
        if stop:
            break

    model.load_state_dict(best_state)
    return TrainResult(best_state, history, stopper.best_epoch, float(stopper.best), initial_val, len(history))
