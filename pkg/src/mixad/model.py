"""Graph-convolutional GRU cell, memory-augmented encoder/decoder and its parameters."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import numerics as nx
from .graph import GeneratedGraph, generate_graph, propagate
from .memory import AttentionSnapshot, MemoryBank, concat_augment, init_memory, query_memory
from .numerics import NumericError, ShapeError, Tensor


@dataclass(frozen=True)
class ModelConfig:
    n_nodes: int
    window: int = 30
    m: int = 5
    d: int = 64
    h: int = 64
    order: int = 3  # K; the convolution sums adjacency powers 0..K
    tau: float = 0.5

    def __post_init__(self):
        if self.n_nodes < 1 or self.window < 1 or self.d < 1 or self.h < 1:
            raise ValueError(f"invalid model dimensions: {self}")
        if self.m < 2:
            raise ValueError("memory needs at least 2 items")
        if self.order < 0:
            raise ValueError("polynomial order K must be >= 0")
        if self.tau <= 0:
            raise ValueError("temperature must be positive")


@dataclass
class Cell:
    """One STRGC cell: GRU gates whose transforms are graph convolutions."""

    w_r: Tensor
    w_u: Tensor
    w_c: Tensor
    b_r: Tensor
    b_u: Tensor
    b_c: Tensor

    @property
    def hidden(self) -> int:
        return self.b_r.shape[0]

    def packed(self) -> "PackedCell":
        """Flatten the gate kernels once so a recurrence does not redo it every step."""
        k1, c, h = self.w_r.shape
        w_ru = nx.concat([self.w_r, self.w_u], axis=-1).reshape(k1 * c, 2 * h)
        return PackedCell(w_ru, nx.concat([self.b_r, self.b_u], axis=-1),
                          self.w_c.reshape(k1 * c, h), self.b_c, k1 - 1, h)


@dataclass
class PackedCell:
    w_ru: Tensor
    b_ru: Tensor
    w_c: Tensor
    b_c: Tensor
    order: int
    hidden: int


def strgc_step(cell: Cell | PackedCell, x: Tensor, h_prev: Tensor, adj: Tensor) -> Tensor:
    """One recurrent update; ``x`` is ``(..., N, c_in)``, ``h_prev`` is ``(..., N, h)``."""
    if isinstance(cell, Cell):
        cell = cell.packed()
    h = cell.hidden
    if h_prev.shape[-1] != h:
        raise ShapeError(f"strgc_step: hidden width {h_prev.shape[-1]} != cell width {h}")
    if x.shape[-1] + h != cell.w_ru.shape[0] // (cell.order + 1):
        raise ShapeError(f"strgc_step: input width {x.shape[-1]} does not match the cell kernels")
    if adj.shape != (x.shape[-2], x.shape[-2]):
        raise ShapeError(f"strgc_step: adjacency {adj.shape} does not match {x.shape[-2]} nodes")
    # reset and update gates read the same input, so they share one convolution
    xh = propagate(nx.concat([x, h_prev], axis=-1), adj, cell.order)
    gates = nx.sigmoid(xh @ cell.w_ru + cell.b_ru)
    r = gates[..., :h]
    u = gates[..., h:]
    xr = propagate(nx.concat([x, r * h_prev], axis=-1), adj, cell.order)
    cand = nx.tanh(xr @ cell.w_c + cell.b_c)
    return u * h_prev + (1.0 - u) * cand


@dataclass
class ForwardOutput:
    reconstruction: Tensor  # same shape as the input window, forward time order
    snapshot: AttentionSnapshot
    hidden: Tensor  # final encoder state


CELL_PARTS = ("w_r", "w_u", "w_c", "b_r", "b_u", "b_c")
PARAM_NAMES = (
    *(f"enc.{p}" for p in CELL_PARTS),
    *(f"dec.{p}" for p in CELL_PARTS),
    "memory",
    "w_query",
    "b_query",
    "w_embed",
    "w_proj",
    "b_proj",
    "w_out",
    "b_out",
)


def init_params(cfg: ModelConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases."""
    k1, h, d, m = cfg.order + 1, cfg.h, cfg.d, cfg.m

    def uni(shape, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    params: dict[str, np.ndarray] = {}
    for prefix in ("enc", "dec"):
        for gate in ("r", "u", "c"):
            params[f"{prefix}.w_{gate}"] = uni((k1, 1 + h, h), k1 * (1 + h))
        for gate in ("r", "u", "c"):
            params[f"{prefix}.b_{gate}"] = np.zeros(h)
    params["memory"] = init_memory(rng, m, d)
    params["w_query"] = uni((h, d), h)
    params["b_query"] = np.zeros(d)
    params["w_embed"] = uni((cfg.n_nodes, m), m)
    params["w_proj"] = uni((h + d, h), h + d)
    params["b_proj"] = np.zeros(h)
    params["w_out"] = uni((h, 1), h)
    params["b_out"] = np.zeros(1)
    return params


class MixadModel:
    """Memory-augmented graph-recurrent autoencoder over ``N x w`` windows."""

    def __init__(self, cfg: ModelConfig, params: dict[str, np.ndarray]):
        missing = set(PARAM_NAMES) - set(params)
        if missing:
            raise KeyError(f"missing parameters: {sorted(missing)}")
        self.cfg = cfg
        self.params = {name: Tensor(params[name], requires_grad=True, name=name) for name in PARAM_NAMES}
        self._check_shapes()

    @classmethod
    def initialize(cls, cfg: ModelConfig, seed: int | np.random.Generator = 0) -> "MixadModel":
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        return cls(cfg, init_params(cfg, rng))

    def _check_shapes(self):
        expected = init_params(self.cfg, np.random.default_rng(0))
        for name, arr in expected.items():
            if self.params[name].shape != arr.shape:
                raise ShapeError(f"parameter {name}: expected {arr.shape}, got {self.params[name].shape}")

    def cell(self, prefix: str) -> Cell:
        p = self.params
        return Cell(*(p[f"{prefix}.{part}"] for part in CELL_PARTS))

    @property
    def bank(self) -> MemoryBank:
        return MemoryBank(self.params["memory"], self.params["w_query"], self.params["b_query"])

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for name in PARAM_NAMES:
            self.params[name].data[...] = state[name]

    def save(self, path, extra_meta: dict | None = None) -> None:
        meta = {"model": asdict(self.cfg)}
        meta.update(extra_meta or {})
        nx.save_checkpoint(path, self.params, meta)

    @classmethod
    def load(cls, path) -> tuple["MixadModel", dict]:
        params, meta = nx.load_checkpoint(path)
        return cls(ModelConfig(**meta["model"]), params), meta

    def graph(self, mode: str = "eval", rng: np.random.Generator | None = None,
              noise: np.ndarray | None = None) -> GeneratedGraph:
        return generate_graph(self.params["memory"], self.params["w_embed"], self.cfg.tau,
                              mode=mode, rng=rng, noise=noise)

    def forward(self, windows: np.ndarray, adj: Tensor) -> ForwardOutput:
        """Reconstruct ``windows`` of shape ``(N, w)`` or ``(B, N, w)``.

        The encoder reads the window front to back from a zero state. The
        final state queries the memory; ``[H || H_aug]`` projected to the
        cell width seeds the decoder, which runs ``w`` steps feeding back its
        own output (zero on the first step) and so emits the window
        last-timestamp-first. The result is flipped back to forward order.
        """
        windows = np.asarray(windows, dtype=np.float64)
        if windows.shape[-2] != self.cfg.n_nodes:
            raise ShapeError(f"forward: expected {self.cfg.n_nodes} nodes, got window shape {windows.shape}")
        w = windows.shape[-1]
        if w < 1:
            raise ShapeError("forward: empty window")
        lead = windows.shape[:-1]
        enc, dec = self.cell("enc").packed(), self.cell("dec").packed()

        hidden = nx.zeros((*lead, self.cfg.h))
        for step in range(w):
            x = Tensor._wrap(windows[..., step : step + 1].copy(), False)
            hidden = _guarded(strgc_step, "encoder", step, enc, x, hidden, adj)

        snapshot, augmented = query_memory(hidden, self.bank)
        state = concat_augment(hidden, augmented, self.params["w_proj"], self.params["b_proj"])

        x = nx.zeros((*lead, 1))
        outputs = []
        for step in range(w):
            state = _guarded(strgc_step, "decoder", step, dec, x, state, adj)
            x = state @ self.params["w_out"] + self.params["b_out"]
            outputs.append(x)
        recon = outputs[0] if w == 1 else nx.concat(outputs[::-1], axis=-1)
        return ForwardOutput(recon, snapshot, hidden)


def _guarded(fn, where: str, step: int, *args):
    try:
        return fn(*args)
    except NumericError as exc:
        raise NumericError(f"{where} step {step}: {exc}") from exc
