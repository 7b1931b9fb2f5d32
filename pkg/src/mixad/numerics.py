"""Dense f64 tensors with tape-based reverse-mode autodiff, Adam, and checkpoints.

Every operation returns a new :class:`Tensor`. While a :class:`Tape` is
active (``with Tape() as tape:``), operations whose inputs require gradients
are recorded in execution order; ``tape.backward(loss)`` then replays them in
reverse. Outside a tape nothing is recorded, which is how inference runs.

Broadcasting is deliberately narrow: operands must have equal shapes, one of
them must be a scalar, or the smaller shape must be a trailing suffix of the
larger (bias add). Anything else raises :class:`ShapeError`.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "ShapeError",
    "NumericError",
    "TapeError",
    "MissingGradientError",
    "tensor",
    "zeros",
    "matmul",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "sigmoid",
    "tanh",
    "exp",
    "log",
    "absolute",
    "relu",
    "max_reduce",
    "sum_reduce",
    "mean_reduce",
    "softmax",
    "log_softmax",
    "concat",
    "transpose",
    "reshape",
    "take_rows",
    "Adam",
    "AdamState",
    "clip_grad_norm",
    "save_checkpoint",
    "load_checkpoint",
    "numeric_gradient",
    "relative_error",
]


class ShapeError(ValueError):
    """Operand shapes are incompatible for an operation."""


class NumericError(ArithmeticError):
    """An operation produced NaN or Inf."""


class TapeError(RuntimeError):
    """Misuse of the computation tape (non-scalar root, replayed tape, ...)."""


class MissingGradientError(RuntimeError):
    """An optimizer step was requested for a parameter that has no gradient."""


_TAPE_STACK: list["Tape"] = []


def _active_tape() -> "Tape | None":
    return _TAPE_STACK[-1] if _TAPE_STACK else None


class Tensor:
    """A dense float64 array that can take part in reverse-mode autodiff.

    ``grad`` is ``None`` until a backward pass reaches the tensor.
    """

    __slots__ = ("data", "requires_grad", "grad", "name")
    __array_priority__ = 1000  # keep ndarray <op> Tensor dispatching to Tensor

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NumericError(f"tensor{' ' + name if name else ''} contains non-finite values")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool) -> "Tensor":
        t = cls.__new__(cls)
        t.data = arr
        t.requires_grad = requires_grad
        t.grad = None
        t.name = None
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data, False)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return _slice(self, index)

    def sum(self, axis=None):
        return sum_reduce(self, axis)

    def mean(self, axis=None):
        return mean_reduce(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def zeros(shape, requires_grad: bool = False) -> Tensor:
    return Tensor._wrap(np.zeros(shape), requires_grad)


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


@dataclass
class _Node:
    out: Tensor
    parents: tuple[Tensor, ...]
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tape:
    """Ordered record of operations for one forward/backward pass.

    Recording order is a topological order of the computation graph, so the
    backward pass simply walks the record in reverse. A tape can be replayed
    once; call :meth:`reset` before reusing it.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self._index: dict[int, int] = {}
        self._consumed = False

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPE_STACK.remove(self)

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, out: Tensor, parents: tuple[Tensor, ...], backward) -> None:
        if self._consumed:
            raise TapeError("tape already replayed; reset() before recording again")
        self._index[id(out)] = len(self.nodes)
        self.nodes.append(_Node(out, parents, backward))

    def reset(self) -> None:
        self.nodes.clear()
        self._index.clear()
        self._consumed = False

    def backward(self, root: Tensor) -> None:
        """Populate ``.grad`` on every leaf that ``root`` depends on."""
        if root.size != 1:
            raise TapeError(f"backward() needs a scalar root, got shape {root.shape}")
        if id(root) not in self._index:
            raise TapeError("root was not produced on this tape (detached or constant)")
        if self._consumed:
            raise TapeError("backward() already called on this tape; reset() first")
        self._consumed = True

        last = self._index[id(root)]
        grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
        for node in reversed(self.nodes[: last + 1]):
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            parent_grads = node.backward(g)
            for parent, pg in zip(node.parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                if id(parent) in self._index:
                    key = id(parent)
                    if key in grads:
                        grads[key] = grads[key] + pg
                    else:
                        grads[key] = pg
                else:
                    # leaf: accumulate into its grad buffer
                    if parent.grad is None:
                        parent.grad = np.array(pg, dtype=np.float64, copy=True)
                    else:
                        parent.grad += pg


def _finite(arr: np.ndarray, op: str) -> np.ndarray:
    # one reduction catches NaN/Inf; the full scan only runs on overflow
    if not math.isfinite(arr.sum()) and not np.isfinite(arr).all():
        raise NumericError(f"{op}: produced non-finite values")
    return arr


def _result(data: np.ndarray, op: str, parents: tuple[Tensor, ...], backward) -> Tensor:
    _finite(data, op)
    tape = _active_tape()
    needs = tape is not None and any(p.requires_grad for p in parents)
    out = Tensor._wrap(data, needs)
    if needs:
        tape.record(out, parents, backward)
    return out


def _check_broadcast(op: str, a: tuple[int, ...], b: tuple[int, ...]) -> None:
    if a == b:
        return
    if len(a) == 0 or len(b) == 0:
        return
    small, big = (a, b) if len(a) <= len(b) else (b, a)
    if big[len(big) - len(small):] == small:
        return
    raise ShapeError(f"{op}: cannot broadcast shapes {a} and {b}")


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    if len(shape) == 0:
        return np.asarray(g.sum())
    lead = g.ndim - len(shape)
    return g.sum(axis=tuple(range(lead))) if lead > 0 else g


# ---------------------------------------------------------------------------
# elementwise binary ops


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("add", a.shape, b.shape)
    sa, sb = a.shape, b.shape
    return _result(
        a.data + b.data,
        "add",
        (a, b),
        lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)),
    )


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("sub", a.shape, b.shape)
    sa, sb = a.shape, b.shape
    return _result(
        a.data - b.data,
        "sub",
        (a, b),
        lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)),
    )


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("mul", a.shape, b.shape)
    ad, bd = a.data, b.data
    return _result(
        ad * bd,
        "mul",
        (a, b),
        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
    )


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("div", a.shape, b.shape)
    ad, bd = a.data, b.data
    with np.errstate(divide="ignore", invalid="ignore"):
        out = ad / bd

    def backward(g):
        return (
            _unbroadcast(g / bd, ad.shape),
            _unbroadcast(-g * ad / (bd * bd), bd.shape),
        )

    return _result(out, "div", (a, b), backward)


def neg(a) -> Tensor:
    a = _as_tensor(a)
    return _result(-a.data, "neg", (a,), lambda g: (-g,))


# ---------------------------------------------------------------------------
# elementwise unary ops


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    x = a.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    s = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _result(s, "sigmoid", (a,), lambda g: (g * s * (1.0 - s),))


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    t = np.tanh(a.data)
    return _result(t, "tanh", (a,), lambda g: (g * (1.0 - t * t),))


def exp(a) -> Tensor:
    a = _as_tensor(a)
    with np.errstate(over="ignore"):
        e = np.exp(a.data)
    return _result(e, "exp", (a,), lambda g: (g * e,))


def log(a) -> Tensor:
    a = _as_tensor(a)
    x = a.data
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(x)
    return _result(out, "log", (a,), lambda g: (g / x,))


def absolute(a) -> Tensor:
    a = _as_tensor(a)
    x = a.data
    return _result(np.abs(x), "abs", (a,), lambda g: (g * np.sign(x),))


def relu(a, floor: float = 0.0) -> Tensor:
    """Elementwise ``max(a, floor)``; the gradient at the kink is taken as 0."""
    a = _as_tensor(a)
    x = a.data
    mask = x > floor
    return _result(np.where(mask, x, floor), "relu", (a,), lambda g: (g * mask,))


# ---------------------------------------------------------------------------
# reductions


def _norm_axis(axis, ndim):
    if axis is None:
        return None
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    return tuple(ax % ndim for ax in axes)


def sum_reduce(a, axis=None) -> Tensor:
    a = _as_tensor(a)
    shape = a.shape
    axes = _norm_axis(axis, a.ndim)
    out = a.data.sum(axis=axes)

    def backward(g):
        if axes is not None:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)

    return _result(np.asarray(out), "sum", (a,), backward)


def mean_reduce(a, axis=None) -> Tensor:
    a = _as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    count = a.size if axes is None else int(np.prod([a.shape[ax] for ax in axes]))
    return sum_reduce(a, axis) * (1.0 / count)


def max_reduce(a, axis: int = -1) -> Tensor:
    """Maximum along one axis; ties route the gradient to the first maximum."""
    a = _as_tensor(a)
    ax = axis % a.ndim
    idx = np.argmax(a.data, axis=ax)
    out = np.take_along_axis(a.data, np.expand_dims(idx, ax), ax).squeeze(ax)
    shape = a.shape

    def backward(g):
        grad = np.zeros(shape)
        np.put_along_axis(grad, np.expand_dims(idx, ax), np.expand_dims(g, ax), ax)
        return (grad,)

    return _result(out, "max", (a,), backward)


def softmax(a) -> Tensor:
    """Softmax over the last axis."""
    a = _as_tensor(a)
    x = a.data
    z = np.exp(x - x.max(axis=-1, keepdims=True))
    s = z / z.sum(axis=-1, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return _result(s, "softmax", (a,), backward)


def log_softmax(a) -> Tensor:
    """Log-softmax over the last axis."""
    a = _as_tensor(a)
    x = a.data
    shifted = x - x.max(axis=-1, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    s = np.exp(out)

    def backward(g):
        return (g - s * g.sum(axis=-1, keepdims=True),)

    return _result(out, "log_softmax", (a,), backward)


# ---------------------------------------------------------------------------
# linear algebra and structural ops


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes.

    Supported: 2-D @ 2-D, batched @ 2-D (shared right operand),
    2-D @ batched (shared left operand, e.g. adjacency), batched @ batched
    with identical batch shape.
    """
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must be at least 2-D, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    if a.ndim > 2 and b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul: batch dimensions differ, {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    need_a, need_b = a.requires_grad, b.requires_grad

    def backward(g):
        ga = gb = None
        if need_a:
            if ad.ndim == 2 and bd.ndim > 2:
                # shared left operand: contract over batch and columns
                batch_axes = tuple(range(g.ndim - 2)) + (g.ndim - 1,)
                ga = np.tensordot(g, bd, axes=(batch_axes, batch_axes))
            else:
                ga = g @ np.swapaxes(bd, -1, -2)
        if need_b:
            if bd.ndim == 2 and ad.ndim > 2:
                gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = np.swapaxes(ad, -1, -2) @ g
        return ga, gb

    return _result(ad @ bd, "matmul", (a, b), backward)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("concat: no inputs")
    ax = axis % ts[0].ndim
    ref = ts[0].shape
    for t in ts[1:]:
        if t.ndim != len(ref) or t.shape[:ax] + t.shape[ax + 1:] != ref[:ax] + ref[ax + 1:]:
            raise ShapeError(f"concat: incompatible shapes {[t.shape for t in ts]} on axis {axis}")
    sizes = np.cumsum([t.shape[ax] for t in ts])[:-1]

    def backward(g):
        return tuple(np.split(g, sizes, axis=ax))

    return _result(np.concatenate([t.data for t in ts], axis=ax), "concat", tuple(ts), backward)


def transpose(a) -> Tensor:
    """Swap the last two axes."""
    a = _as_tensor(a)
    if a.ndim < 2:
        raise ShapeError(f"transpose: need at least 2-D, got {a.shape}")
    return _result(
        np.swapaxes(a.data, -1, -2), "transpose", (a,), lambda g: (np.swapaxes(g, -1, -2),)
    )


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot reshape {old} to {tuple(shape)}") from exc
    return _result(out, "reshape", (a,), lambda g: (g.reshape(old),))


def _slice(a: Tensor, index) -> Tensor:
    shape = a.shape
    try:
        out = a.data[index]
    except IndexError as exc:
        raise ShapeError(f"slice: bad index {index!r} for shape {shape}") from exc
    if out.size and not np.may_share_memory(out, a.data):
        raise ShapeError("slice: only basic (view) indexing is supported; use take_rows")

    def backward(g):
        grad = np.zeros(shape)
        grad[index] = g
        return (grad,)

    return _result(out.copy(), "slice", (a,), backward)


def take_rows(a, idx) -> Tensor:
    """Gather rows of a 2-D tensor: ``out[...] = a[idx[...]]``."""
    a = _as_tensor(a)
    if a.ndim != 2:
        raise ShapeError(f"take_rows: source must be 2-D, got {a.shape}")
    idx = np.asarray(idx, dtype=np.intp)
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise ShapeError(f"take_rows: index out of range for {a.shape[0]} rows")
    shape = a.shape

    def backward(g):
        grad = np.zeros(shape)
        np.add.at(grad, idx.reshape(-1), g.reshape(-1, shape[1]))
        return (grad,)

    return _result(a.data[idx], "take_rows", (a,), backward)


# ---------------------------------------------------------------------------
# optimisation


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


class Adam:
    """Bias-corrected Adam over a name -> Tensor parameter mapping."""

    def __init__(self, params: Mapping[str, Tensor], lr: float = 1e-3,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = dict(params)
        self.state = AdamState(lr=lr, beta1=betas[0], beta2=betas[1], eps=eps)
        for name, p in self.params.items():
            self.state.m[name] = np.zeros_like(p.data)
            self.state.v[name] = np.zeros_like(p.data)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        st = self.state
        missing = [n for n, p in self.params.items() if p.grad is None]
        if missing:
            raise MissingGradientError(f"no gradient for parameter(s): {', '.join(missing)}")
        st.step += 1
        c1 = 1.0 - st.beta1 ** st.step
        c2 = 1.0 - st.beta2 ** st.step
        for name, p in self.params.items():
            g = p.grad
            m = st.m[name]
            v = st.v[name]
            m *= st.beta1
            m += (1.0 - st.beta1) * g
            v *= st.beta2
            v += (1.0 - st.beta2) * g * g
            p.data -= st.lr * (m / c1) / (np.sqrt(v / c2) + st.eps)


def clip_grad_norm(params: Iterable[Tensor], max_norm: float) -> float:
    """Scale gradients in place so their global L2 norm is at most ``max_norm``."""
    params = [p for p in params if p.grad is not None]
    total = float(np.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in params)))
    if total > max_norm:
        scale = max_norm / total
        for p in params:
            p.grad *= scale
    return total


# ---------------------------------------------------------------------------
# checkpoints

CHECKPOINT_VERSION = 1


def save_checkpoint(path: str | os.PathLike, params: Mapping[str, np.ndarray | Tensor],
                    meta: Mapping | None = None) -> None:
    """Write parameters as an ``.npz`` archive; float64 values round-trip exactly.

    The write goes to a temporary file in the same directory and is renamed
    into place.
    """
    arrays = {}
    for name, value in params.items():
        arr = value.data if isinstance(value, Tensor) else np.asarray(value, dtype=np.float64)
        arrays[f"param/{name}"] = arr
    header = {"version": CHECKPOINT_VERSION, "meta": dict(meta or {})}
    arrays["__header__"] = np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8)
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            np.savez(fh, **arrays)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path: str | os.PathLike) -> tuple[dict[str, np.ndarray], dict]:
    """Inverse of :func:`save_checkpoint`; returns ``(params, meta)``."""
    with np.load(os.fspath(path), allow_pickle=False) as archive:
        header = json.loads(archive["__header__"].tobytes().decode())
        if header.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {header.get('version')}")
        params = {
            key[len("param/"):]: archive[key].astype(np.float64)
            for key in archive.files
            if key.startswith("param/")
        }
    return params, header["meta"]


# ---------------------------------------------------------------------------
# gradient checking


def numeric_gradient(f: Callable[[], float], arr: np.ndarray, h: float = 1e-4) -> np.ndarray:
    """Central finite differences of scalar ``f()`` w.r.t. ``arr``, perturbed in place."""
    grad = np.zeros_like(arr)
    flat = arr.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """Max elementwise ``|a - n| / max(|a|, |n|, floor)``."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0
