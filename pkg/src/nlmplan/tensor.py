"""A small reverse-mode autodiff engine over numpy arrays.

Only the handful of operations the logic-machine network needs are
provided. Operations are recorded on the active :class:`Tape` (one per
thread) whenever an input requires a gradient; outside a tape everything
runs as plain numpy.
"""
from __future__ import annotations

import threading
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

_local = threading.local()


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad", "_parents", "_vjp", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if dtype is None and arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._vjp = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"


class Tape:
    """Records taped operations in execution order (a topological order)."""

    def __init__(self):
        self.nodes: list[Tensor] = []

    def __enter__(self) -> "Tape":
        stack = getattr(_local, "tapes", None)
        if stack is None:
            stack = _local.tapes = []
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _local.tapes.pop()

    def backward(self, loss: Tensor) -> dict[Tensor, np.ndarray]:
        return backward(loss, self)


def _active_tape() -> Tape | None:
    stack = getattr(_local, "tapes", None)
    return stack[-1] if stack else None


def _recording(parents) -> bool:
    return _active_tape() is not None and any(p.requires_grad for p in parents)


def _record(out_data: np.ndarray, parents: tuple[Tensor, ...], vjp) -> Tensor:
    out = Tensor(out_data)
    tape = _active_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._vjp = vjp
        tape.nodes.append(out)
    return out


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def backward(loss: Tensor, tape: Tape | None = None) -> dict[Tensor, np.ndarray]:
    """Gradients of a scalar `loss` with respect to every leaf requiring grad.

    The returned dict is keyed by tensor identity.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return {}
    if tape is None:
        tape = _active_tape()
    if tape is None:
        raise RuntimeError("backward called outside of a Tape")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        parent_grads = node._vjp(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if parent._vjp is None:
                leaves[key] = parent
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    return {leaves[k]: g for k, g in grads.items() if k in leaves}


# --- operations ------------------------------------------------------------


def matmul_lastaxis(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x[..., K] @ w[K, Q] + b[Q]`` applied independently at every leading index."""
    if w.data.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise ShapeError(f"matmul_lastaxis: cannot multiply {x.shape} by {w.shape}")
    if b is not None and b.shape != (w.shape[1],):
        raise ShapeError(f"matmul_lastaxis: bias shape {b.shape} does not match weights {w.shape}")
    lead = x.shape[:-1]
    k, q = w.shape
    x2 = x.data.reshape(-1, k)
    out = x2 @ w.data
    if b is not None:
        out += b.data
    out = out.reshape(lead + (q,))

    def vjp(g):
        g2 = g.reshape(-1, q)
        gx = (g2 @ w.data.T).reshape(x.shape) if x.requires_grad else None
        gw = x2.T @ g2 if w.requires_grad else None
        if b is None:
            return gx, gw
        gb = g2.sum(axis=0) if b.requires_grad else None
        return gx, gw, gb

    parents = (x, w) if b is None else (x, w, b)
    return _record(out, parents, vjp)


def concat_lastaxis(xs) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    if not xs:
        raise ShapeError("concat_lastaxis: nothing to concatenate")
    lead = xs[0].shape[:-1]
    for x in xs[1:]:
        if x.shape[:-1] != lead:
            raise ShapeError(f"concat_lastaxis: leading shapes differ, {xs[0].shape} vs {x.shape}")
    if len(xs) == 1:
        return xs[0]
    out = np.concatenate([x.data for x in xs], axis=-1)
    splits = np.cumsum([x.shape[-1] for x in xs])[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=-1))

    return _record(out, tuple(xs), vjp)


def permute_axes(x: Tensor, perm) -> Tensor:
    perm = tuple(perm)
    if sorted(perm) != list(range(x.data.ndim)):
        raise ShapeError(f"permute_axes: {perm} is not a permutation of the axes of {x.shape}")
    out = np.transpose(x.data, perm)
    inverse = tuple(np.argsort(perm))

    def vjp(g):
        return (np.transpose(g, inverse),)

    return _record(out, (x,), vjp)


def max_reduce_axis(x: Tensor, axis: int) -> Tensor:
    """Max over `axis`; the gradient goes to the first maximal entry."""
    if x.data.ndim == 0:
        raise ShapeError("max_reduce_axis: cannot reduce a 0-d tensor")
    axis = axis % x.data.ndim
    if x.shape[axis] == 0:
        raise ShapeError(f"max_reduce_axis: axis {axis} of {x.shape} is empty")
    if not _recording((x,)):
        return Tensor(x.data.max(axis=axis))
    idx = np.argmax(x.data, axis=axis)
    out = np.take_along_axis(x.data, np.expand_dims(idx, axis), axis=axis).squeeze(axis)

    def vjp(g):
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis)
        return (gx,)

    return _record(out, (x,), vjp)


def broadcast_expand(x: Tensor, axis: int, extent: int) -> Tensor:
    """Insert a new axis at `axis` and repeat the tensor `extent` times along it."""
    nd = x.data.ndim + 1
    axis = axis % nd
    expanded = np.expand_dims(x.data, axis)
    shape = list(expanded.shape)
    shape[axis] = extent
    out = np.broadcast_to(expanded, shape)

    def vjp(g):
        return (g.sum(axis=axis),)

    return _record(out, (x,), vjp)


def sigmoid(x: Tensor) -> Tensor:
    y = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    y = y.astype(x.data.dtype, copy=False)

    def vjp(g):
        return (g * y * (1.0 - y),)

    return _record(y, (x,), vjp)


def mse_loss(pred: Tensor, target) -> Tensor:
    """Half mean squared error, ``mean(0.5 * (pred - target) ** 2)``."""
    target = as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"mse_loss: prediction {pred.shape} vs target {target.shape}")
    diff = pred.data - target.data
    n = max(diff.size, 1)
    out = np.asarray(0.5 * np.sum(diff * diff) / n, dtype=pred.data.dtype)

    def vjp(g):
        gd = g * diff / n
        return gd, -gd

    return _record(out, (pred, target), vjp)


def sum_all(x: Tensor) -> Tensor:
    out = np.asarray(x.data.sum(), dtype=x.data.dtype)

    def vjp(g):
        return (np.broadcast_to(g, x.shape).copy(),)

    return _record(out, (x,), vjp)


def reshape(x: Tensor, shape) -> Tensor:
    out = x.data.reshape(shape)

    def vjp(g):
        return (g.reshape(x.shape),)

    return _record(out, (x,), vjp)


# --- initialization and optimization ---------------------------------------


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, dtype=np.float32) -> np.ndarray:
    limit = np.sqrt(6.0 / max(fan_in + fan_out, 1))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype)


@dataclass
class AdamState:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray], state: AdamState) -> None:
    """In-place Adam update of `params`; parameters without a gradient are
    treated as having a zero gradient."""
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.shape:
            raise ShapeError(f"adam_step: gradient {g.shape} does not match parameter {name} {p.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        update = state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.data -= update.astype(p.data.dtype, copy=False)


@contextmanager
def no_tape():
    """Temporarily disable recording (e.g. for target computation)."""
    stack = getattr(_local, "tapes", None)
    saved = list(stack) if stack else []
    if stack is not None:
        stack.clear()
    try:
        yield
    finally:
        if stack is not None:
            stack.extend(saved)


def add(*xs: Tensor) -> Tensor:
    """Elementwise sum of equally shaped tensors."""
    shape = xs[0].shape
    for x in xs[1:]:
        if x.shape != shape:
            raise ShapeError(f"add: shapes differ, {shape} vs {x.shape}")
    if len(xs) == 1:
        return xs[0]
    out = xs[0].data + xs[1].data
    for x in xs[2:]:
        out += x.data

    def vjp(g):
        return (g,) * len(xs)

    return _record(out, tuple(xs), vjp)


def slice_axis(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    axis = axis % x.data.ndim
    index = [slice(None)] * x.data.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)
    out = x.data[index]

    def vjp(g):
        gx = np.zeros_like(x.data)
        gx[index] = g
        return (gx,)

    return _record(out, (x,), vjp)


def permute_sum_blocks(x: Tensor, perms, block: int) -> Tensor:
    """``sum_j permute_axes(x[..., j*block:(j+1)*block], perms[j])``.

    Equivalent to slicing, permuting and adding, without materializing the
    intermediate slices in the backward pass.
    """
    perms = [tuple(p) for p in perms]
    if x.shape[-1] != block * len(perms):
        raise ShapeError(f"permute_sum_blocks: {x.shape[-1]} channels is not {len(perms)} blocks of {block}")
    out = None
    for j, p in enumerate(perms):
        part = np.transpose(x.data[..., j * block:(j + 1) * block], p)
        out = part.copy() if out is None else out + part
    inverses = [tuple(np.argsort(p)) for p in perms]

    def vjp(g):
        gx = np.empty_like(x.data)
        for j, inv in enumerate(inverses):
            gx[..., j * block:(j + 1) * block] = np.transpose(g, inv)
        return (gx,)

    return _record(out, (x,), vjp)


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """``x + b`` with ``b`` of shape ``(C,)`` broadcast over the leading axes."""
    if b.shape != (x.shape[-1],):
        raise ShapeError(f"add_bias: bias {b.shape} does not match {x.shape}")
    out = x.data + b.data

    def vjp(g):
        return g, g.reshape(-1, g.shape[-1]).sum(axis=0)

    return _record(out, (x, b), vjp)
