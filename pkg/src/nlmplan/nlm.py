"""Neural Logic Machine value function over multi-arity predicate tensors.

A state/goal pair is encoded as one tensor per arity ``n`` with shape
``(batch, O, ..., O, C_n)`` (``n`` object axes). Layers combine neighbouring
arities with expand (copy along a new last object axis), reduce (max over
the last object axis) and perm (concatenate all object-axis permutations),
followed by a pointwise linear map shared across object tuples.
"""
from __future__ import annotations

import hashlib
import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .heuristics import discounted, evaluate, Heuristic
from .task import GroundTask, State

PERM_ORDER = "lex"


class SignatureMismatch(ValueError):
    pass


def arity_schedule(max_input_arity: int, max_arity: int, layers: int) -> tuple[int, ...]:
    """Per-layer output arity: ``min(M, N + l - 1, L - l)`` for ``l = 1..L``.

    Rises one arity per layer from N to M, plateaus, then descends to a
    scalar output; (N, M, L) = (2, 3, 7) gives (2, 3, 3, 3, 2, 1, 0).
    """
    n, m, depth = max_input_arity, max_arity, layers
    if not 0 <= n <= m <= depth:
        raise ValueError(f"need 0 <= N <= M <= L, got N={n}, M={m}, L={depth}")
    if depth < n + 1:
        raise ValueError(f"L={depth} layers cannot reduce arity {n} to a scalar; need L >= N + 1")
    return tuple(min(m, n + l - 1, depth - l) for l in range(1, depth + 1))


# --- encoding --------------------------------------------------------------


@dataclass
class Mapr:
    """Batched multi-arity predicate representation; ``arrays[n]`` has shape
    ``(batch,) + (O,) * n + (C_n,)``."""

    arrays: list[np.ndarray]
    num_objects: int

    @property
    def batch(self) -> int:
        return self.arrays[0].shape[0]

    def channels(self) -> list[int]:
        return [a.shape[-1] for a in self.arrays]

    def permute_objects(self, perm) -> "Mapr":
        """Relabel objects: new object ``i`` is old object ``perm[i]``."""
        perm = np.asarray(perm)
        out = []
        for n, a in enumerate(self.arrays):
            for axis in range(1, n + 1):
                a = np.take(a, perm, axis=axis)
            out.append(a)
        return Mapr(out, self.num_objects)

    def take(self, rows) -> "Mapr":
        return Mapr([a[rows] for a in self.arrays], self.num_objects)


def predicate_signature(task: GroundTask) -> tuple[tuple[str, int], ...]:
    return task.signature


def max_arity_of(signature) -> int:
    return max((a for _, a in signature), default=0)


@dataclass(frozen=True)
class _Layout:
    index: tuple[np.ndarray, ...]  # per arity: (O,)*n + (P_n,) proposition ids
    nbytes: int
    num_props: int


_layouts: dict[tuple, _Layout] = {}


def _layout(task: GroundTask) -> _Layout:
    key = (task.signature, task.num_objects)
    lay = _layouts.get(key)
    if lay is not None:
        return lay
    o = task.num_objects
    top = max_arity_of(task.signature)
    index = []
    for n in range(top + 1):
        cols = [
            task.offsets[k] + np.arange(o**n).reshape((o,) * n)
            for k, p in enumerate(task.predicates)
            if p.arity == n
        ]
        if cols:
            index.append(np.stack(cols, axis=-1))
        else:
            index.append(np.zeros((o,) * n + (0,), dtype=np.int64))
    lay = _Layout(tuple(index), (task.num_props + 7) // 8, task.num_props)
    _layouts[key] = lay
    return lay


def _bit_matrix(states, lay: _Layout) -> np.ndarray:
    buf = b"".join(s.to_bytes(lay.nbytes, "little") for s in states)
    raw = np.frombuffer(buf, dtype=np.uint8).reshape(len(states), lay.nbytes)
    return np.unpackbits(raw, axis=1, bitorder="little")[:, : lay.num_props]


def encode_batch(task: GroundTask, states, goal=None, dtype=np.float32) -> Mapr:
    """Encode states of `task` with goal channels appended after state channels."""
    lay = _layout(task)
    goal_ids = task.goal if goal is None else tuple(goal)
    goal_mask = 0
    for g in goal_ids:
        goal_mask |= 1 << g
    sbits = _bit_matrix(list(states), lay)
    gbits = _bit_matrix([goal_mask], lay)[0]
    arrays = []
    for idx in lay.index:
        s_part = sbits[:, idx].astype(dtype)
        g_part = np.broadcast_to(gbits[idx].astype(dtype), s_part.shape)
        arrays.append(np.concatenate([s_part, g_part], axis=-1))
    return Mapr(arrays, task.num_objects)


def encode(s: State, goal, task: GroundTask, dtype=np.float32) -> Mapr:
    return encode_batch(task, [s], goal, dtype)


def concat_maprs(maprs: list[Mapr]) -> Mapr:
    if len(maprs) == 1:
        return maprs[0]
    return Mapr([np.concatenate(parts, axis=0) for parts in zip(*(m.arrays for m in maprs))], maprs[0].num_objects)


# --- tensor-level NLM operations -------------------------------------------


def expand(z: T.Tensor, arity: int, num_objects: int) -> T.Tensor:
    """Arity n -> n+1 by copying along a new last object axis."""
    return T.broadcast_expand(z, z.data.ndim - 1, num_objects)


def reduce(z: T.Tensor, arity: int) -> T.Tensor:
    """Arity n -> n-1 by max over the last object axis (existential)."""
    if arity < 1:
        raise ValueError("cannot reduce a nullary tensor")
    if z.shape[-2] == 0:
        # no objects: the existential is false everywhere
        return T.Tensor(np.zeros(z.shape[:-2] + z.shape[-1:], dtype=z.data.dtype))
    return T.max_reduce_axis(z, z.data.ndim - 2)


def perm(z: T.Tensor, arity: int) -> T.Tensor:
    """Concatenate all permutations of the `arity` object axes on the channel
    axis, permutations in lexicographic order (identity first)."""
    if arity < 2:
        return z
    nd = z.data.ndim
    start = nd - 1 - arity
    lead = tuple(range(start))
    parts = [
        T.permute_axes(z, lead + tuple(start + i for i in p) + (nd - 1,))
        for p in itertools.permutations(range(arity))
    ]
    return T.concat_lastaxis(parts)


def compose(
    lower: T.Tensor | None,
    own: T.Tensor | None,
    upper: T.Tensor | None,
    arity: int,
    num_objects: int,
    weight: T.Tensor,
    bias: T.Tensor,
    activate: bool = True,
) -> T.Tensor:
    parts = []
    if lower is not None:
        parts.append(expand(lower, arity - 1, num_objects))
    if own is not None:
        parts.append(own)
    if upper is not None:
        parts.append(reduce(upper, arity + 1))
    x = perm(T.concat_lastaxis(parts), arity)
    if x.shape[-1] != weight.shape[0]:
        raise SignatureMismatch(f"compose at arity {arity}: {x.shape[-1]} input features, weights expect {weight.shape[0]}")
    y = T.matmul_lastaxis(x, weight, bias)
    return T.sigmoid(y) if activate else y


def _object_perms(ndim: int, arity: int) -> list[tuple[int, ...]]:
    start = ndim - 1 - arity
    lead = tuple(range(start))
    return [lead + tuple(start + i for i in p) + (ndim - 1,) for p in itertools.permutations(range(arity))]


def compose_fused(
    lower: T.Tensor | None,
    own: T.Tensor | None,
    upper: T.Tensor | None,
    arity: int,
    num_objects: int,
    weight: T.Tensor,
    bias: T.Tensor,
    activate: bool = True,
) -> T.Tensor:
    """Same function as :func:`compose`, cheaper to evaluate.

    The pointwise map is linear, so each input group is multiplied by its
    slice of the weights first (the expanded group at the lower arity) and
    the permutation is applied to the small ``Q``-wide outputs instead of
    the wide concatenated input.
    """
    k = math.factorial(arity)
    q = weight.shape[1]
    groups = [
        (t, role) for t, role in ((lower, "lower"), (own, "own"), (upper, "upper")) if t is not None
    ]
    c = sum(t.shape[-1] for t, _ in groups)
    if k * c != weight.shape[0]:
        raise SignatureMismatch(f"compose at arity {arity}: {k * c} input features, weights expect {weight.shape[0]}")
    blocks = T.reshape(weight, (k, c, q))
    terms = []
    offset = 0
    for t, role in groups:
        width = t.shape[-1]
        if width == 0:
            continue
        # (k, width, q) -> (width, k * q), column index = perm * q + feature
        w_part = T.slice_axis(blocks, 1, offset, offset + width)
        w_part = T.reshape(T.permute_axes(w_part, (1, 0, 2)), (width, k * q))
        offset += width
        if role == "lower":
            terms.append(expand(T.matmul_lastaxis(t, w_part), arity - 1, num_objects))
        elif role == "upper":
            terms.append(T.matmul_lastaxis(reduce(t, arity + 1), w_part))
        else:
            terms.append(T.matmul_lastaxis(t, w_part))
    if terms:
        s = T.add(*terms)
        if k > 1:
            s = T.permute_sum_blocks(s, _object_perms(s.data.ndim, arity), q)
    else:
        t, role = groups[0]
        a = {"lower": arity - 1, "own": arity, "upper": arity + 1}[role]
        lead = t.shape[: t.data.ndim - 1 - a] + (num_objects,) * arity
        s = T.Tensor(np.zeros(lead + (q,), dtype=weight.data.dtype))
    y = T.add_bias(s, bias)
    return T.sigmoid(y) if activate else y


# --- model -----------------------------------------------------------------


@dataclass
class NlmModel:
    signature: tuple[tuple[str, int], ...]
    max_arity: int
    layers: int
    features: int = 8
    gamma: float = 0.999999
    base: str = "none"
    tau: float = 1.0
    params: dict[str, T.Tensor] = field(default_factory=dict)
    fused: bool = True

    @property
    def _compose(self):
        return compose_fused if self.fused else compose

    @property
    def input_arity(self) -> int:
        return max_arity_of(self.signature)

    @property
    def schedule(self) -> tuple[int, ...]:
        return arity_schedule(self.input_arity, self.max_arity, self.layers)

    @property
    def input_channels(self) -> list[int]:
        return [2 * sum(1 for _, a in self.signature if a == n) for n in range(self.input_arity + 1)]

    @property
    def fingerprint(self) -> str:
        return signature_fingerprint(self.signature)

    @property
    def dtype(self):
        for p in self.params.values():
            return p.data.dtype
        return np.dtype(np.float32)

    def layer_shapes(self) -> dict[str, tuple[int, ...]]:
        """Parameter shapes; these depend on the signature and schedule only."""
        shapes: dict[str, tuple[int, ...]] = {}
        stack = {n: c for n, c in enumerate(self.input_channels)}
        sched = self.schedule
        for l, top in enumerate(sched, start=1):
            last = l == len(sched)
            q = 1 if last else self.features
            produced = {}
            for n in range(top + 1):
                c = stack.get(n - 1, 0) + stack.get(n, 0) + stack.get(n + 1, 0)
                shapes[f"layer{l}.arity{n}.weight"] = (math.factorial(n) * c, q)
                shapes[f"layer{l}.arity{n}.bias"] = (q,)
                produced[n] = q
            for n, q in produced.items():
                stack[n] = stack.get(n, 0) + q
        return shapes

    @classmethod
    def initialize(
        cls,
        signature,
        max_arity: int = 3,
        layers: int = 6,
        features: int = 8,
        seed: int = 0,
        dtype=np.float32,
        **meta,
    ) -> "NlmModel":
        model = cls(tuple((str(n), int(a)) for n, a in signature), max_arity, layers, features, **meta)
        rng = np.random.default_rng(seed)
        for name, shape in model.layer_shapes().items():
            if name.endswith(".weight"):
                data = T.glorot_uniform(rng, shape[0], shape[1], dtype)
            else:
                data = np.zeros(shape, dtype=dtype)
            model.params[name] = T.Tensor(data, requires_grad=True, name=name)
        return model

    def check_signature(self, signature) -> None:
        signature = tuple((str(n), int(a)) for n, a in signature)
        if signature != self.signature:
            raise SignatureMismatch(
                f"model fingerprint {self.fingerprint} does not match task fingerprint "
                f"{signature_fingerprint(signature)} (model predicates {list(self.signature)}, task predicates {list(signature)})"
            )

    def forward(self, mapr: Mapr) -> T.Tensor:
        """Scalar value per batch row, shape ``(batch,)``."""
        if mapr.channels() != self.input_channels:
            raise SignatureMismatch(f"input channels {mapr.channels()} do not match model {self.input_channels}")
        dtype = self.dtype
        o = mapr.num_objects
        stack: dict[int, list[T.Tensor]] = {
            n: [T.Tensor(a.astype(dtype, copy=False))] for n, a in enumerate(mapr.arrays)
        }
        sched = self.schedule
        out = None
        for l, top in enumerate(sched, start=1):
            last = l == len(sched)
            merged = {n: T.concat_lastaxis(parts) for n, parts in stack.items() if parts}
            produced = {}
            for n in range(top + 1):
                produced[n] = self._compose(
                    merged.get(n - 1) if n >= 1 else None,
                    merged.get(n),
                    merged.get(n + 1),
                    n,
                    o,
                    self.params[f"layer{l}.arity{n}.weight"],
                    self.params[f"layer{l}.arity{n}.bias"],
                    activate=not last,
                )
            for n, t in produced.items():
                stack.setdefault(n, []).append(t)
            out = produced[0]
        return T.reshape(out, (out.shape[0],))

    def predict(self, mapr: Mapr, chunk: int = 256) -> np.ndarray:
        """Untaped forward pass, processed in chunks; float64 result."""
        with T.no_tape():
            if mapr.batch <= chunk:
                return self.forward(mapr).data.astype(np.float64)
            return np.concatenate(
                [self.forward(mapr.take(slice(i, i + chunk))).data for i in range(0, mapr.batch, chunk)]
            ).astype(np.float64)

    def value(self, s: State, goal, task: GroundTask) -> float:
        return float(self.predict(encode(s, goal, task, self.dtype))[0])

    def hyperparameters(self) -> dict:
        return {
            "max_input_arity": self.input_arity,
            "max_arity": self.max_arity,
            "layers": self.layers,
            "features": self.features,
            "gamma": self.gamma,
            "tau": self.tau,
            "base": self.base,
            "perm_order": PERM_ORDER,
        }


def signature_fingerprint(signature) -> str:
    payload = json.dumps([[n, a] for n, a in signature], separators=(",", ":"))
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


# --- learned heuristic -----------------------------------------------------


def learned_heuristic(model: NlmModel, s: State, goal, task: GroundTask) -> float:
    """``-V(s) + h_gamma(s)``; with no shaping base, just ``-V(s)``."""
    v = model.value(s, goal, task)
    if model.base == "none":
        return -v
    return -v + discounted(evaluate(model.base, s, task, goal), model.gamma)


class LearnedHeuristic(Heuristic):
    """Search-facing learned heuristic with batched evaluation."""

    def __init__(self, model: NlmModel, task: GroundTask, name: str = "learned"):
        model.check_signature(task.signature)
        self.model = model
        self.task = task
        self.name = name

    def __call__(self, s: State) -> float:
        return self.many([s])[0]

    def many(self, states) -> list[float]:
        if not states:
            return []
        v = self.model.predict(encode_batch(self.task, states, None, self.model.dtype))
        out = -v
        if self.model.base != "none":
            g = self.model.gamma
            out = out + np.array([discounted(evaluate(self.model.base, s, self.task), g) for s in states])
        return [float(x) for x in out]
