"""Single-file binary model checkpoints.

Layout (all integers little-endian)::

    offset 0   8 bytes   magic b"NLMCKPT1"
    offset 8   u32       header length H
    offset 12  H bytes   UTF-8 JSON header, keys sorted, no whitespace
    offset 12+H          tensor payloads back to back, float32 LE, row-major

The header records the predicate signature and its fingerprint, the model
hyperparameters and, for each tensor, its name, shape, byte offset (from
the start of the payload) and byte length. See docs/checkpoint_format.md.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from . import tensor as T
from .nlm import PERM_ORDER, NlmModel, SignatureMismatch, signature_fingerprint

MAGIC = b"NLMCKPT1"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def to_bytes(model: NlmModel) -> bytes:
    tensors = []
    chunks = []
    offset = 0
    for name in sorted(model.params):
        arr = np.ascontiguousarray(model.params[name].data, dtype="<f4")
        raw = arr.tobytes(order="C")
        tensors.append({"name": name, "shape": list(arr.shape), "dtype": "<f4", "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    hyper = model.hyperparameters()
    hyper["optimizer_state"] = False
    header = {
        "format": FORMAT_VERSION,
        "fingerprint": model.fingerprint,
        "signature": [[n, a] for n, a in model.signature],
        "hyperparameters": hyper,
        "tensors": tensors,
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<I", len(head)) + head + b"".join(chunks)


def from_bytes(data: bytes) -> NlmModel:
    if len(data) < 12 or data[:8] != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    (hlen,) = struct.unpack("<I", data[8:12])
    try:
        header = json.loads(data[12 : 12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from None
    if header.get("format") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format {header.get('format')!r}")
    hp = header["hyperparameters"]
    if hp.get("perm_order") != PERM_ORDER:
        raise CheckpointError(f"permutation order {hp.get('perm_order')!r} is not {PERM_ORDER!r}")
    signature = tuple((str(n), int(a)) for n, a in header["signature"])
    if signature_fingerprint(signature) != header["fingerprint"]:
        raise CheckpointError("signature does not match the stored fingerprint")
    model = NlmModel(
        signature,
        max_arity=int(hp["max_arity"]),
        layers=int(hp["layers"]),
        features=int(hp["features"]),
        gamma=float(hp["gamma"]),
        base=str(hp["base"]),
        tau=float(hp["tau"]),
    )
    expected = model.layer_shapes()
    payload = memoryview(data)[12 + hlen :]
    for t in header["tensors"]:
        name, shape = t["name"], tuple(t["shape"])
        if expected.get(name) != shape:
            raise CheckpointError(f"tensor {name} has shape {shape}, model expects {expected.get(name)}")
        start, n = t["offset"], t["nbytes"]
        if start + n > len(payload):
            raise CheckpointError(f"tensor {name} runs past the end of the file")
        arr = np.frombuffer(payload[start : start + n], dtype="<f4").reshape(shape).astype(np.float32)
        model.params[name] = T.Tensor(arr, requires_grad=True, name=name)
    missing = set(expected) - set(model.params)
    if missing:
        raise CheckpointError(f"checkpoint lacks tensors {sorted(missing)}")
    return model


def save(model: NlmModel, path) -> None:
    Path(path).write_bytes(to_bytes(model))


def load(path, signature=None) -> NlmModel:
    """Load a checkpoint; with `signature`, fail fast unless it matches."""
    model = from_bytes(Path(path).read_bytes())
    if signature is not None:
        model.check_signature(signature)
    return model


__all__ = ["MAGIC", "CheckpointError", "SignatureMismatch", "to_bytes", "from_bytes", "save", "load"]
