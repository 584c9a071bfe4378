"""Multilayer perceptrons, Adam, and the parameter checkpoint format."""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ndiv import autodiff as ad

ACTIVATIONS = {"relu": ad.relu, "tanh": ad.tanh, "identity": lambda x: x}


@dataclass(frozen=True)
class MlpSpec:
    widths: tuple
    hidden: str = "relu"
    output: str = "identity"

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if len(self.widths) < 2 or min(self.widths) < 1:
            raise ValueError(f"MlpSpec needs >= 2 positive widths, got {self.widths}")
        if self.hidden not in ("relu", "tanh"):
            raise ValueError(f"unknown hidden nonlinearity {self.hidden!r}")
        if self.output not in ("identity", "tanh"):
            raise ValueError(f"unknown output nonlinearity {self.output!r}")

    @property
    def n_layers(self) -> int:
        return len(self.widths) - 1


def init_params(spec: MlpSpec, rng: np.random.Generator) -> dict:
    """Glorot-uniform weights, zero biases."""
    params = {}
    for k, (fan_in, fan_out) in enumerate(zip(spec.widths[:-1], spec.widths[1:])):
        a = np.sqrt(6.0 / (fan_in + fan_out))
        params[f"W{k}"] = rng.uniform(-a, a, size=(fan_in, fan_out))
        params[f"b{k}"] = np.zeros(fan_out)
    return params


def param_count(params: dict) -> int:
    return int(np.sum([p.size for p in params.values()]))


def as_leaves(params: dict, trainable: bool = True) -> dict:
    make = ad.variable if trainable else ad.constant
    return {k: make(v) for k, v in params.items()}


def forward_mlp(spec: MlpSpec, leaves: dict, x, return_hidden: bool = False):
    """Run the network on a batch; ``leaves`` maps parameter names to nodes.

    With ``return_hidden`` the last hidden activation is returned as well,
    which is what the discriminator-feature metric uses.
    """
    h = x if isinstance(x, ad.Node) else ad.constant(x)
    if h.shape[-1] != spec.widths[0]:
        raise ad.ShapeError("forward_mlp", h.shape, (spec.widths[0],))
    act = ACTIVATIONS[spec.hidden]
    hidden = h
    for k in range(spec.n_layers):
        h = ad.affine(h, leaves[f"W{k}"], leaves[f"b{k}"])
        if k < spec.n_layers - 1:
            h = act(h)
            hidden = h
        else:
            h = ACTIVATIONS[spec.output](h)
    return (h, hidden) if return_hidden else h


def predict(spec: MlpSpec, params: dict, x: np.ndarray) -> np.ndarray:
    """Forward pass on plain arrays, without building a graph."""
    h = np.asarray(x, dtype=np.float64)
    for k in range(spec.n_layers):
        h = h @ params[f"W{k}"] + params[f"b{k}"]
        if k < spec.n_layers - 1:
            h = np.maximum(h, 0.0) if spec.hidden == "relu" else np.tanh(h)
        elif spec.output == "tanh":
            h = np.tanh(h)
    return h


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def tensors(self, prefix: str) -> dict:
        out = {f"{prefix}.m.{k}": a for k, a in self.m.items()}
        out.update({f"{prefix}.v.{k}": a for k, a in self.v.items()})
        return out


def adam_step(params: dict, grads: dict, state: AdamState) -> dict:
    """One bias-corrected Adam update, in place on ``params`` and ``state``."""
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ad.ShapeError("adam_step", p.shape, g.shape)
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


# -- checkpoint file ---------------------------------------------------------
#
# Layout: 8-byte magic, uint64 LE header length, UTF-8 JSON header, then every
# tensor's float64 LE data back to back in header order.

MAGIC = b"NDIVCKP1"


class CheckpointError(IOError):
    pass


def save_tensors(path, tensors: dict, meta: dict | None = None) -> None:
    names = list(tensors)
    header = {
        "tensors": [{"name": n, "shape": list(np.shape(tensors[n]))} for n in names],
        "meta": meta or {},
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(hbytes)))
        f.write(hbytes)
        for n in names:
            f.write(np.ascontiguousarray(tensors[n], dtype="<f8").tobytes())


def load_tensors(path) -> tuple:
    """Return ``(tensors, meta)``; raises :class:`CheckpointError` on corrupt files."""
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    if raw[:8] != MAGIC or len(raw) < 16:
        raise CheckpointError(f"{path}: not a checkpoint file")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    try:
        header = json.loads(raw[16:16 + hlen].decode("utf-8"))
        entries = header["tensors"]
    except (UnicodeDecodeError, ValueError, KeyError) as e:
        raise CheckpointError(f"{path}: bad header ({e})") from e
    offset = 16 + hlen
    tensors = {}
    for e in entries:
        shape = tuple(e["shape"])
        n = int(np.prod(shape)) if shape else 1
        chunk = raw[offset:offset + 8 * n]
        if len(chunk) != 8 * n:
            raise CheckpointError(f"{path}: truncated at tensor {e['name']!r}")
        tensors[e["name"]] = np.frombuffer(chunk, dtype="<f8").reshape(shape).astype(np.float64)
        offset += 8 * n
    if offset != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - offset} trailing bytes")
    return tensors, header.get("meta", {})
