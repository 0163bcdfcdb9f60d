"""Linear, embedding, LSTM and dropout layers plus the checkpoint container."""

from __future__ import annotations

import json
import math
import struct
from pathlib import Path
from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import DimensionError, Tensor


class VocabularyError(IndexError):
    """Token id outside the embedding table."""


class Module:
    """Parameter container.  Tensors with ``requires_grad`` and nested modules
    found in instance attributes are collected, in attribute order."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in vars(self).items():
            path = f"{prefix}{key}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield path, value
            elif isinstance(value, Module):
                yield from value.named_parameters(path + ".")

    def parameters(self) -> dict[str, Tensor]:
        return dict(self.named_parameters())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        missing = set(params) - set(state)
        if missing:
            raise KeyError(f"checkpoint lacks parameters: {sorted(missing)}")
        for k, p in params.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != p.shape:
                raise DimensionError(f"{k}: checkpoint shape {arr.shape} != model shape {p.shape}")
            p.data = arr.copy()

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.grad = None


def _uniform(rng: np.random.Generator, shape, bound: float) -> np.ndarray:
    return rng.uniform(-bound, bound, size=shape)


# ------------------------------------------------------------------ linear


def weight_norm(v: Tensor, g: Tensor) -> Tensor:
    """Row-wise reparameterization ``W[i] = g[i] * v[i] / ||v[i]||``."""
    V, G = v.data, g.data
    norms = np.sqrt((V * V).sum(axis=1))
    if np.any(norms == 0):
        raise ValueError("weight norm undefined for an all-zero row")
    unit = V / norms[:, None]

    def rule(grad):
        proj = (grad * unit).sum(axis=1)
        dv = (G / norms)[:, None] * (grad - proj[:, None] * unit)
        return dv, proj

    return T._make(G[:, None] * unit, (v, g), rule)


class LinearLayer(Module):
    """``y = x W^T + b`` over the trailing axis of ``x``."""

    def __init__(
        self,
        in_dim: int,
        out_dim: int,
        bias: bool = True,
        weight_norm: bool = False,
        rng: np.random.Generator | None = None,
        zero_init: bool = False,
    ):
        rng = rng if rng is not None else np.random.default_rng(0)
        bound = 1.0 / math.sqrt(in_dim)
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.weight_norm_enabled = weight_norm
        w = _uniform(rng, (out_dim, in_dim), bound)
        if zero_init and not weight_norm:
            w[:] = 0.0
        self.weight = Tensor(w, requires_grad=True)
        if weight_norm:
            # with weight norm, a zero gain gives the zero effective weight
            gain = np.zeros(out_dim) if zero_init else np.sqrt((w**2).sum(axis=1))
            self.gain = Tensor(gain, requires_grad=True)
        self.bias = Tensor(np.zeros(out_dim), requires_grad=True) if bias else None

    def effective_weight(self) -> Tensor:
        if self.weight_norm_enabled:
            return weight_norm(self.weight, self.gain)
        return self.weight

    def __call__(self, x: Tensor) -> Tensor:
        return linear_forward(self, x)


def linear_forward(layer: LinearLayer, x: Tensor) -> Tensor:
    if x.shape[-1] != layer.in_dim:
        raise DimensionError(f"linear: input width {x.shape[-1]} != {layer.in_dim}")
    lead = x.shape[:-1]
    flat = T.reshape(x, (-1, layer.in_dim)) if x.ndim != 2 else x
    y = T.matmul(flat, T.transpose(layer.effective_weight()))
    if layer.bias is not None:
        y = T.add_bias(y, layer.bias)
    if x.ndim != 2:
        y = T.reshape(y, lead + (layer.out_dim,))
    return y


# --------------------------------------------------------------- embedding


class Embedding(Module):
    def __init__(self, vocab_size: int, dim: int, rng: np.random.Generator | None = None, pad_id: int | None = 0):
        rng = rng if rng is not None else np.random.default_rng(0)
        table = rng.normal(0.0, 0.1, size=(vocab_size, dim))
        if pad_id is not None:
            table[pad_id] = 0.0
        self.table = Tensor(table, requires_grad=True)

    def __call__(self, ids) -> Tensor:
        return embedding_lookup(self.table, ids)


def embedding_lookup(table: Tensor, ids) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    n = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= n):
        bad = ids[(ids < 0) | (ids >= n)]
        raise VocabularyError(f"token id {int(bad[0])} outside vocabulary of size {n}")
    return T.gather_rows(table, ids)


# -------------------------------------------------------------------- lstm


class LstmParameters(Module):
    """Single-layer LSTM; gate blocks ordered input, forget, cell, output."""

    def __init__(self, in_dim: int, hidden: int, rng: np.random.Generator | None = None, forget_bias: float = 1.0):
        rng = rng if rng is not None else np.random.default_rng(0)
        bound = 1.0 / math.sqrt(hidden)
        self.in_dim = in_dim
        self.hidden = hidden
        self.input_weights = Tensor(_uniform(rng, (in_dim, 4 * hidden), bound), requires_grad=True)
        self.recurrent_weights = Tensor(_uniform(rng, (hidden, 4 * hidden), bound), requires_grad=True)
        bias = np.zeros(4 * hidden)
        bias[hidden : 2 * hidden] = forget_bias
        self.gate_biases = Tensor(bias, requires_grad=True)


def _cell(p: LstmParameters, gx: Tensor, h_prev: Tensor, c_prev: Tensor) -> tuple[Tensor, Tensor]:
    D = p.hidden
    gates = T.add(gx, T.matmul(h_prev, p.recurrent_weights))
    s = T.sigmoid(gates)
    i = s[:, 0:D]
    f = s[:, D : 2 * D]
    o = s[:, 3 * D : 4 * D]
    g = T.tanh(gates[:, 2 * D : 3 * D])
    c = T.add(T.mul(f, c_prev), T.mul(i, g))
    h = T.mul(o, T.tanh(c))
    return h, c


def lstm_step(p: LstmParameters, x_t: Tensor, h_prev: Tensor, c_prev: Tensor) -> tuple[Tensor, Tensor]:
    """One LSTM step.  Accepts unbatched vectors or ``B x dim`` rows."""
    unbatched = x_t.ndim == 1
    if unbatched:
        x_t, h_prev, c_prev = (T.reshape(v, (1, -1)) for v in (x_t, h_prev, c_prev))
    if x_t.shape[-1] != p.in_dim or h_prev.shape[-1] != p.hidden or c_prev.shape != h_prev.shape:
        raise DimensionError(
            f"lstm_step: x {x_t.shape}, h {h_prev.shape}, c {c_prev.shape} vs in={p.in_dim}, D={p.hidden}"
        )
    gx = T.add_bias(T.matmul(x_t, p.input_weights), p.gate_biases)
    h, c = _cell(p, gx, h_prev, c_prev)
    if unbatched:
        h, c = T.reshape(h, (p.hidden,)), T.reshape(c, (p.hidden,))
    return h, c


def lstm_sequence(p: LstmParameters, xs: Tensor, length: int | None = None) -> Tensor:
    """Run from a zero state and return every hidden state.

    ``xs`` is ``T x d_in`` or ``B x T x d_in``; the result is ``T x D`` or
    ``B x T x D``.  ``length`` truncates the sequence to its first steps.
    """
    unbatched = xs.ndim == 2
    if unbatched:
        xs = T.reshape(xs, (1,) + xs.shape)
    if xs.ndim != 3 or xs.shape[-1] != p.in_dim:
        raise DimensionError(f"lstm_sequence: input {xs.shape} vs in={p.in_dim}")
    B, steps, _ = xs.shape
    if length is not None:
        steps = min(steps, length)
    if steps < 1:
        raise ValueError("lstm_sequence needs at least one step")
    proj = T.reshape(T.matmul(T.reshape(xs, (-1, p.in_dim)), p.input_weights), (B, xs.shape[1], 4 * p.hidden))
    proj = T.add_bias(proj, p.gate_biases)
    h = c = Tensor(np.zeros((B, p.hidden)))
    states = []
    for t in range(steps):
        h, c = _cell(p, proj[:, t, :], h, c)
        states.append(h)
    out = T.stack(states, axis=1)
    if unbatched:
        out = T.reshape(out, out.shape[1:])
    return out


# ----------------------------------------------------------------- dropout


def dropout_apply(x: Tensor, p: float, training: bool, rng: np.random.Generator | int | None = None) -> Tensor:
    """Inverted dropout; identity in eval mode or when ``p == 0``."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must lie in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return T.mul_const(x, keep)


# -------------------------------------------------------------- checkpoint

CHECKPOINT_MAGIC = b"STACKPT\x00"
CHECKPOINT_VERSION = 1


def save_checkpoint(path: str | Path, params: dict[str, np.ndarray], meta: dict | None = None) -> None:
    """Write ``magic | u32 header length | JSON header | float64 LE payloads``.

    The header lists each parameter's path, shape and byte offset into the
    payload block.  Output bytes are a pure function of the inputs.
    """
    entries = []
    offset = 0
    blobs = []
    for name in sorted(params):
        arr = np.asarray(params[name], dtype="<f8", order="C")
        entries.append({"path": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    header = json.dumps(
        {"format_version": CHECKPOINT_VERSION, "meta": meta or {}, "params": entries},
        sort_keys=True,
    ).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    raw = Path(path).read_bytes()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    (hlen,) = struct.unpack("<I", raw[8:12])
    header = json.loads(raw[12 : 12 + hlen])
    if header.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {header.get('format_version')}")
    base = 12 + hlen
    params = {}
    for e in header["params"]:
        n = int(np.prod(e["shape"], dtype=np.int64))
        start = base + e["offset"]
        arr = np.frombuffer(raw[start : start + 8 * n], dtype="<f8").astype(np.float64)
        params[e["path"]] = arr.reshape(tuple(e["shape"]))
    return params, header["meta"]
