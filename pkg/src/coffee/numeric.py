"""Dense float64 kernels with hand-written forward and backward passes.

The model composes these kernels and orders its own backward pass; this
module only guarantees per-kernel gradient correctness, which
:func:`grad_check` verifies against central finite differences.  There is
no tape and no autodiff.

ParamStore owns the mutable training state: named 2-D parameter matrices,
matching gradient buffers, and Adam moments.  Biases are stored as 1xN
rows so every entry serializes uniformly in the "COF1" checkpoint layout.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from .errors import (
    CheckpointError,
    DimensionError,
    EmptySequenceError,
    OutOfRangeError,
    PoisonedGradientError,
)


def sigmoid(z: np.ndarray | float) -> np.ndarray | float:
    """Numerically stable logistic function."""
    z_arr = np.asarray(z, dtype=np.float64)
    z1 = np.atleast_1d(z_arr)
    out = np.empty_like(z1)
    pos = z1 >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z1[pos]))
    ez = np.exp(z1[~pos])
    out[~pos] = ez / (1.0 + ez)
    return float(out[0]) if z_arr.ndim == 0 else out.reshape(z_arr.shape)


# ----------------------------------------------------------------------
# Linear map
# ----------------------------------------------------------------------


def linear_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """y = x @ w + b with x (n, d_in), w (d_in, d_out), b (1, d_out)."""
    if x.shape[1] != w.shape[0] or w.shape[1] != b.shape[-1]:
        raise DimensionError(
            f"linear shapes disagree: x{x.shape} w{w.shape} b{b.shape}"
        )
    return x @ w + b.reshape(1, -1)


def linear_backward(
    x: np.ndarray, w: np.ndarray, upstream: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients (dx, dw, db) for y = x @ w + b given dL/dy."""
    dx = upstream @ w.T
    dw = x.T @ upstream
    db = upstream.sum(axis=0, keepdims=True)
    return dx, dw, db


# ----------------------------------------------------------------------
# Embedding table
# ----------------------------------------------------------------------


def embedding_lookup(table: np.ndarray, ids: np.ndarray) -> np.ndarray:
    """Row gather: output row i is table[ids[i]]."""
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        bad = int(ids.min()) if ids.min() < 0 else int(ids.max())
        raise OutOfRangeError(f"id {bad} outside table of {table.shape[0]} rows")
    return table[ids]


def embedding_backward(
    table: np.ndarray, ids: np.ndarray, upstream: np.ndarray
) -> np.ndarray:
    """Scatter upstream rows back into a dense table gradient.

    Duplicate ids accumulate additively.
    """
    grad = np.zeros_like(table)
    np.add.at(grad, np.asarray(ids), upstream)
    return grad


# ----------------------------------------------------------------------
# Single-query scaled dot-product attention
# ----------------------------------------------------------------------


def masked_softmax(scores: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Row softmax over masked entries; all-masked rows get all-zero weights."""
    rowmax = np.max(np.where(mask, scores, -np.inf), axis=-1, initial=-np.inf)
    safe_max = np.where(np.isfinite(rowmax), rowmax, 0.0)
    shifted = np.minimum(scores - safe_max[..., None], 0.0)
    e = np.where(mask, np.exp(shifted), 0.0)
    denom = e.sum(axis=-1, keepdims=True)
    return np.where(denom > 0, e / np.where(denom > 0, denom, 1.0), 0.0)


def attention_forward(
    q: np.ndarray, k: np.ndarray, v: np.ndarray, mask: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Batched single-query attention.

    q (B, d), k (B, L, d), v (B, L, d_v), mask (B, L) boolean.
    Returns context (B, d_v) and weights (B, L); rows with an all-false
    mask produce zero weights and a zero context (the caller substitutes
    its null vector).
    """
    d = q.shape[-1]
    scores = np.matmul(k, q[:, :, None])[:, :, 0] / np.sqrt(d)
    weights = masked_softmax(scores, mask)
    context = np.matmul(weights[:, None, :], v)[:, 0, :]
    return context, weights


def attention_backward(
    q: np.ndarray,
    k: np.ndarray,
    v: np.ndarray,
    weights: np.ndarray,
    d_context: np.ndarray,
    d_weights: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients (dq, dk, dv) for attention_forward.

    Masked positions carry zero weight, so their gradients vanish
    automatically; ``d_weights`` adds an explicit upstream on the
    weights themselves (used nowhere in the loss path, available for
    diagnostics).
    """
    d = q.shape[-1]
    dv = weights[:, :, None] * d_context[:, None, :]
    dw = np.matmul(v, d_context[:, :, None])[:, :, 0]
    if d_weights is not None:
        dw = dw + d_weights
    # softmax jacobian, row-wise: ds = w * (dw - sum(dw * w))
    inner = np.sum(dw * weights, axis=-1, keepdims=True)
    ds = weights * (dw - inner)
    dq = np.matmul(ds[:, None, :], k)[:, 0, :] / np.sqrt(d)
    dk = (ds[:, :, None] * q[:, None, :]) / np.sqrt(d)
    return dq, dk, dv


def scaled_dot_attention(
    q: np.ndarray, k: np.ndarray, v: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Single query against r keys/values; returns (context, weights).

    q (d,) or (1, d); k (r, d); v (r, d_v).  Raises on r = 0: the caller
    must mask or skip empty sequences.
    """
    q2 = np.asarray(q, dtype=np.float64).reshape(1, -1)
    if k.shape[0] == 0:
        raise EmptySequenceError("attention over an empty sequence")
    if k.shape[1] != q2.shape[1]:
        raise DimensionError(f"q dim {q2.shape[1]} != k dim {k.shape[1]}")
    mask = np.ones((1, k.shape[0]), dtype=bool)
    ctx, w = attention_forward(q2, k[None, :, :], v[None, :, :], mask)
    return ctx[0], w[0]


# ----------------------------------------------------------------------
# Sigmoid + binary cross-entropy, fused for stability
# ----------------------------------------------------------------------


def sigmoid_bce(
    logit: np.ndarray | float, label: np.ndarray | float
) -> tuple[np.ndarray | float, np.ndarray | float]:
    """(p, loss) with loss computed in the stable logit form.

    loss = max(z, 0) - z*y + log(1 + exp(-|z|)) never overflows and the
    gradient identity dloss/dlogit = p - y holds exactly.
    """
    z = np.asarray(logit, dtype=np.float64)
    y = np.asarray(label, dtype=np.float64)
    p = sigmoid(z)
    loss = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    if np.ndim(logit) == 0:
        return float(p), float(loss)
    return p, loss


def sigmoid_bce_backward(
    logit: np.ndarray | float, label: np.ndarray | float
) -> np.ndarray | float:
    """dloss/dlogit = sigmoid(logit) - label, exactly."""
    p = sigmoid(np.asarray(logit, dtype=np.float64))
    out = p - np.asarray(label, dtype=np.float64)
    return float(out) if np.ndim(logit) == 0 else out


# ----------------------------------------------------------------------
# Parameter store + Adam
# ----------------------------------------------------------------------


class ParamStore:
    """Named 2-D float64 parameters with gradient buffers and Adam state."""

    def __init__(self) -> None:
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step = 0

    def add(self, name: str, value: np.ndarray) -> np.ndarray:
        arr = np.array(value, dtype=np.float64)
        if arr.ndim != 2:
            raise DimensionError(f"parameter {name!r} must be 2-D, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise DimensionError(f"parameter {name!r} has non-finite entries")
        if name in self.params:
            raise ValueError(f"duplicate parameter {name!r}")
        self.params[name] = arr
        self.grads[name] = np.zeros_like(arr)
        self.m[name] = np.zeros_like(arr)
        self.v[name] = np.zeros_like(arr)
        return arr

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def names(self) -> tuple[str, ...]:
        return tuple(self.params)

    def add_grad(self, name: str, grad: np.ndarray) -> None:
        self.grads[name] += grad.reshape(self.grads[name].shape)

    def zero_grads(self) -> None:
        for g in self.grads.values():
            g[...] = 0.0

    def copy(self) -> "ParamStore":
        other = ParamStore()
        for name, value in self.params.items():
            other.add(name, value.copy())
            other.grads[name][...] = self.grads[name]
            other.m[name][...] = self.m[name]
            other.v[name][...] = self.v[name]
        other.step = self.step
        return other


def adam_step(
    store: ParamStore,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One bias-corrected Adam update over every parameter; zeroes grads.

    Raises PoisonedGradientError naming the first parameter whose gradient
    contains a non-finite entry, before touching any parameter.
    """
    for name, g in store.grads.items():
        if not np.all(np.isfinite(g)):
            raise PoisonedGradientError(name)
    store.step += 1
    t = store.step
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for name, g in store.grads.items():
        m = store.m[name]
        v = store.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        store.params[name] -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    store.zero_grads()


# ----------------------------------------------------------------------
# Gradient checking
# ----------------------------------------------------------------------


@dataclass
class GradCheckEntry:
    name: str
    flat_index: int
    analytic: float
    numeric: float
    rel_err: float


@dataclass
class GradCheckReport:
    max_rel_err: float
    entries: list[GradCheckEntry]

    def worst(self) -> GradCheckEntry:
        return max(self.entries, key=lambda e: e.rel_err)


def grad_check(
    loss_fn: Callable[[], float],
    store: ParamStore,
    *,
    names: Iterable[str] | None = None,
    samples_per_param: int = 4,
    h: float = 1e-5,
    seed: int = 0,
) -> GradCheckReport:
    """Compare store.grads against central finite differences of loss_fn.

    ``loss_fn`` must be a deterministic closure over store.params; the
    caller runs its analytic backward once to populate store.grads before
    calling.  Coordinates are sampled per parameter.
    """
    rng = np.random.default_rng(seed)
    entries: list[GradCheckEntry] = []
    for name in names if names is not None else store.names():
        p = store.params[name]
        g = store.grads[name]
        n = p.size
        count = min(samples_per_param, n)
        picks = rng.choice(n, size=count, replace=False)
        flat = p.reshape(-1)
        for j in picks:
            j = int(j)
            keep = flat[j]
            flat[j] = keep + h
            up = loss_fn()
            flat[j] = keep - h
            down = loss_fn()
            flat[j] = keep
            numeric = (up - down) / (2.0 * h)
            analytic = float(g.reshape(-1)[j])
            denom = max(abs(analytic) + abs(numeric), 1e-12)
            entries.append(
                GradCheckEntry(
                    name=name,
                    flat_index=j,
                    analytic=analytic,
                    numeric=numeric,
                    rel_err=abs(analytic - numeric) / denom,
                )
            )
    max_err = max((e.rel_err for e in entries), default=0.0)
    return GradCheckReport(max_rel_err=max_err, entries=entries)


# ----------------------------------------------------------------------
# Initialization
# ----------------------------------------------------------------------


def glorot_uniform(rng: np.random.Generator, d_in: int, d_out: int) -> np.ndarray:
    a = np.sqrt(6.0 / (d_in + d_out))
    return rng.uniform(-a, a, size=(d_in, d_out))


def embedding_init(rng: np.random.Generator, vocab: int, dim: int) -> np.ndarray:
    return rng.normal(0.0, 0.01, size=(vocab, dim))


# ----------------------------------------------------------------------
# "COF1" binary checkpoint layout
# ----------------------------------------------------------------------

MAGIC = b"COF1"


def _write_entry(fh, name: str, arr: np.ndarray) -> None:
    raw = name.encode("utf-8")
    fh.write(struct.pack("<H", len(raw)))
    fh.write(raw)
    fh.write(struct.pack("<II", arr.shape[0], arr.shape[1]))
    fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_entry(fh) -> tuple[str, np.ndarray]:
    header = fh.read(2)
    if len(header) != 2:
        raise CheckpointError("truncated entry header")
    (name_len,) = struct.unpack("<H", header)
    name = fh.read(name_len).decode("utf-8")
    rows, cols = struct.unpack("<II", fh.read(8))
    payload = fh.read(rows * cols * 8)
    if len(payload) != rows * cols * 8:
        raise CheckpointError(f"truncated payload for {name!r}")
    data = np.frombuffer(payload, dtype="<f8").reshape(rows, cols).copy()
    return name, data


def save_checkpoint(store: ParamStore, path) -> None:
    """Magic, parameter entries, then Adam state in the same layout."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(store.params)))
        for name, arr in store.params.items():
            _write_entry(fh, name, arr)
        fh.write(struct.pack("<Q", store.step))
        for name in store.params:
            _write_entry(fh, "m:" + name, store.m[name])
        for name in store.params:
            _write_entry(fh, "v:" + name, store.v[name])


def load_checkpoint(path) -> ParamStore:
    store = ParamStore()
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise CheckpointError("bad magic bytes")
        (count,) = struct.unpack("<I", fh.read(4))
        for _ in range(count):
            name, arr = _read_entry(fh)
            store.add(name, arr)
        (step,) = struct.unpack("<Q", fh.read(8))
        store.step = step
        for prefix, target in (("m:", store.m), ("v:", store.v)):
            for _ in range(count):
                name, arr = _read_entry(fh)
                if not name.startswith(prefix):
                    raise CheckpointError(f"expected {prefix}* entry, got {name!r}")
                target[name[len(prefix):]][...] = arr
    return store


def write_section(path, tag: bytes, entries: dict[str, np.ndarray]) -> None:
    """A tagged COF1 file (used for k-NN indexes and codebooks)."""
    if len(tag) != 4:
        raise CheckpointError("section tag must be 4 bytes")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(tag)
        fh.write(struct.pack("<I", len(entries)))
        for name, arr in entries.items():
            _write_entry(fh, name, np.atleast_2d(np.asarray(arr, dtype=np.float64)))


def read_section(path, tag: bytes) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise CheckpointError("bad magic bytes")
        found = fh.read(4)
        if found != tag:
            raise CheckpointError(f"expected section {tag!r}, got {found!r}")
        (count,) = struct.unpack("<I", fh.read(4))
        out = {}
        for _ in range(count):
            name, arr = _read_entry(fh)
            out[name] = arr
        return out
