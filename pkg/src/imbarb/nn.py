"""Minimal dense-network engine.

Fixed topology: fully connected layers, ReLU on hidden layers, identity
output.  Forward/backward/Adam run on the active kernel backend (compiled or
numpy).  Everything is float64; training is deterministic for a fixed seed
and backend.
"""

from __future__ import annotations

import base64
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from imbarb import _kernels
from imbarb.battery_env import NormStats

CHECKPOINT_VERSION = 1


class CheckpointError(Exception):
    """Checkpoint payload is malformed, truncated, or of an unknown version."""


class FeedForwardNet:
    """Dense network parameters: weights[l] has shape (in_dim, out_dim)."""

    def __init__(self, layer_dims: Sequence[int], weights, biases):
        self.layer_dims = tuple(int(d) for d in layer_dims)
        if len(self.layer_dims) < 2:
            raise ValueError("need at least input and output dims")
        if len(weights) != len(self.layer_dims) - 1 or len(biases) != len(weights):
            raise ValueError("parameter count does not match layer_dims")
        for l, (w, b) in enumerate(zip(weights, biases)):
            expect = (self.layer_dims[l], self.layer_dims[l + 1])
            if w.shape != expect or b.shape != (expect[1],):
                raise ValueError(f"layer {l}: shape {w.shape} does not match dims {expect}")
        self.weights = [np.ascontiguousarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.ascontiguousarray(b, dtype=np.float64) for b in biases]

    @classmethod
    def initialize(cls, layer_dims: Sequence[int], rng: np.random.Generator) -> "FeedForwardNet":
        """Seeded uniform fan-in/fan-out initialisation, zero biases."""
        weights, biases = [], []
        for fan_in, fan_out in zip(layer_dims, layer_dims[1:]):
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(layer_dims, weights, biases)

    @classmethod
    def zeros(cls, layer_dims: Sequence[int]) -> "FeedForwardNet":
        weights = [np.zeros((i, o)) for i, o in zip(layer_dims, layer_dims[1:])]
        biases = [np.zeros(o) for o in layer_dims[1:]]
        return cls(layer_dims, weights, biases)

    @property
    def in_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def out_dim(self) -> int:
        return self.layer_dims[-1]

    def copy(self) -> "FeedForwardNet":
        return FeedForwardNet(
            self.layer_dims,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
        )

    def parameters(self) -> list[np.ndarray]:
        """All parameter arrays, weights then bias per layer."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def _batchify(self, x: np.ndarray) -> tuple[np.ndarray, bool]:
        x = np.ascontiguousarray(x, dtype=np.float64)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ValueError(f"input shape {x.shape} does not match input dim {self.in_dim}")
        return x, single

    def forward(self, x: np.ndarray, backend=None) -> np.ndarray:
        be = backend or _kernels.active
        xb, single = self._batchify(x)
        out = be.dense_forward(xb, self.weights, self.biases)
        return out[0] if single else out

    def forward_cached(self, x: np.ndarray, backend=None):
        """Forward pass returning (out, cache) for a later backward call."""
        be = backend or _kernels.active
        xb, _ = self._batchify(x)
        return be.dense_forward_cached(xb, self.weights, self.biases)

    def backward(self, cache, upstream: np.ndarray, backend=None):
        """Exact reverse-mode gradients of sum(out * upstream).

        Returns ``(dweights, dbiases)`` lists congruent with the parameters.
        """
        be = backend or _kernels.active
        upstream = np.ascontiguousarray(upstream, dtype=np.float64)
        if upstream.ndim == 1:
            upstream = upstream[None, :]
        if upstream.shape != cache[-1].shape:
            raise ValueError(
                f"upstream shape {upstream.shape} does not match output {cache[-1].shape}"
            )
        return be.dense_backward(cache, self.weights, upstream)


@dataclass
class AdamState:
    """Adam accumulators congruent with one network's parameters."""

    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_net(cls, net: FeedForwardNet, learning_rate: float, **kwargs) -> "AdamState":
        state = cls(learning_rate=learning_rate, **kwargs)
        state.m = [np.zeros_like(p) for p in net.parameters()]
        state.v = [np.zeros_like(p) for p in net.parameters()]
        return state


def adam_step(net: FeedForwardNet, grads, state: AdamState, backend=None) -> None:
    """One Adam update with bias correction, in place on the network."""
    be = backend or _kernels.active
    dws, dbs = grads
    flat_grads = []
    for dw, db in zip(dws, dbs):
        flat_grads.append(dw)
        flat_grads.append(db)
    state.step_count += 1
    c1 = 1.0 - state.beta1 ** state.step_count
    c2 = 1.0 - state.beta2 ** state.step_count
    for param, grad, m, v in zip(net.parameters(), flat_grads, state.m, state.v):
        be.adam_step(
            param.reshape(-1),
            np.ascontiguousarray(grad, dtype=np.float64).reshape(-1),
            m.reshape(-1),
            v.reshape(-1),
            state.learning_rate,
            state.beta1,
            state.beta2,
            state.epsilon,
            c1,
            c2,
        )


def softmax(logits: np.ndarray, temperature: float = 1.0, axis: int = -1) -> np.ndarray:
    """Numerically stable softmax along ``axis``."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    z = np.asarray(logits, dtype=np.float64) / temperature
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


KL_FLOOR = 1e-12


def kl_divergence(p: np.ndarray, q: np.ndarray, floor: float = KL_FLOOR):
    """KL(p || q) along the last axis with 0*log(0) = 0 and q floored."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    logs = np.log(np.maximum(p, floor)) - np.log(np.maximum(q, floor))
    terms = np.where(p > 0.0, p * logs, 0.0)
    total = terms.sum(axis=-1)
    return float(total) if total.ndim == 0 else total


@dataclass
class Checkpoint:
    """Self-describing network snapshot plus training metadata."""

    kind: str
    layer_dims: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    norm_stats: NormStats | None = None
    meta: dict = field(default_factory=dict)

    @classmethod
    def from_net(cls, net: FeedForwardNet, kind: str, norm_stats=None, meta=None) -> "Checkpoint":
        return cls(
            kind=kind,
            layer_dims=net.layer_dims,
            weights=[w.copy() for w in net.weights],
            biases=[b.copy() for b in net.biases],
            norm_stats=norm_stats,
            meta=dict(meta or {}),
        )

    def net(self) -> FeedForwardNet:
        return FeedForwardNet(
            self.layer_dims,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
        )


def _encode_array(a: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(a, dtype="<f8").tobytes()).decode("ascii")


def _decode_array(text: str, shape: tuple[int, ...]) -> np.ndarray:
    raw = base64.b64decode(text.encode("ascii"), validate=True)
    expect = int(np.prod(shape)) * 8
    if len(raw) != expect:
        raise CheckpointError(f"parameter payload holds {len(raw)} bytes, expected {expect}")
    arr = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)
    if not np.isfinite(arr).all():
        raise CheckpointError("parameter payload contains non-finite values")
    return arr


def save_checkpoint(ckpt: Checkpoint) -> str:
    """Serialise to versioned JSON; float64 payloads are base64, bit-exact."""
    doc = {
        "format_version": CHECKPOINT_VERSION,
        "kind": ckpt.kind,
        "layer_dims": list(ckpt.layer_dims),
        "weights": [_encode_array(w) for w in ckpt.weights],
        "biases": [_encode_array(b) for b in ckpt.biases],
        "norm_stats": (
            None
            if ckpt.norm_stats is None
            else {"price_mean": ckpt.norm_stats.price_mean, "price_std": ckpt.norm_stats.price_std}
        ),
        "meta": ckpt.meta,
    }
    return json.dumps(doc, indent=1, sort_keys=True)


def load_checkpoint(text: str) -> Checkpoint:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"not valid JSON: {exc}") from None
    version = doc.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version!r}")
    dims = tuple(int(d) for d in doc["layer_dims"])
    if len(doc["weights"]) != len(dims) - 1 or len(doc["biases"]) != len(dims) - 1:
        raise CheckpointError("layer payload count does not match layer_dims")
    weights = [
        _decode_array(enc, (dims[l], dims[l + 1])) for l, enc in enumerate(doc["weights"])
    ]
    biases = [_decode_array(enc, (dims[l + 1],)) for l, enc in enumerate(doc["biases"])]
    norm = doc.get("norm_stats")
    norm_stats = None if norm is None else NormStats(float(norm["price_mean"]), float(norm["price_std"]))
    return Checkpoint(
        kind=str(doc["kind"]),
        layer_dims=dims,
        weights=weights,
        biases=biases,
        norm_stats=norm_stats,
        meta=dict(doc.get("meta", {})),
    )


def write_checkpoint(ckpt: Checkpoint, path) -> None:
    with open(path, "w") as fh:
        fh.write(save_checkpoint(ckpt))


def read_checkpoint(path) -> Checkpoint:
    with open(path) as fh:
        return load_checkpoint(fh.read())


def finite_difference_grads(
    f: Callable[[], float], arrays: Sequence[np.ndarray], h: float = 1e-6
) -> list[np.ndarray]:
    """Central-difference gradients of a scalar function of ``arrays``.

    Perturbs each entry in place and restores it; independent of any
    analytic backward pass, so usable as its oracle.
    """
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = f()
            flat[i] = orig - h
            f_minus = f()
            flat[i] = orig
            gflat[i] = (f_plus - f_minus) / (2.0 * h)
        grads.append(g)
    return grads


def relative_gradient_error(analytic: Sequence[np.ndarray], numeric: Sequence[np.ndarray]) -> float:
    """Norm of the difference over the norm of the larger, across all arrays."""
    a = np.concatenate([np.asarray(g).ravel() for g in analytic])
    n = np.concatenate([np.asarray(g).ravel() for g in numeric])
    denom = max(np.linalg.norm(a), np.linalg.norm(n), 1e-30)
    return float(np.linalg.norm(a - n) / denom)
