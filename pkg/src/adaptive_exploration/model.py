"""Feature extractor, source classifier and the SGD update.

The extractor is a fully connected ReLU network whose last (linear) layer is
followed by l2 normalization. Inputs are row-major batches ``(B, D_in)``; a
1-D input is treated as a batch of one and returned 1-D.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core_numeric import Rng
from .errors import (
    DimensionMismatch,
    MagicMismatch,
    ShapeMismatch,
    TruncatedFile,
    VersionUnsupported,
    ZeroVector,
)

CHECKPOINT_MAGIC = b"AEMD"
CHECKPOINT_VERSION = 1


def glorot_uniform(rng: Rng, fan_out: int, fan_in: int) -> np.ndarray:
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=(fan_out, fan_in))


def identity_weights(dims, rng: Rng, noise: float):
    """Weights whose network computes ``x -> x`` at ``noise=0``.

    The first layer emits ``[x, -x]``, hidden layers pass those 2*D_in units
    through, and the last layer recombines them as ``relu(x) - relu(-x)``.
    Glorot noise scaled by ``noise`` is added to every matrix.
    """
    d = dims[0]
    if dims[-1] != d or any(h < 2 * d for h in dims[1:-1]):
        raise ShapeMismatch("identity init needs hidden widths >= 2*D_in and D_out == D_in")
    weights = []
    n_layers = len(dims) - 1
    for k, (d_in, d_out) in enumerate(zip(dims[:-1], dims[1:])):
        W = np.zeros((d_out, d_in))
        if n_layers == 1:
            W[:d, :d] = np.eye(d)
        elif k == 0:
            W[:d, :d] = np.eye(d)
            W[d:2 * d, :d] = -np.eye(d)
        elif k == n_layers - 1:
            W[:, :d] = np.eye(d)
            W[:, d:2 * d] = -np.eye(d)
        else:
            W[:2 * d, :2 * d] = np.eye(2 * d)
        weights.append(W + noise * glorot_uniform(rng, d_out, d_in))
        weights.append(np.zeros(d_out))
    return weights


class EmbeddingModel:
    """ReLU MLP with an l2-normalized output.

    ``init`` is ``"glorot"`` (uniform Glorot matrices, zero biases) or
    ``"identity"`` (see :func:`identity_weights`).
    """

    def __init__(self, layer_dims, seed: int = 0, weights=None, init: str = "glorot",
                 init_noise: float = 0.1):
        dims = [int(d) for d in layer_dims]
        if len(dims) < 2 or any(d <= 0 for d in dims):
            raise ShapeMismatch(f"invalid layer dims {layer_dims}")
        self.layer_dims = dims
        if weights is None:
            rng = Rng(seed)
            if init == "identity":
                weights = identity_weights(dims, rng, init_noise)
            elif init == "glorot":
                weights = []
                for d_in, d_out in zip(dims[:-1], dims[1:]):
                    weights.append(glorot_uniform(rng, d_out, d_in))
                    weights.append(np.zeros(d_out))
            else:
                raise ValueError(f"unknown init {init!r}")
        self.params: list[np.ndarray] = [np.array(w, dtype=np.float64) for w in weights]
        self._check()

    def _check(self):
        if len(self.params) != 2 * (len(self.layer_dims) - 1):
            raise ShapeMismatch("parameter count does not match layer dims")
        for k, (d_in, d_out) in enumerate(zip(self.layer_dims[:-1], self.layer_dims[1:])):
            if self.params[2 * k].shape != (d_out, d_in) or self.params[2 * k + 1].shape != (d_out,):
                raise ShapeMismatch(f"layer {k} has wrong shape")

    @property
    def n_layers(self) -> int:
        return len(self.layer_dims) - 1

    @property
    def d_in(self) -> int:
        return self.layer_dims[0]

    @property
    def d_out(self) -> int:
        return self.layer_dims[-1]

    @classmethod
    def identity(cls, dim: int) -> "EmbeddingModel":
        return cls([dim, dim], weights=[np.eye(dim), np.zeros(dim)])

    def copy(self) -> "EmbeddingModel":
        return EmbeddingModel(self.layer_dims, weights=[p.copy() for p in self.params])

    def embed(self, x) -> np.ndarray:
        return forward(self, x)[0]


@dataclass
class Tape:
    """Activations recorded by :func:`forward` for the backward pass."""

    inputs: list  # input to each linear layer
    pre: list  # pre-activation of each hidden layer
    y: np.ndarray  # unnormalized output
    norm: np.ndarray  # ‖y‖ per row, shape (B, 1)
    out: np.ndarray  # normalized output
    squeeze: bool = False


@dataclass
class GradientBuffer:
    arrays: list = field(default_factory=list)

    @classmethod
    def zeros_like(cls, params) -> "GradientBuffer":
        return cls([np.zeros_like(p) for p in params])

    def check(self, params):
        if len(self.arrays) != len(params) or any(a.shape != p.shape for a, p in zip(self.arrays, params)):
            raise ShapeMismatch("gradient buffer does not match parameters")

    def __iadd__(self, other: "GradientBuffer"):
        for a, b in zip(self.arrays, other.arrays):
            a += b
        return self

    def scaled(self, c: float) -> "GradientBuffer":
        return GradientBuffer([c * a for a in self.arrays])


def forward(model: EmbeddingModel, x):
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    h = np.atleast_2d(x)
    if h.shape[1] != model.d_in:
        raise DimensionMismatch(f"expected input dim {model.d_in}, got {h.shape[1]}")
    inputs, pre = [], []
    last = model.n_layers - 1
    for k in range(model.n_layers):
        W, b = model.params[2 * k], model.params[2 * k + 1]
        inputs.append(h)
        z = h @ W.T + b
        if k < last:
            pre.append(z)
            h = np.maximum(z, 0.0)
        else:
            h = z
    norm = np.linalg.norm(h, axis=1, keepdims=True)
    if np.any(norm == 0):
        raise ZeroVector("network output is the zero vector")
    out = h / norm
    tape = Tape(inputs, pre, h, norm, out, squeeze)
    return (out[0] if squeeze else out), tape


def backward(model: EmbeddingModel, tape: Tape, grad_embedding, return_input_grad: bool = False):
    """Exact gradient of a loss w.r.t. the parameters, given dL/d(embedding)."""
    g = np.atleast_2d(np.asarray(grad_embedding, dtype=np.float64))
    if g.shape != tape.out.shape:
        raise ShapeMismatch(f"gradient shape {g.shape} != embedding shape {tape.out.shape}")
    f = tape.out
    # d(y/|y|)/dy = (I - f f^T) / |y|
    g = (g - f * np.sum(f * g, axis=1, keepdims=True)) / tape.norm
    grads = [None] * len(model.params)
    for k in range(model.n_layers - 1, -1, -1):
        W = model.params[2 * k]
        if k < model.n_layers - 1:
            g = g * (tape.pre[k] > 0)
        grads[2 * k] = g.T @ tape.inputs[k]
        grads[2 * k + 1] = g.sum(axis=0)
        if k > 0 or return_input_grad:
            g = g @ W
    buf = GradientBuffer(grads)
    if return_input_grad:
        return buf, (g[0] if tape.squeeze else g)
    return buf


class SourceClassifier:
    def __init__(self, n_classes: int, dim: int, seed: int = 0, weights=None):
        if weights is None:
            rng = Rng(seed)
            weights = [glorot_uniform(rng, n_classes, dim), np.zeros(n_classes)]
        self.params = [np.array(w, dtype=np.float64) for w in weights]
        if self.params[0].shape != (n_classes, dim) or self.params[1].shape != (n_classes,):
            raise ShapeMismatch("classifier weights have wrong shape")

    @property
    def n_classes(self) -> int:
        return self.params[0].shape[0]

    @property
    def dim(self) -> int:
        return self.params[0].shape[1]


def source_logits(clf: SourceClassifier, embedding) -> np.ndarray:
    f = np.asarray(embedding, dtype=np.float64)
    if f.shape[-1] != clf.dim:
        raise DimensionMismatch(f"expected embedding dim {clf.dim}, got {f.shape[-1]}")
    return f @ clf.params[0].T + clf.params[1]


def sgd_step(params, grads, lr, momentum, weight_decay, velocity, lr_scales=None):
    """In-place SGD with momentum.

    v <- momentum * v + (grad + weight_decay * param);  param <- param - lr * v
    """
    if lr < 0 or not (0 <= momentum < 1) or weight_decay < 0:
        raise ValueError("need lr >= 0, momentum in [0,1), weight_decay >= 0")
    g_arrays = grads.arrays if isinstance(grads, GradientBuffer) else grads
    v_arrays = velocity.arrays if isinstance(velocity, GradientBuffer) else velocity
    if not (len(params) == len(g_arrays) == len(v_arrays)):
        raise ShapeMismatch("params, grads and velocity differ in length")
    for k, (p, g, v) in enumerate(zip(params, g_arrays, v_arrays)):
        if p.shape != g.shape or p.shape != v.shape:
            raise ShapeMismatch(f"array {k}: shapes {p.shape}, {g.shape}, {v.shape}")
        v *= momentum
        v += g + weight_decay * p
        scale = 1.0 if lr_scales is None else lr_scales[k]
        p -= (lr * scale) * v
    return params, velocity


# -- checkpoint -----------------------------------------------------------

def pack_matrices(magic: bytes, matrices) -> bytes:
    """Serialize ``[(W, b), ...]`` as magic, version, count, then per layer
    rows u32, cols u32, row-major W and the bias, all little-endian f64."""
    parts = [magic, struct.pack("<II", CHECKPOINT_VERSION, len(matrices))]
    for W, b in matrices:
        W = np.ascontiguousarray(W, dtype="<f8")
        rows, cols = W.shape
        parts.append(struct.pack("<II", rows, cols))
        parts.append(W.tobytes())
        parts.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    return b"".join(parts)


def unpack_matrices(magic: bytes, data: bytes):
    if len(data) < 12:
        raise TruncatedFile("file shorter than header")
    if data[:4] != magic:
        raise MagicMismatch(f"expected magic {magic!r}, got {data[:4]!r}")
    version, count = struct.unpack_from("<II", data, 4)
    if version != CHECKPOINT_VERSION:
        raise VersionUnsupported(f"version {version} not supported")
    off = 12
    out = []
    for _ in range(count):
        if off + 8 > len(data):
            raise TruncatedFile("truncated layer header")
        rows, cols = struct.unpack_from("<II", data, off)
        off += 8
        need = 8 * (rows * cols + rows)
        if off + need > len(data):
            raise TruncatedFile("truncated layer payload")
        W = np.frombuffer(data, dtype="<f8", count=rows * cols, offset=off).reshape(rows, cols)
        off += 8 * rows * cols
        b = np.frombuffer(data, dtype="<f8", count=rows, offset=off)
        off += 8 * rows
        out.append((W.astype(np.float64), b.astype(np.float64)))
    return out


def save_model(model: EmbeddingModel, path) -> None:
    layers = [(model.params[2 * k], model.params[2 * k + 1]) for k in range(model.n_layers)]
    Path(path).write_bytes(pack_matrices(CHECKPOINT_MAGIC, layers))


def load_model(path) -> EmbeddingModel:
    layers = unpack_matrices(CHECKPOINT_MAGIC, Path(path).read_bytes())
    if not layers:
        raise ShapeMismatch("checkpoint has no layers")
    dims = [layers[0][0].shape[1]] + [W.shape[0] for W, _ in layers]
    weights = [a for W, b in layers for a in (W, b)]
    return EmbeddingModel(dims, weights=weights)
