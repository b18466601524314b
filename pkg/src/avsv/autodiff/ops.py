"""Differentiable primitives.

Every function takes and returns :class:`Tensor` objects and records a
backward rule on the active tape. Broadcasting is limited to the row-vector
bias of :func:`linear` and the per-feature affine of :func:`batchnorm`.
"""
from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from avsv.autodiff.tensor import Tensor, active_tape, record
from avsv.errors import ConfigError, DimensionError

BN_EPS = 1e-5
BN_MOMENTUM = 0.1
NORM_FLOOR = 1e-12


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_same(a: Tensor, b: Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{what}: operand shapes differ, {a.shape} vs {b.shape}")


# ----------------------------------------------------------------------------
# shape manipulation


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    out = x.data.reshape(shape).copy()
    src = x.shape
    return record((x,), out, lambda g: (g.reshape(src),))


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    out = np.ascontiguousarray(x.data.transpose(axes))
    return record((x,), out, lambda g: (g.transpose(inverse),))


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    """Concatenate 2-D tensors along the feature axis."""
    xs = list(xs)
    if not xs:
        raise DimensionError("concat needs at least one tensor")
    lead = xs[0].shape[:-1]
    for t in xs[1:]:
        if t.shape[:-1] != lead:
            raise DimensionError(f"concat: leading dimensions differ, {xs[0].shape} vs {t.shape}")
    out = np.concatenate([t.data for t in xs], axis=-1)
    bounds = np.cumsum([t.shape[-1] for t in xs])[:-1]

    def back(g):
        return tuple(np.split(g, bounds, axis=-1))

    return record(xs, out, back)


def gather_rows(x: Tensor, index: np.ndarray) -> Tensor:
    index = np.asarray(index, dtype=np.int64)
    src = x.shape

    def back(g):
        gx = np.zeros(src, dtype=g.dtype)
        np.add.at(gx, index, g)
        return (gx,)

    return record((x,), x.data[index], back)


# ----------------------------------------------------------------------------
# reductions


def sum(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    shape = x.shape
    out = np.asarray(x.data.sum(), dtype=x.dtype)
    return record((x,), out, lambda g: (np.broadcast_to(g, shape).astype(g.dtype),))


def mean(x: Tensor) -> Tensor:
    shape, n = x.shape, x.size
    out = np.asarray(x.data.mean(), dtype=x.dtype)
    return record((x,), out, lambda g: (np.full(shape, g / n, dtype=g.dtype),))


# ----------------------------------------------------------------------------
# pointwise


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return record((x,), np.where(mask, x.data, 0).astype(x.dtype), lambda g: (g * mask,))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return record((x,), y, lambda g: (g * (1 - y * y),))


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same(a, b, "add")
    return record((a, b), a.data + b.data, lambda g: (g, g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same(a, b, "mul")
    return record((a, b), a.data * b.data, lambda g: (g * b.data, g * a.data))


def scale(x: Tensor, c: float) -> Tensor:
    x = _as_tensor(x)
    c = x.dtype.type(c)
    return record((x,), x.data * c, lambda g: (g * c,))


def log(x: Tensor) -> Tensor:
    return record((x,), np.log(x.data), lambda g: (g / x.data,))


def elementwise(x: Tensor, kind: str, other: Optional[Tensor] = None, c: float = 1.0) -> Tensor:
    """Dispatch to a pointwise op by name: relu, tanh, add, mul or scale."""
    if kind == "relu":
        return relu(x)
    if kind == "tanh":
        return tanh(x)
    if kind == "scale":
        return scale(x, c)
    if kind in ("add", "mul"):
        if other is None:
            raise DimensionError(f"{kind} needs a second operand")
        return add(x, other) if kind == "add" else mul(x, other)
    raise ValueError(f"unknown elementwise kind {kind!r}")


# ----------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return record((a, b), a.data @ b.data, lambda g: (g @ b.data.T, a.data.T @ g))


def linear(x: Tensor, W: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """``x @ W + b`` for ``x`` of shape (N, D_in) and ``W`` of shape (D_in, D_out)."""
    if x.ndim != 2 or W.ndim != 2 or x.shape[1] != W.shape[0]:
        raise DimensionError(f"linear: input {x.shape} does not match weight {W.shape}")
    if b is not None and b.shape != (W.shape[1],):
        raise DimensionError(f"linear: bias {b.shape} does not match weight {W.shape}")
    out = x.data @ W.data
    if b is not None:
        out = out + b.data

    def back(g):
        gx = g @ W.data.T
        gW = x.data.T @ g
        return (gx, gW) if b is None else (gx, gW, g.sum(axis=0))

    inputs = (x, W) if b is None else (x, W, b)
    return record(inputs, out, back)


def attend(weights: Tensor, seq: Tensor) -> Tensor:
    """Batched convex combination: (N, T) weights over (N, T, D) frames -> (N, D)."""
    if weights.ndim != 2 or seq.ndim != 3 or weights.shape != seq.shape[:2]:
        raise DimensionError(f"attend: weights {weights.shape} do not match sequence {seq.shape}")
    out = np.einsum("nt,ntd->nd", weights.data, seq.data)

    def back(g):
        gw = np.einsum("nd,ntd->nt", g, seq.data)
        gs = weights.data[:, :, None] * g[:, None, :]
        return gw, gs

    return record((weights, seq), out, back)


# ----------------------------------------------------------------------------
# convolution


def pad2d(x: Tensor, pad: int) -> Tensor:
    """Zero-pad the two trailing spatial axes of an (N, C, H, W) tensor."""
    if pad == 0:
        return x
    p = int(pad)
    out = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p)))
    return record((x,), out, lambda g: (g[:, :, p:-p, p:-p],))


def conv2d(x: Tensor, k: Tensor, stride: int = 1) -> Tensor:
    """Valid cross-correlation of (N, C, H, W) input with (C', C, kh, kw) kernels."""
    if x.ndim != 4 or k.ndim != 4:
        raise DimensionError(f"conv2d expects 4-D input and kernel, got {x.shape} and {k.shape}")
    n, c, h, w = x.shape
    co, ck, kh, kw = k.shape
    if ck != c:
        raise DimensionError(f"conv2d: input channels {x.shape} do not match kernel {k.shape}")
    if kh > h or kw > w:
        raise DimensionError(f"conv2d: kernel {k.shape} larger than input {x.shape}")
    if stride < 1:
        raise ConfigError(f"conv2d: stride must be positive, got {stride}")
    ho = 1 + (h - kh) // stride
    wo = 1 + (w - kw) // stride
    win = sliding_window_view(x.data, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    # (N, Ho, Wo, C, kh, kw) -> rows of patches
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
    kmat = k.data.reshape(co, c * kh * kw)
    out = (cols @ kmat.T).reshape(n, ho, wo, co).transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(out)

    def back(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(n * ho * wo, co)
        gk = (gmat.T @ cols).reshape(k.shape)
        gcols = (gmat @ kmat).reshape(n, ho, wo, c, kh, kw)
        gx = np.zeros(x.shape, dtype=g.dtype)
        for i in range(kh):
            for j in range(kw):
                gx[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        return gx, gk

    return record((x, k), out, back)


# ----------------------------------------------------------------------------
# normalisation and regularisation


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis, stabilised by max subtraction."""
    if x.shape[-1] < 1:
        raise DimensionError("softmax over an empty axis")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return record((x,), y, back)


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean softmax cross-entropy of (N, K) logits against integer labels."""
    labels = np.asarray(labels, dtype=np.int64)
    n, k = logits.shape
    if labels.shape != (n,):
        raise DimensionError(f"cross_entropy: {labels.shape[0] if labels.ndim else 0} labels for {n} rows")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"cross_entropy: labels must lie in [0, {k})")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(n)
    out = np.asarray((lse - z[rows, labels]).mean(), dtype=logits.dtype)

    def back(g):
        p = np.exp(z - lse[:, None])
        p[rows, labels] -= 1
        return (p * (g / n),)

    return record((logits,), out, back)


class RunningStats:
    """Batch-norm running mean and variance (mutable buffers)."""

    __slots__ = ("mean", "var")

    def __init__(self, dim: int, dtype=np.float32):
        self.mean = np.zeros(dim, dtype=dtype)
        self.var = np.ones(dim, dtype=dtype)

    def update(self, batch_mean: np.ndarray, batch_var: np.ndarray, momentum: float = BN_MOMENTUM) -> None:
        m = self.mean.dtype.type(momentum)
        self.mean = (1 - m) * self.mean + m * batch_mean.astype(self.mean.dtype)
        self.var = (1 - m) * self.var + m * batch_var.astype(self.var.dtype)


def batchnorm(x: Tensor, gamma: Tensor, beta: Tensor, mode: str = "train",
              running: Optional[RunningStats] = None) -> Tensor:
    """Batch normalisation over the rows of an (N, D) tensor.

    In train mode the running statistics receive the unbiased batch variance
    with momentum 0.1. When a tape is active the update is deferred to
    :meth:`Tape.commit` so data-parallel shards stay deterministic.
    """
    if x.ndim != 2 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise DimensionError(f"batchnorm: input {x.shape} vs affine {gamma.shape}/{beta.shape}")
    eps = x.dtype.type(BN_EPS)
    if mode == "infer":
        if running is None:
            raise ConfigError("batchnorm in infer mode needs running statistics")
        inv = 1.0 / np.sqrt(running.var.astype(x.dtype) + eps)
        xhat = (x.data - running.mean.astype(x.dtype)) * inv
        out = gamma.data * xhat + beta.data

        def back_infer(g):
            return g * gamma.data * inv, (g * xhat).sum(axis=0), g.sum(axis=0)

        return record((x, gamma, beta), out, back_infer)
    if mode != "train":
        raise ValueError(f"unknown batchnorm mode {mode!r}")
    n = x.shape[0]
    if n < 2:
        raise DimensionError(f"batchnorm in train mode needs a batch of at least 2 rows, got {n}")
    mu = x.data.mean(axis=0)
    xc = x.data - mu
    var = (xc * xc).mean(axis=0)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = gamma.data * xhat + beta.data

    if running is not None:
        unbiased = var * (n / (n - 1))
        tape = active_tape()
        if tape is not None:
            tape.defer(lambda: running.update(mu, unbiased))
        else:
            running.update(mu, unbiased)

    def back(g):
        gxhat = g * gamma.data
        gx = inv / n * (n * gxhat - gxhat.sum(axis=0) - xhat * (gxhat * xhat).sum(axis=0))
        return gx, (g * xhat).sum(axis=0), g.sum(axis=0)

    return record((x, gamma, beta), out, back)


def dropout(x: Tensor, p: float, mode: str = "train", rng: Optional[np.random.Generator] = None) -> Tensor:
    """Inverted dropout; identity in infer mode or when ``p == 0``."""
    if not 0 <= p < 1:
        raise ConfigError(f"dropout probability must lie in [0, 1), got {p}")
    if mode == "infer" or p == 0:
        return x
    if rng is None:
        raise ConfigError("dropout in train mode needs a seeded rng")
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / x.dtype.type(1 - p)
    return record((x,), x.data * keep, lambda g: (g * keep,))


def l2_normalize(x: Tensor) -> Tensor:
    """Divide each row by ``max(||row||, 1e-12)``."""
    norm = np.sqrt((x.data * x.data).sum(axis=-1, keepdims=True))
    floored = norm <= NORM_FLOOR
    denom = np.where(floored, x.dtype.type(NORM_FLOOR), norm)
    y = x.data / denom

    def back(g):
        radial = (g * y).sum(axis=-1, keepdims=True)
        gx = (g - np.where(floored, 0, y * radial)) / denom
        return (gx,)

    return record((x,), y, back)
