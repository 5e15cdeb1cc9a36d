"""Small deterministic numeric kernel on numpy arrays (NHWC / row-major).

Every primitive returns ``(output, cache)`` from its forward pass and exact
analytic gradients from its backward pass. Reductions run in a fixed order
so repeated runs are bit-identical on one machine.
"""

from __future__ import annotations

import hashlib
import math
from typing import NamedTuple

import numpy as np

DTYPE = np.float32


class NumericError(FloatingPointError):
    """A kernel produced a NaN or infinity."""


class ShapeError(ValueError):
    pass


def check_finite(x: np.ndarray, where: str) -> np.ndarray:
    if not np.isfinite(x).all():
        raise NumericError(f"non-finite values after {where}")
    return x


class ParamKey(NamedTuple):
    block: int
    dest: int
    src: int
    op: int
    role: str

    def __str__(self) -> str:
        return f"{self.block}/{self.dest}/{self.src}/{self.op}/{self.role}"


def _key_seed(seed: int, key: ParamKey) -> int:
    h = hashlib.blake2b(f"{seed}|{key}".encode(), digest_size=8)
    return int.from_bytes(h.digest(), "little")


def init_param(key: ParamKey, shape: tuple[int, ...], seed: int, dtype=DTYPE) -> np.ndarray:
    """Glorot-uniform weights, zero biases; the stream depends only on (seed, key)."""
    if len(shape) == 1:
        return np.zeros(shape, dtype=dtype)
    if len(shape) == 4:
        k = shape[0] * shape[1]
        fan_in, fan_out = k * shape[2], k * shape[3]
    else:
        fan_in, fan_out = shape
    s = math.sqrt(6.0 / (fan_in + fan_out))
    rng = np.random.default_rng(_key_seed(seed, key))
    return rng.uniform(-s, s, size=shape).astype(dtype)


class ParamStore:
    """Parameters plus momentum buffers keyed by :class:`ParamKey`."""

    def __init__(self, seed: int = 0, dtype=DTYPE):
        self.seed = seed
        self.dtype = dtype
        self.params: dict[ParamKey, np.ndarray] = {}
        self.momentum: dict[ParamKey, np.ndarray] = {}

    def __contains__(self, key) -> bool:
        return key in self.params

    def __getitem__(self, key: ParamKey) -> np.ndarray:
        try:
            return self.params[key]
        except KeyError:
            raise KeyError(f"parameter {key} not in store") from None

    def __len__(self) -> int:
        return len(self.params)

    def keys(self):
        return self.params.keys()

    def ensure(self, key: ParamKey, shape: tuple[int, ...]) -> np.ndarray:
        p = self.params.get(key)
        if p is None:
            p = init_param(key, shape, self.seed, self.dtype)
            self.params[key] = p
            self.momentum[key] = np.zeros_like(p)
        elif p.shape != tuple(shape):
            raise ShapeError(f"parameter {key} has shape {p.shape}, expected {tuple(shape)}")
        return p

    def drop(self, keys) -> None:
        for key in keys:
            self.params.pop(key, None)
            self.momentum.pop(key, None)

    def digest(self, include_momentum: bool = False) -> str:
        h = hashlib.sha256()
        for key in sorted(self.params):
            h.update(str(key).encode())
            h.update(self.params[key].tobytes())
            if include_momentum:
                h.update(self.momentum[key].tobytes())
        return h.hexdigest()

    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())


# --------------------------------------------------------------------------
# primitives


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int = 1):
    """'Same'-padded convolution, x (N,H,W,Cin), w (k,k,Cin,Cout)."""
    if x.ndim != 4 or w.ndim != 4 or x.shape[3] != w.shape[2] or b.shape != (w.shape[3],):
        raise ShapeError(f"conv input {x.shape} incompatible with weight {w.shape} / bias {b.shape}")
    k = w.shape[0]
    n, h, wd, c = x.shape
    ho, wo = -(-h // stride), -(-wd // stride)
    if k == 1:
        xs = x[:, ::stride, ::stride, :]
        cols = xs.reshape(-1, c)
    else:
        p = k // 2
        xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
        cols = np.empty((n, ho, wo, k, k, c), dtype=x.dtype)
        for di in range(k):
            for dj in range(k):
                cols[:, :, :, di, dj, :] = xp[:, di : di + stride * ho : stride, dj : dj + stride * wo : stride, :]
        cols = cols.reshape(-1, k * k * c)
    y = cols @ w.reshape(-1, w.shape[3]) + b
    return y.reshape(n, ho, wo, w.shape[3]), (cols, x.shape, w, stride)


def conv2d_backward(gy: np.ndarray, cache):
    cols, xshape, w, stride = cache
    k, cout = w.shape[0], w.shape[3]
    n, h, wd, c = xshape
    g2 = gy.reshape(-1, cout)
    gw = (cols.T @ g2).reshape(w.shape)
    gb = g2.sum(axis=0)
    gcols = g2 @ w.reshape(-1, cout).T
    ho, wo = gy.shape[1], gy.shape[2]
    if k == 1:
        gx = np.zeros(xshape, dtype=gy.dtype)
        gx[:, ::stride, ::stride, :] = gcols.reshape(n, ho, wo, c)
        return gx, gw, gb
    p = k // 2
    gcols = gcols.reshape(n, ho, wo, k, k, c)
    gxp = np.zeros((n, h + 2 * p, wd + 2 * p, c), dtype=gy.dtype)
    for di in range(k):
        for dj in range(k):
            gxp[:, di : di + stride * ho : stride, dj : dj + stride * wo : stride, :] += gcols[:, :, :, di, dj, :]
    return gxp[:, p : p + h, p : p + wd, :], gw, gb


def dense_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    if x.ndim != 2 or x.shape[1] != w.shape[0] or b.shape != (w.shape[1],):
        raise ShapeError(f"dense input {x.shape} incompatible with weight {w.shape} / bias {b.shape}")
    return x @ w + b, (x, w)


def dense_backward(gy: np.ndarray, cache):
    x, w = cache
    return gy @ w.T, x.T @ gy, gy.sum(axis=0)


_POOL_COUNTS: dict[tuple[int, int], np.ndarray] = {}


def _pool_counts(h: int, w: int) -> np.ndarray:
    # 3x3 window sizes excluding padding
    key = (h, w)
    if key not in _POOL_COUNTS:
        rows = np.minimum(np.arange(h) + 1, h - 1) - np.maximum(np.arange(h) - 1, 0) + 1
        cols = np.minimum(np.arange(w) + 1, w - 1) - np.maximum(np.arange(w) - 1, 0) + 1
        _POOL_COUNTS[key] = np.outer(rows, cols)[None, :, :, None].astype(np.float64)
    return _POOL_COUNTS[key]


def avgpool3_forward(x: np.ndarray):
    n, h, w, c = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    s = np.zeros_like(x)
    for di in range(3):
        for dj in range(3):
            s += xp[:, di : di + h, dj : dj + w, :]
    counts = _pool_counts(h, w).astype(x.dtype)
    return s / counts, counts


def avgpool3_backward(gy: np.ndarray, counts):
    n, h, w, c = gy.shape
    g = gy / counts
    gxp = np.zeros((n, h + 2, w + 2, c), dtype=gy.dtype)
    for di in range(3):
        for dj in range(3):
            gxp[:, di : di + h, dj : dj + w, :] += g
    return gxp[:, 1 : 1 + h, 1 : 1 + w, :]


def activation_forward(kind: str | None, z: np.ndarray):
    if kind is None:
        return z, None
    if kind == "relu":
        return np.maximum(z, 0), z > 0
    if kind == "tanh":
        y = np.tanh(z)
        return y, y
    raise ValueError(f"unknown activation {kind!r}")


def activation_backward(kind: str | None, gy: np.ndarray, cache):
    if kind is None:
        return gy
    if kind == "relu":
        return gy * cache
    return gy * (1 - cache * cache)


# --------------------------------------------------------------------------
# edge ops


def op_forward(op, x: np.ndarray, params: dict[str, np.ndarray] | None = None, stride: int = 1):
    """Apply one edge op (an :class:`~growthnas.space.OpSpec`). Returns ``(y, cache)``."""
    kind = op.kind
    if kind == "zero":
        return np.zeros_like(x), x.shape
    if kind == "identity":
        return x, None
    if kind == "pool":
        if x.ndim != 4:
            raise ShapeError(f"pooling needs NHWC input, got {x.shape}")
        y, cache = avgpool3_forward(x)
        return check_finite(y, op.name), cache
    if params is None:
        raise ShapeError(f"op {op.name} needs parameters")
    if kind == "conv":
        z, lin = conv2d_forward(x, params["w"], params["b"], stride)
    elif kind == "dense":
        z, lin = dense_forward(x, params["w"], params["b"])
    else:
        raise ValueError(f"unknown op kind {kind!r}")
    y, act = activation_forward(op.activation, z)
    return check_finite(y, op.name), (lin, act)


def op_backward(op, gy: np.ndarray, cache):
    """Returns ``(grad_in, grad_params)``; ``grad_params`` is empty for parameter-free ops."""
    kind = op.kind
    if kind == "zero":
        return np.zeros(cache, dtype=gy.dtype), {}
    if kind == "identity":
        return gy, {}
    if kind == "pool":
        return avgpool3_backward(gy, cache), {}
    lin, act = cache
    gz = activation_backward(op.activation, gy, act)
    if kind == "conv":
        gx, gw, gb = conv2d_backward(gz, lin)
    else:
        gx, gw, gb = dense_backward(gz, lin)
    return gx, {"w": gw, "b": gb}


# --------------------------------------------------------------------------
# loss, optimizer, schedule


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient w.r.t. ``logits``."""
    if logits.ndim != 2:
        raise ShapeError(f"logits must be (batch, classes), got {logits.shape}")
    labels = np.asarray(labels)
    n, c = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"labels shape {labels.shape} does not match batch {n}")
    if labels.min() < 0 or labels.max() >= c:
        raise ValueError(f"labels must lie in [0, {c})")
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    s = e.sum(axis=1, keepdims=True)
    logp = z - np.log(s)
    loss = -float(logp[np.arange(n), labels].mean())
    grad = e / s
    grad[np.arange(n), labels] -= 1
    grad /= n
    if not math.isfinite(loss):
        raise NumericError("non-finite loss")
    return loss, grad.astype(logits.dtype)


loss = softmax_cross_entropy


def sgd_step(store: ParamStore, grads: dict, lr: float, momentum: float, weight_decay: float) -> None:
    """``v <- m*v + g + wd*w``; ``w <- w - lr*v`` for the keys in ``grads`` only."""
    for key in grads:
        if key not in store.params:
            raise KeyError(f"gradient for unknown parameter {key}")
    for key, g in grads.items():
        w = store.params[key]
        if g.shape != w.shape:
            raise ShapeError(f"gradient for {key} has shape {g.shape}, parameter {w.shape}")
        v = store.momentum[key]
        v *= momentum
        v += g
        if weight_decay:
            v += weight_decay * w
        w -= lr * v
        check_finite(w, f"update of {key}")


def clip_grad_norm(grads: dict, max_norm: float) -> float:
    """Scale ``grads`` in place so their global L2 norm is at most ``max_norm``; returns the original norm."""
    norm = math.sqrt(sum(float(np.vdot(g, g)) for g in grads.values()))
    if max_norm and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for g in grads.values():
            g *= scale
    return norm


def cosine_lr(step: int, total_steps: int, lr_max: float) -> float:
    if step >= total_steps:
        return 0.0
    if step <= 0:
        return lr_max
    return lr_max * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))
