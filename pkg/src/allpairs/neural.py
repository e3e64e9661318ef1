"""Dense-tensor neural kernels with explicit forward/backward passes.

Tensors are plain numpy arrays: feature maps are channels-last
(batch, height, width, channels) and vectors are (batch, features), in a
configurable float precision (float32 for training, float64 for gradient
verification). Channels-last keeps every inner gemm and reduction over
contiguous memory, which matters far more than FLOPs on one core. Conv
weights are stored (out, in, kh, kw) regardless.

Every layer implements `forward(x, train)` and `backward(dout)` with
hand-derived gradients; `gradcheck` verifies each against central finite
differences.

Convolutions use "same"-style zero padding: the output spatial size is
ceil(input / stride), with the pad split low/high. Conv arithmetic is a
loop over the k*k kernel taps; each tap is one strided matmul against a
zero-copy view of the padded input, so memory stays flat and the
per-element summation order is fixed (taps in row-major order, channels
inside the gemm).
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

from .rng import Stream

SELU_ALPHA = 1.6732632423543772
SELU_LAMBDA = 1.0507009873554805

ACTIVATION_KINDS = ("elu", "identity", "relu", "selu", "sigmoid",
                    "softmax", "softplus", "tanh")


class ShapeError(ValueError):
    pass


class Param:
    """A named trainable tensor and its gradient accumulator."""

    __slots__ = ("name", "value", "grad")

    def __init__(self, name: str, value: np.ndarray):
        self.name = name
        self.value = value
        self.grad = np.zeros_like(value)

    def zero_grad(self):
        self.grad[...] = 0


def xavier_uniform(shape: tuple[int, ...], stream: Stream, dtype=np.float32) -> np.ndarray:
    """Uniform in +-sqrt(6 / (fan_in + fan_out)); seeded and replayable.

    Dense weights are (in, out); conv weights are (out, in, k, k) with fans
    multiplied by the kernel area.
    """
    if len(shape) == 2:
        fan_in, fan_out = shape
    elif len(shape) == 4:
        rec = shape[2] * shape[3]
        fan_in, fan_out = shape[1] * rec, shape[0] * rec
    else:
        raise ShapeError(f"xavier needs a 2-d or 4-d shape, got {shape}")
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    n = int(np.prod(shape))
    u = stream.uniform_block(n).reshape(shape)
    return ((2.0 * u - 1.0) * bound).astype(dtype)


# --------------------------------------------------------------------------
# Layers
# --------------------------------------------------------------------------

class Layer:
    name = ""

    def params(self) -> list[Param]:
        return []

    def state(self) -> dict[str, np.ndarray]:
        """Non-trainable persistent arrays (e.g. batch-norm running stats)."""
        return {}

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dout: np.ndarray) -> np.ndarray:
        raise NotImplementedError


def _same_pad(size: int, k: int, stride: int) -> tuple[int, int, int]:
    out = -(-size // stride)
    total = max((out - 1) * stride + k - size, 0)
    return out, total // 2, total - total // 2


class Conv2d(Layer):
    """2-d convolution, optional bias, "same" zero padding.

    Input/output are channels-last; weights are (out, in, k, k). Set
    need_dx=False on the first layer to skip the input gradient.

    When the patch matrix fits the workspace budget it is materialized once
    per forward and reused for every gemm in both passes; otherwise the
    layer falls back to per-tap strided matmuls, which keep memory flat.
    """

    COL_BUDGET_BYTES = 320 << 20

    def __init__(self, name: str, c_in: int, c_out: int, ksize: int, stride: int,
                 stream: Stream, bias: bool = False, dtype=np.float32,
                 need_dx: bool = True):
        if ksize < 1 or stride < 1:
            raise ShapeError(f"bad conv geometry k={ksize} stride={stride}")
        self.name = name
        self.ksize = ksize
        self.stride = stride
        self.need_dx = need_dx
        self.W = Param(f"{name}.W", xavier_uniform((c_out, c_in, ksize, ksize), stream, dtype))
        self.b = Param(f"{name}.b", np.zeros(c_out, dtype=dtype)) if bias else None
        self._cache = None

    def params(self):
        return [self.W] + ([self.b] if self.b is not None else [])

    def _tap_view(self, xp, ki, kj, Ho, Wo):
        s = self.stride
        return xp[:, ki:ki + s * (Ho - 1) + 1:s, kj:kj + s * (Wo - 1) + 1:s, :]

    def forward(self, x, train):
        W = self.W.value
        c_out, c_in = W.shape[0], W.shape[1]
        if x.ndim != 4 or x.shape[3] != c_in:
            raise ShapeError(f"{self.name}: input {x.shape} does not match weights {W.shape}")
        B, H, Wd, C = x.shape
        k, s = self.ksize, self.stride
        Ho, pt, pb = _same_pad(H, k, s)
        Wo, pl, pr = _same_pad(Wd, k, s)
        if k == 1 and s == 1:
            xp = x
        else:
            xp = np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
        wt = np.ascontiguousarray(W.transpose(2, 3, 1, 0))  # (k, k, C_in, C_out)
        patch = k * k * c_in
        col = None
        if k > 1 and B * Ho * Wo * patch * np.dtype(x.dtype).itemsize <= self.COL_BUDGET_BYTES:
            win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(1, 2))[:, ::s, ::s]
            # (B, Ho, Wo, C, k, k) -> rows of (ki, kj, c) patches
            col = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(
                B * Ho * Wo, patch)
            y = (col @ wt.reshape(patch, c_out)).reshape(B, Ho, Wo, c_out)
        else:
            y = np.zeros((B, Ho, Wo, c_out), dtype=x.dtype)
            for ki in range(k):
                for kj in range(k):
                    y += np.matmul(self._tap_view(xp, ki, kj, Ho, Wo), wt[ki, kj])
        if self.b is not None:
            y += self.b.value
        # the patch matrix alone supports the whole backward pass
        self._cache = (col, None if col is not None else xp, xp.shape,
                       wt, (B, H, Wd, pt, pl, Ho, Wo))
        return y

    def backward(self, dout):
        col, xp, xp_shape, wt, (B, H, Wd, pt, pl, Ho, Wo) = self._cache
        k, s = self.ksize, self.stride
        c_out, c_in = self.W.value.shape[0], self.W.value.shape[1]
        patch = k * k * c_in
        dy = dout.reshape(B * Ho * Wo, c_out)
        if col is not None:
            # (C_out, patch) -> (k, k, C_in) blocks -> (C_out, C_in, k, k)
            dwt = (dy.T @ col).reshape(c_out, k, k, c_in)
            self.W.grad += dwt.transpose(0, 3, 1, 2)
        else:
            dW = self.W.grad
            for ki in range(k):
                for kj in range(k):
                    view = self._tap_view(xp, ki, kj, Ho, Wo)
                    v2 = view.reshape(B * Ho * Wo, c_in) if view.flags.c_contiguous \
                        else np.ascontiguousarray(view).reshape(B * Ho * Wo, c_in)
                    dW[:, :, ki, kj] += (dy.T @ v2)
        if self.b is not None:
            self.b.grad += dy.sum(axis=0)
        if not self.need_dx:
            return None
        if k == 1 and s == 1:
            return np.matmul(dout, wt[0, 0].T)
        # one gemm for all per-tap input gradients, then scatter-add the
        # (contiguous-channel) tap slices back into the padded gradient
        dcol = (dy @ wt.reshape(patch, c_out).T).reshape(B, Ho, Wo, k, k, c_in)
        dxp = np.zeros(xp_shape, dtype=dout.dtype)
        for ki in range(k):
            for kj in range(k):
                self._tap_view(dxp, ki, kj, Ho, Wo)[...] += dcol[:, :, :, ki, kj, :]
        if dxp.shape == (B, H, Wd, c_in):
            return dxp
        return np.ascontiguousarray(dxp[:, pt:pt + H, pl:pl + Wd, :])


class Dense(Layer):
    def __init__(self, name: str, n_in: int, n_out: int, stream: Stream,
                 bias: bool = True, dtype=np.float32):
        self.name = name
        self.W = Param(f"{name}.W", xavier_uniform((n_in, n_out), stream, dtype))
        self.b = Param(f"{name}.b", np.zeros(n_out, dtype=dtype)) if bias else None
        self._x = None

    def params(self):
        return [self.W] + ([self.b] if self.b is not None else [])

    def forward(self, x, train):
        if x.ndim != 2 or x.shape[1] != self.W.value.shape[0]:
            raise ShapeError(f"{self.name}: input {x.shape} vs weights {self.W.value.shape}")
        self._x = x
        y = x @ self.W.value
        if self.b is not None:
            y = y + self.b.value
        return y

    def backward(self, dout):
        self.W.grad += self._x.T @ dout
        if self.b is not None:
            self.b.grad += dout.sum(axis=0)
        return dout @ self.W.value.T


class BatchNorm(Layer):
    """Batch normalization over the batch (and spatial dims for 4-d input).

    Train mode uses biased batch statistics and updates running stats with
    `running = (1 - momentum) * running + momentum * batch`; eval mode is
    the deterministic affine map from running statistics.
    """

    def __init__(self, name: str, channels: int, momentum: float = 0.1,
                 eps: float = 1e-5, dtype=np.float32):
        self.name = name
        self.eps = eps
        self.momentum = momentum
        self.gamma = Param(f"{name}.gamma", np.ones(channels, dtype=dtype))
        self.beta = Param(f"{name}.beta", np.zeros(channels, dtype=dtype))
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self._cache = None

    def params(self):
        return [self.gamma, self.beta]

    def state(self):
        return {f"{self.name}.running_mean": self.running_mean,
                f"{self.name}.running_var": self.running_var}

    @staticmethod
    def _axes(x):
        if x.ndim == 2:
            return (0,)
        if x.ndim == 4:
            return (0, 1, 2)
        raise ShapeError(f"batch norm input must be 2-d or 4-d, got {x.shape}")

    def forward(self, x, train):
        axes = self._axes(x)
        if x.shape[-1] != self.gamma.value.shape[0]:
            raise ShapeError(f"{self.name}: {x.shape} vs {self.gamma.value.shape[0]} channels")
        g, b = self.gamma.value, self.beta.value
        if train:
            if x.shape[0] < 2:
                raise ShapeError(f"{self.name}: train mode needs batch >= 2, got {x.shape[0]}")
            mu = x.mean(axis=axes)
            var = x.var(axis=axes)
            inv = 1.0 / np.sqrt(var + self.eps)
            xhat = (x - mu) * inv
            m = x.dtype.type(self.momentum)
            self.running_mean[...] = (1 - m) * self.running_mean + m * mu
            self.running_var[...] = (1 - m) * self.running_var + m * var
            self._cache = ("train", xhat, inv, axes)
            return g * xhat + b
        inv = 1.0 / np.sqrt(self.running_var + self.eps)
        xhat = (x - self.running_mean) * inv
        self._cache = ("eval", inv, xhat, self._axes(x))
        return g * xhat + b

    def backward(self, dout):
        if self._cache[0] == "eval":
            _, inv, xhat, axes = self._cache
            self.beta.grad += dout.sum(axis=axes)
            self.gamma.grad += (dout * xhat).sum(axis=axes)
            return dout * (self.gamma.value * inv)
        _, xhat, inv, axes = self._cache
        c = dout.shape[-1]
        d2 = dout.reshape(-1, c)
        x2 = xhat.reshape(-1, c)
        n = d2.shape[0]
        s1 = d2.sum(axis=0)
        # per-channel sum of dout*xhat as the diagonal of one small gemm
        s2 = np.einsum("ij,ij->j", d2, x2, optimize=True) if c > 256 else \
            np.diagonal(d2.T @ x2).copy()
        self.beta.grad += s1
        self.gamma.grad += s2
        g = self.gamma.value
        # dx = gamma*inv/n * (n*dout - s1 - xhat * s2), fused in place
        dx = dout * np.asarray(n, dtype=dout.dtype)
        dx -= s1
        dx -= xhat * s2
        dx *= g * (inv / n)
        return dx


class Activation(Layer):
    """Elementwise nonlinearity; "softmax" normalizes across the channel axis."""

    def __init__(self, kind: str, name: str = ""):
        kind = kind.lower()
        if kind not in ACTIVATION_KINDS:
            raise ValueError(f"unknown activation {kind!r}; choose from {ACTIVATION_KINDS}")
        self.kind = kind
        self.name = name or kind
        self._cache = None

    def forward(self, x, train):
        k = self.kind
        if k == "identity":
            self._cache = None
            return x
        if k == "relu":
            y = np.maximum(x, 0)
            self._cache = x
            return y
        if k == "elu":
            neg = np.expm1(np.minimum(x, 0))
            y = np.where(x > 0, x, neg)
            self._cache = (x, y)
            return y
        if k == "selu":
            neg = SELU_LAMBDA * SELU_ALPHA * np.expm1(np.minimum(x, 0))
            y = np.where(x > 0, SELU_LAMBDA * x, neg)
            self._cache = (x, y)
            return y
        if k == "sigmoid":
            y = 1.0 / (1.0 + np.exp(-x))
            self._cache = y
            return y
        if k == "tanh":
            y = np.tanh(x)
            self._cache = y
            return y
        if k == "softplus":
            y = np.logaddexp(0, x)
            self._cache = x
            return y
        # softmax over the feature (channel) axis at every spatial location;
        # channels-last, so that is the final axis
        if x.ndim < 2:
            raise ShapeError("softmax activation needs a channel dimension")
        z = x - x.max(axis=-1, keepdims=True)
        e = np.exp(z)
        y = e / e.sum(axis=-1, keepdims=True)
        self._cache = y
        return y

    def backward(self, dout):
        k = self.kind
        if k == "identity":
            return dout
        if k == "relu":
            return dout * (self._cache > 0)
        if k == "elu":
            x, y = self._cache
            return dout * np.where(x > 0, 1.0, y + 1.0)
        if k == "selu":
            x, y = self._cache
            return dout * np.where(x > 0, SELU_LAMBDA, y + SELU_LAMBDA * SELU_ALPHA)
        if k == "sigmoid":
            y = self._cache
            return dout * y * (1.0 - y)
        if k == "tanh":
            y = self._cache
            return dout * (1.0 - y * y)
        if k == "softplus":
            return dout / (1.0 + np.exp(-self._cache))
        y = self._cache
        return y * (dout - (dout * y).sum(axis=-1, keepdims=True))


class Pool(Layer):
    """Max/avg pooling. Max routes gradient to the first (lowest linear
    index) argmax in each window; avg distributes uniformly."""

    def __init__(self, kind: str, size: int, stride: int = 1, pad: int = 0, name: str = ""):
        if kind not in ("max", "avg"):
            raise ValueError(f"pool kind must be max or avg, got {kind!r}")
        self.kind = kind
        self.size = size
        self.stride = stride
        self.pad = pad
        self.name = name or f"{kind}pool{size}"
        self._cache = None

    def forward(self, x, train):
        if x.ndim != 4:
            raise ShapeError(f"{self.name}: pooling needs 4-d input, got {x.shape}")
        k, s, p = self.size, self.stride, self.pad
        xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0))) if p else x
        B, H, W, C = xp.shape
        if H < k or W < k:
            raise ShapeError(f"{self.name}: window {k} larger than input {H}x{W}")
        # windows: (B, Ho, Wo, C, k, k)
        win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(1, 2))[:, ::s, ::s]
        Ho, Wo = win.shape[1], win.shape[2]
        flat = win.reshape(B, Ho, Wo, C, k * k)
        if self.kind == "max":
            if not train:
                self._cache = (x.shape, xp.shape, None)
                return np.ascontiguousarray(flat.max(axis=-1))
            arg = flat.argmax(axis=-1)
            y = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
            self._cache = (x.shape, xp.shape, arg)
            return np.ascontiguousarray(y)
        y = flat.mean(axis=-1)
        self._cache = (x.shape, xp.shape, None)
        return np.ascontiguousarray(y)

    def backward(self, dout):
        x_shape, xp_shape, arg = self._cache
        k, s, p = self.size, self.stride, self.pad
        B, Ho, Wo, C = dout.shape
        dxp = np.zeros(xp_shape, dtype=dout.dtype)
        if self.kind == "avg":
            d = dout / (k * k)
            for ki in range(k):
                for kj in range(k):
                    dxp[:, ki:ki + s * (Ho - 1) + 1:s, kj:kj + s * (Wo - 1) + 1:s, :] += d
        else:
            if arg is None:
                raise RuntimeError(f"{self.name}: backward needs a train-mode forward")
            bi, oi, oj, ci = np.indices(dout.shape)
            rows = oi * s + arg // k
            cols = oj * s + arg % k
            np.add.at(dxp, (bi, rows, cols, ci), dout)
        if p:
            dxp = dxp[:, p:p + x_shape[1], p:p + x_shape[2], :]
        return dxp


class SpatialSum(Layer):
    """Per-channel total over the spatial extent: (B, H, W, C) -> (B, C)."""

    name = "spatial_sum"

    def forward(self, x, train):
        if x.ndim != 4:
            raise ShapeError(f"spatial_sum needs 4-d input, got {x.shape}")
        self._shape = x.shape
        return x.sum(axis=(1, 2))

    def backward(self, dout):
        return np.broadcast_to(dout[:, None, None, :], self._shape).astype(dout.dtype).copy()


class Flatten(Layer):
    name = "flatten"

    def forward(self, x, train):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        return dout.reshape(self._shape)


# --------------------------------------------------------------------------
# Loss, optimizer
# --------------------------------------------------------------------------

def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient wrt logits.

    dlogits = (softmax(logits) - onehot(labels)) / batch.
    """
    if logits.ndim != 2:
        raise ShapeError(f"logits must be (batch, classes), got {logits.shape}")
    labels = np.asarray(labels)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"labels shape {labels.shape} does not match batch {n}")
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"labels must be in [0, {k}), got range "
                         f"[{labels.min()}, {labels.max()}]")
    z = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    loss = float(np.mean(lse - z[np.arange(n), labels]))
    d = softmax(logits)
    d[np.arange(n), labels] -= 1.0
    return loss, d / n


class Adam:
    """Adam with bias correction; defaults lr 1e-3, betas (0.9, 0.999)."""

    def __init__(self, params: list[Param], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {p.name: np.zeros_like(p.value) for p in params}
        self.v = {p.name: np.zeros_like(p.value) for p in params}

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p in self.params:
            m = self.m[p.name]
            v = self.v[p.name]
            m[...] = b1 * m + (1 - b1) * p.grad
            v[...] = b2 * v + (1 - b2) * (p.grad * p.grad)
            p.value -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.value.dtype)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {"adam.t": np.array([self.t], dtype=np.int64)}
        for p in self.params:
            out[f"adam.m.{p.name}"] = self.m[p.name]
            out[f"adam.v.{p.name}"] = self.v[p.name]
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]):
        self.t = int(arrays["adam.t"][0])
        for p in self.params:
            self.m[p.name][...] = arrays[f"adam.m.{p.name}"]
            self.v[p.name][...] = arrays[f"adam.v.{p.name}"]


# --------------------------------------------------------------------------
# Gradient verification
# --------------------------------------------------------------------------

def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    """Max elementwise relative error between gradient blocks.

    The denominator is floored at max(1e-6, 1e-4 x block magnitude):
    central differences carry ~eps*|f|/h of absolute noise, so elements
    whose true gradient sits at that noise floor would otherwise dominate
    the metric without indicating a real discrepancy.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if not a.size:
        return 0.0
    floor = max(1e-6, 1e-4 * float(np.abs(a).max() + np.abs(b).max()))
    denom = np.maximum(np.abs(a) + np.abs(b), floor)
    return float(np.max(np.abs(a - b) / denom))


def numeric_gradient(f: Callable[[], float], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar f() wrt array x (perturbed in place)."""
    grad = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return grad


def gradcheck_layer(layer: Layer, x: np.ndarray, stream: Stream,
                    h: float = 1e-5, train: bool = True) -> dict[str, float]:
    """Check a single layer's backward against finite differences.

    The scalar objective is a fixed random projection of the output, so
    every output element participates. Returns per-block max relative
    errors, including "input".
    """
    y = layer.forward(x, train)
    proj = stream.uniform_block(y.size).reshape(y.shape) - 0.5

    def objective() -> float:
        return float((layer.forward(x, train) * proj).sum())

    for p in layer.params():
        p.zero_grad()
    layer.forward(x, train)
    dx = layer.backward(proj.astype(x.dtype))
    report = {"input": rel_error(dx, numeric_gradient(objective, x, h))}
    for p in layer.params():
        report[p.name] = rel_error(p.grad, numeric_gradient(objective, p.value, h))
    if not all(np.isfinite(v) for v in report.values()):
        raise FloatingPointError(f"non-finite gradcheck values: {report}")
    return report


def gradcheck_model(model, x: np.ndarray, labels: np.ndarray,
                    h: float = 1e-5) -> dict[str, float]:
    """Finite-difference check of a full model's cross-entropy gradients."""

    def objective() -> float:
        return cross_entropy(model.forward_logits(x, train=True), labels)[0]

    for p in model.params():
        p.zero_grad()
    loss, dlogits = cross_entropy(model.forward_logits(x, train=True), labels)
    model.backward(dlogits)
    report = {}
    for p in model.params():
        report[p.name] = rel_error(p.grad, numeric_gradient(objective, p.value, h))
    if not all(np.isfinite(v) for v in report.values()):
        raise FloatingPointError(f"non-finite gradcheck values: {report}")
    return report
