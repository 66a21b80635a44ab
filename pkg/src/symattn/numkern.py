"""Dense float64 kernels with paired forward/backward functions.

Every forward returns ``(out, cache)``; the matching ``*_backward`` takes the
cache and the upstream gradient and returns gradients for the inputs.  The
model is assembled from these by hand, there is no graph machinery.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

LN_EPS = 1e-5


class DimensionError(ValueError):
    pass


class InvalidInputError(ValueError):
    pass


class DomainError(ValueError):
    pass


class StateError(RuntimeError):
    pass


def as_f64(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


@dataclass
class DualTensor:
    """A value with an additive gradient buffer of the same shape."""

    value: np.ndarray
    grad: np.ndarray = field(default=None)

    def __post_init__(self):
        self.value = as_f64(self.value)
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        elif self.grad.shape != self.value.shape:
            raise DimensionError(
                f"grad shape {self.grad.shape} != value shape {self.value.shape}"
            )

    @property
    def shape(self):
        return self.value.shape

    def accumulate(self, g) -> None:
        g = as_f64(g)
        if g.shape != self.value.shape:
            raise DimensionError(
                f"cannot accumulate gradient of shape {g.shape} into {self.value.shape}"
            )
        self.grad += g

    def zero_grad(self) -> None:
        self.grad[...] = 0.0


def _require(cache, name: str):
    if cache is None:
        raise StateError(f"{name}: backward called before forward")
    return cache


def _reduce_to(g, shape):
    """Sum ``g`` down to a leading-aligned ``shape``."""
    if shape == ():
        return np.float64(g.sum())
    g = g.reshape(g.shape[: len(shape)] + (-1,)).sum(axis=-1)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------- matmul


def matmul(a, b) -> np.ndarray:
    """Matrix product summed left to right over the inner dimension.

    Leading dimensions broadcast like ``np.matmul``.  The explicit loop pins
    the summation order so results do not depend on the BLAS build.
    """
    a = as_f64(a)
    b = as_f64(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    lead = np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    out = np.zeros(lead + (a.shape[-2], b.shape[-1]))
    for k in range(a.shape[-1]):
        out += a[..., :, k : k + 1] * b[..., k : k + 1, :]
    return out


def matmul_backward(a, b, dout):
    """Gradients of ``matmul(a, b)`` w.r.t. ``a`` and ``b``."""
    a = as_f64(a)
    b = as_f64(b)
    da = matmul(dout, np.swapaxes(b, -1, -2))
    db = matmul(np.swapaxes(a, -1, -2), dout)
    # reduce broadcast leading dims
    while da.ndim > a.ndim:
        da = da.sum(axis=0)
    while db.ndim > b.ndim:
        db = db.sum(axis=0)
    return da, db


# ---------------------------------------------------------------- softmax


def softmax_temp(logits, tau, mask=None):
    """Temperature softmax over the last axis with masking.

    ``tau`` is a scalar or broadcasts against ``logits[..., :1]``.  Masked
    positions come out as exactly 0.
    """
    z = as_f64(logits)
    tau = as_f64(tau)
    if np.any(~(tau > 0)):
        raise DomainError(f"temperature must be positive, got {tau}")
    if mask is None:
        mask = np.ones(z.shape, dtype=bool)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), z.shape)
    if not np.all(mask.any(axis=-1)):
        raise InvalidInputError("softmax_temp: every position is masked")
    tau_shape = tau.shape
    if tau.ndim:
        tau = tau.reshape(tau.shape + (1,) * (z.ndim - tau.ndim))
    u = z / tau
    m = np.max(np.where(mask, u, -np.inf), axis=-1, keepdims=True)
    e = np.where(mask, np.exp(np.where(mask, u - m, 0.0)), 0.0)
    out = e / e.sum(axis=-1, keepdims=True)
    return out, {"out": out, "u": u, "tau": tau, "tau_shape": tau_shape, "mask": mask}


def softmax_temp_backward(cache, dout):
    """Returns ``(dlogits, dtau)``; ``dtau`` has the shape of the ``tau`` passed in."""
    _require(cache, "softmax_temp_backward")
    p = cache["out"]
    dout = as_f64(dout)
    du = p * (dout - np.sum(p * dout, axis=-1, keepdims=True))
    tau = cache["tau"]
    dz = du / tau
    u = np.where(cache["mask"], cache["u"], 0.0)
    dtau = -np.sum(du * u, axis=-1, keepdims=True) / tau
    return dz, _reduce_to(dtau, cache["tau_shape"])


# ---------------------------------------------------------------- layernorm


def layernorm(x, gain, bias, eps: float = LN_EPS):
    """LayerNorm over the last axis with population variance."""
    x = as_f64(x)
    gain = as_f64(gain)
    bias = as_f64(bias)
    if x.shape[-1] < 1:
        raise DimensionError("layernorm needs at least one feature")
    if gain.shape != x.shape[-1:] or bias.shape != x.shape[-1:]:
        raise DimensionError(
            f"layernorm: x {x.shape}, gain {gain.shape}, bias {bias.shape}"
        )
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = gain * xhat + bias
    return out, {"xhat": xhat, "inv": inv, "gain": gain}


def layernorm_backward(cache, dout):
    """Returns ``(dx, dgain, dbias)``; parameter grads are summed over rows."""
    _require(cache, "layernorm_backward")
    dout = as_f64(dout)
    xhat, inv, gain = cache["xhat"], cache["inv"], cache["gain"]
    axes = tuple(range(dout.ndim - 1))
    dgain = np.sum(dout * xhat, axis=axes)
    dbias = np.sum(dout, axis=axes)
    dxhat = dout * gain
    d = dout.shape[-1]
    dx = inv * (
        dxhat
        - dxhat.sum(axis=-1, keepdims=True) / d
        - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True) / d
    )
    return dx, dgain, dbias


# ---------------------------------------------------------------- relu / dropout / sigmoid


def relu(x):
    x = as_f64(x)
    return np.maximum(x, 0.0), {"x": x}


def relu_backward(cache, dout):
    _require(cache, "relu_backward")
    # subgradient at exactly 0 is 0
    return np.where(cache["x"] > 0, as_f64(dout), 0.0)


def dropout(x, p: float, rng: np.random.Generator | None, training: bool):
    """Inverted dropout; identity when not training or ``p == 0``."""
    if not 0.0 <= p < 1.0:
        raise DomainError(f"dropout probability must be in [0, 1), got {p}")
    x = as_f64(x)
    if not training or p == 0.0:
        return x.copy(), {"scale": None}
    if rng is None:
        raise InvalidInputError("dropout in training mode needs a generator")
    keep = rng.random(x.shape) >= p
    scale = np.where(keep, 1.0 / (1.0 - p), 0.0)
    return x * scale, {"scale": scale}


def dropout_backward(cache, dout):
    _require(cache, "dropout_backward")
    if cache["scale"] is None:
        return as_f64(dout).copy()
    return as_f64(dout) * cache["scale"]


def sigmoid(x):
    x = as_f64(x)
    # split branches so exp never overflows
    e = np.exp(-np.abs(x))
    s = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return s, {"s": s}


def sigmoid_backward(cache, dout):
    _require(cache, "sigmoid_backward")
    s = cache["s"]
    return as_f64(dout) * s * (1.0 - s)


# ---------------------------------------------------------------- loss


def mse(pred, target):
    pred = as_f64(pred)
    target = as_f64(target)
    if pred.shape != target.shape:
        raise DimensionError(f"mse: pred {pred.shape} vs target {target.shape}")
    diff = pred - target
    return float(np.mean(diff * diff)), {"diff": diff}


def mse_backward(cache, dout: float = 1.0):
    _require(cache, "mse_backward")
    diff = cache["diff"]
    return dout * 2.0 * diff / diff.size


# ---------------------------------------------------------------- rng


def keyed_generator(*key: int) -> np.random.Generator:
    """Counter-based Philox generator keyed by a tuple of non-negative ints."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(list(key))))
