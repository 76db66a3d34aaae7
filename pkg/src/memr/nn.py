"""Small dense networks with hand-written reverse-mode gradients.

Everything is float64.  A ``Net`` is a chain of dense layers; ``forward``
returns the output together with a ``Tape`` and ``backward`` consumes the
tape.  Nets built with ``ensemble=E`` hold ``E`` independent members whose
weights are stacked on a leading axis so one matmul serves all of them.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

ACTIVATIONS = ("relu", "tanh", "identity")
HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


class NumericalError(ArithmeticError):
    pass


def _act(name, z):
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    return z


def _act_grad(name, z, h, g):
    if name == "relu":
        return g * (z > 0.0)
    if name == "tanh":
        return g * (1.0 - h * h)
    return g


@dataclass
class Dense:
    weight: np.ndarray
    bias: np.ndarray
    activation: str = "identity"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")


@dataclass
class Tape:
    inputs: list
    pre: list
    post: list
    squeeze: bool
    consumed: bool = False


class Net:
    def __init__(self, sizes, activation="relu", out_activation="identity",
                 rng=None, ensemble=None):
        rng = np.random.default_rng(0) if rng is None else rng
        self.ensemble = ensemble
        lead = () if ensemble is None else (ensemble,)
        self.layers = []
        for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            bound = 1.0 / math.sqrt(fan_in)
            w = rng.uniform(-bound, bound, size=lead + (fan_in, fan_out))
            b = rng.uniform(-bound, bound, size=lead + ((1,) if ensemble else ()) + (fan_out,))
            act = out_activation if i == len(sizes) - 2 else activation
            self.layers.append(Dense(w, b, act))
        self.sizes = tuple(sizes)

    @property
    def in_dim(self):
        return self.sizes[0]

    @property
    def out_dim(self):
        return self.sizes[-1]

    def params(self):
        out = []
        for layer in self.layers:
            out.extend((layer.weight, layer.bias))
        return out

    @property
    def num_params(self):
        return sum(p.size for p in self.params())

    def set_params(self, values):
        for p, v in zip(self.params(), values, strict=True):
            p[...] = v

    def copy(self):
        new = Net.__new__(Net)
        new.ensemble = self.ensemble
        new.sizes = self.sizes
        new.layers = [Dense(l.weight.copy(), l.bias.copy(), l.activation) for l in self.layers]
        return new

    def __call__(self, x):
        return self.forward(x)[0]

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 1
        if squeeze and self.ensemble is not None:
            raise ValueError("ensemble nets take 2-D or 3-D input")
        if squeeze:
            x = x[None, :]
        if x.shape[-1] != self.in_dim:
            raise ValueError(f"input width {x.shape[-1]} != {self.in_dim}")
        inputs, pre, post = [], [], []
        h = x
        for layer in self.layers:
            inputs.append(h)
            z = h @ layer.weight + layer.bias
            h = _act(layer.activation, z)
            pre.append(z)
            post.append(h)
        if not np.all(np.isfinite(h)):
            raise NumericalError("non-finite network output")
        out = h[0] if squeeze else h
        return out, Tape(inputs, pre, post, squeeze)

    def backward(self, tape: Tape, out_grad):
        """Return ``(param_grads, input_grad)`` for the recorded pass.

        ``param_grads`` lines up with ``params()``.  A tape can be consumed once.
        """
        if tape.consumed:
            raise RuntimeError("tape already consumed by a previous backward")
        tape.consumed = True
        g = np.asarray(out_grad, dtype=np.float64)
        if tape.squeeze:
            g = g[None, :]
        if g.shape != tape.post[-1].shape:
            raise ValueError(f"output grad shape {g.shape} != {tape.post[-1].shape}")
        grads = [None] * (2 * len(self.layers))
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            g = _act_grad(layer.activation, tape.pre[i], tape.post[i], g)
            x = tape.inputs[i]
            if self.ensemble is not None and x.ndim == 2:
                # shared input broadcast across members
                x = np.broadcast_to(x, (self.ensemble,) + x.shape)
            grads[2 * i] = np.swapaxes(x, -1, -2) @ g
            grads[2 * i + 1] = g.sum(axis=-2).reshape(layer.bias.shape)
            g = g @ np.swapaxes(layer.weight, -1, -2)
        if tape.squeeze:
            g = g[0]
        return grads, g


def soft_clamp(x, lo, hi):
    """Smoothly bound ``x`` to ``(lo, hi)`` with softplus; returns value and slope."""
    a = hi - np.logaddexp(0.0, hi - x)
    y = lo + np.logaddexp(0.0, a - lo)
    # d softplus(u)/du = sigmoid(u)
    da = 1.0 / (1.0 + np.exp(-(hi - x)))
    dy = 1.0 / (1.0 + np.exp(-(a - lo)))
    # the composite overshoots hi by at most log1p(exp(lo - hi)); cut that off
    over = y > hi
    return np.where(over, hi, y), np.where(over, 0.0, da * dy)


def soft_clamp_inverse(y, lo, hi):
    a = lo + np.log(np.expm1(np.asarray(y, dtype=np.float64) - lo))
    return hi - np.log(np.expm1(hi - a))


def gaussian_nll(mean, log_var, target):
    """Gaussian negative log-likelihood summed over the last axis.

    For batched input the loss is averaged over rows and the gradients are
    scaled accordingly.  Returns ``(loss, d_mean, d_log_var)``.
    """
    mean = np.asarray(mean, dtype=np.float64)
    log_var = np.asarray(log_var, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if not (mean.shape == log_var.shape == target.shape):
        raise ValueError("mean, log_var and target must share a shape")
    if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(log_var))
            and np.all(np.isfinite(target))):
        raise NumericalError("non-finite input to gaussian_nll")
    inv_var = np.exp(-log_var)
    diff = mean - target
    per = 0.5 * (diff * diff * inv_var + log_var) + HALF_LOG_2PI
    rows = 1 if mean.ndim == 1 else int(np.prod(mean.shape[:-1]))
    loss = float(per.sum() / rows)
    d_mean = diff * inv_var / rows
    d_log_var = 0.5 * (1.0 - diff * diff * inv_var) / rows
    return loss, d_mean, d_log_var


@dataclass
class AdamState:
    m: list
    v: list
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0

    @classmethod
    def for_params(cls, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params],
                   lr, beta1, beta2, eps)

    def arrays(self):
        return self.m + self.v

    def scalars(self):
        return {"lr": self.lr, "beta1": self.beta1, "beta2": self.beta2,
                "eps": self.eps, "step": self.step}


def adam_step(state: AdamState, params, grads):
    """Bias-corrected Adam update, applied to ``params`` in place."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v, strict=True):
        if g.shape != p.shape:
            raise ValueError(f"grad shape {g.shape} != param shape {p.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


class Optimizer:
    """Adam bound to one net."""

    def __init__(self, net: Net, lr=1e-3):
        self.net = net
        self.state = AdamState.for_params(net.params(), lr=lr)

    def step(self, grads):
        adam_step(self.state, self.net.params(), grads)


def polyak(target: Net, online: Net, tau: float):
    for t, o in zip(target.params(), online.params(), strict=True):
        if tau == 1.0:
            t[...] = o
        else:
            t += tau * (o - t)


# Blob layout (little-endian): u32 count, then per array u32 ndim,
# ndim x u64 shape, then float64 data in C order.

def to_blob(arrays) -> bytes:
    parts = [struct.pack("<I", len(arrays))]
    for a in arrays:
        a = np.asarray(a, dtype="<f8", order="C")
        parts.append(struct.pack("<I", a.ndim))
        parts.append(struct.pack(f"<{a.ndim}Q", *a.shape))
        parts.append(a.tobytes())
    return b"".join(parts)


def from_blob(blob: bytes) -> list:
    view = memoryview(blob)
    try:
        (count,) = struct.unpack_from("<I", view, 0)
        pos = 4
        out = []
        for _ in range(count):
            (ndim,) = struct.unpack_from("<I", view, pos)
            pos += 4
            shape = struct.unpack_from(f"<{ndim}Q", view, pos)
            pos += 8 * ndim
            n = int(np.prod(shape)) if ndim else 1
            if pos + 8 * n > len(view):
                raise ValueError("blob truncated")
            out.append(np.frombuffer(view[pos:pos + 8 * n], dtype="<f8").reshape(shape).copy())
            pos += 8 * n
    except struct.error as exc:
        raise ValueError(f"blob truncated: {exc}") from None
    if pos != len(view):
        raise ValueError("trailing bytes after blob")
    return out
