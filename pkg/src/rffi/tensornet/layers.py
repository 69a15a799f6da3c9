"""Parameterised layers built on the tensor ops."""

from __future__ import annotations

import numpy as np

from rffi.tensornet import functional as F
from rffi.tensornet.tensor import Tensor, add, matmul, relu, sigmoid, softmax, stack, tanh


class Parameter(Tensor):
    """Trainable tensor with its Adam moment accumulators."""

    __slots__ = ("name", "adam_m", "adam_v")

    def __init__(self, data, name: str = ""):
        super().__init__(data, requires_grad=True)
        self.name = name
        self.adam_m = np.zeros_like(self.data)
        self.adam_v = np.zeros_like(self.data)

    def astype(self, dtype):
        self.data = self.data.astype(dtype)
        self.adam_m = self.adam_m.astype(dtype)
        self.adam_v = self.adam_v.astype(dtype)
        self.grad = None


class Module:
    """Container that discovers Parameters and sub-Modules among its attributes."""

    def named_parameters(self, prefix: str = ""):
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Parameter):
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def astype(self, dtype):
        for p in self.parameters():
            p.astype(dtype)
        return self

    def param_count(self) -> int:
        return int(sum(p.data.size for p in self.parameters()))

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _uniform(rng, limit, shape, dtype):
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Dense(Module):
    def __init__(self, n_in, n_out, rng, dtype=np.float32, gain=1.0):
        # LeCun-uniform: unit-variance outputs for unit-variance inputs, times gain
        self.weight = Parameter(_uniform(rng, gain * np.sqrt(3.0 / n_in), (n_out, n_in), dtype))
        self.bias = Parameter(np.zeros(n_out, dtype=dtype))

    def forward(self, x):
        return F.dense(x, self.weight, self.bias)


class Conv2D(Module):
    def __init__(self, cin, cout, rng, kernel=3, dtype=np.float32):
        fan_in = kernel * kernel * cin
        self.kernel = Parameter(
            _uniform(rng, np.sqrt(6.0 / fan_in), (kernel, kernel, cin, cout), dtype)
        )
        self.bias = Parameter(np.zeros(cout, dtype=dtype))

    def forward(self, x):
        return F.conv2d(x, self.kernel, self.bias)


class LSTM(Module):
    """Single LSTM layer returning the full hidden sequence.

    Gate order (input, forget, cell, output) with one bias vector; the
    forget-gate bias starts at 1.
    """

    def __init__(self, n_in, units, rng, dtype=np.float32):
        lim = 1.0 / np.sqrt(units)
        self.units = units
        self.kernel = Parameter(_uniform(rng, lim, (n_in, 4 * units), dtype))
        self.recurrent = Parameter(_uniform(rng, lim, (units, 4 * units), dtype))
        bias = np.zeros(4 * units, dtype=dtype)
        bias[units : 2 * units] = 1.0
        self.bias = Parameter(bias)

    def forward(self, x: Tensor) -> Tensor:
        """(B, T, F) -> (B, T, units), zero initial state."""
        u = self.units
        b, t = x.shape[0], x.shape[1]
        xw = add(matmul(x, self.kernel), self.bias)
        h = Tensor(np.zeros((b, u), dtype=x.dtype))
        c = Tensor(np.zeros((b, u), dtype=x.dtype))
        outputs = []
        for step in range(t):
            z = xw[:, step] + matmul(h, self.recurrent)
            i = sigmoid(z[:, :u])
            f = sigmoid(z[:, u : 2 * u])
            g = tanh(z[:, 2 * u : 3 * u])
            o = sigmoid(z[:, 3 * u :])
            c = f * c + i * g
            h = o * tanh(c)
            outputs.append(h)
        return stack(outputs, axis=1)


class GRU(Module):
    """GRU layer, reset gate applied after the recurrent matmul.

    Gate order (update, reset, candidate); separate input and recurrent
    biases. h_t = z * h_{t-1} + (1 - z) * candidate.
    """

    def __init__(self, n_in, units, rng, dtype=np.float32):
        lim = 1.0 / np.sqrt(units)
        self.units = units
        self.kernel = Parameter(_uniform(rng, lim, (n_in, 3 * units), dtype))
        self.recurrent = Parameter(_uniform(rng, lim, (units, 3 * units), dtype))
        self.input_bias = Parameter(np.zeros(3 * units, dtype=dtype))
        self.recurrent_bias = Parameter(np.zeros(3 * units, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        u = self.units
        b, t = x.shape[0], x.shape[1]
        xw = add(matmul(x, self.kernel), self.input_bias)
        h = Tensor(np.zeros((b, u), dtype=x.dtype))
        outputs = []
        for step in range(t):
            xs = xw[:, step]
            hu = add(matmul(h, self.recurrent), self.recurrent_bias)
            z = sigmoid(xs[:, :u] + hu[:, :u])
            r = sigmoid(xs[:, u : 2 * u] + hu[:, u : 2 * u])
            n = tanh(xs[:, 2 * u :] + r * hu[:, 2 * u :])
            h = z * h + (1.0 - z) * n
            outputs.append(h)
        return stack(outputs, axis=1)


class LayerNorm(Module):
    def __init__(self, d, dtype=np.float32):
        self.gain = Parameter(np.ones(d, dtype=dtype))
        self.shift = Parameter(np.zeros(d, dtype=dtype))

    def forward(self, x):
        return F.layer_norm(x, self.gain, self.shift)


class MultiHeadAttention(Module):
    """Self-attention with learned Q/K/V/output projections."""

    def __init__(self, d, heads, rng, dtype=np.float32):
        if d % heads:
            raise ValueError(f"model width {d} is not divisible by {heads} heads")
        self.d, self.heads = d, heads
        self.query = Dense(d, d, rng, dtype)
        self.key = Dense(d, d, rng, dtype)
        self.value = Dense(d, d, rng, dtype)
        self.out = Dense(d, d, rng, dtype)
        self.last_weights = None

    def _split(self, x, b, t):
        dh = self.d // self.heads
        return x.reshape(b, t, self.heads, dh).transpose(0, 2, 1, 3)

    def forward(self, x: Tensor) -> Tensor:
        """(B, T, d) -> (B, T, d)."""
        b, t, d = x.shape
        dh = d // self.heads
        q = self._split(self.query(x), b, t)
        k = self._split(self.key(x), b, t)
        v = self._split(self.value(x), b, t)
        scores = matmul(q, k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(dh))
        weights = softmax(scores, axis=-1)
        self.last_weights = weights.data
        ctx = matmul(weights, v).transpose(0, 2, 1, 3).reshape(b, t, d)
        return self.out(ctx)


class FeedForward(Module):
    def __init__(self, d, hidden, rng, dtype=np.float32):
        self.inner = Dense(d, hidden, rng, dtype)
        self.outer = Dense(hidden, d, rng, dtype)

    def forward(self, x):
        return self.outer(relu(self.inner(x)))


__all__ = [
    "Conv2D",
    "Dense",
    "FeedForward",
    "GRU",
    "LSTM",
    "LayerNorm",
    "Module",
    "MultiHeadAttention",
    "Parameter",
]
