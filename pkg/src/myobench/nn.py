"""Minimal dense networks with hand-rolled backprop, shared by actor and critics.

Kept deliberately small: fully-connected layers, ReLU hiddens, a sigmoid or
linear head, and an Adam optimizer with optional L2 weight decay.  All
randomness flows through an explicit numpy Generator so runs are exactly
reproducible.
"""
from __future__ import annotations

import hashlib

import numpy as np


def he_uniform_init(rng: np.random.Generator, fan_in: int, fan_out: int, dtype) -> np.ndarray:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype)


class Mlp:
    """Fully-connected net: ReLU hidden layers, sigmoid or linear output."""

    def __init__(
        self,
        layer_sizes: tuple[int, ...],
        output: str = "linear",
        rng: np.random.Generator | None = None,
        dtype=np.float64,
    ):
        if output not in ("linear", "sigmoid"):
            raise ValueError(f"unknown output activation: {output}")
        if len(layer_sizes) < 2:
            raise ValueError("need at least input and output sizes")
        if rng is None:
            rng = np.random.default_rng(0)
        self.layer_sizes = tuple(int(s) for s in layer_sizes)
        self.output = output
        self.dtype = np.dtype(dtype)
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
            self.weights.append(he_uniform_init(rng, fan_in, fan_out, self.dtype))
            self.biases.append(np.zeros(fan_out, dtype=self.dtype))

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def parameters(self) -> list[np.ndarray]:
        """Flat list [W0, b0, W1, b1, ...]; arrays are the live buffers."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def forward(self, x: np.ndarray) -> np.ndarray:
        y, _ = self.forward_cached(x, need_cache=False)
        return y

    def forward_cached(self, x: np.ndarray, need_cache: bool = True):
        """Returns (output, cache); cache holds the activations backprop needs."""
        a = np.asarray(x, dtype=self.dtype)
        squeeze = a.ndim == 1
        if squeeze:
            a = a[None, :]
        activations = [a] if need_cache else None
        for i in range(self.n_layers):
            z = a @ self.weights[i]
            z += self.biases[i]
            if i < self.n_layers - 1:
                np.maximum(z, 0.0, out=z)
                a = z
            elif self.output == "sigmoid":
                a = _sigmoid(z)
            else:
                a = z
            if need_cache:
                activations.append(a)
        out = a[0] if squeeze else a
        return out, activations

    def backward(self, cache, grad_out: np.ndarray, need_input_grad: bool = False):
        """Backprop of dLoss/d(output) through the net.

        ``grad_out`` is the gradient w.r.t. the post-activation output.
        Returns (grads, grad_input) with grads shaped like parameters().
        """
        grad = np.asarray(grad_out, dtype=self.dtype)
        if grad.ndim == 1:
            grad = grad[None, :]
        w_grads: list[np.ndarray | None] = [None] * self.n_layers
        b_grads: list[np.ndarray | None] = [None] * self.n_layers
        for i in range(self.n_layers - 1, -1, -1):
            a_out = cache[i + 1]
            if i == self.n_layers - 1:
                if self.output == "sigmoid":
                    grad = grad * a_out * (1.0 - a_out)
                # linear head: grad unchanged
            else:
                grad = grad * (a_out > 0.0)
            a_in = cache[i]
            w_grads[i] = a_in.T @ grad
            b_grads[i] = grad.sum(axis=0)
            if i > 0 or need_input_grad:
                grad = grad @ self.weights[i].T
        grads = []
        for wg, bg in zip(w_grads, b_grads):
            grads.extend((wg, bg))
        return grads, (grad if need_input_grad else None)

    def copy(self) -> "Mlp":
        clone = Mlp.__new__(Mlp)
        clone.layer_sizes = self.layer_sizes
        clone.output = self.output
        clone.dtype = self.dtype
        clone.weights = [w.copy() for w in self.weights]
        clone.biases = [b.copy() for b in self.biases]
        return clone

    def load_parameters(self, params: list[np.ndarray]) -> None:
        own = self.parameters()
        if len(own) != len(params):
            raise ValueError("parameter count mismatch")
        for dst, src in zip(own, params):
            dst[...] = src

    def state_dict(self) -> dict:
        state = {
            "layer_sizes": list(self.layer_sizes),
            "output": self.output,
            "dtype": self.dtype.name,
        }
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            state[f"w{i}"] = w
            state[f"b{i}"] = b
        return state

    @classmethod
    def from_state_dict(cls, state: dict) -> "Mlp":
        net = cls.__new__(cls)
        net.layer_sizes = tuple(int(s) for s in state["layer_sizes"])
        net.output = str(state["output"])
        net.dtype = np.dtype(state["dtype"])
        net.weights = []
        net.biases = []
        for i in range(len(net.layer_sizes) - 1):
            net.weights.append(np.asarray(state[f"w{i}"], dtype=net.dtype))
            net.biases.append(np.asarray(state[f"b{i}"], dtype=net.dtype))
        return net

    def params_hash(self) -> str:
        h = hashlib.sha256()
        h.update(repr((self.layer_sizes, self.output, self.dtype.name)).encode())
        for p in self.parameters():
            h.update(np.ascontiguousarray(p, dtype=np.float64).tobytes())
        return h.hexdigest()


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class Adam:
    """Adam with classic (gradient-added) L2 weight decay."""

    def __init__(
        self,
        params: list[np.ndarray],
        lr: float,
        weight_decay: float = 0.0,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = [np.zeros_like(p) for p in params]
        self._v = [np.zeros_like(p) for p in params]

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1**self.t
        bias2 = 1.0 - b2**self.t
        for p, g, m, v in zip(params, grads, self._m, self._v):
            if self.weight_decay:
                g = g + self.weight_decay * p
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * np.square(g)
            p -= self.lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)


def polyak_update(target_params: list[np.ndarray], online_params: list[np.ndarray], tau: float) -> None:
    """target <- tau * online + (1 - tau) * target, in place."""
    for tp, op in zip(target_params, online_params):
        tp *= 1.0 - tau
        tp += tau * op
