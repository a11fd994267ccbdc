"""MLP layers and the adaptive-moment optimizer on top of :mod:`firesense.autodiff`."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ShapeMismatch

ACTIVATIONS = {
    "relu": ad.relu,
    "sigmoid": ad.sigmoid,
    "identity": lambda x: x,
}


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class Mlp:
    """Stack of affine layers; ``activations[i]`` follows layer ``i``."""

    def __init__(self, dims, activations=None, rng: np.random.Generator | None = None):
        dims = [int(d) for d in dims]
        if len(dims) < 2 or min(dims) <= 0:
            raise ShapeMismatch(f"bad layer dims {dims}")
        n_layers = len(dims) - 1
        if activations is None:
            activations = ["relu"] * (n_layers - 1) + ["identity"]
        if len(activations) != n_layers:
            raise ShapeMismatch("one activation per layer")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.dims = dims
        self.activations = list(activations)
        self.weights = [Tensor(glorot(rng, a, b), requires_grad=True) for a, b in zip(dims[:-1], dims[1:])]
        self.biases = [Tensor(np.zeros((1, b)), requires_grad=True) for b in dims[1:]]

    def parameters(self) -> list[Tensor]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def num_parameters(self) -> int:
        return int(np.sum([p.data.size for p in self.parameters()]))

    def __call__(self, x: Tensor) -> Tensor:
        return forward(self, x)

    def state(self) -> dict:
        return {
            "dims": self.dims,
            "activations": self.activations,
            "weights": [w.data.ravel().tolist() for w in self.weights],
            "biases": [b.data.ravel().tolist() for b in self.biases],
        }

    @classmethod
    def from_state(cls, state: dict) -> "Mlp":
        m = cls(state["dims"], state["activations"])
        for w, vals, (a, b) in zip(m.weights, state["weights"], zip(m.dims[:-1], m.dims[1:])):
            w.data = np.asarray(vals, dtype=np.float64).reshape(a, b)
        for bias, vals in zip(m.biases, state["biases"]):
            bias.data = np.asarray(vals, dtype=np.float64).reshape(1, -1)
        return m


def forward(mlp: Mlp, x: Tensor) -> Tensor:
    x = ad.as_tensor(x)
    if x.shape[1] != mlp.dims[0]:
        raise ShapeMismatch(f"input has {x.shape[1]} columns, layer expects {mlp.dims[0]}")
    for w, b, act in zip(mlp.weights, mlp.biases, mlp.activations):
        x = ad.linear(x, w, b, act)
    return x


@dataclass
class AdamState:
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    t: int = 0


class Adam:
    """Bias-corrected adaptive-moment gradient descent."""

    def __init__(self, params, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.state = AdamState([np.zeros_like(p.data) for p in self.params],
                               [np.zeros_like(p.data) for p in self.params], 0)

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        optimizer_step(self.params, grads, self.state, self.lr, self.betas, self.eps)


def optimizer_step(params, grads, state: AdamState, lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    b1, b2 = betas
    state.t += 1
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g.shape != p.data.shape:
            raise ShapeMismatch("gradient shape differs from parameter")
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return params


def parameter_hash(params) -> str:
    h = hashlib.sha256()
    for p in params:
        h.update(np.ascontiguousarray(p.data).tobytes())
    return h.hexdigest()
