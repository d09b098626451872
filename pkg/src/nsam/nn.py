"""Small fully connected networks with hand-written backprop, and Adam."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .logic import ContractError

CHECKPOINT_VERSION = 1

_ACTIVATIONS = {
    "relu": (lambda z: np.maximum(z, 0.0), lambda z, a: (z > 0).astype(z.dtype)),
    "tanh": (np.tanh, lambda z, a: 1.0 - a * a),
}


class Mlp:
    """Affine layers with a shared hidden activation and an identity output."""

    def __init__(self, layer_sizes: Sequence[int], activation: str = "relu",
                 rng: np.random.Generator | None = None, output_scale: float = 1.0):
        if len(layer_sizes) < 2 or min(layer_sizes) < 1:
            raise ContractError("need at least input and output sizes, all positive")
        if activation not in _ACTIVATIONS:
            raise ContractError(f"unknown activation {activation!r}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.layer_sizes = list(layer_sizes)
        self.activation = activation
        self.params: list[np.ndarray] = []
        for i, (fan_in, fan_out) in enumerate(zip(layer_sizes[:-1], layer_sizes[1:])):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            W = rng.uniform(-limit, limit, size=(fan_in, fan_out))
            if i == len(layer_sizes) - 2:
                W *= output_scale
            self.params += [W, np.zeros(fan_out)]

    @property
    def weights(self) -> list[np.ndarray]:
        return self.params[0::2]

    @property
    def biases(self) -> list[np.ndarray]:
        return self.params[1::2]

    def forward(self, x: np.ndarray, keep: bool = False):
        """Outputs for a batch ``x`` of shape (B, in) or a single vector.

        With ``keep`` also returns the activations needed by ``backward``.
        """
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        if single:
            x = x[None]
        if x.shape[1] != self.layer_sizes[0]:
            raise ContractError(f"input has width {x.shape[1]}, network expects {self.layer_sizes[0]}")
        act, _ = _ACTIVATIONS[self.activation]
        h = x
        cache = [(x, None)]
        n = len(self.weights)
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ W + b
            h = z if i == n - 1 else act(z)
            cache.append((h, z))
        out = h[0] if single else h
        return (out, cache) if keep else out

    def backward(self, cache, d_out: np.ndarray) -> list[np.ndarray]:
        """Gradients of ``sum(d_out * output)`` w.r.t. every parameter, in ``params`` order."""
        _, dact = _ACTIVATIONS[self.activation]
        d = np.asarray(d_out, dtype=np.float64)
        if d.ndim == 1:
            d = d[None]
        grads: list[np.ndarray] = [None] * len(self.params)  # type: ignore[list-item]
        n = len(self.weights)
        for i in range(n - 1, -1, -1):
            h_prev = cache[i][0]
            h, z = cache[i + 1]
            if i != n - 1:
                d = d * dact(z, h)
            grads[2 * i] = h_prev.T @ d
            grads[2 * i + 1] = d.sum(axis=0)
            if i:
                d = d @ self.weights[i].T
        return grads

    def copy(self) -> Mlp:
        other = Mlp.__new__(Mlp)
        other.layer_sizes = list(self.layer_sizes)
        other.activation = self.activation
        other.params = [p.copy() for p in self.params]
        return other


@dataclass
class AdamState:
    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(cls, params: Sequence[np.ndarray], lr: float, **kw) -> AdamState:
        return cls(lr=lr, m=[np.zeros_like(p) for p in params],
                   v=[np.zeros_like(p) for p in params], **kw)

    def apply(self, params: list[np.ndarray], grads: Sequence[np.ndarray]) -> None:
        """One in-place Adam update."""
        self.step += 1
        c1 = 1.0 - self.beta1 ** self.step
        c2 = 1.0 - self.beta2 ** self.step
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def all_finite(arrays: Sequence[np.ndarray]) -> bool:
    return all(np.all(np.isfinite(a)) for a in arrays)


# -- checkpoints ----------------------------------------------------------------


def pack(prefix: str, net: Mlp, opt: AdamState | None = None) -> dict[str, np.ndarray]:
    out = {f"{prefix}.layer_sizes": np.array(net.layer_sizes),
           f"{prefix}.activation": np.array(net.activation)}
    for i, p in enumerate(net.params):
        out[f"{prefix}.param{i}"] = p
    if opt is not None:
        out[f"{prefix}.adam"] = np.array([opt.lr, opt.beta1, opt.beta2, opt.eps, opt.step])
        for i, (m, v) in enumerate(zip(opt.m, opt.v)):
            out[f"{prefix}.m{i}"] = m
            out[f"{prefix}.v{i}"] = v
    return out


def unpack(prefix: str, data) -> tuple[Mlp, AdamState | None]:
    net = Mlp.__new__(Mlp)
    net.layer_sizes = [int(x) for x in data[f"{prefix}.layer_sizes"]]
    net.activation = str(data[f"{prefix}.activation"])
    n = 2 * (len(net.layer_sizes) - 1)
    net.params = [np.array(data[f"{prefix}.param{i}"]) for i in range(n)]
    opt = None
    if f"{prefix}.adam" in data:
        lr, b1, b2, eps, step = data[f"{prefix}.adam"]
        opt = AdamState(lr=float(lr), beta1=float(b1), beta2=float(b2), eps=float(eps), step=int(step),
                        m=[np.array(data[f"{prefix}.m{i}"]) for i in range(n)],
                        v=[np.array(data[f"{prefix}.v{i}"]) for i in range(n)])
    return net, opt


def save_checkpoint(path: str | Path, nets: dict[str, tuple[Mlp, AdamState | None]],
                    extra: dict[str, np.ndarray] | None = None) -> None:
    payload: dict[str, np.ndarray] = {"version": np.array(CHECKPOINT_VERSION),
                                      "names": np.array(sorted(nets))}
    for name, (net, opt) in nets.items():
        payload.update(pack(name, net, opt))
    for k, v in (extra or {}).items():
        payload[f"extra.{k}"] = np.asarray(v)
    with open(path, "wb") as fh:
        np.savez(fh, **payload)


def load_checkpoint(path: str | Path) -> tuple[dict[str, tuple[Mlp, AdamState | None]], dict]:
    with np.load(path, allow_pickle=False) as data:
        version = int(data["version"])
        if version != CHECKPOINT_VERSION:
            raise ContractError(f"checkpoint version {version} is not supported")
        nets = {str(name): unpack(str(name), data) for name in data["names"]}
        extra = {k[len("extra."):]: np.array(data[k]) for k in data.files if k.startswith("extra.")}
    return nets, extra
