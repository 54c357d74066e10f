"""Two-hidden-layer tanh MLPs with hand-derived gradients and four output heads.

Batches are row-major: inputs have shape (B, in_dim). ``Mlp.forward`` returns
the linear pre-head output plus a cache; ``Mlp.backward`` maps an upstream
gradient on that output back to every parameter. Head-specific log-densities
and their derivatives live in the free functions below so losses can be
assembled by the trainer.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import digamma, gammaln

HEADS = ("gaussian", "dirichlet", "value", "discriminator")
CHECKPOINT_VERSION = 1
LOG_2PI = math.log(2.0 * math.pi)


def softplus(x):
    return np.logaddexp(0.0, x)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


class Mlp:
    def __init__(self, in_dim: int, out_dim: int, head: str, hidden=(64, 64),
                 rng: np.random.Generator | None = None, init_log_std: float = math.log(0.5),
                 out_gain: float = 0.01):
        if head not in HEADS:
            raise ValueError(f"unknown head {head!r}")
        self.in_dim, self.out_dim, self.head = in_dim, out_dim, head
        self.hidden = tuple(hidden)
        self.params: dict[str, np.ndarray] = {}
        if rng is None:
            rng = np.random.default_rng(0)
        sizes = (in_dim, *self.hidden, out_dim)
        for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            last = i == len(sizes) - 2
            gain = out_gain if last else 1.0
            self.params[f"W{i}"] = rng.normal(0.0, gain / math.sqrt(a), size=(a, b))
            self.params[f"b{i}"] = np.zeros(b)
        if head == "gaussian":
            self.params["log_std"] = np.full(out_dim, init_log_std)

    @property
    def num_layers(self) -> int:
        return len(self.hidden) + 1

    def copy(self) -> Mlp:
        other = object.__new__(Mlp)
        other.in_dim, other.out_dim, other.head, other.hidden = (self.in_dim, self.out_dim,
                                                                 self.head, self.hidden)
        other.params = {k: v.copy() for k, v in self.params.items()}
        return other

    def forward(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[None, :]
        if x.shape[1] != self.in_dim:
            raise ValueError(f"expected input dim {self.in_dim}, got {x.shape[1]}")
        acts = [x]
        h = x
        for i in range(self.num_layers):
            z = h @ self.params[f"W{i}"] + self.params[f"b{i}"]
            h = np.tanh(z) if i < self.num_layers - 1 else z
            acts.append(h)
        return h, acts

    def backward(self, acts, d_out) -> dict[str, np.ndarray]:
        grads = {}
        g = np.asarray(d_out, dtype=float)
        for i in reversed(range(self.num_layers)):
            h_in = acts[i]
            grads[f"W{i}"] = h_in.T @ g
            grads[f"b{i}"] = g.sum(axis=0)
            if i:
                g = (g @ self.params[f"W{i}"].T) * (1.0 - acts[i] ** 2)
        if "log_std" in self.params:
            grads["log_std"] = np.zeros_like(self.params["log_std"])
        return grads

    def __call__(self, x):
        """Head output: mean, concentrations, value or discriminator probability."""
        out, _ = self.forward(x)
        if self.head == "gaussian":
            return out
        if self.head == "dirichlet":
            return dirichlet_concentration(out)
        if self.head == "value":
            return out[:, 0]
        return sigmoid(out[:, 0])

    def save(self, path) -> None:
        meta = {"version": CHECKPOINT_VERSION, "head": self.head, "in_dim": self.in_dim,
                "out_dim": self.out_dim, "hidden": list(self.hidden)}
        np.savez(path, __meta__=np.array(json.dumps(meta)), **self.params)

    @classmethod
    def load(cls, path) -> Mlp:
        with np.load(path) as data:
            meta = json.loads(str(data["__meta__"]))
            if meta["version"] != CHECKPOINT_VERSION:
                raise ValueError(f"unsupported checkpoint version {meta['version']}")
            net = object.__new__(cls)
            net.in_dim, net.out_dim, net.head = meta["in_dim"], meta["out_dim"], meta["head"]
            net.hidden = tuple(meta["hidden"])
            net.params = {k: data[k].copy() for k in data.files if k != "__meta__"}
        return net


# -- Gaussian head ---------------------------------------------------------------

def gaussian_log_prob(mean, log_std, x):
    z = (x - mean) * np.exp(-log_std)
    return np.sum(-0.5 * z * z - log_std - 0.5 * LOG_2PI, axis=-1)


def gaussian_log_prob_grads(mean, log_std, x):
    """d log p / d mean (per sample) and d log p / d log_std (per sample)."""
    inv_var = np.exp(-2.0 * log_std)
    diff = x - mean
    return diff * inv_var, diff * diff * inv_var - 1.0


def gaussian_sample(mean, log_std, rng: np.random.Generator):
    mean = np.asarray(mean, dtype=float)
    return mean + np.exp(log_std) * rng.standard_normal(mean.shape)


# -- Dirichlet head --------------------------------------------------------------

def dirichlet_concentration(logits):
    # +1 floor keeps the density bounded at the simplex boundary
    return softplus(logits) + 1.0


def dirichlet_log_prob(conc, x):
    x = np.asarray(x, dtype=float)
    if np.any(np.abs(x.sum(axis=-1) - 1.0) > 1e-9) or np.any(x < 0):
        raise ValueError("point is not on the simplex")
    logx = np.log(np.maximum(x, 1e-300))
    return (gammaln(conc.sum(axis=-1)) - gammaln(conc).sum(axis=-1)
            + np.sum((conc - 1.0) * logx, axis=-1))


def dirichlet_log_prob_grad(conc, x):
    """d log p / d concentration."""
    logx = np.log(np.maximum(x, 1e-300))
    return digamma(conc.sum(axis=-1, keepdims=True)) - digamma(conc) + logx


def dirichlet_sample(conc, rng: np.random.Generator):
    g = rng.standard_gamma(conc)
    g = np.maximum(g, np.finfo(float).tiny)
    return g / g.sum(axis=-1, keepdims=True)


def dirichlet_mean(conc):
    return conc / conc.sum(axis=-1, keepdims=True)


# -- discriminator head ----------------------------------------------------------

def log_sigmoid(z):
    return -softplus(-z)


# -- optimiser -------------------------------------------------------------------

@dataclass
class Adam:
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def update(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        """In-place descent step on ``params``."""
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for k, g in grads.items():
            if k not in self.m:
                self.m[k] = np.zeros_like(g)
                self.v[k] = np.zeros_like(g)
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            params[k] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def adam_update(params, grads, state: Adam, lr: float | None = None):
    if lr is not None:
        state.lr = lr
    state.update(params, grads)
    return params
