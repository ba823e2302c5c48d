"""Small numpy MLPs with exact reverse-mode gradients, Adam, and policy/critic heads."""
from __future__ import annotations

import math
from pathlib import Path

import numpy as np

LOG_2PI = math.log(2.0 * math.pi)
EPS_V = 1e-6


def _orthogonal(rng: np.random.Generator, n_in: int, n_out: int, gain: float) -> np.ndarray:
    a = rng.standard_normal((max(n_in, n_out), min(n_in, n_out)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    w = q if n_in >= n_out else q.T
    return gain * w[:n_in, :n_out]


class Mlp:
    """Fully connected net, ReLU on hidden layers, linear output.

    Parameters are stored as [W0, b0, W1, b1, ...] with W of shape (in, out).
    forward() records the activations needed by the next backward().
    """

    def __init__(self, sizes, rng: np.random.Generator | None = None, out_gain: float = 1.0):
        self.sizes = [int(s) for s in sizes]
        if len(self.sizes) < 2 or min(self.sizes) < 1:
            raise ValueError("need at least input and output widths")
        self.params: list[np.ndarray] = []
        n_layers = len(self.sizes) - 1
        for i, (a, b) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            if rng is None:
                W = np.zeros((a, b))
            else:
                gain = out_gain if i == n_layers - 1 else math.sqrt(2.0)
                W = _orthogonal(rng, a, b, gain)
            self.params += [W, np.zeros(b)]
        self._cache = None

    @property
    def n_layers(self) -> int:
        return len(self.params) // 2

    def forward(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        h = np.atleast_2d(x)
        if h.shape[1] != self.sizes[0]:
            raise ValueError(f"input width {h.shape[1]} != {self.sizes[0]}")
        acts = [h]
        for i in range(self.n_layers):
            W, b = self.params[2 * i], self.params[2 * i + 1]
            z = h @ W + b
            h = np.maximum(z, 0.0) if i < self.n_layers - 1 else z
            acts.append(h)
        if not np.all(np.isfinite(h)):
            raise FloatingPointError("non-finite network output")
        self._cache = acts
        return h[0] if single else h

    def backward(self, grad_out) -> list[np.ndarray]:
        """Gradients of sum(grad_out * output) w.r.t. every parameter of the last forward."""
        if self._cache is None:
            raise RuntimeError("backward() called without a recorded forward pass")
        acts = self._cache
        g = np.atleast_2d(np.asarray(grad_out, dtype=float))
        if g.shape != acts[-1].shape:
            raise ValueError(f"gradient shape {g.shape} != output shape {acts[-1].shape}")
        grads: list[np.ndarray] = [None] * len(self.params)
        for i in range(self.n_layers - 1, -1, -1):
            h_in = acts[i]
            grads[2 * i] = h_in.T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            if i > 0:
                g = (g @ self.params[2 * i].T) * (acts[i] > 0.0)
        return grads

    def copy(self) -> "Mlp":
        other = Mlp.__new__(Mlp)
        other.sizes = list(self.sizes)
        other.params = [p.copy() for p in self.params]
        other._cache = None
        return other


# Gaussian policy head -------------------------------------------------------

class GaussianPolicyHead:
    """Diagonal Gaussian over increments with a state-independent learned log std."""

    def __init__(self, n: int, log_std_init: float = -2.0, bounds=(-5.0, 2.0)):
        self.bounds = (float(bounds[0]), float(bounds[1]))
        self.log_std = np.full(n, float(log_std_init))

    def effective_log_std(self) -> np.ndarray:
        return np.clip(self.log_std, *self.bounds)

    def inside_bounds(self) -> np.ndarray:
        lo, hi = self.bounds
        return (self.log_std > lo) & (self.log_std < hi)


def gaussian_log_prob(actions, mean, log_std) -> np.ndarray:
    a = np.atleast_2d(actions)
    m = np.atleast_2d(mean)
    z = (a - m) * np.exp(-log_std)
    return -0.5 * np.sum(z * z, axis=1) - np.sum(log_std) - 0.5 * a.shape[1] * LOG_2PI


def gaussian_log_prob_grads(actions, mean, log_std) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample d logp / d mean (B, n) and d logp / d log_std (B, n)."""
    a = np.atleast_2d(actions)
    m = np.atleast_2d(mean)
    inv_var = np.exp(-2.0 * log_std)
    diff = a - m
    return diff * inv_var, diff * diff * inv_var - 1.0


def gaussian_entropy(log_std) -> float:
    log_std = np.asarray(log_std, dtype=float)
    return float(np.sum(log_std) + 0.5 * log_std.size * (1.0 + LOG_2PI))


def policy_sample(mean, log_std, rng: np.random.Generator) -> tuple[np.ndarray, float]:
    mean = np.asarray(mean, dtype=float)
    log_std = np.asarray(log_std, dtype=float)
    if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(log_std))):
        raise FloatingPointError("non-finite policy parameters")
    a = mean + np.exp(log_std) * rng.standard_normal(mean.shape)
    return a, float(gaussian_log_prob(a, mean, log_std)[0])


# Positive critic head -------------------------------------------------------

def softplus(x):
    return np.logaddexp(0.0, x)


def sigmoid(x):
    x = np.asarray(x, dtype=float)
    return np.exp(-np.logaddexp(0.0, -x))


def positive_value(raw):
    """softplus(raw) + EPS_V, strictly positive for every finite input."""
    return softplus(raw) + EPS_V


def positive_value_grad(raw):
    return sigmoid(raw)


def inverse_positive_value(v):
    """raw such that positive_value(raw) == v (v > EPS_V)."""
    y = np.asarray(v, dtype=float) - EPS_V
    return y + np.log(-np.expm1(-y))


# Optimizer ------------------------------------------------------------------

class Adam:
    def __init__(self, params: list[np.ndarray], lr: float = 0.02, betas=(0.9, 0.999), eps: float = 1e-8):
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        """In-place bias-corrected Adam update."""
        if len(params) != len(grads) or len(params) != len(self.m):
            raise ValueError("params, grads and optimizer state must align")
        b1, b2 = self.betas
        self.t += 1
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            if p.shape != g.shape:
                raise ValueError(f"shape mismatch {p.shape} vs {g.shape}")
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def clip_grad_norm(grads: list[np.ndarray], max_norm: float) -> float:
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for g in grads:
            g *= scale
    return total


# Checkpoints ----------------------------------------------------------------

_MAGIC = "# ezport-checkpoint v1"


def save_arrays(path: str | Path, arrays: dict[str, np.ndarray]) -> None:
    """Text checkpoint: one `tensor <name> <ndim> <shape...>` header per array followed by
    its row-major values in float.hex form, so reloading is bit exact."""
    lines = [_MAGIC]
    for name in sorted(arrays):
        a = np.asarray(arrays[name], dtype=float)
        if " " in name:
            raise ValueError("tensor names must not contain spaces")
        lines.append(" ".join(["tensor", name, str(a.ndim)] + [str(s) for s in a.shape]))
        lines.append(" ".join(float(x).hex() for x in a.ravel()))
    Path(path).write_text("\n".join(lines) + "\n")


def load_arrays(path: str | Path) -> dict[str, np.ndarray]:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != _MAGIC:
        raise ValueError(f"{path}: not an ezport checkpoint")
    out = {}
    i = 1
    while i < len(lines):
        head = lines[i].split()
        if head[0] != "tensor":
            raise ValueError(f"{path}: malformed header at line {i + 1}")
        name, ndim = head[1], int(head[2])
        shape = tuple(int(s) for s in head[3:3 + ndim])
        body = lines[i + 1].split() if i + 1 < len(lines) else []
        vals = np.array([float.fromhex(x) for x in body], dtype=float)
        if vals.size != int(np.prod(shape)):
            raise ValueError(f"{path}: tensor {name} has {vals.size} values for shape {shape}")
        out[name] = vals.reshape(shape)
        i += 2
    return out
