"""Minimal feed-forward networks with hand-written backprop.

The networks here are plain numpy: dense layers with tanh hidden activations
and a linear output head.  `Mlp.forward` keeps the per-layer activations so
`Mlp.backward` can push an output-side gradient back to every weight with the
textbook chain rule.  Training uses Adam with global-norm gradient clipping.
Parameters travel as a flat list of arrays (W0, b0, W1, b1, ...), which keeps
the optimizer and the npz checkpoint format trivial.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


def orthogonal(rng: np.random.Generator, rows: int, cols: int,
               gain: float = 1.0) -> np.ndarray:
    """Orthogonal weight matrix via QR of a Gaussian draw."""
    flat = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(flat)
    q *= np.sign(np.diag(r))  # deterministic orientation
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]


class Mlp:
    """Dense tanh network: in -> hidden ... hidden -> linear out."""

    def __init__(self, layer_sizes: list[int], rng: np.random.Generator,
                 output_gain: float = 0.01):
        if len(layer_sizes) < 2:
            raise ValueError("need at least input and output sizes")
        self.layer_sizes = list(layer_sizes)
        self.params: list[np.ndarray] = []
        last = len(layer_sizes) - 2
        for i, (fan_in, fan_out) in enumerate(zip(layer_sizes, layer_sizes[1:])):
            gain = output_gain if i == last else np.sqrt(2.0)
            self.params.append(orthogonal(rng, fan_in, fan_out, gain))
            self.params.append(np.zeros(fan_out))

    @property
    def num_layers(self) -> int:
        return len(self.params) // 2

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        """Return (output, cache); x is (batch, in) or (in,).

        The cache holds the input plus every post-activation, in order, and
        is what `backward` consumes.
        """
        squeeze = x.ndim == 1
        h = np.atleast_2d(x)
        cache = [h]
        for i in range(self.num_layers):
            w, b = self.params[2 * i], self.params[2 * i + 1]
            z = h @ w + b
            h = z if i == self.num_layers - 1 else np.tanh(z)
            cache.append(h)
        return (h[0] if squeeze else h), cache

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, cache: list[np.ndarray],
                 grad_output: np.ndarray) -> list[np.ndarray]:
        """Gradients of sum(output * grad_output) w.r.t. every parameter.

        `grad_output` must match the batched output shape from `forward`.
        """
        delta = np.atleast_2d(grad_output)
        grads: list[np.ndarray] = [np.empty(0)] * len(self.params)
        for i in reversed(range(self.num_layers)):
            h_in, h_out = cache[i], cache[i + 1]
            if i != self.num_layers - 1:
                delta = delta * (1.0 - h_out ** 2)  # tanh'
            grads[2 * i] = h_in.T @ delta
            grads[2 * i + 1] = delta.sum(axis=0)
            if i > 0:
                delta = delta @ self.params[2 * i].T
        return grads

    def copy_params(self) -> list[np.ndarray]:
        return [p.copy() for p in self.params]

    def set_params(self, params: list[np.ndarray]) -> None:
        if len(params) != len(self.params):
            raise ValueError("parameter count mismatch")
        for mine, new in zip(self.params, params):
            if mine.shape != new.shape:
                raise ValueError(f"shape mismatch: {mine.shape} vs {new.shape}")
        self.params = [p.astype(np.float64, copy=True) for p in params]


def global_norm(arrays: list[np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(a ** 2)) for a in arrays)))


def clip_by_global_norm(grads: list[np.ndarray],
                        max_norm: float) -> list[np.ndarray]:
    """Rescale the whole gradient list if its joint L2 norm exceeds max_norm."""
    norm = global_norm(grads)
    if norm <= max_norm or norm == 0.0:
        return grads
    scale = max_norm / norm
    return [g * scale for g in grads]


@dataclass
class Adam:
    """Adam over a flat parameter list, with optional global-norm clipping."""

    learning_rate: float = 3e-5
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    max_grad_norm: float | None = 0.5
    step_count: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def update(self, params: list[np.ndarray],
               grads: list[np.ndarray]) -> list[np.ndarray]:
        """Return updated parameters; moment buffers persist on the optimizer."""
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        if any(not np.all(np.isfinite(g)) for g in grads):
            raise FloatingPointError("non-finite gradient in optimizer update")
        if self.max_grad_norm is not None:
            grads = clip_by_global_norm(grads, self.max_grad_norm)
        self.step_count += 1
        bc1 = 1.0 - self.beta1 ** self.step_count
        bc2 = 1.0 - self.beta2 ** self.step_count
        out = []
        for i, (p, g) in enumerate(zip(params, grads)):
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g ** 2
            m_hat = self.m[i] / bc1
            v_hat = self.v[i] / bc2
            out.append(p - self.learning_rate * m_hat
                       / (np.sqrt(v_hat) + self.epsilon))
        return out


def save_checkpoint(path: str | Path, policy: Mlp, value: Mlp,
                    metadata: dict[str, float] | None = None) -> None:
    """Write both networks (and optional scalar metadata) to one npz file."""
    arrays: dict[str, np.ndarray] = {
        "policy_sizes": np.asarray(policy.layer_sizes, dtype=np.int64),
        "value_sizes": np.asarray(value.layer_sizes, dtype=np.int64),
    }
    for i, p in enumerate(policy.params):
        arrays[f"policy_{i}"] = p
    for i, p in enumerate(value.params):
        arrays[f"value_{i}"] = p
    for key, val in (metadata or {}).items():
        arrays[f"meta_{key}"] = np.asarray(float(val))
    np.savez(path, **arrays)


def load_checkpoint(path: str | Path) -> tuple[Mlp, Mlp, dict[str, float]]:
    """Rebuild (policy, value, metadata) bit-exactly from `save_checkpoint`."""
    with np.load(path) as data:
        rng = np.random.default_rng(0)  # params are overwritten below
        policy = Mlp([int(s) for s in data["policy_sizes"]], rng)
        value = Mlp([int(s) for s in data["value_sizes"]], rng)
        policy.set_params([data[f"policy_{i}"]
                           for i in range(len(policy.params))])
        value.set_params([data[f"value_{i}"]
                          for i in range(len(value.params))])
        metadata = {key[len("meta_"):]: float(data[key])
                    for key in data.files if key.startswith("meta_")}
    return policy, value, metadata
