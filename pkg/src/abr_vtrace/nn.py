"""Small fully-connected networks with hand-written backpropagation.

Hidden layers use ReLU; the output layer is linear.  The actor puts a
softmax on top of the output (logits), the critic reads the single output
unit as the state value.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

CHECKPOINT_HEADER = "abr-vtrace-ckpt v1"


@dataclass
class ParamSet:
    """Weights ``W`` of shape (fan_in, fan_out) and biases per layer."""

    layers: list[tuple[np.ndarray, np.ndarray]]

    def __post_init__(self):
        for i, (W, b) in enumerate(self.layers):
            if W.ndim != 2 or b.shape != (W.shape[1],):
                raise ValueError(f"layer {i}: weight {W.shape} incompatible with bias {b.shape}")
            if i and W.shape[0] != self.layers[i - 1][0].shape[1]:
                raise ValueError(f"layer {i}: fan_in {W.shape[0]} != previous fan_out")

    @property
    def layer_sizes(self) -> list[int]:
        return [self.layers[0][0].shape[0]] + [W.shape[1] for W, _ in self.layers]

    @property
    def input_dim(self) -> int:
        return self.layers[0][0].shape[0]

    @property
    def output_dim(self) -> int:
        return self.layers[-1][0].shape[1]

    def arrays(self) -> Iterator[np.ndarray]:
        for W, b in self.layers:
            yield W
            yield b

    def copy(self) -> "ParamSet":
        return ParamSet([(W.copy(), b.copy()) for W, b in self.layers])

    def zeros_like(self) -> "ParamSet":
        return ParamSet([(np.zeros_like(W), np.zeros_like(b)) for W, b in self.layers])

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())

    def same_shape(self, other: "ParamSet") -> bool:
        return len(self.layers) == len(other.layers) and all(
            a.shape == b.shape for a, b in zip(self.arrays(), other.arrays())
        )

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def with_flat(self, values: np.ndarray) -> "ParamSet":
        values = np.asarray(values, dtype=float)
        out, k = [], 0
        for W, b in self.layers:
            W2 = values[k:k + W.size].reshape(W.shape)
            k += W.size
            b2 = values[k:k + b.size].copy()
            k += b.size
            out.append((W2.copy(), b2))
        if k != values.size:
            raise ValueError(f"expected {k} values, got {values.size}")
        return ParamSet(out)

    def bitwise_equal(self, other: "ParamSet") -> bool:
        return self.same_shape(other) and all(
            a.tobytes() == b.tobytes() for a, b in zip(self.arrays(), other.arrays())
        )

    def scaled(self, factor: float) -> "ParamSet":
        return ParamSet([(W * factor, b * factor) for W, b in self.layers])

    def __add__(self, other: "ParamSet") -> "ParamSet":
        return ParamSet([(W1 + W2, b1 + b2) for (W1, b1), (W2, b2) in zip(self.layers, other.layers)])


# Gradients share the container; the alias documents intent.
Gradients = ParamSet


def init_params(layer_sizes: Sequence[int], rng: np.random.Generator | int = 0) -> ParamSet:
    """Glorot-uniform weights, zero biases."""
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(int(rng))
    layers = []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        r = np.sqrt(6.0 / (fan_in + fan_out))
        layers.append((rng.uniform(-r, r, size=(fan_in, fan_out)), np.zeros(fan_out)))
    return ParamSet(layers)


def zero_params(layer_sizes: Sequence[int]) -> ParamSet:
    return ParamSet([(np.zeros((a, b)), np.zeros(b)) for a, b in zip(layer_sizes[:-1], layer_sizes[1:])])


def _as_batch(params: ParamSet, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != params.input_dim:
        raise ValueError(f"input of shape {x.shape} does not match network input {params.input_dim}")
    return x


def forward(params: ParamSet, x) -> tuple[np.ndarray, list[np.ndarray]]:
    """Raw network output for a batch, plus the per-layer inputs for ``backward``."""
    h = _as_batch(params, x)
    cache = []
    last = len(params.layers) - 1
    for i, (W, b) in enumerate(params.layers):
        cache.append(h)
        h = h @ W + b
        if i < last:
            h = np.maximum(h, 0.0)
    return h, cache


def backward(params: ParamSet, cache: list[np.ndarray], upstream: np.ndarray) -> Gradients:
    """Gradient of ``sum(upstream * output)`` with respect to every parameter."""
    delta = np.asarray(upstream, dtype=float)
    if delta.ndim == 1:
        delta = delta[None, :]
    if delta.shape != (cache[0].shape[0], params.output_dim):
        raise ValueError(f"upstream gradient shape {delta.shape} does not match output")
    grads = [None] * len(params.layers)
    for i in range(len(params.layers) - 1, -1, -1):
        W, _ = params.layers[i]
        h_in = cache[i]
        grads[i] = (h_in.T @ delta, delta.sum(axis=0))
        if i:
            # cache[i] is the post-ReLU activation of layer i-1.
            delta = (delta @ W.T) * (h_in > 0)
    return ParamSet(grads)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def policy_forward(theta: ParamSet, x) -> np.ndarray:
    """Action probabilities; 1-D for a single state, 2-D for a batch."""
    logits, _ = forward(theta, x)
    probs = softmax(logits)
    return probs[0] if np.ndim(x) == 1 else probs


def critic_forward(w: ParamSet, x):
    """State value; float for a single state, 1-D array for a batch."""
    if w.output_dim != 1:
        raise ValueError("critic network must have a single output unit")
    out, _ = forward(w, x)
    return float(out[0, 0]) if np.ndim(x) == 1 else out[:, 0]


def apply_update(params: ParamSet, grads: Gradients, rate: float) -> ParamSet:
    """Return ``params + rate * grads``.

    Positive ``rate`` ascends the objective the gradients came from; pass a
    negative rate to descend a loss.
    """
    if not params.same_shape(grads):
        raise ValueError("gradient shapes do not match parameters")
    if not grads.is_finite():
        raise FloatingPointError("non-finite gradient; update rejected")
    return ParamSet([(W + rate * gW, b + rate * gb) for (W, b), (gW, gb) in zip(params.layers, grads.layers)])


class SGD:
    name = "sgd"

    def step(self, params: ParamSet, grads: Gradients, rate: float) -> ParamSet:
        return apply_update(params, grads, rate)


class RMSProp:
    """RMSProp on the update direction; ``rate`` keeps the ascent sign convention."""

    name = "rmsprop"

    def __init__(self, decay: float = 0.99, eps: float = 1e-6):
        self.decay = decay
        self.eps = eps
        self._sq: list[np.ndarray] | None = None

    def step(self, params: ParamSet, grads: Gradients, rate: float) -> ParamSet:
        if not grads.is_finite():
            raise FloatingPointError("non-finite gradient; update rejected")
        gs = list(grads.arrays())
        if self._sq is None:
            self._sq = [np.zeros_like(g) for g in gs]
        scaled = []
        for sq, g in zip(self._sq, gs):
            sq *= self.decay
            sq += (1.0 - self.decay) * g * g
            scaled.append(g / (np.sqrt(sq) + self.eps))
        return apply_update(params, params.with_flat(np.concatenate([s.ravel() for s in scaled])), rate)


def make_optimizer(name: str):
    name = name.lower()
    if name == "sgd":
        return SGD()
    if name == "rmsprop":
        return RMSProp()
    raise ValueError(f"unknown optimizer {name!r}")


def _format_values(a: np.ndarray) -> str:
    return " ".join(format(float(v), ".17g") for v in a.ravel())


def dump_checkpoint(nets: dict[str, ParamSet], meta: dict[str, str] | None = None) -> str:
    """Serialise named networks to the versioned text format."""
    lines = [CHECKPOINT_HEADER]
    for key, value in (meta or {}).items():
        lines.append(f"meta {key} {value}")
    for name, params in nets.items():
        lines.append(f"net {name} " + " ".join(str(n) for n in params.layer_sizes))
        for a in params.arrays():
            lines.append(_format_values(a))
    return "\n".join(lines) + "\n"


def parse_checkpoint(text: str) -> tuple[dict[str, ParamSet], dict[str, str]]:
    lines = text.splitlines()
    if not lines or lines[0].strip() != CHECKPOINT_HEADER:
        raise ValueError(f"not a checkpoint (expected header {CHECKPOINT_HEADER!r})")
    nets, meta = {}, {}
    i = 1
    while i < len(lines):
        parts = lines[i].split()
        i += 1
        if not parts:
            continue
        if parts[0] == "meta":
            meta[parts[1]] = " ".join(parts[2:])
        elif parts[0] == "net":
            name, sizes = parts[1], [int(s) for s in parts[2:]]
            layers = []
            for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
                W = np.array(lines[i].split(), dtype=float).reshape(fan_in, fan_out)
                b = np.array(lines[i + 1].split(), dtype=float).reshape(fan_out)
                i += 2
                layers.append((W, b))
            nets[name] = ParamSet(layers)
        else:
            raise ValueError(f"checkpoint line {i}: unexpected record {parts[0]!r}")
    return nets, meta


def save_checkpoint(path, nets: dict[str, ParamSet], meta: dict[str, str] | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dump_checkpoint(nets, meta))
    return path


def load_checkpoint(path) -> tuple[dict[str, ParamSet], dict[str, str]]:
    return parse_checkpoint(Path(path).read_text())
