"""Deterministic multilayer-perceptron core.

Everything is float64 numpy. Weights are stored ``(fan_in, fan_out)`` so a
layer computes ``x @ W + b`` on a row-major batch.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import NumericalError, ShapeError

PROB_CLAMP = 1e-12

OUTPUT_ACTIVATIONS = ("identity", "sigmoid")


# --------------------------------------------------------------------------
# randomness
# --------------------------------------------------------------------------


def make_rng(seed: int) -> np.random.Generator:
    """PCG64 generator seeded from a SeedSequence; same seed, same stream."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))


def split_rng(rng: np.random.Generator, n: int = 1) -> List[np.random.Generator]:
    """Independent child streams derived deterministically from ``rng``'s seed sequence."""
    return list(rng.spawn(n))


# --------------------------------------------------------------------------
# parameters
# --------------------------------------------------------------------------


@dataclass
class Mlp:
    """Affine layers with ReLU between them and a chosen output activation."""

    weights: List[np.ndarray]
    biases: List[np.ndarray]
    output_activation: str = "identity"

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ShapeError("an MLP needs at least one layer and one bias per weight")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise ValueError(f"unknown output activation {self.output_activation!r}")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ShapeError(f"layer {i}: weight {w.shape} incompatible with bias {b.shape}")
            if i and self.weights[i - 1].shape[1] != w.shape[0]:
                raise ShapeError(
                    f"layer {i}: fan_in {w.shape[0]} != previous fan_out {self.weights[i - 1].shape[1]}"
                )

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[1]

    @property
    def widths(self) -> List[int]:
        return [self.in_dim] + [w.shape[1] for w in self.weights]

    def copy(self) -> "Mlp":
        return Mlp([w.copy() for w in self.weights], [b.copy() for b in self.biases], self.output_activation)

    def zeros_like(self) -> "Mlp":
        return Mlp(
            [np.zeros_like(w) for w in self.weights],
            [np.zeros_like(b) for b in self.biases],
            self.output_activation,
        )

    def arrays(self) -> List[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out


def glorot_mlp(widths: Sequence[int], rng: np.random.Generator, output_activation: str = "identity") -> Mlp:
    """Glorot-uniform weights, zero biases."""
    if len(widths) < 2 or any(int(w) <= 0 for w in widths):
        raise ShapeError(f"widths must be >= 2 positive entries, got {list(widths)}")
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return Mlp(weights, biases, output_activation)


# --------------------------------------------------------------------------
# forward / backward
# --------------------------------------------------------------------------


@dataclass
class Trace:
    """Per-layer record kept by :func:`mlp_forward` for the backward pass."""

    inputs: List[np.ndarray]  # input to each layer
    pre: List[np.ndarray]  # pre-activation of each layer
    output: np.ndarray
    shapes: List[Tuple[int, int]] = field(default_factory=list)


def sigmoid(z: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def mlp_forward(params: Mlp, batch: np.ndarray) -> Trace:
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.in_dim:
        raise ShapeError(f"batch shape {x.shape} does not match input dimension {params.in_dim}")
    inputs, pre = [], []
    h = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(h)
        z = h @ w + b
        pre.append(z)
        if i < last:
            h = np.maximum(z, 0.0)
        elif params.output_activation == "sigmoid":
            h = sigmoid(z)
        else:
            h = z
    return Trace(inputs, pre, h, [w.shape for w in params.weights])


def mlp_apply(params: Mlp, batch: np.ndarray) -> np.ndarray:
    return mlp_forward(params, batch).output


def mlp_backward(params: Mlp, trace: Trace, output_gradient: np.ndarray) -> Tuple[Mlp, np.ndarray]:
    """Gradients of a scalar loss given d(loss)/d(output).

    Returns ``(grads, input_gradient)`` where ``grads`` mirrors ``params``.
    """
    if trace.shapes != [w.shape for w in params.weights]:
        raise ShapeError("trace was produced by a network with different layer shapes")
    g = np.asarray(output_gradient, dtype=np.float64)
    if g.shape != trace.output.shape:
        raise ShapeError(f"output gradient {g.shape} != output {trace.output.shape}")
    if params.output_activation == "sigmoid":
        s = trace.output
        g = g * s * (1.0 - s)
    n_layers = len(params.weights)
    dws: List[Optional[np.ndarray]] = [None] * n_layers
    dbs: List[Optional[np.ndarray]] = [None] * n_layers
    for i in range(n_layers - 1, -1, -1):
        dws[i] = trace.inputs[i].T @ g
        dbs[i] = g.sum(axis=0)
        g = g @ params.weights[i].T
        if i > 0:
            g = g * (trace.pre[i - 1] > 0)
    return Mlp(dws, dbs, params.output_activation), g


# --------------------------------------------------------------------------
# losses
# --------------------------------------------------------------------------


def _weights_or_mean(n: int, sample_weights: Optional[np.ndarray]) -> np.ndarray:
    if sample_weights is None:
        return np.full(n, 1.0 / n)
    sw = np.asarray(sample_weights, dtype=np.float64)
    if sw.shape != (n,):
        raise ShapeError(f"sample weights {sw.shape} do not match {n} examples")
    return sw


def bce_loss(
    probabilities: np.ndarray, labels: np.ndarray, sample_weights: Optional[np.ndarray] = None
) -> Tuple[float, np.ndarray]:
    """Binary cross-entropy and its gradient with respect to the probabilities.

    Without ``sample_weights`` this is the plain mean; with them it is the
    weighted sum (weights are used as given, not renormalised).
    """
    p = np.asarray(probabilities, dtype=np.float64).reshape(-1)
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    if p.shape != y.shape:
        raise ShapeError(f"{p.shape[0]} probabilities vs {y.shape[0]} labels")
    sw = _weights_or_mean(p.shape[0], sample_weights)
    pc = np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    losses = -(y * np.log(pc) + (1.0 - y) * np.log1p(-pc))
    grad = sw * (pc - y) / (pc * (1.0 - pc))
    return float(np.dot(sw, losses)), grad.reshape(np.shape(probabilities))


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax_ce_loss(
    logits: np.ndarray, class_ids: np.ndarray, sample_weights: Optional[np.ndarray] = None
) -> Tuple[float, np.ndarray]:
    """Softmax cross-entropy (mean, or weighted sum) and d(loss)/d(logits)."""
    z = np.asarray(logits, dtype=np.float64)
    ids = np.asarray(class_ids).reshape(-1)
    n, k = z.shape
    if ids.shape[0] != n:
        raise ShapeError(f"{n} logit rows vs {ids.shape[0]} class ids")
    if ids.size and (ids.min() < 0 or ids.max() >= k):
        raise ValueError(f"class ids must lie in [0, {k}), got range [{ids.min()}, {ids.max()}]")
    sw = _weights_or_mean(n, sample_weights)
    logp = log_softmax(z)
    rows = np.arange(n)
    loss = -float(np.dot(sw, logp[rows, ids]))
    grad = np.exp(logp)
    grad[rows, ids] -= 1.0
    grad *= sw[:, None]
    return loss, grad


# --------------------------------------------------------------------------
# Adam
# --------------------------------------------------------------------------


@dataclass
class AdamState:
    m: Mlp
    v: Mlp
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, params: Mlp) -> "AdamState":
        return cls(params.zeros_like(), params.zeros_like())


def adam_step(params: Mlp, grads: Mlp, state: AdamState, learning_rate: float) -> Tuple[Mlp, AdamState]:
    if learning_rate <= 0:
        raise ValueError("learning_rate must be positive")
    if [w.shape for w in grads.weights] != [w.shape for w in params.weights]:
        raise ShapeError("gradient shapes do not mirror parameter shapes")
    for i, (dw, db) in enumerate(zip(grads.weights, grads.biases)):
        if not (np.all(np.isfinite(dw)) and np.all(np.isfinite(db))):
            raise NumericalError(f"non-finite gradient in layer {i}")
    b1, b2 = state.beta1, state.beta2
    t = state.step + 1
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params.arrays(), grads.arrays(), state.m.arrays(), state.v.arrays()):
        m2 = b1 * m + (1.0 - b1) * g
        v2 = b2 * v + (1.0 - b2) * g * g
        new_p.append(p - learning_rate * (m2 / c1) / (np.sqrt(v2 / c2) + state.eps))
        new_m.append(m2)
        new_v.append(v2)

    def rebuild(flat):
        return Mlp(flat[0::2], flat[1::2], params.output_activation)

    return rebuild(new_p), AdamState(rebuild(new_m), rebuild(new_v), t, b1, b2, state.eps)
