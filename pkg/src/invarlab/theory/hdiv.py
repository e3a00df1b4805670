"""Held-out estimate of the H-divergence between two samples."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, DataError
from ..nn import AdamState, adam_step, bce_loss, glorot_mlp, mlp_apply, mlp_backward, mlp_forward


@dataclass
class HDivergence:
    estimate: float
    adversary_value: float  # 1 + estimate: the two-domain adversary success
    hypothesis: str


def _halves(x: np.ndarray, rng: np.random.Generator):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] < 2:
        raise DataError("each sample needs at least 2 points for a train/test split")
    perm = rng.permutation(x.shape[0])
    h = x.shape[0] // 2
    return x[perm[:h]], x[perm[h:]]


def _fit_mlp(xs, ys, weights, rng, epochs, hidden, lr):
    net = glorot_mlp([xs.shape[1], *hidden, 1], rng, output_activation="sigmoid")
    state = AdamState.fresh(net)
    for _ in range(epochs):
        tr = mlp_forward(net, xs)
        _, g = bce_loss(tr.output[:, 0], ys, weights)
        grads, _ = mlp_backward(net, tr, g[:, None])
        net, state = adam_step(net, grads, state, lr)
    return lambda z: mlp_apply(net, z)[:, 0] > 0.5


def h_divergence_estimate(
    a: np.ndarray,
    b: np.ndarray,
    rng: np.random.Generator,
    hypothesis: str = "linear",
    epochs: int = 300,
    hidden=(16, 16),
    lr: float = 0.01,
) -> HDivergence:
    """Train a classifier on half of each sample; report ``|P_A(h=1) - P_B(h=1)|`` on the other halves.

    ``hypothesis`` is "linear" (logistic regression) or "mlp".
    """
    from ..eval import fit_logistic

    a_tr, a_te = _halves(a, rng)
    b_tr, b_te = _halves(b, rng)
    xs = np.vstack([a_tr, b_tr])
    ys = np.concatenate([np.ones(len(a_tr)), np.zeros(len(b_tr))])
    weights = np.concatenate([np.full(len(a_tr), 0.5 / len(a_tr)), np.full(len(b_tr), 0.5 / len(b_tr))])
    if hypothesis == "linear":
        model = fit_logistic(xs, ys, epochs=epochs, sample_weights=weights)

        def h(z):
            return model.predict(z) == 1
    elif hypothesis == "mlp":
        h = _fit_mlp(xs, ys, weights, rng, epochs, hidden, lr)
    else:
        raise ConfigError(f"unknown hypothesis class {hypothesis!r}; use 'linear' or 'mlp'")
    est = abs(float(np.mean(h(a_te))) - float(np.mean(h(b_te))))
    return HDivergence(est, 1.0 + est, hypothesis)
